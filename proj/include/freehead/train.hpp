#pragma once

#include "freehead/checkpoint.hpp"
#include "freehead/data.hpp"
#include "freehead/losses.hpp"
#include "freehead/networks.hpp"
#include "freehead/optim.hpp"
#include "freehead/sketch.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace freehead {

struct TrainConfig {
  ModelConfig model = ModelConfig::desk();
  LossWeights weights;
  AdamOptions adam;          // beta1 0.5, beta2 0.999, lr 2e-4
  int steps = 1000;
  int batch_size = 4;
  int shots = 1;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // 0: only at the end
  std::string checkpoint_path;  // empty: nothing written
  std::string log_path;         // JSONL; empty: no file
  bool overfit = false;         // generator: reuse one fixed pair every step

  static TrainConfig canonical();
  static TrainConfig gaze();       // beta1 0.9, lr 1e-4
  static TrainConfig generator();
  static TrainConfig nshot();      // two sources
  void validate() const;
};

/// A clip held in memory: annotations plus frames (3,R,R) in [0,1].
struct TrainingClip {
  ClipRecord record;
  std::vector<Tensor<float>> images;
};

std::vector<TrainingClip> training_clips(const std::vector<FixtureClip>& fixtures);
/// Every sub-directory of root holding a landmarks.json, in name order.
std::vector<TrainingClip> load_training_clips(const std::string& root);

/// Frame indices on either side of the fixed split.
std::vector<int> train_frames(const ClipRecord& r);
std::vector<int> held_out_frames(const ClipRecord& r);

struct StepLog {
  int step = 0;
  std::string phase;
  std::vector<std::pair<std::string, double>> values;
  double seconds = 0;  // wall time since the run started

  double operator[](const std::string& name) const;
};

struct TrainResult {
  std::vector<StepLog> history;
  bool aborted = false;  // non-finite loss; weights rolled back to the last good state
  std::string message;
  double seconds = 0;
};

/// Called after each step; return false to stop early.
using StepCallback = std::function<bool(const StepLog&)>;

// ---------------------------------------------------------------------------
// Canonical key-point estimator

TrainResult train_canonical(CanonicalEstimator<float>& model, const std::vector<TrainingClip>& data,
                            const TrainConfig& cfg, const StepCallback& on_step = {});

/// Mean points term over held-out frame pairs, in eval mode.
double evaluate_canonical(CanonicalEstimator<float>& model, const std::vector<TrainingClip>& data,
                          const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Gaze estimator on synthetic eyes

std::vector<EyeSample> make_eye_set(int count, std::uint64_t seed, const EyeSampleOptions& opt);

TrainResult train_gaze(GazeEstimator<float>& model, const EyeSampleOptions& eyes, const TrainConfig& cfg,
                       const StepCallback& on_step = {});

/// Average gaze distance (degrees) of the mesh-derived gaze vectors.
double evaluate_gaze(GazeEstimator<float>& model, const std::vector<EyeSample>& samples);

// ---------------------------------------------------------------------------
// Generator and critics

struct GanModels {
  explicit GanModels(const ModelConfig& cfg, std::uint64_t seed = 1);

  ModelConfig config;
  std::mt19937_64 init_rng;
  Generator<float> generator;
  Discriminator<float> image_critic;
  Discriminator<float> mouth_critic;

  Checkpoint checkpoint(const std::string& kind);
  /// Adds the attention head first when the checkpoint carries one.
  void load(const Checkpoint& ckpt, bool force = false);
};

/// Sketch from annotations; missing gaze is drawn as straight ahead.
Tensor<float> annotation_sketch(const ClipRecord& r, int frame, int resolution);

TrainResult train_generator(GanModels& models, const std::vector<TrainingClip>& data, const TrainConfig& cfg,
                            FeatureExtractor<float>& extractor, const StepCallback& on_step = {});

/// Adds the zero-initialised attention head if missing, freezes the rest of
/// the flow network and trains with cfg.shots sources per pair.
TrainResult finetune_nshot(GanModels& models, const std::vector<TrainingClip>& data, const TrainConfig& cfg,
                           FeatureExtractor<float>& extractor, const StepCallback& on_step = {});

/// Mean L1 (0-255 scale) of generated vs target over held-out frames, with
/// `shots` training frames as sources per held-out target.
double evaluate_reconstruction(GanModels& models, const std::vector<TrainingClip>& data, int shots,
                               std::uint64_t seed = 11);

/// One-pair generation in eval mode; images (3,R,R) in [0,1].
Tensor<float> generate_from_annotations(GanModels& models, const TrainingClip& clip, const std::vector<int>& sources,
                                        int target);

}  // namespace freehead
