#pragma once

#include "freehead/geometry.hpp"
#include "freehead/nn.hpp"
#include "freehead/warp.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace freehead {

struct ModelConfig {
  int resolution = 256;       // generator / E_can input side
  int eye_resolution = 128;   // E_gaze input side
  double width = 1.0;         // channel multiplier in (0, 1]
  int keypoints = kKeypoints;
  int n_deg = 60;
  std::array<int, 4> ecan_blocks{3, 3, 5, 2};    // identity blocks after each downsampling block
  std::array<int, 4> gaze_blocks{3, 4, 6, 3};    // ResNet-34 stages
  int discriminator_layers = 4;
  int discriminator_scales = 2;

  /// Channel count for a full-scale count, never below 8.
  int ch(int full) const;
  int generator_c1() const { return ch(32); }
  int generator_c2() const { return 4 * generator_c1(); }
  int generator_c3() const { return 4 * generator_c2(); }
  int spade_hidden() const { return ch(128); }

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  /// FNV-1a of the canonical JSON, as 16 hex digits.
  std::string hash() const;

  static ModelConfig full() { return {}; }
  static ModelConfig desk();
};

template <typename T>
struct CanonicalOutput {
  Var<T> pitch, yaw, roll;   // (B) degrees
  Var<T> euler;              // (B,3) degrees
  Var<T> rotation;           // (B,3,3)
  Var<T> translation;        // (B,1,3)
  Var<T> scale;              // (B,1,1)
  Var<T> deformation;        // (B,K,3)
  Var<T> points;             // (B,K,3)
  std::array<Var<T>, 3> logits;  // (B, 2 n_deg + 1) per angle
};

// Bottleneck residual unit. With stride 1 the output is x + F(x); the
// downsampling form changes width and has no residual path.
template <typename T>
class ResBottleneck : public Module<T> {
 public:
  ResBottleneck(int in, int out, int stride, std::mt19937_64& rng);
  Var<T> forward(const Var<T>& x);
  bool downsample() const { return stride_ != 1; }

 private:
  int stride_;
  Conv2d<T>*c1_, *c2_, *c3_;
  BatchNorm2d<T>*n1_, *n2_, *n3_;
};

template <typename T>
class CanonicalEstimator : public Module<T> {
 public:
  CanonicalEstimator(const ModelConfig& cfg, std::mt19937_64& rng);
  CanonicalOutput<T> forward(const Var<T>& image);
  int feature_dim() const { return feature_dim_; }

 private:
  ModelConfig cfg_;
  int feature_dim_;
  Conv2d<T>* stem_;
  BatchNorm2d<T>* stem_norm_;
  std::vector<ResBottleneck<T>*> blocks_;
  std::array<Linear<T>*, 3> angle_heads_;
  Linear<T>*translation_head_, *scale_head_, *deform_head_, *points_head_;
};

template <typename T>
class BasicBlock : public Module<T> {
 public:
  BasicBlock(int in, int out, int stride, std::mt19937_64& rng);
  Var<T> forward(const Var<T>& x);

 private:
  Conv2d<T>*c1_, *c2_, *skip_ = nullptr;
  BatchNorm2d<T>*n1_, *n2_, *skip_norm_ = nullptr;
};

template <typename T>
class GazeEstimator : public Module<T> {
 public:
  GazeEstimator(const ModelConfig& cfg, std::mt19937_64& rng);
  /// (B,3,E,E) in [-1,1] -> (B,481,3).
  Var<T> forward(const Var<T>& eye_image);

 private:
  ModelConfig cfg_;
  Conv2d<T>* stem_;
  BatchNorm2d<T>* stem_norm_;
  std::vector<BasicBlock<T>*> blocks_;
  Conv2d<T>* reduce_;
  Linear<T>* head_;
};

/// Parameter-free instance norm modulated per pixel by a conditioning map,
/// which is bilinearly resized to the normalized tensor.
template <typename T>
class SpadeNorm : public Module<T> {
 public:
  SpadeNorm(int channels, int label_channels, int hidden, std::mt19937_64& rng, Init scheme);
  Var<T> forward(const Var<T>& x, const Var<T>& cond);

 private:
  Conv2d<T>*shared_, *gamma_, *beta_;
};

template <typename T>
class SpadeBlock : public Module<T> {
 public:
  SpadeBlock(int in, int out, int label_channels, int hidden, std::mt19937_64& rng, Init scheme = Init::Orthogonal);
  Var<T> forward(const Var<T>& x, const Var<T>& cond);

 private:
  SpadeNorm<T>*norm0_, *norm1_, *norm_skip_ = nullptr;
  Conv2d<T>*conv0_, *conv1_, *conv_skip_ = nullptr;
};

/// conv7-IN-ReLU, conv3/2-IN-ReLU, conv3/2-IN-ReLU; returns all three maps.
template <typename T>
class SketchEncoder : public Module<T> {
 public:
  SketchEncoder(int in, const ModelConfig& cfg, std::mt19937_64& rng);
  std::array<Var<T>, 3> forward(const Var<T>& x);

 private:
  std::array<Conv2d<T>*, 3> convs_;
};

template <typename T>
struct FlowOutput {
  Var<T> flow;                     // (B,2,H,W) pixels
  Var<T> logits;                   // (B,1,H,W) in (-1,1); undefined without weight head
  std::array<Var<T>, 3> features;  // encoder maps at 1, 1/2, 1/4 resolution
};

template <typename T>
class FlowNet : public Module<T> {
 public:
  FlowNet(const ModelConfig& cfg, std::mt19937_64& rng, bool with_weight_head = false);
  FlowOutput<T> forward(const Var<T>& source_image, const Var<T>& source_sketch, const Var<T>& target_sketch);

  bool has_weight_head() const { return weight_head_ != nullptr; }
  /// Adds the attention head with zero weights (so every source starts equal).
  void add_weight_head();
  /// Parameters outside the attention head.
  std::vector<Var<T>> core_parameters() const;
  std::vector<Var<T>> weight_head_parameters() const;

 private:
  ModelConfig cfg_;
  SketchEncoder<T>* encoder_;
  std::vector<SpadeBlock<T>*> low_blocks_;
  SpadeBlock<T>* mid_block_;
  Conv2d<T>* flow_head_;
  Conv2d<T>* weight_head_ = nullptr;
};

template <typename T>
class RenderNet : public Module<T> {
 public:
  RenderNet(const ModelConfig& cfg, std::mt19937_64& rng);
  Var<T> forward(const Var<T>& target_sketch, const Var<T>& warped_image, const Var<T>& source_sketch,
                 const std::array<Var<T>, 3>& warped_features);

 private:
  ModelConfig cfg_;
  SketchEncoder<T>* encoder_;
  SpadeBlock<T>*b3_, *b2_, *b1_, *bimg_;
  Conv2d<T>* out_;
};

template <typename T>
struct GeneratorSource {
  Var<T> image;   // (B,3,H,W) in [-1,1]
  Var<T> sketch;  // (B,3,H,W) in [0,1]
};

template <typename T>
struct GeneratorOutput {
  Var<T> generated;
  Var<T> warped;
  std::vector<Var<T>> flows;
  std::vector<Var<T>> logits;
  std::array<Var<T>, 3> warped_features;
};

/// Flow network + renderer. With several sources the warped image and
/// features are attention-blended; the renderer sees the first source's sketch.
template <typename T>
class Generator : public Module<T> {
 public:
  Generator(const ModelConfig& cfg, std::mt19937_64& rng);
  GeneratorOutput<T> forward(const std::vector<GeneratorSource<T>>& sources, const Var<T>& target_sketch);

  FlowNet<T>& flow() { return *flow_; }
  RenderNet<T>& render() { return *render_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  FlowNet<T>* flow_;
  RenderNet<T>* render_;
};

template <typename T>
struct DiscriminatorOutput {
  std::vector<Var<T>> scores;                  // one patch map per scale
  std::vector<std::vector<Var<T>>> features;   // per scale, per layer
};

template <typename T>
class PatchDiscriminator : public Module<T> {
 public:
  PatchDiscriminator(int in, const ModelConfig& cfg, std::mt19937_64& rng);
  /// Returns the layer outputs; the last is the score map.
  std::vector<Var<T>> forward(const Var<T>& x);

 private:
  std::vector<Conv2d<T>*> convs_;
  int n_layers_;
};

/// Conditional multi-scale critic over image ⊕ sketch.
template <typename T>
class Discriminator : public Module<T> {
 public:
  Discriminator(const ModelConfig& cfg, std::mt19937_64& rng);
  DiscriminatorOutput<T> forward(const Var<T>& image, const Var<T>& condition);

 private:
  std::vector<PatchDiscriminator<T>*> scales_;
};

struct CropBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // pixel coordinates, pixel centres at integers
  bool fallback = false;
};

/// Tight box around the mouth key-points (48-67), grown by 20%; a centred
/// half-size box when the mouth is degenerate.
CropBox mouth_box(const Keypoints3D& p, int height, int width);

/// Differentiable crop of (B,C,H,W) onto an out x out grid, one box per item.
template <typename T>
Var<T> crop_resize(const Var<T>& x, const std::vector<CropBox>& boxes, int out);

}  // namespace freehead
