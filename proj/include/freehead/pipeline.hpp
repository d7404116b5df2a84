#pragma once

#include "freehead/train.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace freehead {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Override outside the accepted range; the message carries the bounds.
class RangeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Trained networks for inference, all built from one config.
struct ModelSet {
  explicit ModelSet(const ModelConfig& cfg, std::uint64_t seed = 1);

  /// Any path may be empty to keep freshly initialised weights.
  static std::unique_ptr<ModelSet> load(const std::string& canonical_path, const std::string& gaze_path,
                                        const std::string& generator_path, bool force = false);

  ModelConfig config;
  std::mt19937_64 init_rng;
  CanonicalEstimator<float> canonical;
  GazeEstimator<float> gaze;
  GanModels gan;
};

/// What the estimators read off one face image.
struct FaceEstimate {
  PoseTransform<double> pose;
  EulerAngles euler;
  Keypoints3D points;       // predicted key-points
  Keypoints3D deformation;
  Keypoints3D canonical;    // points with pose and expression removed
  GazeAngles gaze_left, gaze_right;
};

struct SourceView {
  Tensor<float> image;   // (3,R,R) in [0,1] at model resolution
  FaceEstimate face;
  Tensor<float> sketch;  // (3,R,R)
  int input_height = 0, input_width = 0;
};

/// Immutable after creation; canonical points re-pose to the estimated points
/// within 1e-5 (checked on creation).
struct SourceSession {
  std::string id;
  std::vector<SourceView> sources;
};

struct EditRequest {
  std::optional<EulerAngles> euler;
  std::optional<GazeAngles> gaze;   // applied to both eyes
  std::optional<double> deform_scale;
};

struct PoseBounds {
  static constexpr double kEuler = 60.0;   // |angle| <= 60 deg
  static constexpr double kGaze = 80.0;    // |theta| < 80 deg
  static constexpr double kDeformScale = 3.0;  // 0 <= scale <= 3
};

/// Throws RangeError naming the violated bound.
void validate_edit(const EditRequest& req);

struct RenderResult {
  Tensor<float> image;          // (3,R,R) in [0,1]
  Tensor<float> warped;         // blended warped source, (3,R,R) in [0,1]
  Tensor<float> sketch;         // driving sketch
  Keypoints3D driving;          // key-points drawn into the sketch
  GazeAngles gaze_left, gaze_right;
};

class Pipeline {
 public:
  explicit Pipeline(ModelSet& models);

  const ModelConfig& config() const { return models_.config; }

  /// Runs E_can and E_gaze; throws "no face signal" on flat images or
  /// collapsed key-points.
  FaceEstimate estimate(const Tensor<float>& image);

  std::shared_ptr<const SourceSession> create_session(const std::vector<Tensor<float>>& images, std::string id);

  /// Re-poses the canonical points of one source with a target pose and
  /// deformation.
  static Keypoints3D adapt_keypoints(const SourceSession& s, const PoseTransform<double>& pose,
                                     const Keypoints3D& deformation, int source = 0);

  /// Drives every source of the session with the target's pose, expression
  /// and gaze. Without adaptation the target's own key-points are drawn.
  RenderResult reenact(const SourceSession& s, const Tensor<float>& target, bool adapt = true);

  /// Free-view edit: keeps the source scale and translation; overrides
  /// replace the rotation, gaze, or scale the deformation.
  RenderResult edit(const SourceSession& s, const EditRequest& req);

  /// Pools the sources of several sessions (same resolution) and reenacts.
  RenderResult reenact_nshot(const std::vector<const SourceSession*>& sessions, const Tensor<float>& target,
                             bool adapt = true);

  /// Pixel mask (H,W) of both eye regions for a key-point set.
  static std::vector<char> eye_mask(const Keypoints3D& p, int res);

 private:
  RenderResult render(const std::vector<const SourceView*>& sources, const Keypoints3D& driving,
                      const GazeAngles& gl, const GazeAngles& gr);
  Tensor<float> prepare(const Tensor<float>& image) const;

  ModelSet& models_;
};

}  // namespace freehead
