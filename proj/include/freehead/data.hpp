#pragma once

#include "freehead/gaze_geometry.hpp"
#include "freehead/geometry.hpp"
#include "freehead/tensor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace freehead {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Landmarks: x, y in [-1, 1] image-aligned (y down), z in [-1, 1] with smaller
// values closer to the camera.

struct ClipRecord {
  std::string id;
  std::string directory;
  std::vector<std::string> frames;  // PNG paths, in frame order
  int resolution = 0;
  std::vector<Keypoints3D> keypoints;
  std::vector<EulerAngles> euler;
  std::vector<std::optional<GazeAngles>> gaze_left, gaze_right;
  int clamped_coordinates = 0;  // landmark values pulled back into [-1, 1]

  int size() const { return int(keypoints.size()); }
};

bool operator==(const ClipRecord& a, const ClipRecord& b);

/// Reads `landmarks.json` and the frame PNGs (sorted by file name) from dir.
/// Missing Euler angles are fitted against the key-point template.
ClipRecord ingest_clip(const std::string& dir);

/// Writes `landmarks.json` for a record (frames are written separately).
void write_landmarks(const std::string& path, const ClipRecord& record);

struct TrainingPair {
  std::vector<int> sources;  // M distinct frame indices
  int target = -1;           // distinct from every source
};

/// Uniform distinct frames; deterministic in seed.
TrainingPair sample_pair(const ClipRecord& record, int shots, std::uint64_t seed);
TrainingPair sample_pair(int frame_count, int shots, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Synthetic faces

struct FaceAppearance {
  Eigen::Vector3d background, hair, skin, brow, lip, iris;
  struct Spot {
    Eigen::Vector3d position;  // canonical space
    double radius;
    Eigen::Vector3d color;
  };
  std::vector<Spot> spots;
};

struct Expression {
  double mouth_open = 0, smile = 0, brow_raise = 0;
};

/// Offsets in canonical space for an expression.
Keypoints3D expression_offsets(const Expression& e);

struct FaceState {
  PoseTransform<double> pose;
  EulerAngles euler;
  Keypoints3D deformation;  // original-space offsets: s R (expression offsets)
  Keypoints3D keypoints;    // s R c + t + d
  GazeAngles gaze;          // both eyes
};

/// Face state from canonical points, pose, expression and gaze direction.
FaceState compose_face(const Keypoints3D& canonical, const EulerAngles& euler, double scale,
                       const Eigen::Vector3d& translation, const Expression& expression, const Eigen::Vector3d& gaze);

/// Flat-shaded drawing of the face, (3, res, res) in [0, 1].
Tensor<float> render_face(const Keypoints3D& canonical, const FaceState& state, const FaceAppearance& look, int res,
                          int supersample = 3);

struct FixtureClip {
  ClipRecord record;
  std::vector<Tensor<float>> images;  // (3,R,R) in [0,1]
  Keypoints3D canonical;
  FaceAppearance appearance;
  std::vector<FaceState> states;
};

struct FixtureOptions {
  int identities = 8;
  int frames = 64;
  int resolution = 64;
  std::uint64_t seed = 7;
};

/// Procedural identities moving through smooth pose, expression and gaze
/// trajectories. Ground truth is exact by construction.
std::vector<FixtureClip> make_synthetic_fixture_set(const FixtureOptions& opt);

/// Held-out frames: every fourth frame (index % 4 == 3).
inline bool is_held_out(int frame) { return frame % 4 == 3; }

/// Writes clip_XX/frame_XXXX.png and landmarks.json under root.
void write_fixture_set(const std::string& root, const std::vector<FixtureClip>& set);

// ---------------------------------------------------------------------------
// Synthetic eyes

struct EyeSample {
  Tensor<float> image;  // (3,E,E) in [0,1]
  EyeMesh mesh;         // crop-normalised: x, y in [-1, 1] across the crop
  Eigen::Vector3d gaze;
};

struct EyeSampleOptions {
  int resolution = 64;
  double max_yaw = 35, max_pitch = 25;  // gaze range, degrees
  double low_res_probability = 0.3;     // blur by down/up-sampling, as in small face crops
};

EyeSample make_eye_sample(std::mt19937_64& rng, const EyeSampleOptions& opt = {});

/// Eye crop geometry used at inference: square, centred on the eye points,
/// side 1.6x the corner-to-corner width. Returns centre and side in pixels.
struct EyeCrop {
  double cx = 0, cy = 0, side = 0;
};
EyeCrop eye_crop(const Keypoints3D& p, bool left, int height, int width);

}  // namespace freehead
