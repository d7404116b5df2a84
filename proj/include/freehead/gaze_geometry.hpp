#pragma once

#include "freehead/geometry.hpp"

#include <array>
#include <string>
#include <vector>

namespace freehead {

// Gaze frame: x right, y down (image-aligned), +z toward the camera.

constexpr int kEyeVertices = 481;
constexpr int kEyeTriangles = 928;
constexpr int kEyeEdges = 3 * kEyeTriangles;

using EyeMesh = Points<double>;  // 481 x 3

struct EyeMeshTemplate {
  EyeMesh vertices;                            // unit sphere cap, front pole at +z
  std::vector<std::array<int, 3>> triangles;   // 928
  std::vector<int> eye_center_ring;            // mean is the eyeball centre
  std::vector<int> iris_center_ring;           // mean is the iris centre
  std::vector<double> ring_polar_deg;          // polar angle of each ring, pole excluded
  int ring_size = 32;
};

/// Degrees. theta = atan(sqrt(gx^2 + gy^2) / gz), signed by gx; phi = atan(gy / gz).
struct GazeAngles {
  double theta = 0, phi = 0;
};

EyeMeshTemplate procedural_eye_template();
EyeMeshTemplate load_eye_template(const std::string& path);
void save_eye_template(const std::string& path, const EyeMeshTemplate& tpl);
const EyeMeshTemplate& default_eye_template();

/// Every undirected edge appears in at most two triangles.
bool is_manifold(const EyeMeshTemplate& tpl);

Eigen::Vector3d mesh_to_gaze_vector(const EyeMesh& m, const EyeMeshTemplate& tpl);
GazeAngles gaze_vector_to_angles(const Eigen::Vector3d& g);
/// Throws when |theta| >= 90 or when no unit vector has these angles
/// (the two formulas force |phi| <= |theta|).
Eigen::Vector3d angles_to_gaze_vector(const GazeAngles& a);
bool gaze_angles_feasible(const GazeAngles& a);

/// Triangle-major, edges (0-1, 1-2, 2-0); 2784 values.
Eigen::VectorXd edge_lengths(const EyeMesh& m, const EyeMeshTemplate& tpl);

/// Smallest rotation taking +z onto g.
Eigen::Matrix3d rotation_from_z(const Eigen::Vector3d& g);

/// Template rotated to look along `target`, scaled by radius, moved to centre.
EyeMesh synth_eye_mesh(const GazeAngles& target, const Eigen::Vector3d& center, double radius,
                       const EyeMeshTemplate& tpl);
/// Same, from a unit gaze vector (covers directions whose angles are fine but
/// awkward to enumerate).
EyeMesh synth_eye_mesh(const Eigen::Vector3d& gaze, const Eigen::Vector3d& center, double radius,
                       const EyeMeshTemplate& tpl);

// Batched differentiable pieces for the gaze losses. mesh is (B, 481, 3).
template <typename T>
Var<T> edge_lengths(const Var<T>& mesh, const EyeMeshTemplate& tpl);
/// Unit gaze vectors (B, 3).
template <typename T>
Var<T> gaze_vectors(const Var<T>& mesh, const EyeMeshTemplate& tpl);

}  // namespace freehead
