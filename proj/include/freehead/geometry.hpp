#pragma once

#include "freehead/ops.hpp"

#include <Eigen/Core>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <string>

namespace freehead {

// Key-points are K x 3 rows (x right, y down, z away from the camera, so
// smaller z is closer), normalized to [-1, 1].
template <typename T>
using Points = Eigen::Matrix<T, Eigen::Dynamic, 3>;
using Keypoints3D = Points<double>;
template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;

constexpr int kKeypoints = 68;

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct PoseTransform {
  T scale = T(1);
  Mat3<T> rotation = Mat3<T>::Identity();
  Vec3<T> translation = Vec3<T>::Zero();
};

/// Degrees. R = Ry(yaw) * Rx(pitch) * Rz(roll); pitch is the middle angle so
/// the principal branch is |pitch| < 90.
struct EulerAngles {
  double pitch = 0, yaw = 0, roll = 0;
};

constexpr double kDeg = 3.14159265358979323846 / 180.0;

template <typename T>
void validate_pose(const PoseTransform<T>& pose) {
  if (!std::isfinite(double(pose.scale)) || !pose.rotation.allFinite() || !pose.translation.allFinite()) {
    throw GeometryError("pose transform has non-finite entries");
  }
  if (!(pose.scale > T(0))) throw GeometryError("pose scale must be positive");
}

/// (1/s) R^T (p - d - t), row-wise.
template <typename T>
Points<T> to_canonical(const Points<T>& p, const PoseTransform<T>& pose, const Points<T>& d) {
  validate_pose(pose);
  if (p.rows() != d.rows()) throw GeometryError("key-point and deformation counts differ");
  if (!p.allFinite() || !d.allFinite()) throw GeometryError("non-finite key-points or deformation");
  return ((p - d).rowwise() - pose.translation.transpose()) * pose.rotation / pose.scale;
}

/// s R p_can + t + d, row-wise.
template <typename T>
Points<T> from_canonical(const Points<T>& p_can, const PoseTransform<T>& pose, const Points<T>& d) {
  validate_pose(pose);
  if (p_can.rows() != d.rows()) throw GeometryError("key-point and deformation counts differ");
  if (!p_can.allFinite() || !d.allFinite()) throw GeometryError("non-finite key-points or deformation");
  return ((pose.scale * p_can * pose.rotation.transpose()).rowwise() + pose.translation.transpose()) + d;
}

template <typename T>
Mat3<T> euler_to_matrix(const EulerAngles& a) {
  using std::cos;
  using std::sin;
  const T p = T(a.pitch * kDeg), y = T(a.yaw * kDeg), r = T(a.roll * kDeg);
  Mat3<T> rx, ry, rz;
  rx << 1, 0, 0, 0, cos(p), -sin(p), 0, sin(p), cos(p);
  ry << cos(y), 0, sin(y), 0, 1, 0, -sin(y), 0, cos(y);
  rz << cos(r), -sin(r), 0, sin(r), cos(r), 0, 0, 0, 1;
  return ry * rx * rz;
}

EulerAngles matrix_to_euler(const Mat3<double>& R);

/// Angle of the relative rotation, degrees.
double rotation_angle_between(const Mat3<double>& a, const Mat3<double>& b);

struct PoseFit {
  PoseTransform<double> pose;
  double residual = 0;  // sum of squared distances after alignment
};

/// Least-squares similarity transform mapping template onto landmarks.
PoseFit fit_pose_to_template(const Keypoints3D& landmarks, const Keypoints3D& tpl);

Keypoints3D load_keypoint_template(const std::string& path);
void save_keypoint_template(const std::string& path, const Keypoints3D& tpl);
/// Bundled template from the asset directory.
const Keypoints3D& default_keypoint_template();
/// The procedural face the bundled asset was generated from.
Keypoints3D procedural_keypoint_template();

// Batched differentiable forms used by the losses. points/deform (B,K,3),
// rotation (B,3,3), scale (B,1,1), translation (B,1,3).
template <typename T>
Var<T> to_canonical(const Var<T>& p, const Var<T>& scale, const Var<T>& rotation, const Var<T>& translation,
                    const Var<T>& d) {
  return matmul((p - d) - translation, rotation) / scale;
}

template <typename T>
Var<T> from_canonical(const Var<T>& p_can, const Var<T>& scale, const Var<T>& rotation, const Var<T>& translation,
                      const Var<T>& d) {
  return matmul(p_can * scale, permute(rotation, {0, 2, 1})) + translation + d;
}

/// Angles in degrees, each (B); returns (B,3,3) with the euler_to_matrix convention.
template <typename T>
Var<T> rotation_from_euler(const Var<T>& pitch, const Var<T>& yaw, const Var<T>& roll);

}  // namespace freehead
