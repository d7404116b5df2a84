#include "freehead/geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace freehead {

namespace {

double wrap_degrees(double a) {
  a = std::fmod(a + 180.0, 360.0);
  if (a < 0) a += 360.0;
  return a - 180.0;
}

}  // namespace

EulerAngles matrix_to_euler(const Mat3<double>& R) {
  EulerAngles e;
  const double s = std::clamp(-R(1, 2), -1.0, 1.0);
  e.pitch = std::asin(s) / kDeg;
  if (std::abs(s) < 1.0 - 1e-12) {
    e.yaw = std::atan2(R(0, 2), R(2, 2)) / kDeg;
    e.roll = std::atan2(R(1, 0), R(1, 1)) / kDeg;
  } else {
    // Gimbal lock: only yaw -/+ roll is observable; roll is pinned to 0.
    e.roll = 0;
    e.yaw = std::atan2(-R(2, 0), R(0, 0)) / kDeg;
  }
  e.pitch = wrap_degrees(e.pitch);
  e.yaw = wrap_degrees(e.yaw);
  e.roll = wrap_degrees(e.roll);
  return e;
}

double rotation_angle_between(const Mat3<double>& a, const Mat3<double>& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) / kDeg;
}

PoseFit fit_pose_to_template(const Keypoints3D& landmarks, const Keypoints3D& tpl) {
  if (landmarks.rows() != tpl.rows()) throw GeometryError("landmark and template counts differ");
  if (tpl.rows() < 3) throw GeometryError("pose fit needs at least 3 points");
  if (!landmarks.allFinite() || !tpl.allFinite()) throw GeometryError("non-finite landmarks");
  const double n = double(tpl.rows());
  const Eigen::RowVector3d mu_x = tpl.colwise().mean();
  const Eigen::RowVector3d mu_y = landmarks.colwise().mean();
  const Keypoints3D X = tpl.rowwise() - mu_x;
  const Keypoints3D Y = landmarks.rowwise() - mu_y;
  const double var_x = X.squaredNorm() / n;

  Eigen::JacobiSVD<Eigen::Matrix3d> tsvd(X.transpose() * X);
  const Eigen::Vector3d tsv = tsvd.singularValues();
  if (tsv(0) <= 0 || tsv(2) < 1e-10 * tsv(0)) throw GeometryError("degenerate template: rank < 3 after centering");

  const Eigen::Matrix3d cov = Y.transpose() * X / n;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) S(2, 2) = -1;

  PoseFit fit;
  fit.pose.rotation = svd.matrixU() * S * svd.matrixV().transpose();
  fit.pose.scale = (svd.singularValues().asDiagonal() * S).trace() / var_x;
  fit.pose.translation = mu_y.transpose() - fit.pose.scale * fit.pose.rotation * mu_x.transpose();
  const Keypoints3D mapped =
      ((fit.pose.scale * tpl * fit.pose.rotation.transpose()).rowwise() + fit.pose.translation.transpose());
  fit.residual = (mapped - landmarks).squaredNorm();
  return fit;
}

Keypoints3D load_keypoint_template(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open key-point template " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# kp-template v1", 0) != 0) {
    throw std::runtime_error("key-point template " + path + " lacks the '# kp-template v1' header");
  }
  std::vector<Eigen::RowVector3d> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Eigen::RowVector3d r;
    if (!(ls >> r(0) >> r(1) >> r(2))) throw std::runtime_error("malformed template line: " + line);
    rows.push_back(r);
  }
  if (rows.size() != std::size_t(kKeypoints)) {
    throw std::runtime_error("key-point template has " + std::to_string(rows.size()) + " points, expected 68");
  }
  Keypoints3D out(kKeypoints, 3);
  for (int k = 0; k < kKeypoints; ++k) out.row(k) = rows[k];
  return out;
}

void save_keypoint_template(const std::string& path, const Keypoints3D& tpl) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# kp-template v1\n" << std::setprecision(17);
  for (int k = 0; k < tpl.rows(); ++k) out << tpl(k, 0) << ' ' << tpl(k, 1) << ' ' << tpl(k, 2) << '\n';
}

const Keypoints3D& default_keypoint_template() {
  static const Keypoints3D tpl = load_keypoint_template(std::string(FREEHEAD_ASSET_DIR) + "/kp_template.txt");
  return tpl;
}

Keypoints3D procedural_keypoint_template() {
  Keypoints3D p(kKeypoints, 3);
  const double pi = 3.14159265358979323846;
  // jaw, ear to ear through the chin
  for (int i = 0; i <= 16; ++i) {
    const double a = pi * i / 16.0;
    p.row(i) << -0.72 * std::cos(a), -0.1 + 0.85 * std::sin(a), 0.35 - 0.3 * std::sin(a);
  }
  // brows
  for (int i = 0; i < 5; ++i) {
    const double u = i / 4.0;
    const double x = 0.64 - 0.46 * u;  // outer to inner
    const double y = -0.44 - 0.07 * std::sin(pi * (0.3 + 0.6 * u));
    p.row(17 + i) << -x, y, 0.02;
    p.row(26 - i) << x, y, 0.02;
  }
  // nose bridge and base
  for (int i = 0; i < 4; ++i) p.row(27 + i) << 0.0, -0.26 + 0.1 * i, -0.05 - 0.07 * i;
  const double base_x[5] = {-0.16, -0.08, 0.0, 0.08, 0.16};
  const double base_y[5] = {0.12, 0.14, 0.16, 0.14, 0.12};
  const double base_z[5] = {-0.06, -0.1, -0.13, -0.1, -0.06};
  for (int i = 0; i < 5; ++i) p.row(31 + i) << base_x[i], base_y[i], base_z[i];
  // eyes: corner, two upper, corner, two lower
  const double ex[6] = {0.6, 0.48, 0.32, 0.2, 0.32, 0.48};
  const double ey[6] = {-0.2, -0.3, -0.3, -0.2, -0.1, -0.1};
  for (int i = 0; i < 6; ++i) p.row(36 + i) << -ex[i], ey[i], 0.0;
  const int right_order[6] = {3, 2, 1, 0, 5, 4};
  for (int i = 0; i < 6; ++i) p.row(42 + i) << ex[right_order[i]], ey[right_order[i]], 0.0;
  // outer lip 48..59
  const double ox[12] = {-0.3, -0.2, -0.08, 0.0, 0.08, 0.2, 0.3, 0.2, 0.08, 0.0, -0.08, -0.2};
  const double oy[12] = {0.42, 0.36, 0.33, 0.35, 0.33, 0.36, 0.42, 0.5, 0.54, 0.55, 0.54, 0.5};
  for (int i = 0; i < 12; ++i) p.row(48 + i) << ox[i], oy[i], (i == 0 || i == 6) ? -0.02 : -0.1;
  // inner lip 60..67
  const double ix[8] = {-0.24, -0.08, 0.0, 0.08, 0.24, 0.08, 0.0, -0.08};
  const double iy[8] = {0.42, 0.40, 0.40, 0.40, 0.42, 0.45, 0.45, 0.45};
  for (int i = 0; i < 8; ++i) p.row(60 + i) << ix[i], iy[i], (i == 0 || i == 4) ? -0.03 : -0.08;
  return p;
}

template <typename T>
Var<T> rotation_from_euler(const Var<T>& pitch, const Var<T>& yaw, const Var<T>& roll) {
  const int B = pitch.dim(0);
  const T k = T(kDeg);
  auto col = [B](const Var<T>& v) { return reshape(v, Shape{B, 1}); };
  const Var<T> p = col(pitch) * k, y = col(yaw) * k, r = col(roll) * k;
  const Var<T> cp = cos(p), sp = sin(p), cy = cos(y), sy = sin(y), cr = cos(r), sr = sin(r);
  const Var<T> r00 = cy * cr + sy * sp * sr;
  const Var<T> r01 = sy * sp * cr - cy * sr;
  const Var<T> r02 = sy * cp;
  const Var<T> r10 = cp * sr;
  const Var<T> r11 = cp * cr;
  const Var<T> r12 = -sp;
  const Var<T> r20 = cy * sp * sr - sy * cr;
  const Var<T> r21 = sy * sr + cy * sp * cr;
  const Var<T> r22 = cy * cp;
  return reshape(concat<T>({r00, r01, r02, r10, r11, r12, r20, r21, r22}, 1), Shape{B, 3, 3});
}

template Var<float> rotation_from_euler(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> rotation_from_euler(const Var<double>&, const Var<double>&, const Var<double>&);

}  // namespace freehead
