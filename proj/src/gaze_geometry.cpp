#include "freehead/gaze_geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace freehead {

EyeMeshTemplate procedural_eye_template() {
  EyeMeshTemplate tpl;
  // Iris rings close to the pole, then coarser rings down past the equator.
  tpl.ring_polar_deg = {7.5, 15, 22.5, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140};
  const int rings = int(tpl.ring_polar_deg.size());
  const int n = tpl.ring_size;
  const double pi = 3.14159265358979323846;
  tpl.vertices.resize(1 + rings * n, 3);
  tpl.vertices.row(0) << 0, 0, 1;
  for (int r = 0; r < rings; ++r) {
    const double a = tpl.ring_polar_deg[r] * kDeg;
    for (int j = 0; j < n; ++j) {
      const double b = 2 * pi * j / n;
      tpl.vertices.row(1 + r * n + j) << std::sin(a) * std::cos(b), std::sin(a) * std::sin(b), std::cos(a);
    }
  }
  auto vid = [n](int r, int j) { return 1 + r * n + (j % n); };
  for (int j = 0; j < n; ++j) tpl.triangles.push_back({0, vid(0, j), vid(0, j + 1)});
  for (int r = 0; r + 1 < rings; ++r) {
    for (int j = 0; j < n; ++j) {
      tpl.triangles.push_back({vid(r, j), vid(r + 1, j), vid(r + 1, j + 1)});
      tpl.triangles.push_back({vid(r, j), vid(r + 1, j + 1), vid(r, j + 1)});
    }
  }
  for (int j = 0; j < n; ++j) {
    tpl.eye_center_ring.push_back(vid(9, j));   // 90 degree ring
    tpl.iris_center_ring.push_back(vid(3, j));  // iris rim at 30 degrees
  }
  return tpl;
}

namespace {

std::vector<int> parse_ints(const std::string& line) {
  std::istringstream ls(line);
  std::vector<int> out;
  int v;
  while (ls >> v) out.push_back(v);
  return out;
}

void validate_template(const EyeMeshTemplate& tpl, const std::string& where) {
  if (tpl.vertices.rows() != kEyeVertices || int(tpl.triangles.size()) != kEyeTriangles) {
    throw std::runtime_error(where + ": eye template must have 481 vertices and 928 triangles");
  }
  for (const auto& t : tpl.triangles)
    for (int v : t)
      if (v < 0 || v >= kEyeVertices) throw std::runtime_error(where + ": triangle index out of range");
  for (int v : tpl.eye_center_ring)
    if (v < 0 || v >= kEyeVertices) throw std::runtime_error(where + ": eye-centre index out of range");
  for (int v : tpl.iris_center_ring)
    if (v < 0 || v >= kEyeVertices) throw std::runtime_error(where + ": iris-centre index out of range");
  if (tpl.eye_center_ring.empty() || tpl.iris_center_ring.empty()) {
    throw std::runtime_error(where + ": empty centre index set");
  }
}

}  // namespace

EyeMeshTemplate load_eye_template(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open eye template " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# eye-template v1", 0) != 0) {
    throw std::runtime_error(path + ": missing '# eye-template v1' header");
  }
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  }
  if (lines.size() != std::size_t(kEyeVertices + kEyeTriangles + 2)) {
    throw std::runtime_error(path + ": unexpected line count " + std::to_string(lines.size()));
  }
  EyeMeshTemplate tpl;
  tpl.vertices.resize(kEyeVertices, 3);
  for (int i = 0; i < kEyeVertices; ++i) {
    std::istringstream ls(lines[i]);
    if (!(ls >> tpl.vertices(i, 0) >> tpl.vertices(i, 1) >> tpl.vertices(i, 2))) {
      throw std::runtime_error(path + ": malformed vertex line " + std::to_string(i));
    }
  }
  for (int i = 0; i < kEyeTriangles; ++i) {
    const auto v = parse_ints(lines[kEyeVertices + i]);
    if (v.size() != 3) throw std::runtime_error(path + ": malformed triangle line " + std::to_string(i));
    tpl.triangles.push_back({v[0], v[1], v[2]});
  }
  tpl.eye_center_ring = parse_ints(lines[kEyeVertices + kEyeTriangles]);
  tpl.iris_center_ring = parse_ints(lines[kEyeVertices + kEyeTriangles + 1]);
  validate_template(tpl, path);
  // Ring angles are implied by the vertices (all rings share ring_size).
  for (int r = 0; 1 + r * tpl.ring_size < kEyeVertices; ++r) {
    const double z = std::clamp(tpl.vertices(1 + r * tpl.ring_size, 2) / tpl.vertices.row(1 + r * tpl.ring_size).norm(),
                                -1.0, 1.0);
    tpl.ring_polar_deg.push_back(std::acos(z) / kDeg);
  }
  return tpl;
}

void save_eye_template(const std::string& path, const EyeMeshTemplate& tpl) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# eye-template v1\n" << std::setprecision(17);
  for (int i = 0; i < tpl.vertices.rows(); ++i) {
    out << tpl.vertices(i, 0) << ' ' << tpl.vertices(i, 1) << ' ' << tpl.vertices(i, 2) << '\n';
  }
  for (const auto& t : tpl.triangles) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  for (std::size_t i = 0; i < tpl.eye_center_ring.size(); ++i) out << (i ? " " : "") << tpl.eye_center_ring[i];
  out << '\n';
  for (std::size_t i = 0; i < tpl.iris_center_ring.size(); ++i) out << (i ? " " : "") << tpl.iris_center_ring[i];
  out << '\n';
}

const EyeMeshTemplate& default_eye_template() {
  static const EyeMeshTemplate tpl = load_eye_template(std::string(FREEHEAD_ASSET_DIR) + "/eye_template.txt");
  return tpl;
}

bool is_manifold(const EyeMeshTemplate& tpl) {
  std::map<std::pair<int, int>, int> uses;
  for (const auto& t : tpl.triangles) {
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      if (a == b) return false;
      if (a > b) std::swap(a, b);
      if (++uses[{a, b}] > 2) return false;
    }
  }
  return true;
}

Eigen::Vector3d mesh_to_gaze_vector(const EyeMesh& m, const EyeMeshTemplate& tpl) {
  if (m.rows() != tpl.vertices.rows()) throw GeometryError("eye mesh does not match the template topology");
  Eigen::Vector3d eye = Eigen::Vector3d::Zero(), iris = Eigen::Vector3d::Zero();
  for (int v : tpl.eye_center_ring) eye += m.row(v).transpose();
  for (int v : tpl.iris_center_ring) iris += m.row(v).transpose();
  eye /= double(tpl.eye_center_ring.size());
  iris /= double(tpl.iris_center_ring.size());
  const Eigen::Vector3d d = iris - eye;
  const double n = d.norm();
  if (!(n >= 1e-8)) throw GeometryError("degenerate eye mesh");
  return d / n;
}

GazeAngles gaze_vector_to_angles(const Eigen::Vector3d& g) {
  if (!g.allFinite()) throw GeometryError("non-finite gaze vector");
  if (std::abs(g.z()) < 1e-12) throw GeometryError("gaze vector with g_z = 0 is outside the front-facing domain");
  GazeAngles a;
  const double sign = std::signbit(g.x()) ? -1.0 : 1.0;
  a.theta = sign * std::atan(std::sqrt(g.x() * g.x() + g.y() * g.y()) / g.z()) / kDeg;
  a.phi = std::atan(g.y() / g.z()) / kDeg;
  return a;
}

bool gaze_angles_feasible(const GazeAngles& a) {
  if (!std::isfinite(a.theta) || !std::isfinite(a.phi)) return false;
  if (std::abs(a.theta) >= 90.0 || std::abs(a.phi) >= 90.0) return false;
  return std::abs(std::tan(a.phi * kDeg)) <= std::abs(std::tan(a.theta * kDeg)) * (1 + 1e-12) + 1e-15;
}

Eigen::Vector3d angles_to_gaze_vector(const GazeAngles& a) {
  if (!(std::abs(a.theta) < 90.0)) throw GeometryError("gaze theta must satisfy |theta| < 90");
  if (!gaze_angles_feasible(a)) {
    throw GeometryError("gaze angles (theta, phi) need |phi| <= |theta|; no unit vector matches");
  }
  const double t = std::tan(a.theta * kDeg);
  const double p = std::tan(a.phi * kDeg);
  const double gz = 1.0 / std::sqrt(1.0 + t * t);
  const double gy = p * gz;
  const double gx = (std::signbit(a.theta) ? -1.0 : 1.0) * std::sqrt(std::max(0.0, t * t - p * p)) * gz;
  return {gx, gy, gz};
}

Eigen::VectorXd edge_lengths(const EyeMesh& m, const EyeMeshTemplate& tpl) {
  if (m.rows() != tpl.vertices.rows()) throw GeometryError("eye mesh does not match the template topology");
  Eigen::VectorXd out(3 * tpl.triangles.size());
  Index k = 0;
  for (const auto& t : tpl.triangles) {
    for (int e = 0; e < 3; ++e) out(k++) = (m.row(t[e]) - m.row(t[(e + 1) % 3])).norm();
  }
  return out;
}

Eigen::Matrix3d rotation_from_z(const Eigen::Vector3d& g) {
  return Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), g.normalized()).toRotationMatrix();
}

EyeMesh synth_eye_mesh(const Eigen::Vector3d& gaze, const Eigen::Vector3d& center, double radius,
                       const EyeMeshTemplate& tpl) {
  if (!(radius > 0)) throw GeometryError("eye radius must be positive");
  const Eigen::Matrix3d R = rotation_from_z(gaze);
  EyeMesh m = (radius * tpl.vertices * R.transpose()).rowwise() + center.transpose();
  return m;
}

EyeMesh synth_eye_mesh(const GazeAngles& target, const Eigen::Vector3d& center, double radius,
                       const EyeMeshTemplate& tpl) {
  return synth_eye_mesh(angles_to_gaze_vector(target), center, radius, tpl);
}

template <typename T>
Var<T> edge_lengths(const Var<T>& mesh, const EyeMeshTemplate& tpl) {
  std::vector<int> a, b;
  a.reserve(3 * tpl.triangles.size());
  b.reserve(3 * tpl.triangles.size());
  for (const auto& t : tpl.triangles) {
    for (int e = 0; e < 3; ++e) {
      a.push_back(t[e]);
      b.push_back(t[(e + 1) % 3]);
    }
  }
  const Var<T> d = index_select(mesh, 1, a) - index_select(mesh, 1, b);
  const int B = mesh.dim(0);
  return reshape(sqrt(sum_dim(square(d), 2)), Shape{B, int(a.size())});
}

template <typename T>
Var<T> gaze_vectors(const Var<T>& mesh, const EyeMeshTemplate& tpl) {
  const int B = mesh.dim(0);
  const Var<T> iris = mean_dim(index_select(mesh, 1, tpl.iris_center_ring), 1);
  const Var<T> eye = mean_dim(index_select(mesh, 1, tpl.eye_center_ring), 1);
  const Var<T> d = reshape(iris - eye, Shape{B, 3});
  return d / sqrt(add_scalar(sum_dim(square(d), 1), T(1e-12)));
}

template Var<float> edge_lengths(const Var<float>&, const EyeMeshTemplate&);
template Var<double> edge_lengths(const Var<double>&, const EyeMeshTemplate&);
template Var<float> gaze_vectors(const Var<float>&, const EyeMeshTemplate&);
template Var<double> gaze_vectors(const Var<double>&, const EyeMeshTemplate&);

}  // namespace freehead
