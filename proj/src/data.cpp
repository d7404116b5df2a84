#include "freehead/data.hpp"

#include "freehead/image_io.hpp"
#include "freehead/sketch.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace freehead {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Clip records

bool operator==(const ClipRecord& a, const ClipRecord& b) {
  auto same_gaze = [](const std::vector<std::optional<GazeAngles>>& x, const std::vector<std::optional<GazeAngles>>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].has_value() != y[i].has_value()) return false;
      if (x[i] && (x[i]->theta != y[i]->theta || x[i]->phi != y[i]->phi)) return false;
    }
    return true;
  };
  if (a.id != b.id || a.frames != b.frames || a.resolution != b.resolution || a.keypoints.size() != b.keypoints.size() ||
      a.euler.size() != b.euler.size() || a.clamped_coordinates != b.clamped_coordinates) {
    return false;
  }
  for (std::size_t i = 0; i < a.keypoints.size(); ++i)
    if (a.keypoints[i] != b.keypoints[i]) return false;
  for (std::size_t i = 0; i < a.euler.size(); ++i) {
    if (a.euler[i].pitch != b.euler[i].pitch || a.euler[i].yaw != b.euler[i].yaw || a.euler[i].roll != b.euler[i].roll)
      return false;
  }
  return same_gaze(a.gaze_left, b.gaze_left) && same_gaze(a.gaze_right, b.gaze_right);
}

namespace {

std::optional<GazeAngles> read_gaze(const json& f, const char* key, int frame) {
  if (!f.contains(key) || f[key].is_null()) return std::nullopt;
  const auto& g = f[key];
  if (!g.is_array() || g.size() != 2) throw DataError("frame " + std::to_string(frame) + ": " + key + " needs [theta, phi]");
  return GazeAngles{g[0].get<double>(), g[1].get<double>()};
}

}  // namespace

ClipRecord ingest_clip(const std::string& dir) {
  const fs::path root(dir);
  const fs::path ann = root / "landmarks.json";
  std::ifstream in(ann);
  if (!in) throw DataError("missing annotation file " + ann.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed " + ann.string() + ": " + e.what());
  }
  if (j.value("version", 0) != 1) throw DataError(ann.string() + ": unsupported version");
  if (!j.contains("frames") || !j["frames"].is_array()) throw DataError(ann.string() + ": missing frames array");

  ClipRecord rec;
  rec.id = root.filename().string();
  rec.directory = root.string();
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".png") rec.frames.push_back(e.path().string());
  }
  std::sort(rec.frames.begin(), rec.frames.end());
  const auto& frames = j["frames"];
  if (frames.size() != rec.frames.size()) {
    const std::size_t n = std::min(frames.size(), rec.frames.size());
    throw DataError(ann.string() + ": " + std::to_string(frames.size()) + " annotations for " +
                    std::to_string(rec.frames.size()) + " frames (first unannotated frame index " + std::to_string(n) +
                    ")");
  }
  if (rec.frames.empty()) throw DataError(dir + ": clip has no frames");

  const Keypoints3D& tpl = default_keypoint_template();
  for (int i = 0; i < int(frames.size()); ++i) {
    const auto& f = frames[i];
    if (!f.contains("kp") || !f["kp"].is_array() || f["kp"].size() != std::size_t(kKeypoints)) {
      throw DataError("frame " + std::to_string(i) + ": kp must hold 68 points");
    }
    Keypoints3D kp(kKeypoints, 3);
    for (int k = 0; k < kKeypoints; ++k) {
      const auto& pt = f["kp"][k];
      if (!pt.is_array() || pt.size() != 3) throw DataError("frame " + std::to_string(i) + ": point " + std::to_string(k) + " needs 3 values");
      for (int c = 0; c < 3; ++c) {
        double v = pt[c].get<double>();
        if (!std::isfinite(v)) throw DataError("frame " + std::to_string(i) + ": non-finite landmark");
        if (v < -1.0 || v > 1.0) {
          v = std::clamp(v, -1.0, 1.0);
          ++rec.clamped_coordinates;
        }
        kp(k, c) = v;
      }
    }
    if (f.contains("euler") && !f["euler"].is_null()) {
      const auto& e = f["euler"];
      if (!e.is_array() || e.size() != 3) throw DataError("frame " + std::to_string(i) + ": euler needs 3 values");
      rec.euler.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>()});
    } else {
      rec.euler.push_back(matrix_to_euler(fit_pose_to_template(kp, tpl).pose.rotation));
    }
    rec.keypoints.push_back(std::move(kp));
    rec.gaze_left.push_back(read_gaze(f, "gaze_l", i));
    rec.gaze_right.push_back(read_gaze(f, "gaze_r", i));
  }

  for (std::size_t i = 0; i < rec.frames.size(); ++i) {
    const Tensor<float> img = read_png(rec.frames[i]);
    if (img.dim(1) != img.dim(2)) throw DataError("frame " + std::to_string(i) + " is not square");
    if (i == 0) rec.resolution = img.dim(1);
    if (img.dim(1) != rec.resolution) throw DataError("frame " + std::to_string(i) + " differs in resolution");
  }
  return rec;
}

void write_landmarks(const std::string& path, const ClipRecord& rec) {
  json frames = json::array();
  for (int i = 0; i < rec.size(); ++i) {
    json f;
    json kp = json::array();
    for (int k = 0; k < kKeypoints; ++k) kp.push_back({rec.keypoints[i](k, 0), rec.keypoints[i](k, 1), rec.keypoints[i](k, 2)});
    f["kp"] = std::move(kp);
    if (i < int(rec.euler.size())) f["euler"] = {rec.euler[i].pitch, rec.euler[i].yaw, rec.euler[i].roll};
    if (i < int(rec.gaze_left.size()) && rec.gaze_left[i]) f["gaze_l"] = {rec.gaze_left[i]->theta, rec.gaze_left[i]->phi};
    if (i < int(rec.gaze_right.size()) && rec.gaze_right[i]) f["gaze_r"] = {rec.gaze_right[i]->theta, rec.gaze_right[i]->phi};
    frames.push_back(std::move(f));
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << json{{"version", 1}, {"frames", frames}}.dump(1) << "\n";
}

TrainingPair sample_pair(int n, int shots, std::mt19937_64& rng) {
  if (shots < 1) throw DataError("need at least one source frame");
  if (n < shots + 1) {
    throw DataError("clip has " + std::to_string(n) + " frames; " + std::to_string(shots + 1) + " needed");
  }
  // Partial Fisher-Yates over the frame indices.
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i <= shots; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  TrainingPair p;
  p.target = idx[0];
  p.sources.assign(idx.begin() + 1, idx.begin() + 1 + shots);
  return p;
}

TrainingPair sample_pair(const ClipRecord& record, int shots, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_pair(record.size(), shots, rng);
}

// ---------------------------------------------------------------------------
// Synthetic faces

Keypoints3D expression_offsets(const Expression& e) {
  Keypoints3D d = Keypoints3D::Zero(kKeypoints, 3);
  // Jaw drops with the mouth.
  for (int k = 5; k <= 11; ++k) d(k, 1) += 0.06 * e.mouth_open * (1.0 - std::abs(k - 8) / 4.0);
  for (int k : {55, 56, 57, 58, 59, 65, 66, 67}) d(k, 1) += 0.12 * e.mouth_open;
  for (int k : {49, 50, 51, 52, 53, 61, 62, 63}) d(k, 1) -= 0.02 * e.mouth_open;
  for (int k : {48, 60}) d(k, 0) -= 0.04 * e.smile, d(k, 1) -= 0.03 * e.smile;
  for (int k : {54, 64}) d(k, 0) += 0.04 * e.smile, d(k, 1) -= 0.03 * e.smile;
  for (int k = 17; k <= 26; ++k) d(k, 1) -= 0.06 * e.brow_raise;
  return d;
}

FaceState compose_face(const Keypoints3D& canonical, const EulerAngles& euler, double scale,
                       const Eigen::Vector3d& translation, const Expression& expression, const Eigen::Vector3d& gaze) {
  FaceState s;
  s.euler = euler;
  s.pose.scale = scale;
  s.pose.rotation = euler_to_matrix<double>(euler);
  s.pose.translation = translation;
  s.deformation = scale * expression_offsets(expression) * s.pose.rotation.transpose();
  s.keypoints = from_canonical(canonical, s.pose, s.deformation);
  s.gaze = gaze_vector_to_angles(gaze.normalized());
  return s;
}

namespace {

struct Canvas {
  int n;  // side in supersampled pixels
  int res, ss;
  std::vector<Eigen::Vector3d> px;

  Canvas(int res_, int ss_) : n(res_ * ss_), res(res_), ss(ss_), px(std::size_t(n) * n) {}

  // Normalised coordinate -> supersampled pixel, aligned with the sketch grid.
  double map(double v) const { return to_pixel(v, res) * ss + (ss - 1) / 2.0; }
  Eigen::Vector2d map(const Eigen::Vector3d& p) const { return {map(p.x()), map(p.y())}; }
  double unit() const { return (res - 1) * ss / 2.0; }  // pixels per normalised unit

  void fill(const std::vector<Eigen::Vector2d>& poly, const Eigen::Vector3d& c) {
    for (auto [y, x] : polygon_pixels(poly, n, n)) px[std::size_t(y) * n + x] = c;
  }
  template <typename F>
  void fill_shaded(const std::vector<Eigen::Vector2d>& poly, F&& colour) {
    for (auto [y, x] : polygon_pixels(poly, n, n)) px[std::size_t(y) * n + x] = colour(x, y);
  }
  void disk(const Eigen::Vector2d& c, double r, const Eigen::Vector3d& col, const std::vector<char>* mask = nullptr) {
    const int x0 = std::max(0, int(std::floor(c.x() - r))), x1 = std::min(n - 1, int(std::ceil(c.x() + r)));
    const int y0 = std::max(0, int(std::floor(c.y() - r))), y1 = std::min(n - 1, int(std::ceil(c.y() + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if ((Eigen::Vector2d(x, y) - c).squaredNorm() > r * r) continue;
        const std::size_t q = std::size_t(y) * n + x;
        if (!mask || (*mask)[q]) px[q] = col;
      }
  }
  void stroke(const std::vector<Eigen::Vector2d>& pts, double width, const Eigen::Vector3d& col) {
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const Eigen::Vector2d a = pts[i], b = pts[i + 1], ab = b - a;
      const double len2 = std::max(ab.squaredNorm(), 1e-12);
      const int x0 = std::max(0, int(std::floor(std::min(a.x(), b.x()) - width)));
      const int x1 = std::min(n - 1, int(std::ceil(std::max(a.x(), b.x()) + width)));
      const int y0 = std::max(0, int(std::floor(std::min(a.y(), b.y()) - width)));
      const int y1 = std::min(n - 1, int(std::ceil(std::max(a.y(), b.y()) + width)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const Eigen::Vector2d p(x, y);
          const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
          if ((p - a - t * ab).squaredNorm() <= width * width) px[std::size_t(y) * n + x] = col;
        }
    }
  }
  std::vector<char> mask_of(const std::vector<Eigen::Vector2d>& poly) const {
    std::vector<char> m(px.size(), 0);
    for (auto [y, x] : polygon_pixels(poly, n, n)) m[std::size_t(y) * n + x] = 1;
    return m;
  }

  Tensor<float> resolve() const {
    Tensor<float> out(Shape{3, res, res});
    const double inv = 1.0 / (ss * ss);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int j = 0; j < ss; ++j)
          for (int i = 0; i < ss; ++i) acc += px[std::size_t(y * ss + j) * n + x * ss + i];
        acc *= inv;
        for (int c = 0; c < 3; ++c) out[(Index(c) * res + y) * res + x] = float(std::clamp(acc[c], 0.0, 1.0));
      }
    return out;
  }
};

// Closed arc in canonical space, transformed with the face pose.
std::vector<Eigen::Vector3d> canonical_arc(double rx, double ry, double cy, double z, double a0, double a1, int n) {
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i <= n; ++i) {
    const double a = a0 + (a1 - a0) * i / n;
    pts.emplace_back(rx * std::cos(a), cy + ry * std::sin(a), z);
  }
  return pts;
}

Eigen::Vector3d posed(const Eigen::Vector3d& c, const FaceState& s) {
  return s.pose.scale * s.pose.rotation * c + s.pose.translation;
}

}  // namespace

Tensor<float> render_face(const Keypoints3D& canonical, const FaceState& s, const FaceAppearance& look, int res,
                          int supersample) {
  const double pi = 3.14159265358979323846;
  Canvas cv(res, supersample);
  std::fill(cv.px.begin(), cv.px.end(), look.background);
  const Keypoints3D& p = s.keypoints;
  auto pt = [&](int k) { return cv.map(Eigen::Vector3d(p.row(k).transpose())); };

  // Hair cap behind the face, sized from the canonical jaw.
  const double half_w = 0.5 * (canonical(16, 0) - canonical(0, 0));
  const double jaw_y = 0.5 * (canonical(0, 1) + canonical(16, 1));
  std::vector<Eigen::Vector2d> hair;
  for (const auto& c : canonical_arc(1.2 * half_w, 0.98, jaw_y + 0.05, 0.3, pi, 2 * pi, 24)) hair.push_back(cv.map(posed(c, s)));
  for (int k = 16; k >= 0; k -= 4) hair.push_back(pt(k));
  cv.fill(hair, look.hair);

  // Skin: jaw line plus a forehead arc, lit from the upper right.
  std::vector<Eigen::Vector2d> face;
  for (int k = 0; k <= 16; ++k) face.push_back(pt(k));
  for (const auto& c : canonical_arc(half_w, 0.72, jaw_y, 0.1, 0.0, -pi, 16)) face.push_back(cv.map(posed(c, s)));
  const double u = cv.unit(), mid = cv.map(0.0);
  cv.fill_shaded(face, [&](int x, int y) {
    const double shade = 1.0 + 0.18 * (x - mid) / u - 0.08 * (y - mid) / u;
    return Eigen::Vector3d(look.skin * shade);
  });
  for (const auto& spot : look.spots) cv.disk(cv.map(posed(spot.position, s)), spot.radius * s.pose.scale * u, spot.color);

  // Brows and nose.
  const double w = 0.028 * s.pose.scale * u;
  for (int b : {17, 22}) {
    std::vector<Eigen::Vector2d> line;
    for (int k = b; k < b + 5; ++k) line.push_back(pt(k));
    cv.stroke(line, w, look.brow);
  }
  const Eigen::Vector3d nose = look.skin * 0.7;
  std::vector<Eigen::Vector2d> bridge, base;
  for (int k = 27; k <= 30; ++k) bridge.push_back(pt(k));
  for (int k = 31; k <= 35; ++k) base.push_back(pt(k));
  cv.stroke(bridge, 0.6 * w, nose);
  cv.stroke(base, 0.6 * w, nose);

  // Eyes: sclera polygon, iris and pupil follow the gaze direction.
  const Eigen::Vector3d g = angles_to_gaze_vector(s.gaze);
  for (int e0 : {36, 42}) {
    std::vector<Eigen::Vector2d> eye;
    Eigen::Vector2d centre = Eigen::Vector2d::Zero();
    for (int k = e0; k < e0 + 6; ++k) eye.push_back(pt(k)), centre += pt(k) / 6.0;
    const double half = 0.5 * (pt(e0) - pt(e0 + 3)).norm();
    cv.fill(eye, Eigen::Vector3d(0.93, 0.93, 0.9));
    const auto mask = cv.mask_of(eye);
    const Eigen::Vector2d iris = centre + half * Eigen::Vector2d(g.x(), g.y());
    cv.disk(iris, 0.5 * half, look.iris, &mask);
    cv.disk(iris, 0.25 * half, Eigen::Vector3d(0.04, 0.04, 0.05), &mask);
  }

  // Lips; the inner polygon shows the open mouth.
  std::vector<Eigen::Vector2d> outer, inner;
  for (int k = 48; k <= 59; ++k) outer.push_back(pt(k));
  for (int k = 60; k <= 67; ++k) inner.push_back(pt(k));
  cv.fill(outer, look.lip);
  cv.fill(inner, Eigen::Vector3d(0.25, 0.05, 0.07));
  return cv.resolve();
}

namespace {

Eigen::Vector3d random_colour(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

// Smooth trajectory: two sinusoids with random phase.
struct Wave {
  double a1, f1, p1, a2, f2, p2;
  double at(double t) const { return a1 * std::sin(f1 * t + p1) + a2 * std::sin(f2 * t + p2); }
};

Wave make_wave(std::mt19937_64& rng, double amplitude) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double two_pi = 6.283185307179586;
  return {amplitude * (0.6 + 0.3 * u(rng)), two_pi * (1.0 + 2.0 * u(rng)), two_pi * u(rng),
          amplitude * 0.3 * u(rng), two_pi * (3.0 + 3.0 * u(rng)), two_pi * u(rng)};
}

}  // namespace

std::vector<FixtureClip> make_synthetic_fixture_set(const FixtureOptions& opt) {
  if (opt.identities < 1 || opt.frames < 2 || opt.resolution < 16) throw DataError("fixture set too small");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const Keypoints3D& tpl = default_keypoint_template();
  std::vector<FixtureClip> set;
  for (int id = 0; id < opt.identities; ++id) {
    FixtureClip clip;
    // Identity: global proportions plus small per-point jitter.
    Keypoints3D c = tpl;
    const double wide = 1.0 + 0.08 * nd(rng), tall = 1.0 + 0.06 * nd(rng);
    c.col(0) *= wide;
    c.col(1) *= tall;
    const double eye_gap = 0.03 * nd(rng), mouth_w = 1.0 + 0.1 * nd(rng), nose_len = 0.03 * nd(rng);
    for (int k = 36; k <= 41; ++k) c(k, 0) -= eye_gap;
    for (int k = 42; k <= 47; ++k) c(k, 0) += eye_gap;
    for (int k = 48; k <= 67; ++k) c(k, 0) *= mouth_w;
    for (int k = 30; k <= 35; ++k) c(k, 1) += nose_len;
    for (int k = 0; k < kKeypoints; ++k)
      for (int j = 0; j < 3; ++j) c(k, j) += 0.008 * nd(rng);
    clip.canonical = c;

    FaceAppearance& look = clip.appearance;
    look.background = random_colour(rng, 0.1, 0.9);
    look.hair = random_colour(rng, 0.05, 0.5);
    const double tone = 0.45 + 0.45 * ud(rng);
    look.skin = Eigen::Vector3d(tone, tone * (0.75 + 0.1 * ud(rng)), tone * (0.6 + 0.15 * ud(rng)));
    look.brow = look.hair * 0.8;
    look.lip = Eigen::Vector3d(0.55 + 0.3 * ud(rng), 0.2 + 0.15 * ud(rng), 0.25 + 0.15 * ud(rng));
    look.iris = random_colour(rng, 0.1, 0.6);
    const int spots = 3 + int(4 * ud(rng));
    for (int k = 0; k < spots; ++k) {
      const Eigen::Vector3d pos(-0.5 + ud(rng), ud(rng) < 0.5 ? -0.65 + 0.2 * ud(rng) : 0.05 + 0.2 * ud(rng), -0.05);
      look.spots.push_back({pos, 0.025 + 0.03 * ud(rng), random_colour(rng, 0.1, 0.9)});
    }

    const Wave yaw = make_wave(rng, 25), pitch = make_wave(rng, 12), roll = make_wave(rng, 8);
    const Wave gx = make_wave(rng, 25), gy = make_wave(rng, 15), mouth = make_wave(rng, 1), smile = make_wave(rng, 1),
               brow = make_wave(rng, 1), tx = make_wave(rng, 0.05), ty = make_wave(rng, 0.04), sc = make_wave(rng, 0.06);

    char name[32];
    std::snprintf(name, sizeof name, "clip_%02d", id);
    clip.record.id = name;
    clip.record.resolution = opt.resolution;
    for (int f = 0; f < opt.frames; ++f) {
      const double t = double(f) / opt.frames;
      const EulerAngles e{pitch.at(t), yaw.at(t), roll.at(t)};
      const Expression ex{std::clamp(0.5 + 0.6 * mouth.at(t), 0.0, 1.0), std::clamp(smile.at(t), -1.0, 1.0),
                          std::clamp(0.5 + 0.6 * brow.at(t), 0.0, 1.0)};
      const double a = gx.at(t) * kDeg, b = gy.at(t) * kDeg;
      const Eigen::Vector3d gaze(std::sin(a) * std::cos(b), std::sin(b), std::cos(a) * std::cos(b));
      FaceState st = compose_face(c, e, 0.92 + sc.at(t), Eigen::Vector3d(tx.at(t), ty.at(t), 0.0), ex, gaze);
      clip.images.push_back(render_face(c, st, look, opt.resolution));
      clip.record.keypoints.push_back(st.keypoints);
      clip.record.euler.push_back(e);
      clip.record.gaze_left.push_back(st.gaze);
      clip.record.gaze_right.push_back(st.gaze);
      char frame[32];
      std::snprintf(frame, sizeof frame, "frame_%04d.png", f);
      clip.record.frames.push_back(frame);
      clip.states.push_back(std::move(st));
    }
    set.push_back(std::move(clip));
  }
  return set;
}

void write_fixture_set(const std::string& root, const std::vector<FixtureClip>& set) {
  for (const auto& clip : set) {
    const fs::path dir = fs::path(root) / clip.record.id;
    fs::create_directories(dir);
    ClipRecord rec = clip.record;
    for (std::size_t i = 0; i < clip.images.size(); ++i) {
      const fs::path file = dir / fs::path(clip.record.frames[i]).filename();
      write_png(file.string(), clip.images[i]);
    }
    write_landmarks((dir / "landmarks.json").string(), rec);
  }
}

// ---------------------------------------------------------------------------
// Synthetic eyes

EyeSample make_eye_sample(std::mt19937_64& rng, const EyeSampleOptions& opt) {
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  std::normal_distribution<double> nd;
  const int E = opt.resolution, ss = 2, n = E * ss;
  auto U = [&](double lo, double hi) { return lo + (hi - lo) * ud(rng); };

  const double a = U(-opt.max_yaw, opt.max_yaw) * kDeg, b = U(-opt.max_pitch, opt.max_pitch) * kDeg;
  const Eigen::Vector3d g(std::sin(a) * std::cos(b), std::sin(b), std::cos(a) * std::cos(b));
  const double r = 0.625 * U(0.9, 1.1);
  const Eigen::Vector2d c(U(-0.06, 0.06), U(-0.06, 0.06));
  const double half_w = r * U(0.95, 1.1);
  const double upper = r * std::max(0.2, U(0.45, 0.7) - 0.35 * g.y());
  const double lower = r * U(0.3, 0.45);
  const double tilt = U(-0.08, 0.08);
  const double cos_iris = std::cos(30.0 * kDeg), cos_pupil = std::cos(U(10.0, 15.0) * kDeg);

  const double tone = U(0.35, 0.9);
  const Eigen::Vector3d skin(tone, tone * U(0.7, 0.85), tone * U(0.55, 0.75));
  const Eigen::Vector3d iris = random_colour(rng, 0.05, 0.55);
  const double sclera = U(0.75, 0.95);
  const double light = U(-0.3, 0.3);

  std::vector<Eigen::Vector3d> px(std::size_t(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      // Supersample centre -> crop-normalised coordinate.
      const double vx = ((x + 0.5) / ss - 0.5) / (E - 1) * 2.0 - 1.0;
      const double vy = ((y + 0.5) / ss - 0.5) / (E - 1) * 2.0 - 1.0;
      const double dx = vx - c.x(), dy = vy - c.y() - tilt * dx;
      const double s = std::clamp(dx / half_w, -1.0, 1.0);
      const double profile = 1.0 - s * s;
      const bool open = std::abs(dx) < half_w && dy > -upper * profile && dy < lower * profile;
      Eigen::Vector3d col;
      if (open) {
        const double d2 = dx * dx + (vy - c.y()) * (vy - c.y());
        if (d2 < r * r) {
          const Eigen::Vector3d u(dx / r, (vy - c.y()) / r, std::sqrt(r * r - d2) / r);
          const double k = u.dot(g);
          if (k > cos_pupil) {
            col = Eigen::Vector3d::Constant(0.03);
          } else if (k > cos_iris) {
            const double ring = (k - cos_iris) / (cos_pupil - cos_iris);
            col = iris * (0.6 + 0.5 * ring);
          } else {
            col = Eigen::Vector3d::Constant(sclera * (0.75 + 0.25 * u.z()));
          }
          // Lid shadow along the upper edge.
          if (dy < -upper * profile + 0.06) col *= 0.7;
        } else {
          col = Eigen::Vector3d::Constant(0.1);
        }
      } else {
        col = skin * (1.0 + light * vx - 0.1 * vy);
        if (std::abs(dx) < half_w && std::abs(dy + upper * profile + 0.12) < 0.02) col *= 0.75;  // crease
      }
      px[std::size_t(y) * n + x] = col;
    }

  const double gain = U(0.8, 1.2), bias = U(-0.08, 0.08), noise = U(0.0, 0.03);
  Tensor<float> img(Shape{3, E, E});
  for (int y = 0; y < E; ++y)
    for (int x = 0; x < E; ++x) {
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (int j = 0; j < ss; ++j)
        for (int i = 0; i < ss; ++i) acc += px[std::size_t(y * ss + j) * n + x * ss + i];
      acc /= ss * ss;
      for (int ch = 0; ch < 3; ++ch) {
        img[(Index(ch) * E + y) * E + x] = float(std::clamp(gain * acc[ch] + bias + noise * nd(rng), 0.0, 1.0));
      }
    }
  if (ud(rng) < opt.low_res_probability) {
    const int low = int(U(10.0, 20.0));
    img = resize_image(resize_image(img, low, low), E, E);
  }

  EyeSample out;
  out.image = std::move(img);
  out.mesh = synth_eye_mesh(g, Eigen::Vector3d(c.x(), c.y(), 0.0), r, default_eye_template());
  out.gaze = g;
  return out;
}

EyeCrop eye_crop(const Keypoints3D& p, bool left, int height, int width) {
  const int e0 = left ? 36 : 42;
  EyeCrop c;
  for (int k = e0; k < e0 + 6; ++k) {
    c.cx += to_pixel(p(k, 0), width) / 6.0;
    c.cy += to_pixel(p(k, 1), height) / 6.0;
  }
  const double dx = to_pixel(p(e0, 0), width) - to_pixel(p(e0 + 3, 0), width);
  const double dy = to_pixel(p(e0, 1), height) - to_pixel(p(e0 + 3, 1), height);
  c.side = std::max(2.0, 1.6 * std::hypot(dx, dy));
  return c;
}

}  // namespace freehead
