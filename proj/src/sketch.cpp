#include "freehead/sketch.hpp"

#include <algorithm>
#include <cmath>

namespace freehead {

std::vector<Polyline> SketchSpec::default_polylines() {
  auto range = [](int a, int b, bool closed) {
    Polyline p;
    for (int i = a; i <= b; ++i) p.indices.push_back(i);
    p.closed = closed;
    return p;
  };
  return {range(0, 16, false),  range(17, 21, false), range(22, 26, false), range(27, 30, false),
          range(31, 35, false), range(36, 41, true),  range(42, 47, true),  range(48, 59, true),
          range(60, 67, true)};
}

std::vector<std::pair<int, int>> polygon_pixels(const std::vector<Eigen::Vector2d>& poly, int height, int width) {
  std::vector<std::pair<int, int>> out;
  const std::size_t n = poly.size();
  if (n < 3) return out;
  double ymin = poly[0].y(), ymax = ymin;
  for (const auto& v : poly) {
    ymin = std::min(ymin, v.y());
    ymax = std::max(ymax, v.y());
  }
  const int r0 = std::max(0, int(std::ceil(ymin))), r1 = std::min(height - 1, int(std::floor(ymax)));
  std::vector<double> xs;
  for (int r = r0; r <= r1; ++r) {
    const double y = r;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d& a = poly[i];
      const Eigen::Vector2d& b = poly[(i + 1) % n];
      if ((a.y() <= y && y < b.y()) || (b.y() <= y && y < a.y())) {
        xs.push_back(a.x() + (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y()));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int c0 = std::max(0, int(std::ceil(xs[k])));
      const int c1 = std::min(width - 1, int(std::ceil(xs[k + 1])) - 1);
      for (int c = c0; c <= c1; ++c) out.emplace_back(r, c);
    }
  }
  return out;
}

namespace {

struct Projected {
  int x, y;
  double z;
};

void draw_line(Tensor<float>& img, int W, const Projected& a, const Projected& b) {
  int x0 = a.x, y0 = a.y;
  const int dx = std::abs(b.x - a.x), dy = -std::abs(b.y - a.y);
  const int sx = a.x < b.x ? 1 : -1, sy = a.y < b.y ? 1 : -1;
  const int steps = std::max(dx, -dy);
  int err = dx + dy;
  for (int i = 0;; ++i) {
    const double t = steps == 0 ? 0.0 : double(i) / steps;
    const float v = depth_shade(a.z + t * (b.z - a.z));
    float& px = img[Index(y0) * W + x0];
    px = std::max(px, v);
    if (x0 == b.x && y0 == b.y) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

SketchImage draw_sketch(const Keypoints3D& p, const GazeAngles& gaze_left, const GazeAngles& gaze_right,
                        const SketchSpec& spec) {
  const int H = spec.height, W = spec.width;
  if (H < 2 || W < 2) throw std::invalid_argument("sketch canvas must be at least 2x2");
  if (p.rows() != kKeypoints) throw std::invalid_argument("sketch needs 68 key-points");
  if (!p.allFinite()) throw std::invalid_argument("non-finite key-points");
  SketchImage out;
  out.pixels = Tensor<float>(Shape{3, H, W});

  std::vector<Projected> pts(kKeypoints);
  std::vector<Eigen::Vector2d> sub(kKeypoints);
  for (int k = 0; k < kKeypoints; ++k) {
    const double x = std::clamp(p(k, 0), -1.0, 1.0);
    const double y = std::clamp(p(k, 1), -1.0, 1.0);
    const double z = std::clamp(p(k, 2), -1.0, 1.0);
    if (x != p(k, 0) || y != p(k, 1) || z != p(k, 2)) ++out.clipped_points;
    sub[k] = {to_pixel(x, W), to_pixel(y, H)};
    pts[k] = {int(std::lround(sub[k].x())), int(std::lround(sub[k].y())), z};
  }

  for (const auto& line : spec.polylines) {
    const std::size_t n = line.indices.size();
    for (std::size_t i = 0; i + 1 < n; ++i) draw_line(out.pixels, W, pts[line.indices[i]], pts[line.indices[i + 1]]);
    if (line.closed && n > 2) draw_line(out.pixels, W, pts[line.indices[n - 1]], pts[line.indices[0]]);
    if (n == 1) draw_line(out.pixels, W, pts[line.indices[0]], pts[line.indices[0]]);
  }

  auto fill_eye = [&](const std::array<int, 6>& idx, const GazeAngles& g) {
    std::vector<Eigen::Vector2d> poly;
    for (int i : idx) poly.push_back(sub[i]);
    const float c1 = gaze_code(g.theta), c2 = gaze_code(g.phi);
    const Index plane = Index(H) * W;
    for (const auto& [r, c] : polygon_pixels(poly, H, W)) {
      out.pixels[plane + Index(r) * W + c] = c1;
      out.pixels[2 * plane + Index(r) * W + c] = c2;
    }
  };
  fill_eye(spec.left_eye, gaze_left);
  fill_eye(spec.right_eye, gaze_right);
  out.pixels.array() = out.pixels.array().max(0.0f).min(1.0f);
  return out;
}

}  // namespace freehead
