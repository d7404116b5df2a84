#pragma once

#include "freehead/gaze_geometry.hpp"

#include <array>
#include <vector>

namespace freehead {

struct Polyline {
  std::vector<int> indices;
  bool closed = false;
};

struct SketchSpec {
  int height = 256;
  int width = 256;
  std::vector<Polyline> polylines = default_polylines();
  std::array<int, 6> left_eye{36, 37, 38, 39, 40, 41};
  std::array<int, 6> right_eye{42, 43, 44, 45, 46, 47};

  static std::vector<Polyline> default_polylines();
};

/// pixels is (3, H, W) in [0, 1]. Channel 0 holds the line drawing with
/// brightness falling off with depth; channels 1 and 2 hold the gaze angles
/// inside the eye polygons.
struct SketchImage {
  Tensor<float> pixels;
  int clipped_points = 0;
};

/// Pixel position of a normalized coordinate along an axis of n pixels.
inline double to_pixel(double v, int n) { return (v + 1.0) / 2.0 * (n - 1); }

/// 1 at the nearest depth (z = -1) down to 0.5 at z = +1.
inline float depth_shade(double z) { return float(1.0 - (z + 1.0) / 4.0); }

inline float gaze_code(double angle_deg) { return float((angle_deg + 90.0) / 180.0); }

SketchImage draw_sketch(const Keypoints3D& p, const GazeAngles& gaze_left, const GazeAngles& gaze_right,
                        const SketchSpec& spec = {});

/// Pixels whose centres fall inside the polygon (even-odd rule).
std::vector<std::pair<int, int>> polygon_pixels(const std::vector<Eigen::Vector2d>& poly, int height, int width);

}  // namespace freehead
