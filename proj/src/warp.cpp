#include "freehead/warp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace freehead {

namespace {

template <typename T>
Tensor<T> pixel_grid(int N, int H, int W) {
  Tensor<T> g(Shape{N, 2, H, W});
  const Index plane = Index(H) * W;
  for (int n = 0; n < N; ++n) {
    T* gx = g.data() + Index(n) * 2 * plane;
    T* gy = gx + plane;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        gx[Index(y) * W + x] = T(x);
        gy[Index(y) * W + x] = T(y);
      }
  }
  return g;
}

}  // namespace

template <typename T>
Var<T> backward_warp(const Var<T>& x, const Var<T>& flow) {
  if (x.ndim() != 4 || flow.ndim() != 4 || flow.dim(1) != 2 || flow.dim(0) != x.dim(0) ||
      flow.dim(2) != x.dim(2) || flow.dim(3) != x.dim(3)) {
    throw ShapeError("backward_warp: flow " + shape_str(flow.shape()) + " does not match " + shape_str(x.shape()));
  }
  const Var<T> coords = flow + constant(pixel_grid<T>(x.dim(0), x.dim(2), x.dim(3)));
  return grid_sample(x, coords);
}

template <typename T>
Var<T> resize_flow(const Var<T>& flow, int height, int width) {
  if (flow.ndim() != 4 || flow.dim(1) != 2) throw ShapeError("resize_flow expects (N,2,H,W), got " + shape_str(flow.shape()));
  const int H = flow.dim(2), W = flow.dim(3);
  if (H == height && W == width) return flow;
  Tensor<T> ratio(Shape{1, 2, 1, 1});
  ratio[0] = T(width) / T(W);
  ratio[1] = T(height) / T(H);
  return resize_bilinear(flow, height, width) * constant(ratio);
}

template <typename T>
Var<T> attention_weights(const std::vector<Var<T>>& logits) {
  if (logits.empty()) throw std::invalid_argument("attention blend needs at least one source");
  for (const auto& m : logits) {
    if (m.ndim() != 4 || m.dim(1) != 1 || m.shape() != logits[0].shape()) {
      throw ShapeError("attention logits must share shape (N,1,H,W), got " + shape_str(m.shape()));
    }
  }
  const Var<T> stacked = logits.size() == 1 ? logits[0] : concat(logits, 1);
  // The shift cancels in the ratio, so a detached max keeps gradients exact.
  const Tensor<T>& v = stacked.value();
  const int N = v.dim(0), M = v.dim(1);
  const Index plane = Index(v.dim(2)) * v.dim(3);
  Tensor<T> peak(Shape{N, 1, v.dim(2), v.dim(3)}, -std::numeric_limits<T>::infinity());
  for (int n = 0; n < N; ++n)
    for (int j = 0; j < M; ++j)
      for (Index q = 0; q < plane; ++q) {
        T& p = peak[Index(n) * plane + q];
        p = std::max(p, v[(Index(n) * M + j) * plane + q]);
      }
  const Var<T> e = exp(stacked - constant(std::move(peak)));
  return e / sum_dim(e, 1);
}

template <typename T>
Var<T> attention_blend(const std::vector<Var<T>>& items, const std::vector<Var<T>>& logits) {
  if (items.empty()) throw std::invalid_argument("attention blend needs at least one source");
  if (items.size() != logits.size()) throw std::invalid_argument("attention blend: item and weight counts differ");
  for (const auto& it : items) {
    if (it.ndim() != 4 || it.shape() != items[0].shape()) {
      throw ShapeError("attention blend items must share one shape, got " + shape_str(it.shape()));
    }
  }
  const int H = items[0].dim(2), W = items[0].dim(3);
  std::vector<Var<T>> resized;
  resized.reserve(logits.size());
  for (const auto& m : logits) {
    resized.push_back(m.ndim() == 4 && (m.dim(2) != H || m.dim(3) != W) ? resize_bilinear(m, H, W) : m);
  }
  const Var<T> w = attention_weights(resized);
  Var<T> out;
  for (std::size_t j = 0; j < items.size(); ++j) {
    const Var<T> term = items[j] * narrow(w, 1, int(j), 1);
    out = out.defined() ? out + term : term;
  }
  return out;
}

Tensor<float> flow_to_color(const Tensor<float>& flow, float max_magnitude) {
  if (flow.ndim() != 3 || flow.dim(0) != 2) throw ShapeError("flow_to_color expects (2,H,W), got " + shape_str(flow.shape()));
  const int H = flow.dim(1), W = flow.dim(2);
  const Index plane = Index(H) * W;
  const float* fx = flow.data();
  const float* fy = fx + plane;
  float top = max_magnitude;
  if (top <= 0.0f) {
    for (Index q = 0; q < plane; ++q) top = std::max(top, std::hypot(fx[q], fy[q]));
  }
  Tensor<float> rgb(Shape{3, H, W});
  for (Index q = 0; q < plane; ++q) {
    const float mag = std::hypot(fx[q], fy[q]);
    const float v = top > 0.0f ? std::min(1.0f, mag / top) : 0.0f;
    float hue = std::atan2(fy[q], fx[q]) / (2.0f * std::numbers::pi_v<float>);
    if (hue < 0.0f) hue += 1.0f;
    // Full saturation HSV to RGB.
    const float h6 = hue * 6.0f;
    const int sector = int(h6) % 6;
    const float f = h6 - std::floor(h6);
    const float rise = v * f, fall = v * (1.0f - f);
    float r = 0, g = 0, b = 0;
    switch (sector) {
      case 0: r = v, g = rise; break;
      case 1: r = fall, g = v; break;
      case 2: g = v, b = rise; break;
      case 3: g = fall, b = v; break;
      case 4: r = rise, b = v; break;
      default: r = v, b = fall; break;
    }
    rgb[q] = r;
    rgb[plane + q] = g;
    rgb[2 * plane + q] = b;
  }
  return rgb;
}

#define FREEHEAD_INSTANTIATE_WARP(T)                                                        \
  template Var<T> backward_warp(const Var<T>&, const Var<T>&);                              \
  template Var<T> resize_flow(const Var<T>&, int, int);                                     \
  template Var<T> attention_weights(const std::vector<Var<T>>&);                            \
  template Var<T> attention_blend(const std::vector<Var<T>>&, const std::vector<Var<T>>&);

FREEHEAD_INSTANTIATE_WARP(float)
FREEHEAD_INSTANTIATE_WARP(double)

}  // namespace freehead
