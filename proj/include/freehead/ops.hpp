#pragma once

#include "freehead/autograd.hpp"

#include <optional>
#include <vector>

// Differentiable free functions over Var<T>. Image tensors are NCHW.
// Binary arithmetic broadcasts NumPy-style (right-aligned, size-1 dims).

namespace freehead {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> mul_scalar(const Var<T>& a, T s);

template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2));
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> softplus(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> sqrt(const Var<T>& a);
template <typename T> Var<T> abs(const Var<T>& a);
template <typename T> Var<T> sin(const Var<T>& a);
template <typename T> Var<T> cos(const Var<T>& a);
/// Clamps to [lo, hi] (zero gradient outside), then arccos.
template <typename T> Var<T> acos_clamped(const Var<T>& a, T lo, T hi);
template <typename T> Var<T> clamp(const Var<T>& a, T lo, T hi);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
/// Sum over one axis, keeping it with size 1.
template <typename T> Var<T> sum_dim(const Var<T>& a, int dim);
template <typename T> Var<T> mean_dim(const Var<T>& a, int dim);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T> Var<T> narrow(const Var<T>& a, int dim, int start, int length);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int dim);
template <typename T> Var<T> index_select(const Var<T>& a, int dim, const std::vector<int>& indices);
template <typename T> Var<T> permute(const Var<T>& a, const std::vector<int>& order);

/// (B,n,k)x(B,k,m) or (n,k)x(k,m).
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x (N,in), weight (out,in), optional bias (out).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
/// Softmax over the last axis with max subtraction.
template <typename T> Var<T> softmax_last(const Var<T>& a);

struct ConvOptions {
  int stride = 1;
  int padding = 0;
};
/// x (N,C,H,W), weight (O,C,k,k), optional bias (O); zero padding.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvOptions opt);

/// Training mode normalizes with batch statistics and updates running stats in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5));
/// Parameter-free per-(n,c) normalization over H, W.
template <typename T> Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));

template <typename T> Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int padding);
/// Padding cells are excluded from the average.
template <typename T> Var<T> avg_pool2d(const Var<T>& x, int kernel, int stride, int padding);
/// (N,C,H,W) -> (N,C).
template <typename T> Var<T> global_avg_pool(const Var<T>& x);
template <typename T> Var<T> pixel_shuffle(const Var<T>& x, int factor);
/// Half-pixel-centre bilinear resampling (align_corners = false).
template <typename T> Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);

/// Bilinear sampling at absolute pixel coordinates. coords is (N,2,Ho,Wo)
/// holding (x, y); samples outside the grid read zero.
template <typename T> Var<T> grid_sample(const Var<T>& x, const Var<T>& coords);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a) { return neg(a); }
template <typename T> Var<T> operator*(const Var<T>& a, T s) { return mul_scalar(a, s); }
template <typename T> Var<T> operator*(T s, const Var<T>& a) { return mul_scalar(a, s); }
template <typename T> Var<T> operator+(const Var<T>& a, T s) { return add_scalar(a, s); }
template <typename T> Var<T> operator-(const Var<T>& a, T s) { return add_scalar(a, T(-s)); }

template <typename T> Var<T> constant(Tensor<T> value) { return Var<T>(std::move(value), false); }

}  // namespace freehead
