#include "freehead/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace freehead {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    const int da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const int db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of `in` laid over `out`; zero on broadcast axes.
std::vector<Index> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t nd = out.size();
  std::vector<Index> strides(nd, 0);
  Index s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i_in = in.size() - 1 - k;
    const std::size_t i_out = nd - 1 - k;
    strides[i_out] = in[i_in] == 1 ? 0 : s;
    s *= in[i_in];
  }
  return strides;
}

template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb, F&& f) {
  const int nd = int(out.size());
  const Index total = numel(out);
  std::vector<int> idx(nd, 0);
  Index oa = 0, ob = 0;
  for (Index i = 0; i < total; ++i) {
    f(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < out[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      oa -= sa[d] * (out[d] - 1);
      ob -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinOp op) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<T> out(av.shape());
    switch (op) {
      case BinOp::Add: out.array() = av.array() + bv.array(); break;
      case BinOp::Sub: out.array() = av.array() - bv.array(); break;
      case BinOp::Mul: out.array() = av.array() * bv.array(); break;
      case BinOp::Div: out.array() = av.array() / bv.array(); break;
    }
    return make_op<T>(std::move(out), {a, b}, [op](const Tensor<T>& g, Node<T>& self) {
      const auto& A = self.inputs[0]->value.array();
      const auto& B = self.inputs[1]->value.array();
      switch (op) {
        case BinOp::Add:
          if (wants_grad(self, 0)) self.inputs[0]->accumulate(g);
          if (wants_grad(self, 1)) self.inputs[1]->accumulate(g);
          break;
        case BinOp::Sub:
          if (wants_grad(self, 0)) self.inputs[0]->accumulate(g);
          if (wants_grad(self, 1)) self.inputs[1]->accumulate_array(-g.array());
          break;
        case BinOp::Mul:
          if (wants_grad(self, 0)) self.inputs[0]->accumulate_array(g.array() * B);
          if (wants_grad(self, 1)) self.inputs[1]->accumulate_array(g.array() * A);
          break;
        case BinOp::Div:
          if (wants_grad(self, 0)) self.inputs[0]->accumulate_array(g.array() / B);
          if (wants_grad(self, 1)) self.inputs[1]->accumulate_array(-g.array() * A / (B * B));
          break;
      }
    });
  }

  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  const auto sa = broadcast_strides(av.shape(), out_shape);
  const auto sb = broadcast_strides(bv.shape(), out_shape);
  Tensor<T> out(out_shape);
  const T* pa = av.data();
  const T* pb = bv.data();
  T* po = out.data();
  for_each_broadcast(out_shape, sa, sb, [&](Index i, Index ia, Index ib) {
    switch (op) {
      case BinOp::Add: po[i] = pa[ia] + pb[ib]; break;
      case BinOp::Sub: po[i] = pa[ia] - pb[ib]; break;
      case BinOp::Mul: po[i] = pa[ia] * pb[ib]; break;
      case BinOp::Div: po[i] = pa[ia] / pb[ib]; break;
    }
  });
  return make_op<T>(std::move(out), {a, b}, [op, out_shape, sa, sb](const Tensor<T>& g, Node<T>& self) {
    const T* A = self.inputs[0]->value.data();
    const T* B = self.inputs[1]->value.data();
    const bool ga = wants_grad(self, 0), gb = wants_grad(self, 1);
    T* da = ga ? self.inputs[0]->grad_buffer().data() : nullptr;
    T* db = gb ? self.inputs[1]->grad_buffer().data() : nullptr;
    const T* pg = g.data();
    for_each_broadcast(out_shape, sa, sb, [&](Index i, Index ia, Index ib) {
      const T gi = pg[i];
      switch (op) {
        case BinOp::Add:
          if (ga) da[ia] += gi;
          if (gb) db[ib] += gi;
          break;
        case BinOp::Sub:
          if (ga) da[ia] += gi;
          if (gb) db[ib] -= gi;
          break;
        case BinOp::Mul:
          if (ga) da[ia] += gi * B[ib];
          if (gb) db[ib] += gi * A[ia];
          break;
        case BinOp::Div:
          if (ga) da[ia] += gi / B[ib];
          if (gb) db[ib] -= gi * A[ia] / (B[ib] * B[ib]);
          break;
      }
    });
  });
}

// Unary elementwise op: forward f(a), backward g * df(a, out).
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  Tensor<T> out(a.shape());
  out.array() = f(a.value().array());
  return make_op<T>(std::move(out), {a}, [df](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    self.inputs[0]->accumulate_array(df(g.array(), self.inputs[0]->value.array(), self.value.array()));
  });
}

struct Dims3 {
  Index outer, n, inner;
};

Dims3 split_at(const Shape& s, int dim) {
  Dims3 d{1, s[dim], 1};
  for (int i = 0; i < dim; ++i) d.outer *= s[i];
  for (int i = dim + 1; i < int(s.size()); ++i) d.inner *= s[i];
  return d;
}

int norm_dim(int dim, int nd) {
  if (dim < 0) dim += nd;
  if (dim < 0 || dim >= nd) throw ShapeError("axis out of range");
  return dim;
}

void require_4d(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + " expects an NCHW tensor, got " + shape_str(s));
}

}  // namespace

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinOp::Add); }
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinOp::Sub); }
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinOp::Mul); }
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinOp::Div); }

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary(a, [s](const auto& x) { return x + s; }, [](const auto& g, const auto&, const auto&) { return g; });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  return unary(a, [s](const auto& x) { return x * s; }, [s](const auto& g, const auto&, const auto&) { return g * s; });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return unary(a, [](const auto& x) { return -x; }, [](const auto& g, const auto&, const auto&) { return -g; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return x.max(T(0)); },
      [](const auto& g, const auto& x, const auto&) { return (x > T(0)).select(g, T(0)); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return unary(
      a, [slope](const auto& x) { return (x > T(0)).select(x, x * slope); },
      [slope](const auto& g, const auto& x, const auto&) { return (x > T(0)).select(g, g * slope); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return x.tanh(); },
      [](const auto& g, const auto&, const auto& y) { return g * (T(1) - y * y); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return T(1) / (T(1) + (-x).exp()); },
      [](const auto& g, const auto&, const auto& y) { return g * y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return (-x.abs()).exp().log1p() + x.max(T(0)); },
      [](const auto& g, const auto& x, const auto&) { return g / (T(1) + (-x).exp()); });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return x.exp(); }, [](const auto& g, const auto&, const auto& y) { return g * y; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return x * x; }, [](const auto& g, const auto& x, const auto&) { return g * x * T(2); });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return x.sqrt(); },
      [](const auto& g, const auto&, const auto& y) { return (y > T(0)).select(g / (T(2) * y), T(0)); });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return x.abs(); },
      [](const auto& g, const auto& x, const auto&) {
        return (x > T(0)).select(g, (x < T(0)).select(-g, T(0)));
      });
}

template <typename T>
Var<T> sin(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return x.sin(); }, [](const auto& g, const auto& x, const auto&) { return g * x.cos(); });
}

template <typename T>
Var<T> cos(const Var<T>& a) {
  return unary(
      a, [](const auto& x) { return x.cos(); }, [](const auto& g, const auto& x, const auto&) { return -g * x.sin(); });
}

template <typename T>
Var<T> acos_clamped(const Var<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](const auto& x) { return x.max(lo).min(hi).acos(); },
      [lo, hi](const auto& g, const auto& x, const auto&) {
        const auto c = x.max(lo).min(hi);
        return ((x >= lo) && (x <= hi)).select(-g / (T(1) - c * c).sqrt(), T(0));
      });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](const auto& x) { return x.max(lo).min(hi); },
      [lo, hi](const auto& g, const auto& x, const auto&) { return ((x >= lo) && (x <= hi)).select(g, T(0)); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out(Shape{1}, a.value().array().sum());
  return make_op<T>(std::move(out), {a}, [](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    self.inputs[0]->accumulate(Tensor<T>(self.inputs[0]->value.shape(), g[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T inv = T(1) / T(std::max<Index>(1, a.value().size()));
  return mul_scalar(sum(a), inv);
}

template <typename T>
Var<T> sum_dim(const Var<T>& a, int dim) {
  dim = norm_dim(dim, a.ndim());
  const Dims3 d = split_at(a.shape(), dim);
  Shape out_shape = a.shape();
  out_shape[dim] = 1;
  Tensor<T> out(out_shape);
  const T* pa = a.value().data();
  for (Index o = 0; o < d.outer; ++o)
    for (Index k = 0; k < d.n; ++k)
      for (Index i = 0; i < d.inner; ++i) out[o * d.inner + i] += pa[(o * d.n + k) * d.inner + i];
  return make_op<T>(std::move(out), {a}, [d](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    T* pg = self.inputs[0]->grad_buffer().data();
    for (Index o = 0; o < d.outer; ++o)
      for (Index k = 0; k < d.n; ++k)
        for (Index i = 0; i < d.inner; ++i) pg[(o * d.n + k) * d.inner + i] += g[o * d.inner + i];
  });
}

template <typename T>
Var<T> mean_dim(const Var<T>& a, int dim) {
  dim = norm_dim(dim, a.ndim());
  return mul_scalar(sum_dim(a, dim), T(1) / T(a.dim(dim)));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_op<T>(std::move(out), {a}, [](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    self.inputs[0]->accumulate(g.reshaped(self.inputs[0]->value.shape()));
  });
}

template <typename T>
Var<T> narrow(const Var<T>& a, int dim, int start, int length) {
  dim = norm_dim(dim, a.ndim());
  if (start < 0 || length < 0 || start + length > a.dim(dim)) throw ShapeError("narrow out of range");
  const Dims3 d = split_at(a.shape(), dim);
  Shape out_shape = a.shape();
  out_shape[dim] = length;
  Tensor<T> out(out_shape);
  const T* pa = a.value().data();
  for (Index o = 0; o < d.outer; ++o)
    std::copy_n(pa + (o * d.n + start) * d.inner, length * d.inner, out.data() + o * length * d.inner);
  return make_op<T>(std::move(out), {a}, [d, start, length](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    T* pg = self.inputs[0]->grad_buffer().data();
    for (Index o = 0; o < d.outer; ++o) {
      const T* src = g.data() + o * length * d.inner;
      T* dst = pg + (o * d.n + start) * d.inner;
      for (Index i = 0; i < length * d.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int dim) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  dim = norm_dim(dim, parts[0].ndim());
  Shape out_shape = parts[0].shape();
  out_shape[dim] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (int(i) != dim && s[i] != parts[0].shape()[i]) {
        throw ShapeError("concat shape mismatch: " + shape_str(s) + " vs " + shape_str(parts[0].shape()));
      }
    }
    out_shape[dim] += s[dim];
  }
  const Dims3 d = split_at(out_shape, dim);
  Tensor<T> out(out_shape);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int len = p.dim(dim);
    for (Index o = 0; o < d.outer; ++o)
      std::copy_n(p.value().data() + o * len * d.inner, len * d.inner, out.data() + (o * d.n + off) * d.inner);
    off += len;
  }
  return make_op<T>(std::move(out), parts, [d, offsets, dim](const Tensor<T>& g, Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (!wants_grad(self, k)) continue;
      const int len = self.inputs[k]->value.dim(dim);
      T* pg = self.inputs[k]->grad_buffer().data();
      for (Index o = 0; o < d.outer; ++o) {
        const T* src = g.data() + (o * d.n + offsets[k]) * d.inner;
        T* dst = pg + o * len * d.inner;
        for (Index i = 0; i < len * d.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> index_select(const Var<T>& a, int dim, const std::vector<int>& indices) {
  dim = norm_dim(dim, a.ndim());
  const Dims3 d = split_at(a.shape(), dim);
  for (int ix : indices)
    if (ix < 0 || ix >= d.n) throw ShapeError("index_select index out of range");
  Shape out_shape = a.shape();
  out_shape[dim] = int(indices.size());
  const Index m = Index(indices.size());
  Tensor<T> out(out_shape);
  const T* pa = a.value().data();
  for (Index o = 0; o < d.outer; ++o)
    for (Index k = 0; k < m; ++k)
      std::copy_n(pa + (o * d.n + indices[k]) * d.inner, d.inner, out.data() + (o * m + k) * d.inner);
  return make_op<T>(std::move(out), {a}, [d, indices, m](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    T* pg = self.inputs[0]->grad_buffer().data();
    for (Index o = 0; o < d.outer; ++o)
      for (Index k = 0; k < m; ++k) {
        const T* src = g.data() + (o * m + k) * d.inner;
        T* dst = pg + (o * d.n + indices[k]) * d.inner;
        for (Index i = 0; i < d.inner; ++i) dst[i] += src[i];
      }
  });
}

template <typename T>
Var<T> permute(const Var<T>& a, const std::vector<int>& order) {
  const int nd = a.ndim();
  if (int(order.size()) != nd) throw ShapeError("permute order rank mismatch");
  const Shape& in = a.shape();
  Shape out_shape(nd);
  std::vector<Index> in_strides(nd), src_strides(nd);
  Index s = 1;
  for (int i = nd - 1; i >= 0; --i) {
    in_strides[i] = s;
    s *= in[i];
  }
  for (int i = 0; i < nd; ++i) {
    out_shape[i] = in[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  std::vector<Index> unit(nd, 0);
  Tensor<T> out(out_shape);
  const T* pa = a.value().data();
  for_each_broadcast(out_shape, src_strides, unit, [&](Index i, Index ia, Index) { out[i] = pa[ia]; });
  return make_op<T>(std::move(out), {a}, [out_shape, src_strides, unit](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    T* pg = self.inputs[0]->grad_buffer().data();
    for_each_broadcast(out_shape, src_strides, unit, [&](Index i, Index ia, Index) { pg[ia] += g[i]; });
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const bool batched = a.ndim() == 3;
  if (a.ndim() != b.ndim() || (a.ndim() != 2 && a.ndim() != 3)) throw ShapeError("matmul expects 2D or 3D operands");
  const int B = batched ? a.dim(0) : 1;
  const int n = a.dim(-2), k = a.dim(-1), m = b.dim(-1);
  if (b.dim(-2) != k || (batched && b.dim(0) != B)) {
    throw ShapeError("matmul shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out(batched ? Shape{B, n, m} : Shape{n, m});
  for (int i = 0; i < B; ++i) {
    MapMat<T>(out.data() + Index(i) * n * m, n, m).noalias() =
        CMapMat<T>(a.value().data() + Index(i) * n * k, n, k) * CMapMat<T>(b.value().data() + Index(i) * k * m, k, m);
  }
  return make_op<T>(std::move(out), {a, b}, [B, n, k, m](const Tensor<T>& g, Node<T>& self) {
    const T* A = self.inputs[0]->value.data();
    const T* Bv = self.inputs[1]->value.data();
    T* dA = wants_grad(self, 0) ? self.inputs[0]->grad_buffer().data() : nullptr;
    T* dB = wants_grad(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
    for (int i = 0; i < B; ++i) {
      CMapMat<T> G(g.data() + Index(i) * n * m, n, m);
      if (dA) MapMat<T>(dA + Index(i) * n * k, n, k).noalias() += G * CMapMat<T>(Bv + Index(i) * k * m, k, m).transpose();
      if (dB) MapMat<T>(dB + Index(i) * k * m, k, m).noalias() += CMapMat<T>(A + Index(i) * n * k, n, k).transpose() * G;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear shape mismatch " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const int N = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  Tensor<T> out(Shape{N, outf});
  MapMat<T> Y(out.data(), N, outf);
  Y.noalias() = CMapMat<T>(x.value().data(), N, in) * CMapMat<T>(weight.value().data(), outf, in).transpose();
  const bool has_bias = bias.defined();
  if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(), outf);
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<T>(std::move(out), inputs, [N, in, outf, has_bias](const Tensor<T>& g, Node<T>& self) {
    CMapMat<T> G(g.data(), N, outf);
    if (wants_grad(self, 0)) {
      MapMat<T>(self.inputs[0]->grad_buffer().data(), N, in).noalias() +=
          G * CMapMat<T>(self.inputs[1]->value.data(), outf, in);
    }
    if (wants_grad(self, 1)) {
      MapMat<T>(self.inputs[1]->grad_buffer().data(), outf, in).noalias() +=
          G.transpose() * CMapMat<T>(self.inputs[0]->value.data(), N, in);
    }
    if (has_bias && wants_grad(self, 2)) {
      MapMat<T>(self.inputs[2]->grad_buffer().data(), 1, outf) += G.colwise().sum();
    }
  });
}

template <typename T>
Var<T> softmax_last(const Var<T>& a) {
  const int n = a.dim(-1);
  const Index rows = a.value().size() / n;
  Tensor<T> out(a.shape());
  CMapMat<T> X(a.value().data(), rows, n);
  MapMat<T> Y(out.data(), rows, n);
  for (Index r = 0; r < rows; ++r) {
    const T mx = X.row(r).maxCoeff();
    Y.row(r) = (X.row(r).array() - mx).exp().matrix();
    Y.row(r) /= Y.row(r).sum();
  }
  return make_op<T>(std::move(out), {a}, [rows, n](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    CMapMat<T> Y(self.value.data(), rows, n);
    CMapMat<T> G(g.data(), rows, n);
    MapMat<T> D(self.inputs[0]->grad_buffer().data(), rows, n);
    for (Index r = 0; r < rows; ++r) {
      const T dot = Y.row(r).dot(G.row(r));
      D.row(r).array() += Y.row(r).array() * (G.row(r).array() - dot);
    }
  });
}

namespace {

template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* cols) {
  const Index plane = Index(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    const T* xc = x + Index(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + (Index(c) * k * k + ki * k + kj) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ki;
          T* dst = row + Index(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill_n(dst, Wo, T(0));
            continue;
          }
          const T* src = xc + Index(iy) * W;
          if (s == 1) {
            const int ox_lo = std::max(0, p - kj);
            const int ox_hi = std::min(Wo, W + p - kj);
            for (int ox = 0; ox < std::min(ox_lo, Wo); ++ox) dst[ox] = T(0);
            for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src[ox - p + kj];
            for (int ox = std::max(ox_hi, 0); ox < Wo; ++ox) dst[ox] = T(0);
          } else {
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * s - p + kj;
              dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* x) {
  const Index plane = Index(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    T* xc = x + Index(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + (Index(c) * k * k + ki * k + kj) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ki;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + Index(oy) * Wo;
          T* dst = xc + Index(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kj;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvOptions opt) {
  require_4d(x.shape(), "conv2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = weight.dim(0), k = weight.dim(2);
  if (weight.ndim() != 4 || weight.dim(1) != C || weight.dim(3) != k) {
    throw ShapeError("conv2d weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  const int s = opt.stride, p = opt.padding;
  const int Ho = (H + 2 * p - k) / s + 1;
  const int Wo = (W + 2 * p - k) / s + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d output would be empty for input " + shape_str(x.shape()));
  const Index plane = Index(Ho) * Wo;
  const Index ckk = Index(C) * k * k;
  const bool direct = (k == 1 && s == 1 && p == 0);

  Tensor<T> out(Shape{N, O, Ho, Wo});
  CMapMat<T> Wm(weight.value().data(), O, ckk);
  std::vector<T> cols(direct ? 0 : ckk * plane);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.value().data() + Index(n) * C * H * W;
    const T* colp = xn;
    if (!direct) {
      im2col(xn, C, H, W, k, s, p, Ho, Wo, cols.data());
      colp = cols.data();
    }
    MapMat<T> Y(out.data() + Index(n) * O * plane, O, plane);
    Y.noalias() = Wm * CMapMat<T>(colp, ckk, plane);
    if (bias.defined()) Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.value().data(), O);
  }

  const bool has_bias = bias.defined();
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<T>(
      std::move(out), inputs, [=](const Tensor<T>& g, Node<T>& self) {
        const bool gx = wants_grad(self, 0), gw = wants_grad(self, 1), gb = has_bias && wants_grad(self, 2);
        const T* xv = self.inputs[0]->value.data();
        CMapMat<T> Wm(self.inputs[1]->value.data(), O, ckk);
        T* dx = gx ? self.inputs[0]->grad_buffer().data() : nullptr;
        T* dw = gw ? self.inputs[1]->grad_buffer().data() : nullptr;
        T* db = gb ? self.inputs[2]->grad_buffer().data() : nullptr;
        std::vector<T> cols(direct ? 0 : ckk * plane);
        std::vector<T> dcols(direct || !gx ? 0 : ckk * plane);
        for (int n = 0; n < N; ++n) {
          CMapMat<T> G(g.data() + Index(n) * O * plane, O, plane);
          const T* xn = xv + Index(n) * C * H * W;
          if (gw) {
            const T* colp = xn;
            if (!direct) {
              im2col(xn, C, H, W, k, s, p, Ho, Wo, cols.data());
              colp = cols.data();
            }
            MapMat<T>(dw, O, ckk).noalias() += G * CMapMat<T>(colp, ckk, plane).transpose();
          }
          if (gb) Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(db, O) += G.rowwise().sum();
          if (gx) {
            T* dxn = dx + Index(n) * C * H * W;
            if (direct) {
              MapMat<T>(dxn, C, plane).noalias() += Wm.transpose() * G;
            } else {
              MapMat<T>(dcols.data(), ckk, plane).noalias() = Wm.transpose() * G;
              col2im(dcols.data(), C, H, W, k, s, p, Ho, Wo, dxn);
            }
          }
        }
      });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps) {
  require_4d(x.shape(), "batch_norm");
  const int N = x.dim(0), C = x.dim(1);
  const Index plane = Index(x.dim(2)) * x.dim(3);
  const Index count = N * plane;
  const bool affine = gamma.defined();
  std::vector<T> mu(C), inv_std(C);
  const T* px = x.value().data();
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0, ss = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = px + (Index(n) * C + c) * plane;
        for (Index i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / double(count);
      for (int n = 0; n < N; ++n) {
        const T* p = px + (Index(n) * C + c) * plane;
        for (Index i = 0; i < plane; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / double(count);
      mu[c] = T(m);
      inv_std[c] = T(1.0 / std::sqrt(var + double(eps)));
      const double unbiased = count > 1 ? ss / double(count - 1) : var;
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * T(m);
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * T(unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mu[c] = running_mean[c];
      inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Index off = (Index(n) * C + c) * plane;
      const T gmul = affine ? gamma.value()[c] : T(1);
      const T badd = affine ? beta.value()[c] : T(0);
      for (Index i = 0; i < plane; ++i) {
        const T h = (px[off + i] - mu[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = h * gmul + badd;
      }
    }
  std::vector<Var<T>> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_op<T>(std::move(out), inputs,
                    [=, xhat = std::move(xhat)](const Tensor<T>& g, Node<T>& self) {
                      const bool gx = wants_grad(self, 0);
                      T* dgamma = affine && wants_grad(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
                      T* dbeta = affine && wants_grad(self, 2) ? self.inputs[2]->grad_buffer().data() : nullptr;
                      T* dx = gx ? self.inputs[0]->grad_buffer().data() : nullptr;
                      for (int c = 0; c < C; ++c) {
                        const T gmul = affine ? self.inputs[1]->value[c] : T(1);
                        double sum_g = 0, sum_gx = 0;
                        for (int n = 0; n < N; ++n) {
                          const Index off = (Index(n) * C + c) * plane;
                          for (Index i = 0; i < plane; ++i) {
                            sum_g += g[off + i];
                            sum_gx += g[off + i] * xhat[off + i];
                          }
                        }
                        if (dgamma) dgamma[c] += T(sum_gx);
                        if (dbeta) dbeta[c] += T(sum_g);
                        if (!dx) continue;
                        for (int n = 0; n < N; ++n) {
                          const Index off = (Index(n) * C + c) * plane;
                          for (Index i = 0; i < plane; ++i) {
                            if (training) {
                              dx[off + i] += gmul * inv_std[c] *
                                             (g[off + i] - T(sum_g / double(count)) -
                                              xhat[off + i] * T(sum_gx / double(count)));
                            } else {
                              dx[off + i] += gmul * inv_std[c] * g[off + i];
                            }
                          }
                        }
                      }
                    });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  require_4d(x.shape(), "instance_norm");
  const Index planes = Index(x.dim(0)) * x.dim(1);
  const Index plane = Index(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(planes);
  CMapMat<T> X(x.value().data(), planes, plane);
  MapMat<T> Y(out.data(), planes, plane);
  for (Index r = 0; r < planes; ++r) {
    const T m = X.row(r).mean();
    Y.row(r) = (X.row(r).array() - m).matrix();
    const T var = Y.row(r).squaredNorm() / T(plane);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    Y.row(r) *= inv_std[r];
  }
  return make_op<T>(std::move(out), {x}, [planes, plane, inv_std](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    CMapMat<T> Yh(self.value.data(), planes, plane);
    CMapMat<T> G(g.data(), planes, plane);
    MapMat<T> D(self.inputs[0]->grad_buffer().data(), planes, plane);
    for (Index r = 0; r < planes; ++r) {
      const T mg = G.row(r).mean();
      const T mgx = G.row(r).dot(Yh.row(r)) / T(plane);
      D.row(r).array() += inv_std[r] * (G.row(r).array() - mg - Yh.row(r).array() * mgx);
    }
  });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int padding) {
  require_4d(x.shape(), "max_pool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H + 2 * padding - kernel) / stride + 1;
  const int Wo = (W + 2 * padding - kernel) / stride + 1;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  std::vector<Index> argmax(out.size());
  const T* px = x.value().data();
  Index o = 0;
  for (Index nc = 0; nc < Index(N) * C; ++nc) {
    const T* plane = px + nc * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        Index bi = -1;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= W) continue;
            const T v = plane[Index(iy) * W + ix];
            if (bi < 0 || v > best) {
              best = v;
              bi = nc * H * W + Index(iy) * W + ix;
            }
          }
        }
        out[o] = bi < 0 ? T(0) : best;
        argmax[o] = bi;
      }
  }
  return make_op<T>(std::move(out), {x}, [argmax = std::move(argmax)](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    T* d = self.inputs[0]->grad_buffer().data();
    for (Index i = 0; i < g.size(); ++i)
      if (argmax[i] >= 0) d[argmax[i]] += g[i];
  });
}

template <typename T>
Var<T> avg_pool2d(const Var<T>& x, int kernel, int stride, int padding) {
  require_4d(x.shape(), "avg_pool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H + 2 * padding - kernel) / stride + 1;
  const int Wo = (W + 2 * padding - kernel) / stride + 1;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  const T* px = x.value().data();
  auto window = [=](int oy, int ox, int& y0, int& y1, int& x0, int& x1) {
    y0 = std::max(0, oy * stride - padding);
    y1 = std::min(H, oy * stride - padding + kernel);
    x0 = std::max(0, ox * stride - padding);
    x1 = std::min(W, ox * stride - padding + kernel);
  };
  Index o = 0;
  for (Index nc = 0; nc < Index(N) * C; ++nc) {
    const T* plane = px + nc * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        int y0, y1, x0, x1;
        window(oy, ox, y0, y1, x0, x1);
        T s = 0;
        for (int iy = y0; iy < y1; ++iy)
          for (int ix = x0; ix < x1; ++ix) s += plane[Index(iy) * W + ix];
        const int cnt = std::max(1, (y1 - y0) * (x1 - x0));
        out[o] = s / T(cnt);
      }
  }
  return make_op<T>(std::move(out), {x}, [=](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    T* d = self.inputs[0]->grad_buffer().data();
    Index o = 0;
    for (Index nc = 0; nc < Index(N) * C; ++nc) {
      T* plane = d + nc * H * W;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox, ++o) {
          int y0, y1, x0, x1;
          window(oy, ox, y0, y1, x0, x1);
          const int cnt = std::max(1, (y1 - y0) * (x1 - x0));
          const T gi = g[o] / T(cnt);
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) plane[Index(iy) * W + ix] += gi;
        }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_4d(x.shape(), "global_avg_pool");
  const int N = x.dim(0), C = x.dim(1);
  return reshape(mean_dim(reshape(x, Shape{N, C, x.dim(2) * x.dim(3)}), 2), Shape{N, C});
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  require_4d(x.shape(), "pixel_shuffle");
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (Cin % (r * r) != 0) throw ShapeError("pixel_shuffle channels not divisible by factor^2");
  const int C = Cin / (r * r);
  // (N, C, r, r, H, W) -> (N, C, H, r, W, r)
  Var<T> v = reshape(x, Shape{N * C, r, r, H, W});
  v = permute(v, {0, 3, 1, 4, 2});
  return reshape(v, Shape{N, C, H * r, W * r});
}

namespace {

struct LerpTaps {
  std::vector<int> i0, i1;
  std::vector<double> w1;
};

LerpTaps lerp_taps(int in, int out) {
  LerpTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = double(in) / double(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = int(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.w1[o] = src - i0;
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  require_4d(x.shape(), "resize_bilinear");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H == out_h && W == out_w) return x;
  const LerpTaps ty = lerp_taps(H, out_h), tx = lerp_taps(W, out_w);
  Tensor<T> out(Shape{N, C, out_h, out_w});
  const T* px = x.value().data();
  Index o = 0;
  for (Index nc = 0; nc < Index(N) * C; ++nc) {
    const T* plane = px + nc * H * W;
    for (int oy = 0; oy < out_h; ++oy) {
      const T wy = T(ty.w1[oy]);
      const T* r0 = plane + Index(ty.i0[oy]) * W;
      const T* r1 = plane + Index(ty.i1[oy]) * W;
      for (int ox = 0; ox < out_w; ++ox, ++o) {
        const T wx = T(tx.w1[ox]);
        const T top = r0[tx.i0[ox]] * (T(1) - wx) + r0[tx.i1[ox]] * wx;
        const T bot = r1[tx.i0[ox]] * (T(1) - wx) + r1[tx.i1[ox]] * wx;
        out[o] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [=](const Tensor<T>& g, Node<T>& self) {
    if (!wants_grad(self, 0)) return;
    T* d = self.inputs[0]->grad_buffer().data();
    Index o = 0;
    for (Index nc = 0; nc < Index(N) * C; ++nc) {
      T* plane = d + nc * H * W;
      for (int oy = 0; oy < out_h; ++oy) {
        const T wy = T(ty.w1[oy]);
        T* r0 = plane + Index(ty.i0[oy]) * W;
        T* r1 = plane + Index(ty.i1[oy]) * W;
        for (int ox = 0; ox < out_w; ++ox, ++o) {
          const T wx = T(tx.w1[ox]);
          const T gi = g[o];
          r0[tx.i0[ox]] += gi * (T(1) - wx) * (T(1) - wy);
          r0[tx.i1[ox]] += gi * wx * (T(1) - wy);
          r1[tx.i0[ox]] += gi * (T(1) - wx) * wy;
          r1[tx.i1[ox]] += gi * wx * wy;
        }
      }
    }
  });
}

template <typename T>
Var<T> grid_sample(const Var<T>& x, const Var<T>& coords) {
  require_4d(x.shape(), "grid_sample");
  require_4d(coords.shape(), "grid_sample coords");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (coords.dim(0) != N || coords.dim(1) != 2) {
    throw ShapeError("grid_sample coords " + shape_str(coords.shape()) + " incompatible with " + shape_str(x.shape()));
  }
  const int Ho = coords.dim(2), Wo = coords.dim(3);
  const Index in_plane = Index(H) * W, out_plane = Index(Ho) * Wo;

  // Corner taps per output location; index -1 marks an out-of-grid corner.
  struct Tap {
    Index idx[4];
    T fx, fy;
  };
  auto make_tap = [W, H](T sx, T sy) {
    Tap t{{-1, -1, -1, -1}, T(0), T(0)};
    if (!(sx > T(-1)) || !(sx < T(W)) || !(sy > T(-1)) || !(sy < T(H))) return t;
    const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
    t.fx = sx - T(x0);
    t.fy = sy - T(y0);
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int c = 0; c < 4; ++c)
      if (xs[c] >= 0 && xs[c] < W && ys[c] >= 0 && ys[c] < H) t.idx[c] = Index(ys[c]) * W + xs[c];
    return t;
  };

  Tensor<T> out(Shape{N, C, Ho, Wo});
  const T* px = x.value().data();
  const T* pc = coords.value().data();
  for (int n = 0; n < N; ++n) {
    const T* cx = pc + Index(n) * 2 * out_plane;
    const T* cy = cx + out_plane;
    for (Index q = 0; q < out_plane; ++q) {
      const Tap t = make_tap(cx[q], cy[q]);
      const T w[4] = {(T(1) - t.fx) * (T(1) - t.fy), t.fx * (T(1) - t.fy), (T(1) - t.fx) * t.fy, t.fx * t.fy};
      for (int c = 0; c < C; ++c) {
        const T* plane = px + (Index(n) * C + c) * in_plane;
        T v = 0;
        for (int k = 0; k < 4; ++k)
          if (t.idx[k] >= 0) v += w[k] * plane[t.idx[k]];
        out[(Index(n) * C + c) * out_plane + q] = v;
      }
    }
  }

  return make_op<T>(std::move(out), {x, coords}, [=](const Tensor<T>& g, Node<T>& self) {
    const bool gx = wants_grad(self, 0), gc = wants_grad(self, 1);
    const T* px = self.inputs[0]->value.data();
    const T* pc = self.inputs[1]->value.data();
    T* dx = gx ? self.inputs[0]->grad_buffer().data() : nullptr;
    T* dc = gc ? self.inputs[1]->grad_buffer().data() : nullptr;
    for (int n = 0; n < N; ++n) {
      const T* cx = pc + Index(n) * 2 * out_plane;
      const T* cy = cx + out_plane;
      for (Index q = 0; q < out_plane; ++q) {
        const Tap t = make_tap(cx[q], cy[q]);
        if (t.idx[0] < 0 && t.idx[1] < 0 && t.idx[2] < 0 && t.idx[3] < 0) continue;
        const T w[4] = {(T(1) - t.fx) * (T(1) - t.fy), t.fx * (T(1) - t.fy), (T(1) - t.fx) * t.fy, t.fx * t.fy};
        T dsx = 0, dsy = 0;
        for (int c = 0; c < C; ++c) {
          const Index base = (Index(n) * C + c) * in_plane;
          const T gi = g[(Index(n) * C + c) * out_plane + q];
          if (gi == T(0)) continue;
          T v[4];
          for (int k = 0; k < 4; ++k) v[k] = t.idx[k] >= 0 ? px[base + t.idx[k]] : T(0);
          if (dx)
            for (int k = 0; k < 4; ++k)
              if (t.idx[k] >= 0) dx[base + t.idx[k]] += gi * w[k];
          if (dc) {
            dsx += gi * ((v[1] - v[0]) * (T(1) - t.fy) + (v[3] - v[2]) * t.fy);
            dsy += gi * ((v[2] - v[0]) * (T(1) - t.fx) + (v[3] - v[1]) * t.fx);
          }
        }
        if (dc) {
          dc[Index(n) * 2 * out_plane + q] += dsx;
          dc[Index(n) * 2 * out_plane + out_plane + q] += dsy;
        }
      }
    }
  });
}

#define FREEHEAD_INSTANTIATE_OPS(T)                                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> div(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> add_scalar(const Var<T>&, T);                                                                  \
  template Var<T> mul_scalar(const Var<T>&, T);                                                                  \
  template Var<T> neg(const Var<T>&);                                                                            \
  template Var<T> relu(const Var<T>&);                                                                           \
  template Var<T> leaky_relu(const Var<T>&, T);                                                                  \
  template Var<T> tanh(const Var<T>&);                                                                           \
  template Var<T> sigmoid(const Var<T>&);                                                                        \
  template Var<T> softplus(const Var<T>&);                                                                       \
  template Var<T> exp(const Var<T>&);                                                                            \
  template Var<T> square(const Var<T>&);                                                                         \
  template Var<T> sqrt(const Var<T>&);                                                                           \
  template Var<T> abs(const Var<T>&);                                                                            \
  template Var<T> sin(const Var<T>&);                                                                            \
  template Var<T> cos(const Var<T>&);                                                                            \
  template Var<T> acos_clamped(const Var<T>&, T, T);                                                             \
  template Var<T> clamp(const Var<T>&, T, T);                                                                    \
  template Var<T> sum(const Var<T>&);                                                                            \
  template Var<T> mean(const Var<T>&);                                                                           \
  template Var<T> sum_dim(const Var<T>&, int);                                                                   \
  template Var<T> mean_dim(const Var<T>&, int);                                                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                                                 \
  template Var<T> narrow(const Var<T>&, int, int, int);                                                          \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                                       \
  template Var<T> index_select(const Var<T>&, int, const std::vector<int>&);                                    \
  template Var<T> permute(const Var<T>&, const std::vector<int>&);                                               \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                           \
  template Var<T> softmax_last(const Var<T>&);                                                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvOptions);                              \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, bool, T, T);   \
  template Var<T> instance_norm(const Var<T>&, T);                                                               \
  template Var<T> max_pool2d(const Var<T>&, int, int, int);                                                      \
  template Var<T> avg_pool2d(const Var<T>&, int, int, int);                                                      \
  template Var<T> global_avg_pool(const Var<T>&);                                                                \
  template Var<T> pixel_shuffle(const Var<T>&, int);                                                             \
  template Var<T> resize_bilinear(const Var<T>&, int, int);                                                      \
  template Var<T> grid_sample(const Var<T>&, const Var<T>&);

FREEHEAD_INSTANTIATE_OPS(float)
FREEHEAD_INSTANTIATE_OPS(double)

}  // namespace freehead
