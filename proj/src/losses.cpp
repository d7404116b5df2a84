#include "freehead/losses.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace freehead {

void LossWeights::validate() const {
  for (double v : {points, reconstruction, rotation, deformation, vertex, edge, gaze, perceptual, feature_matching}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and non-negative");
  }
}

template <typename T>
const Var<T>& LossTerms<T>::operator[](const std::string& name) const {
  for (const auto& [n, v] : components)
    if (n == name) return v;
  throw std::out_of_range("no loss component '" + name + "'");
}

namespace {

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean(square(a - b));
}

template <typename T>
Var<T> mae(const Var<T>& a, const Var<T>& b) {
  return mean(abs(a - b));
}

template <typename T>
Var<T> weighted_total(const std::vector<std::pair<std::string, Var<T>>>& parts, const std::vector<double>& weights) {
  Var<T> total = parts[0].second * T(weights[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) total = total + parts[i].second * T(weights[i]);
  return total;
}

// Angle in degrees between matching rows of (B,3) vectors, as
// atan2(|a x b|, a.b): exact zero for identical inputs and well conditioned
// near both ends, unlike arccos of the dot product.
template <typename T>
Var<T> row_angles_deg(const Var<T>& a, const Var<T>& b) {
  const int B = a.dim(0);
  Tensor<T> out(Shape{B});
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (int n = 0; n < B; ++n) {
    const Eigen::Matrix<T, 3, 1> u(pa[3 * n], pa[3 * n + 1], pa[3 * n + 2]), v(pb[3 * n], pb[3 * n + 1], pb[3 * n + 2]);
    // Fused multiply-add can leave a residue in u x u, so equal rows are exact by fiat.
    out[n] = u == v ? T(0) : std::atan2(u.cross(v).norm(), u.dot(v)) * T(180.0 / M_PI);
  }
  return make_op<T>(std::move(out), {a, b}, [B](const Tensor<T>& g, Node<T>& self) {
    const T* pa = self.inputs[0]->value.data();
    const T* pb = self.inputs[1]->value.data();
    Tensor<T> ga(Shape{B, 3}), gb(Shape{B, 3});
    for (int n = 0; n < B; ++n) {
      const Eigen::Matrix<T, 3, 1> u(pa[3 * n], pa[3 * n + 1], pa[3 * n + 2]), v(pb[3 * n], pb[3 * n + 1], pb[3 * n + 2]);
      const Eigen::Matrix<T, 3, 1> c = u.cross(v);
      const T s = c.norm(), d = u.dot(v), den = s * s + d * d;
      if (den <= T(0)) continue;
      const T k = g[n] * T(180.0 / M_PI) / den;
      // d(angle)/du = (d (v x c)/|c| - |c| v) / (|c|^2 + d^2), symmetric for v.
      Eigen::Matrix<T, 3, 1> du = -s * v, dv = -s * u;
      if (s > T(0)) {
        du += d * v.cross(c) / s;
        dv += d * c.cross(u) / s;
      }
      for (int j = 0; j < 3; ++j) {
        ga[3 * n + j] = k * du[j];
        gb[3 * n + j] = k * dv[j];
      }
    }
    if (wants_grad(self, 0)) self.inputs[0]->accumulate(ga);
    if (wants_grad(self, 1)) self.inputs[1]->accumulate(gb);
  });
}

template <typename T>
Var<T> hinge_real(const Var<T>& s) {
  return mean(relu(-s + T(1)));
}

}  // namespace

template <typename T>
LossTerms<T> canonical_losses(const Var<T>& points_s, const Var<T>& scale_s, const Var<T>& rotation_s,
                              const Var<T>& translation_s, const Var<T>& deform_s, const Var<T>& points_t,
                              const Var<T>& scale_t, const Var<T>& rotation_t, const Var<T>& translation_t,
                              const Var<T>& deform_t, const Var<T>& euler_t, const Var<T>& landmarks_source,
                              const Var<T>& landmarks_target, const Var<T>& euler_target, const LossWeights& w) {
  require_same(points_s, landmarks_source, "source key-points");
  require_same(points_t, landmarks_target, "target key-points");
  require_same(deform_s, points_s, "source deformation");
  require_same(deform_t, points_t, "target deformation");
  require_same(euler_t, euler_target, "target rotation");
  const Var<T> can_s = to_canonical(points_s, scale_s, rotation_s, translation_s, deform_s);
  const Var<T> can_t = to_canonical(points_t, scale_t, rotation_t, translation_t, deform_t);
  // Swap: each image's pose and expression applied to the other's canonical points.
  const Var<T> rec_s = from_canonical(can_t, scale_s, rotation_s, translation_s, deform_s);
  const Var<T> rec_t = from_canonical(can_s, scale_t, rotation_t, translation_t, deform_t);
  const T inv_batch = T(1) / T(points_s.dim(0));

  LossTerms<T> out;
  out.components = {
      {"points", mse(points_s, landmarks_source) + mse(points_t, landmarks_target)},
      {"reconstruction", mse(rec_s, landmarks_source) + mse(rec_t, landmarks_target)},
      {"rotation", mse(euler_t, euler_target)},
      {"deformation", (sum(square(deform_s)) + sum(square(deform_t))) * inv_batch},
  };
  out.total = weighted_total(out.components, {w.points, w.reconstruction, w.rotation, w.deformation});
  return out;
}

template <typename T>
LossTerms<T> canonical_losses(const CanonicalOutput<T>& s, const CanonicalOutput<T>& t, const Var<T>& landmarks_source,
                              const Var<T>& landmarks_target, const Var<T>& euler_target, const LossWeights& w) {
  return canonical_losses(s.points, s.scale, s.rotation, s.translation, s.deformation, t.points, t.scale, t.rotation,
                          t.translation, t.deformation, t.euler, landmarks_source, landmarks_target, euler_target, w);
}

template <typename T>
LossTerms<T> gaze_losses(const Var<T>& predicted, const Var<T>& truth, const EyeMeshTemplate& tpl,
                         const LossWeights& w) {
  require_same(predicted, truth, "eye meshes");
  if (predicted.ndim() != 3 || predicted.dim(1) != kEyeVertices || predicted.dim(2) != 3) {
    throw ShapeError("eye meshes must be (B,481,3), got " + shape_str(predicted.shape()));
  }
  LossTerms<T> out;
  out.components = {
      {"vertex", mean(sum_dim(abs(predicted - truth), 2))},  // per-vertex L1, mean over vertices
      {"edge", mae(edge_lengths(predicted, tpl), edge_lengths(truth, tpl))},
      {"gaze", mean(row_angles_deg(gaze_vectors(predicted, tpl), gaze_vectors(truth, tpl)))},
  };
  out.total = weighted_total(out.components, {w.vertex, w.edge, w.gaze});
  return out;
}

// ---------------------------------------------------------------------------
// Feature extractors

template <typename T>
RandomFeatureExtractor<T>::RandomFeatureExtractor(int layers, int width, std::uint64_t seed) {
  if (layers < 1 || width < 1) throw std::invalid_argument("random extractor needs at least one layer");
  std::mt19937_64 rng(seed);
  int in = 3;
  for (int i = 0; i < layers; ++i) {
    const int out = width << std::min(i, 2);
    convs_.push_back(std::make_unique<Conv2d<T>>(in, out, 3, i == 0 ? 1 : 2, 1, rng, Init::Kaiming));
    convs_.back()->bias.mutable_value().array() = T(0.1);  // flat inputs still give non-zero features
    convs_.back()->set_requires_grad(false);
    in = out;
  }
}

template <typename T>
std::vector<Var<T>> RandomFeatureExtractor<T>::embed(const Var<T>& image) {
  std::vector<Var<T>> out;
  Var<T> h = image;
  for (auto& c : convs_) {
    h = relu(c->forward(h));
    out.push_back(h);
  }
  return out;
}

namespace {

// Convs of VGG19 features up to relu5_1 and the layers whose output is used.
constexpr int kVggConvs = 13;
constexpr int kVggChannels[kVggConvs] = {64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512};
constexpr bool kVggTap[kVggConvs] = {true, false, true, false, true, false, false, false, true, false, false, false, true};
constexpr bool kVggPoolAfter[kVggConvs] = {false, true, false, true, false, false, false, true, false, false, false, true, false};

}  // namespace

template <typename T>
Vgg19Extractor<T>::Vgg19Extractor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open VGG19 weights " + path);
  std::mt19937_64 unused(0);
  int c_in = 3;
  for (int i = 0; i < kVggConvs; ++i) {
    const int c_out = kVggChannels[i];
    auto conv = std::make_unique<Conv2d<T>>(c_in, c_out, 3, 1, 1, unused, Init::Zero);
    for (Var<T>* p : {&conv->weight, &conv->bias}) {
      Tensor<T>& v = p->mutable_value();
      std::vector<float> buf(v.size());
      in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
      if (!in) throw std::runtime_error("VGG19 weight file is truncated: " + path);
      for (Index k = 0; k < v.size(); ++k) v[k] = T(buf[k]);
    }
    conv->set_requires_grad(false);
    convs_.push_back(std::move(conv));
    c_in = c_out;
  }
}

template <typename T>
std::vector<Var<T>> Vgg19Extractor<T>::embed(const Var<T>& image) {
  // [-1,1] -> ImageNet-normalised RGB.
  Tensor<T> scale(Shape{1, 3, 1, 1}), shift(Shape{1, 3, 1, 1});
  const double mu[3] = {0.485, 0.456, 0.406}, sd[3] = {0.229, 0.224, 0.225};
  for (int c = 0; c < 3; ++c) {
    scale[c] = T(0.5 / sd[c]);
    shift[c] = T((0.5 - mu[c]) / sd[c]);
  }
  Var<T> h = image * constant(scale) + constant(shift);
  std::vector<Var<T>> out;
  for (int i = 0; i < kVggConvs; ++i) {
    h = relu(convs_[i]->forward(h));
    if (kVggTap[i]) out.push_back(h);
    if (kVggPoolAfter[i]) h = max_pool2d(h, 2, 2, 0);
  }
  return out;
}

template <typename T>
Var<T> perceptual_distance(FeatureExtractor<T>& extractor, const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "perceptual inputs");
  const auto fa = extractor.embed(a);
  const auto fb = extractor.embed(b);
  const auto lw = extractor.layer_weights();
  Var<T> total = mae(fa[0], fb[0]) * T(lw[0]);
  for (std::size_t l = 1; l < fa.size(); ++l) total = total + mae(fa[l], fb[l]) * T(lw[l]);
  return total;
}

// ---------------------------------------------------------------------------
// Adversarial terms

template <typename T>
LossTerms<T> generator_losses(const Var<T>& generated, const Var<T>& warped, const Var<T>& target,
                              const std::vector<CriticPair<T>>& critics, FeatureExtractor<T>& extractor,
                              const LossWeights& w) {
  require_same(generated, target, "generated image");
  require_same(warped, target, "warped image");
  Var<T> adv = constant(Tensor<T>::scalar(T(0)));
  Var<T> fm = constant(Tensor<T>::scalar(T(0)));
  for (const auto& c : critics) {
    const std::size_t S = c.fake.scores.size();
    if (S == 0 || c.real.scores.size() != S || c.real.features.size() != S) {
      throw ShapeError("critic outputs disagree on scale count");
    }
    const T inv = T(1) / T(S);
    for (std::size_t s = 0; s < S; ++s) {
      adv = adv - mean(c.fake.scores[s]) * inv;
      const auto& fr = c.real.features[s];
      const auto& ff = c.fake.features[s];
      if (fr.size() != ff.size()) throw ShapeError("critic feature lists differ in length");
      for (std::size_t l = 0; l < fr.size(); ++l) fm = fm + mae(ff[l], fr[l].detach()) * inv;
    }
  }
  LossTerms<T> out;
  out.components = {
      {"adversarial", adv},
      {"perceptual", perceptual_distance(extractor, generated, target)},
      {"warp_perceptual", perceptual_distance(extractor, warped, target)},
      {"feature_matching", fm},
  };
  out.total = weighted_total(out.components, {1.0, w.perceptual, w.perceptual, w.feature_matching});
  return out;
}

template <typename T>
Var<T> discriminator_loss(const std::vector<CriticPair<T>>& critics) {
  Var<T> total = constant(Tensor<T>::scalar(T(0)));
  for (const auto& c : critics) {
    const std::size_t S = c.real.scores.size();
    if (S == 0 || c.fake.scores.size() != S) throw ShapeError("critic outputs disagree on scale count");
    const T inv = T(1) / T(S);
    for (std::size_t s = 0; s < S; ++s) {
      total = total + (hinge_real(c.real.scores[s]) + mean(relu(c.fake.scores[s] + T(1)))) * inv;
    }
  }
  return total;
}

#define FREEHEAD_INSTANTIATE_LOSSES(T)                                                                             \
  template struct LossTerms<T>;                                                                                    \
  template LossTerms<T> canonical_losses(const CanonicalOutput<T>&, const CanonicalOutput<T>&, const Var<T>&,       \
                                         const Var<T>&, const Var<T>&, const LossWeights&);                        \
  template LossTerms<T> canonical_losses(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                         const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                         const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,                \
                                         const LossWeights&);                                                      \
  template LossTerms<T> gaze_losses(const Var<T>&, const Var<T>&, const EyeMeshTemplate&, const LossWeights&);     \
  template class RandomFeatureExtractor<T>;                                                                        \
  template class Vgg19Extractor<T>;                                                                                \
  template Var<T> perceptual_distance(FeatureExtractor<T>&, const Var<T>&, const Var<T>&);                         \
  template LossTerms<T> generator_losses(const Var<T>&, const Var<T>&, const Var<T>&,                              \
                                         const std::vector<CriticPair<T>>&, FeatureExtractor<T>&,                  \
                                         const LossWeights&);                                                      \
  template Var<T> discriminator_loss(const std::vector<CriticPair<T>>&);

FREEHEAD_INSTANTIATE_LOSSES(float)
FREEHEAD_INSTANTIATE_LOSSES(double)

}  // namespace freehead
