#pragma once

#include "freehead/gaze_geometry.hpp"
#include "freehead/networks.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace freehead {

struct LossWeights {
  double points = 200, reconstruction = 200, rotation = 2, deformation = 5;
  double vertex = 0.1, edge = 0.1, gaze = 1;
  double perceptual = 10, feature_matching = 10;

  void validate() const;
};

/// A total plus its named, unweighted components.
template <typename T>
struct LossTerms {
  Var<T> total;
  std::vector<std::pair<std::string, Var<T>>> components;

  const Var<T>& operator[](const std::string& name) const;
};

// Canonical key-point objective. Points are (B,K,3); euler_target is (B,3)
// in degrees. Squared errors are averaged over elements; the deformation term
// sums squared norms over key-points and averages over the batch.
template <typename T>
LossTerms<T> canonical_losses(const CanonicalOutput<T>& source, const CanonicalOutput<T>& target,
                              const Var<T>& landmarks_source, const Var<T>& landmarks_target,
                              const Var<T>& euler_target, const LossWeights& w = {});

/// Same objective from raw predictions (used where no network is involved).
template <typename T>
LossTerms<T> canonical_losses(const Var<T>& points_s, const Var<T>& scale_s, const Var<T>& rotation_s,
                              const Var<T>& translation_s, const Var<T>& deform_s, const Var<T>& points_t,
                              const Var<T>& scale_t, const Var<T>& rotation_t, const Var<T>& translation_t,
                              const Var<T>& deform_t, const Var<T>& euler_t, const Var<T>& landmarks_source,
                              const Var<T>& landmarks_target, const Var<T>& euler_target, const LossWeights& w = {});

/// Eye-mesh objective over (B,481,3) meshes; the gaze term is in degrees.
template <typename T>
LossTerms<T> gaze_losses(const Var<T>& predicted, const Var<T>& truth, const EyeMeshTemplate& tpl,
                         const LossWeights& w = {});

/// Fixed feature stack for the perceptual terms.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  /// (B,3,H,W) in [-1,1] -> per-layer maps.
  virtual std::vector<Var<T>> embed(const Var<T>& image) = 0;
  /// Per-layer weights of the perceptual sum.
  virtual std::vector<double> layer_weights() const = 0;
};

/// Small conv stack with frozen random weights: conv3-ReLU per layer, with a
/// stride-2 conv from the second layer on.
template <typename T>
class RandomFeatureExtractor : public FeatureExtractor<T> {
 public:
  RandomFeatureExtractor(int layers = 3, int width = 16, std::uint64_t seed = 1234);
  std::string name() const override { return "random-conv"; }
  std::vector<Var<T>> embed(const Var<T>& image) override;
  std::vector<double> layer_weights() const override { return std::vector<double>(convs_.size(), 1.0); }

 private:
  std::vector<std::unique_ptr<Conv2d<T>>> convs_;
};

/// VGG19 up to relu5_1 with weights read from a raw float32 file: the first
/// 13 convs in torchvision order, each weight (out,in,3,3) then bias.
template <typename T>
class Vgg19Extractor : public FeatureExtractor<T> {
 public:
  explicit Vgg19Extractor(const std::string& weights_path);
  std::string name() const override { return "vgg19"; }
  std::vector<Var<T>> embed(const Var<T>& image) override;
  std::vector<double> layer_weights() const override { return {1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0}; }

 private:
  std::vector<std::unique_ptr<Conv2d<T>>> convs_;
};

/// Sum over layers of weighted mean |a_l - b_l|.
template <typename T>
Var<T> perceptual_distance(FeatureExtractor<T>& extractor, const Var<T>& a, const Var<T>& b);

/// One critic's outputs on real and generated inputs.
template <typename T>
struct CriticPair {
  DiscriminatorOutput<T> real;
  DiscriminatorOutput<T> fake;
};

// Generator objective. Per critic, scale terms are averaged; critics are
// summed. Real-side features act as fixed targets.
template <typename T>
LossTerms<T> generator_losses(const Var<T>& generated, const Var<T>& warped, const Var<T>& target,
                              const std::vector<CriticPair<T>>& critics, FeatureExtractor<T>& extractor,
                              const LossWeights& w = {});

/// Hinge critic loss: mean relu(1 - real) + mean relu(1 + fake), averaged over
/// scales and summed over critics.
template <typename T>
Var<T> discriminator_loss(const std::vector<CriticPair<T>>& critics);

}  // namespace freehead
