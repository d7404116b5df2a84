#include <doctest.h>

#include "freehead/networks.hpp"
#include "freehead/ops.hpp"

#include <random>

using namespace freehead;
using Vf = Var<float>;
using Tf = Tensor<float>;

namespace {

Vf input(Shape s, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  return constant(Tf::uniform(std::move(s), rng, lo, hi));
}

float max_abs_diff(const Tf& a, const Tf& b) { return (a.array() - b.array()).abs().maxCoeff(); }

}  // namespace

TEST_CASE("model config channels, json round trip and hash") {
  const ModelConfig full = ModelConfig::full();
  CHECK(full.generator_c1() == 32);
  CHECK(full.generator_c2() == 128);
  CHECK(full.generator_c3() == 512);
  CHECK(full.spade_hidden() == 128);

  const ModelConfig desk = ModelConfig::desk();
  CHECK(desk.resolution == 64);
  CHECK(desk.generator_c1() == 8);
  CHECK(desk.generator_c3() == 128);
  CHECK(desk.ch(1024) == 256);
  CHECK(desk.ch(16) == 8);

  const ModelConfig back = ModelConfig::from_json(desk.to_json());
  CHECK(back.to_json() == desk.to_json());
  CHECK(back.hash() == desk.hash());
  CHECK(desk.hash() != full.hash());
  CHECK(desk.hash().size() == 16);

  ModelConfig bad = desk;
  bad.resolution = 62;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = desk;
  bad.width = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS(ModelConfig::from_json("{\"resolution\": 64}"));
}

TEST_CASE("canonical estimator desk shapes and bounded angles") {
  std::mt19937_64 rng(1);
  const ModelConfig cfg = ModelConfig::desk();
  CanonicalEstimator<float> net(cfg, rng);
  const Vf x = input({2, 3, 64, 64}, 2);
  NoGradGuard ng;
  const auto out = net.forward(x);
  CHECK(out.euler.shape() == Shape{2, 3});
  CHECK(out.pitch.shape() == Shape{2});
  CHECK(out.rotation.shape() == Shape{2, 3, 3});
  CHECK(out.translation.shape() == Shape{2, 1, 3});
  CHECK(out.scale.shape() == Shape{2, 1, 1});
  CHECK(out.deformation.shape() == Shape{2, 68, 3});
  CHECK(out.points.shape() == Shape{2, 68, 3});
  CHECK(out.logits[0].shape() == Shape{2, 121});
  for (Index i = 0; i < out.scale.value().size(); ++i) CHECK(out.scale.value()[i] > 0.0f);
  CHECK_THROWS_AS(net.forward(input({1, 3, 32, 32}, 3)), ShapeError);

  // Saturated logits still give angles inside the bin range.
  for (auto& [name, p] : net.named_parameters())
    if (name.find("_head.weight") != std::string::npos) p.mutable_value().array() *= 1e4f;
  const auto sat = net.forward(input({2, 3, 64, 64}, 4, -5.0f, 5.0f));
  for (Index i = 0; i < 6; ++i) {
    CHECK(std::isfinite(sat.euler.value()[i]));
    CHECK(std::abs(sat.euler.value()[i]) <= 60.0f + 1e-3f);
  }
}

TEST_CASE("residual bottleneck with zero weights is the identity") {
  std::mt19937_64 rng(5);
  ResBottleneck<double> block(32, 32, 1, rng);
  for (auto& p : block.parameters())
    if (p.ndim() == 4) p.mutable_value().array() = 0.0;
  const Var<double> x(Tensor<double>::randn({2, 32, 6, 6}, rng));
  const auto y = block.forward(x);
  CHECK((y.value().array() - x.value().array()).abs().maxCoeff() == doctest::Approx(0.0));
  CHECK_FALSE(block.downsample());
  CHECK_THROWS(ResBottleneck<double>(16, 32, 1, rng));
}

TEST_CASE("gaze estimator desk shape") {
  std::mt19937_64 rng(6);
  const ModelConfig cfg = ModelConfig::desk();
  GazeEstimator<float> net(cfg, rng);
  NoGradGuard ng;
  const auto v = net.forward(input({2, 3, 64, 64}, 7));
  CHECK(v.shape() == Shape{2, 481, 3});
  CHECK_THROWS_AS(net.forward(input({1, 3, 128, 128}, 8)), ShapeError);
}

TEST_CASE("generator desk shapes, identity warp at init and eval determinism") {
  std::mt19937_64 rng(9);
  const ModelConfig cfg = ModelConfig::desk();
  Generator<float> gen(cfg, rng);
  gen.eval();
  const GeneratorSource<float> src{input({2, 3, 64, 64}, 10), input({2, 3, 64, 64}, 11, 0.0f, 1.0f)};
  const Vf target = input({2, 3, 64, 64}, 12, 0.0f, 1.0f);
  NoGradGuard ng;
  const auto a = gen.forward({src}, target);
  CHECK(a.generated.shape() == Shape{2, 3, 64, 64});
  CHECK(a.flows[0].shape() == Shape{2, 2, 64, 64});
  CHECK(a.warped_features[0].shape() == Shape{2, 8, 64, 64});
  CHECK(a.warped_features[1].shape() == Shape{2, 32, 32, 32});
  CHECK(a.warped_features[2].shape() == Shape{2, 128, 16, 16});
  CHECK(a.generated.value().array().abs().maxCoeff() <= 1.0f);
  // The flow head starts at zero, so the first warp is exact.
  CHECK(a.flows[0].value().array().abs().maxCoeff() == 0.0f);
  CHECK(max_abs_diff(a.warped.value(), src.image.value()) <= 1e-6f);

  const auto b = gen.forward({src}, target);
  CHECK(max_abs_diff(a.generated.value(), b.generated.value()) == 0.0f);
}

TEST_CASE("two-source generator starts with an even blend") {
  std::mt19937_64 rng(13);
  const ModelConfig cfg = ModelConfig::desk();
  Generator<float> gen(cfg, rng);
  CHECK_FALSE(gen.flow().has_weight_head());
  const std::size_t core = gen.flow().core_parameters().size();
  gen.flow().add_weight_head();
  CHECK(gen.flow().has_weight_head());
  CHECK(gen.flow().core_parameters().size() == core);
  CHECK(gen.flow().weight_head_parameters().size() == 2);

  const GeneratorSource<float> s1{input({1, 3, 64, 64}, 14), input({1, 3, 64, 64}, 15, 0.0f, 1.0f)};
  const GeneratorSource<float> s2{input({1, 3, 64, 64}, 16), input({1, 3, 64, 64}, 17, 0.0f, 1.0f)};
  NoGradGuard ng;
  const auto out = gen.forward({s1, s2}, input({1, 3, 64, 64}, 18, 0.0f, 1.0f));
  Tf mid(s1.image.shape());
  mid.array() = (s1.image.value().array() + s2.image.value().array()) * 0.5f;
  CHECK(max_abs_diff(out.warped.value(), mid) <= 1e-6f);
  CHECK(out.logits.size() == 2);
}

TEST_CASE("renderer gradients reach every input") {
  std::mt19937_64 rng(19);
  ModelConfig cfg = ModelConfig::desk();
  cfg.resolution = 32;
  RenderNet<double> render(cfg, rng);
  auto var = [&](Shape s) { return Var<double>(Tensor<double>::randn(std::move(s), rng), true); };
  const auto target = var({1, 3, 32, 32}), warped = var({1, 3, 32, 32}), source = var({1, 3, 32, 32});
  const std::array<Var<double>, 3> feats{var({1, 8, 32, 32}), var({1, 32, 16, 16}), var({1, 128, 8, 8})};
  const auto y = render.forward(target, warped, source, feats);
  CHECK(y.shape() == Shape{1, 3, 32, 32});
  sum(y * constant(Tensor<double>::randn(y.shape(), rng))).backward();
  for (const auto* v : {&target, &warped, &source, &feats[0], &feats[1], &feats[2]}) {
    REQUIRE(v->has_grad());
    CHECK(v->grad().array().abs().maxCoeff() > 0.0);
  }
  CHECK_THROWS_AS(render.forward(target, warped, source, {feats[0], feats[0], feats[2]}), ShapeError);
}

TEST_CASE("multi-scale discriminator shapes") {
  std::mt19937_64 rng(20);
  const ModelConfig cfg = ModelConfig::desk();
  Discriminator<float> disc(cfg, rng);
  NoGradGuard ng;
  const auto out = disc.forward(input({2, 3, 64, 64}, 21), input({2, 3, 64, 64}, 22, 0.0f, 1.0f));
  REQUIRE(out.scores.size() == 2);
  CHECK(out.scores[0].shape() == Shape{2, 1, 8, 8});
  CHECK(out.scores[1].shape() == Shape{2, 1, 4, 4});
  REQUIRE(out.features.size() == 2);
  CHECK(out.features[0].size() == 4);
  CHECK(out.features[0][0].shape() == Shape{2, 16, 32, 32});
  CHECK_THROWS_AS(disc.forward(input({2, 3, 64, 64}, 21), input({2, 3, 32, 32}, 22)), ShapeError);
}

TEST_CASE("mouth box and crop") {
  Keypoints3D p = default_keypoint_template();
  const CropBox box = mouth_box(p, 64, 64);
  CHECK_FALSE(box.fallback);
  CHECK(box.x1 > box.x0);
  CHECK(box.y1 > box.y0);
  for (int k = 48; k < 68; ++k) {
    const double x = (p(k, 0) + 1) / 2 * 63, y = (p(k, 1) + 1) / 2 * 63;
    CHECK(x > box.x0);
    CHECK(x < box.x1);
    CHECK(y > box.y0);
    CHECK(y < box.y1);
  }

  for (int k = 48; k < 68; ++k) p.row(k) = p.row(48);
  const CropBox flat = mouth_box(p, 64, 64);
  CHECK(flat.fallback);
  CHECK(flat.x1 - flat.x0 == doctest::Approx(32.0));
  p(50, 0) = std::nan("");
  CHECK(mouth_box(p, 64, 64).fallback);

  // A box covering the whole image reproduces it at the same size.
  const Vf img = input({1, 3, 16, 16}, 23);
  const CropBox whole{-0.5, -0.5, 15.5, 15.5, false};
  CHECK(max_abs_diff(crop_resize(img, {whole}, 16).value(), img.value()) <= 1e-6f);
  CHECK(crop_resize(img, {box}, 8).shape() == Shape{1, 3, 8, 8});
  CHECK_THROWS_AS(crop_resize(img, {whole, whole}, 8), ShapeError);
}
