#include <doctest.h>

#include "freehead/gradcheck.hpp"
#include "freehead/nn.hpp"
#include "freehead/ops.hpp"

#include <random>

using namespace freehead;
using Vd = Var<double>;
using Td = Tensor<double>;

namespace {

Td rnd(Shape s, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  return Td::randn(std::move(s), rng, sd);
}

// Weighted sum so that every output element gets a distinct gradient.
Vd probe_sum(const Vd& y, std::uint64_t seed = 99) {
  return sum(y * constant(rnd(y.shape(), seed)));
}

void check(const std::function<Vd(const std::vector<Vd>&)>& f, std::vector<Td> in, double tol = 1e-6) {
  const auto r = grad_check(f, in, 1e-5);
  CHECK(r.numeric_norm > 0);
  CHECK(r.rel_error < tol);
}

}  // namespace

TEST_CASE("broadcasting arithmetic gradients") {
  check([](const auto& v) { return probe_sum(v[0] + v[1]); }, {rnd({2, 3, 4}, 1), rnd({3, 1}, 2)});
  check([](const auto& v) { return probe_sum(v[0] - v[1]); }, {rnd({2, 3, 4}, 1), rnd({4}, 2)});
  check([](const auto& v) { return probe_sum(v[0] * v[1]); }, {rnd({2, 1, 4}, 3), rnd({2, 3, 1}, 4)});
  check([](const auto& v) { return probe_sum(v[0] / v[1]); },
        {rnd({2, 3}, 5), Td({2, 3}, {1.5, 2.0, -1.2, 0.7, 3.0, -2.2})});
  check([](const auto& v) { return probe_sum(v[0] * v[1]); }, {rnd({2, 3}, 6), rnd({2, 3}, 7)});
}

TEST_CASE("broadcast forward values") {
  Vd a(Td({2, 2}, {1, 2, 3, 4}));
  Vd b(Td({2}, {10, 20}));
  const auto y = (a + b).value();
  CHECK(y[0] == 11);
  CHECK(y[1] == 22);
  CHECK(y[2] == 13);
  CHECK(y[3] == 24);
  CHECK_THROWS_AS(a + Vd(Td({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("unary gradients") {
  const Td x = Td({6}, {-1.3, -0.4, 0.2, 0.5, 0.9, 1.7});
  check([](const auto& v) { return probe_sum(relu(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(leaky_relu(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(tanh(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(sigmoid(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(softplus(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(exp(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(square(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(abs(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(sin(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(cos(v[0])); }, {x});
  check([](const auto& v) { return probe_sum(sqrt(v[0])); }, {Td({3}, {0.3, 1.2, 4.0})});
  check([](const auto& v) { return probe_sum(acos_clamped(v[0], -0.99, 0.99)); }, {Td({3}, {-0.5, 0.1, 0.7})});
  check([](const auto& v) { return probe_sum(clamp(v[0], -1.0, 1.0)); }, {x});
}

TEST_CASE("softplus is stable for large inputs") {
  Vd x(Td({3}, {-800, 0, 800}));
  const auto y = softplus(x).value();
  CHECK(y[0] == doctest::Approx(0.0));
  CHECK(y[1] == doctest::Approx(std::log(2.0)));
  CHECK(y[2] == doctest::Approx(800.0));
}

TEST_CASE("reductions and reshaping gradients") {
  check([](const auto& v) { return sum(v[0]); }, {rnd({3, 4}, 8)});
  check([](const auto& v) { return mean(square(v[0])); }, {rnd({3, 4}, 9)});
  check([](const auto& v) { return probe_sum(sum_dim(v[0], 1)); }, {rnd({2, 3, 4}, 10)});
  check([](const auto& v) { return probe_sum(mean_dim(v[0], -1)); }, {rnd({2, 3, 4}, 11)});
  check([](const auto& v) { return probe_sum(reshape(v[0], {4, 6})); }, {rnd({2, 3, 4}, 12)});
  check([](const auto& v) { return probe_sum(narrow(v[0], 2, 1, 2)); }, {rnd({2, 3, 4}, 13)});
  check([](const auto& v) { return probe_sum(concat<double>({v[0], v[1]}, 1)); }, {rnd({2, 3, 2}, 14), rnd({2, 1, 2}, 15)});
  check([](const auto& v) { return probe_sum(index_select(v[0], 1, {2, 0, 2})); }, {rnd({2, 3, 2}, 16)});
  check([](const auto& v) { return probe_sum(permute(v[0], {2, 0, 1})); }, {rnd({2, 3, 4}, 17)});
}

TEST_CASE("permute moves elements") {
  Vd a(Td({2, 3}, {0, 1, 2, 3, 4, 5}));
  const auto y = permute(a, {1, 0}).value();
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y[1] == 3);
  CHECK(y[2] == 1);
}

TEST_CASE("matmul, linear and softmax gradients") {
  check([](const auto& v) { return probe_sum(matmul(v[0], v[1])); }, {rnd({3, 4}, 18), rnd({4, 2}, 19)});
  check([](const auto& v) { return probe_sum(matmul(v[0], v[1])); }, {rnd({2, 3, 4}, 20), rnd({2, 4, 2}, 21)});
  check([](const auto& v) { return probe_sum(linear(v[0], v[1], v[2])); }, {rnd({3, 5}, 22), rnd({4, 5}, 23), rnd({4}, 24)});
  check([](const auto& v) { return probe_sum(softmax_last(v[0])); }, {rnd({3, 5}, 25)});
}

TEST_CASE("softmax rows sum to one") {
  Vd a(rnd({4, 7}, 26, 30.0));
  const auto y = softmax_last(a).value();
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) s += y[r * 7 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("conv2d matches a direct loop") {
  const Td x = rnd({2, 3, 7, 6}, 27);
  const Td w = rnd({4, 3, 3, 3}, 28);
  const Td b = rnd({4}, 29);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      const auto y = conv2d(Vd(x), Vd(w), Vd(b), {stride, pad}).value();
      const int Ho = (7 + 2 * pad - 3) / stride + 1, Wo = (6 + 2 * pad - 3) / stride + 1;
      REQUIRE(y.shape() == Shape{2, 4, Ho, Wo});
      double max_err = 0;
      for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 4; ++o)
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
              double s = b[o];
              for (int c = 0; c < 3; ++c)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                    if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                    s += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
                  }
              max_err = std::max(max_err, std::abs(s - y.at(n, o, oy, ox)));
            }
      CHECK(max_err < 1e-12);
    }
  }
}

TEST_CASE("conv2d gradients") {
  check([](const auto& v) { return probe_sum(conv2d(v[0], v[1], v[2], {1, 1})); },
        {rnd({2, 2, 5, 5}, 30), rnd({3, 2, 3, 3}, 31), rnd({3}, 32)});
  check([](const auto& v) { return probe_sum(conv2d(v[0], v[1], v[2], {2, 1})); },
        {rnd({1, 2, 6, 5}, 33), rnd({3, 2, 3, 3}, 34), rnd({3}, 35)});
  check([](const auto& v) { return probe_sum(conv2d(v[0], v[1], Vd(), {1, 0})); },
        {rnd({2, 3, 4, 4}, 36), rnd({2, 3, 1, 1}, 37)});
  check([](const auto& v) { return probe_sum(conv2d(v[0], v[1], v[2], {2, 3})); },
        {rnd({1, 1, 8, 8}, 38), rnd({2, 1, 7, 7}, 39), rnd({2}, 40)});
}

TEST_CASE("normalization gradients") {
  check(
      [](const auto& v) {
        Td rm({3}), rv({3}, 1.0);
        return probe_sum(batch_norm(v[0], v[1], v[2], rm, rv, true));
      },
      {rnd({2, 3, 3, 2}, 41), rnd({3}, 42), rnd({3}, 43)});
  check(
      [](const auto& v) {
        Td rm = rnd({3}, 44, 0.1), rv({3}, 2.0);
        return probe_sum(batch_norm(v[0], v[1], v[2], rm, rv, false));
      },
      {rnd({2, 3, 3, 2}, 45), rnd({3}, 46), rnd({3}, 47)});
  check([](const auto& v) { return probe_sum(instance_norm(v[0])); }, {rnd({2, 3, 4, 3}, 48)});
}

TEST_CASE("instance norm output has zero mean and unit variance") {
  const auto y = instance_norm(Vd(rnd({1, 2, 5, 5}, 49, 3.0)), 0.0).value();
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (int i = 0; i < 25; ++i) m += y[c * 25 + i];
    m /= 25;
    for (int i = 0; i < 25; ++i) v += (y[c * 25 + i] - m) * (y[c * 25 + i] - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 25 == doctest::Approx(1.0));
  }
}

TEST_CASE("batch norm updates running statistics") {
  Td rm({1}), rv({1}, 1.0);
  Vd x(Td({2, 1, 1, 2}, {1, 2, 3, 4}));
  batch_norm(x, Vd(), Vd(), rm, rv, true);
  CHECK(rm[0] == doctest::Approx(0.25));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * (5.0 / 3.0)));
}

TEST_CASE("pooling") {
  Vd x(Td({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const auto mp = max_pool2d(x, 2, 1, 0).value();
  CHECK(mp[0] == 5);
  CHECK(mp[3] == 9);
  // 3x3 window with padding 1 at the corner covers four real cells.
  const auto ap = avg_pool2d(x, 3, 2, 1).value();
  CHECK(ap.shape() == Shape{1, 1, 2, 2});
  CHECK(ap[0] == doctest::Approx((1 + 2 + 4 + 5) / 4.0));
  CHECK(ap[3] == doctest::Approx((5 + 6 + 8 + 9) / 4.0));
  check([](const auto& v) { return probe_sum(max_pool2d(v[0], 3, 2, 1)); }, {rnd({1, 2, 5, 5}, 50)});
  check([](const auto& v) { return probe_sum(avg_pool2d(v[0], 3, 2, 1)); }, {rnd({1, 2, 5, 5}, 51)});
  check([](const auto& v) { return probe_sum(global_avg_pool(v[0])); }, {rnd({2, 3, 2, 2}, 52)});
}

TEST_CASE("pixel shuffle layout") {
  Td t({1, 4, 1, 1}, {0, 1, 2, 3});
  const auto y = pixel_shuffle(Vd(t), 2).value();
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(y[i] == i);
  check([](const auto& v) { return probe_sum(pixel_shuffle(v[0], 2)); }, {rnd({2, 8, 2, 3}, 53)});
}

TEST_CASE("bilinear resize") {
  // Half-pixel centres: a 2-wide ramp upsampled to 4 gives 0, .25, .75, 1.
  Vd x(Td({1, 1, 1, 2}, {0, 1}));
  const auto y = resize_bilinear(x, 1, 4).value();
  CHECK(y[0] == doctest::Approx(0.0));
  CHECK(y[1] == doctest::Approx(0.25));
  CHECK(y[2] == doctest::Approx(0.75));
  CHECK(y[3] == doctest::Approx(1.0));
  check([](const auto& v) { return probe_sum(resize_bilinear(v[0], 5, 3)); }, {rnd({1, 2, 4, 4}, 54)});
  check([](const auto& v) { return probe_sum(resize_bilinear(v[0], 2, 2)); }, {rnd({1, 2, 4, 4}, 55)});
}

TEST_CASE("grid sample gradients at non-integer locations") {
  std::mt19937_64 rng(56);
  Td coords = Td::uniform({2, 2, 3, 4}, rng, -0.6, 5.6);
  check([](const auto& v) { return probe_sum(grid_sample(v[0], v[1])); }, {rnd({2, 3, 5, 5}, 57), coords});
}

TEST_CASE("grid sample zero padding and identity") {
  const Td x = rnd({1, 2, 4, 5}, 58);
  Td coords({1, 2, 4, 5});
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 5; ++xx) {
      coords.at(0, 0, y, xx) = xx;
      coords.at(0, 1, y, xx) = y;
    }
  const auto id = grid_sample(Vd(x), Vd(coords)).value();
  CHECK((id.array() - x.array()).abs().maxCoeff() == 0.0);
  coords.array() += 100.0;
  CHECK(grid_sample(Vd(x), Vd(coords)).value().array().abs().maxCoeff() == 0.0);
  coords.array() = std::numeric_limits<double>::quiet_NaN();
  CHECK(grid_sample(Vd(x), Vd(coords)).value().array().abs().maxCoeff() == 0.0);
}

TEST_CASE("no graph under NoGradGuard and leaf grads accumulate") {
  Vd a(Td({2}, {1, 2}), true);
  {
    NoGradGuard g;
    CHECK_FALSE((a * a).requires_grad());
  }
  auto y = sum(a * a);
  y.backward();
  sum(a).backward();
  CHECK(a.grad()[0] == doctest::Approx(3.0));
  CHECK(a.grad()[1] == doctest::Approx(5.0));
}

TEST_CASE("orthogonal init rows are orthonormal") {
  std::mt19937_64 rng(59);
  const auto w = init_weight<double>({4, 2, 3, 3}, 18, Init::Orthogonal, rng);
  Eigen::Map<const Eigen::Matrix<double, 4, 18, Eigen::RowMajor>> m(w.data());
  CHECK(((m * m.transpose()) - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}
