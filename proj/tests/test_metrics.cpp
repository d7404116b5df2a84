#include <doctest.h>

#include "freehead/metrics.hpp"

#include <Eigen/Geometry>

#include <random>

using namespace freehead;

namespace {

Tensor<float> filled(float v, Shape s = {3, 8, 8}) { return Tensor<float>(std::move(s), v); }

Eigen::MatrixXd gaussian_rows(int n, const Eigen::Vector2d& mu, const Eigen::Matrix2d& cov, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const Eigen::Matrix2d L = cov.llt().matrixL();
  Eigen::MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d z(nd(rng), nd(rng));
    x.row(i) = (mu + L * z).transpose();
  }
  return x;
}

// 2x2 oracle: for A with positive eigenvalues, Tr sqrt(A) = sqrt(Tr A + 2 sqrt(det A)).
double fid_2d(const Eigen::Vector2d& m1, const Eigen::Matrix2d& c1, const Eigen::Vector2d& m2,
              const Eigen::Matrix2d& c2) {
  const Eigen::Matrix2d a = c1 * c2;
  return (m1 - m2).squaredNorm() + c1.trace() + c2.trace() - 2 * std::sqrt(a.trace() + 2 * std::sqrt(a.determinant()));
}

}  // namespace

TEST_CASE("l1 and psnr anchors") {
  CHECK(l1_distance(filled(10), filled(10)) == 0.0);
  CHECK(l1_distance(filled(0), filled(255)) == 255.0);
  Tensor<float> checker(Shape{3, 8, 8}), zero(Shape{3, 8, 8});
  for (Index i = 0; i < checker.size(); ++i) checker[i] = (i % 2) ? 255.0f : 0.0f;
  CHECK(l1_distance(checker, zero) == doctest::Approx(127.5));
  CHECK(l1_distance(checker, zero) == l1_distance(zero, checker));

  CHECK(psnr_from_mse(1.0) == doctest::Approx(48.1308).epsilon(1e-3 / 48.13));
  CHECK(std::abs(psnr(filled(10), filled(11)) - 48.1308) < 1e-3);
  CHECK(psnr_from_mse(255.0 * 255.0) == doctest::Approx(0.0));
  CHECK(psnr(filled(3), filled(3)) == kPsnrCap);
  double prev = 1e9;
  for (double m = 0.5; m < 1e4; m *= 1.7) {
    CHECK(psnr_from_mse(m) < prev);
    prev = psnr_from_mse(m);
  }
  CHECK_THROWS_AS(l1_distance(filled(0), filled(0, {3, 4, 4})), ShapeError);
}

TEST_CASE("ard averages angles then frames") {
  std::vector<EulerAngles> a{{0, 0, 0}, {10, 5, -3}}, b = a;
  CHECK(ard(a, b) == 0.0);
  for (auto& e : b) e.yaw += 3;
  CHECK(ard(a, b) == doctest::Approx(1.0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-60, 60);
  std::vector<EulerAngles> p(50), t(50);
  double brute = 0;
  for (int i = 0; i < 50; ++i) {
    p[i] = {u(rng), u(rng), u(rng)};
    t[i] = {u(rng), u(rng), u(rng)};
    double s = 0;
    for (int k = 0; k < 3; ++k) {
      const double x = k == 0 ? p[i].pitch - t[i].pitch : k == 1 ? p[i].yaw - t[i].yaw : p[i].roll - t[i].roll;
      s += x < 0 ? -x : x;
    }
    brute += s / 3;
  }
  CHECK(ard(p, t) == doctest::Approx(brute / 50).epsilon(1e-12));
  CHECK_THROWS(ard({}, {}));
  CHECK_THROWS(ard(a, {a[0]}));
}

TEST_CASE("agd anchors and renormalisation") {
  const Eigen::Vector3d z(0, 0, 1), x(1, 0, 0);
  CHECK(agd({z}, {z}) == 0.0);
  CHECK(std::abs(agd({z}, {x}) - 90.0) < 1e-6);
  CHECK(std::abs(agd({z}, {-z}) - 180.0) < 1e-6);
  CHECK(agd({z, x}, {x, z}) == agd({x, z}, {z, x}));
  int fixed = 0;
  CHECK(std::abs(agd({2 * z}, {3 * x}, &fixed) - 90.0) < 1e-6);
  CHECK(fixed == 2);
  CHECK_THROWS(agd({Eigen::Vector3d::Zero()}, {z}));
}

TEST_CASE("au hamming and csim") {
  std::vector<bool> a(17, false), b(17, false);
  CHECK(au_hamming({a}, {a}) == 0.0);
  std::vector<bool> na(17, true);
  CHECK(au_hamming({a}, {na}) == 1.0);
  b[1] = b[5] = b[9] = true;
  CHECK(au_hamming({a}, {b}) == doctest::Approx(3.0 / 17.0));
  CHECK_THROWS(au_hamming({a}, {std::vector<bool>(16)}));

  Eigen::VectorXd u(3), v(3);
  u << 1, 2, 3;
  v << -2, 1, 0;
  CHECK(csim(u, u) == doctest::Approx(1.0));
  CHECK(csim(u, v) == doctest::Approx(0.0));
  CHECK(csim(u, -u) == doctest::Approx(-1.0));
  CHECK_THROWS(csim(u, Eigen::VectorXd::Zero(3)));
}

TEST_CASE("fid anchors") {
  const Eigen::Matrix2d cov = (Eigen::Matrix2d() << 1.0, 0.3, 0.3, 0.5).finished();
  const Eigen::MatrixXd a = gaussian_rows(500, Eigen::Vector2d(0, 0), cov, 1);
  CHECK(std::abs(fid(a, a).value) < 1e-6);

  // Equal covariance, shifted mean: exactly the squared shift.
  Eigen::MatrixXd b = a;
  const Eigen::Vector2d delta(0.7, -1.2);
  b.rowwise() += delta.transpose();
  CHECK(std::abs(fid(a, b).value - delta.squaredNorm()) < 1e-6);
  CHECK(std::abs(fid(a, b).value - fid(b, a).value) < 1e-9);

  // Joint rotation leaves the distance unchanged.
  const Eigen::Matrix2d r = Eigen::Rotation2Dd(0.7).toRotationMatrix();
  const Eigen::MatrixXd c = gaussian_rows(400, Eigen::Vector2d(1, 0), Eigen::Matrix2d::Identity() * 2, 2);
  CHECK(std::abs(fid(a * r.transpose(), c * r.transpose()).value - fid(a, c).value) < 1e-6);
  CHECK(fid(a, c).value > -1e-6);

  // Monte-Carlo against the 2x2 closed form.
  const Eigen::Vector2d m1(0, 0), m2(1, 0.5);
  const Eigen::Matrix2d c1 = (Eigen::Matrix2d() << 1.0, 0.2, 0.2, 0.8).finished();
  const Eigen::Matrix2d c2 = (Eigen::Matrix2d() << 2.0, -0.3, -0.3, 0.6).finished();
  const double oracle = fid_2d(m1, c1, m2, c2);
  CHECK(frechet_distance(m1, c1, m2, c2) == doctest::Approx(oracle).epsilon(1e-10));
  const double sampled = fid(gaussian_rows(10000, m1, c1, 3), gaussian_rows(10000, m2, c2, 4)).value;
  CHECK(std::abs(sampled - oracle) / oracle < 0.05);

  CHECK_THROWS(fid(a.topRows(2), a.topRows(2)));
  const Eigen::MatrixXd wide = gaussian_rows(2, m1, c1, 5);
  CHECK_THROWS(fid(Eigen::MatrixXd::Random(3, 5), Eigen::MatrixXd::Random(3, 5)));
  CHECK(fid(Eigen::MatrixXd::Random(3, 5), Eigen::MatrixXd::Random(3, 5), true).shrunk);
}

TEST_CASE("frame evaluation report") {
  std::vector<Tensor<float>> p{filled(0.5f), filled(0.25f)}, t{filled(0.5f), filled(0.5f)};
  PooledFeatureEmbedder emb;
  const MetricReport r = evaluate_frames(p, t, &emb);
  CHECK(r.values.at("l1") == doctest::Approx(255 * 0.25 / 2));
  CHECK(r.series.at("psnr")[0] == kPsnrCap);
  CHECK(r.values.count("fid") == 1);
  CHECK(r.values.at("csim") <= 1.0 + 1e-9);
  CHECK(r.to_json() == evaluate_frames(p, t, &emb).to_json());
  CHECK(r.to_json().find("\"l1\"") != std::string::npos);
  CHECK_THROWS(evaluate_frames(p, {t[0]}));
}
