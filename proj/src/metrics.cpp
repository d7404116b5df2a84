#include "freehead/metrics.hpp"

#include <json.hpp>

#include <Eigen/Geometry>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace freehead {

namespace {

void require_same(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("metric inputs differ in shape: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.size() == 0) throw std::invalid_argument("metric inputs are empty");
}

double mse(const Tensor<float>& a, const Tensor<float>& b) {
  require_same(a, b);
  return (a.array().cast<double>() - b.array().cast<double>()).square().mean();
}

// Symmetric PSD square root with negative eigenvalues clipped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void moments(const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  cov = c.transpose() * c / double(x.rows() - 1);
}

}  // namespace

double l1_distance(const Tensor<float>& a, const Tensor<float>& b) {
  require_same(a, b);
  return (a.array().cast<double>() - b.array().cast<double>()).abs().mean();
}

double psnr_from_mse(double m) {
  if (!(m >= 0.0)) throw std::invalid_argument("MSE must be non-negative");
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(255.0) - 10.0 * std::log10(m));
}

double psnr(const Tensor<float>& a, const Tensor<float>& b) { return psnr_from_mse(mse(a, b)); }

double ard(const std::vector<EulerAngles>& p, const std::vector<EulerAngles>& t) {
  if (p.empty()) throw std::invalid_argument("ARD needs at least one frame");
  if (p.size() != t.size()) throw std::invalid_argument("ARD series differ in length");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s += (std::abs(p[i].pitch - t[i].pitch) + std::abs(p[i].yaw - t[i].yaw) + std::abs(p[i].roll - t[i].roll)) / 3.0;
  }
  return s / double(p.size());
}

double angle_between_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  if (a == b) return 0.0;
  return std::atan2(a.cross(b).norm(), a.dot(b)) / kDeg;
}

double agd(const std::vector<Eigen::Vector3d>& p, const std::vector<Eigen::Vector3d>& t, int* renormalised) {
  if (p.empty()) throw std::invalid_argument("AGD needs at least one frame");
  if (p.size() != t.size()) throw std::invalid_argument("AGD series differ in length");
  int fixed = 0;
  auto unit = [&](const Eigen::Vector3d& v) -> Eigen::Vector3d {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("AGD input is zero or non-finite");
    if (std::abs(n - 1.0) > 1e-6) {
      ++fixed;
      return v / n;
    }
    return v;
  };
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += angle_between_deg(unit(p[i]), unit(t[i]));
  if (renormalised) *renormalised = fixed;
  return s / double(p.size());
}

double au_hamming(const std::vector<std::vector<bool>>& p, const std::vector<std::vector<bool>>& t) {
  if (p.empty()) throw std::invalid_argument("AU-H needs at least one frame");
  if (p.size() != t.size()) throw std::invalid_argument("AU-H series differ in length");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].size() != t[i].size() || p[i].empty()) throw std::invalid_argument("AU vectors differ in length");
    int diff = 0;
    for (std::size_t k = 0; k < p[i].size(); ++k) diff += p[i][k] != t[i][k];
    s += double(diff) / double(p[i].size());
  }
  return s / double(p.size());
}

double csim(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("CSIM vectors differ in length");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("CSIM of a zero vector");
  return a.dot(b) / (na * nb);
}

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2) {
  // Tr sqrt(S1 S2) = Tr sqrt(S1^1/2 S2 S1^1/2), which is symmetric.
  const Eigen::MatrixXd r1 = psd_sqrt(cov1);
  const Eigen::MatrixXd m = r1 * cov2 * r1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt;
}

FidResult fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool allow_shrinkage) {
  if (a.cols() != b.cols() || a.cols() == 0) throw std::invalid_argument("FID sets differ in dimension");
  const Index d = a.cols();
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("FID needs at least two samples per set");
  FidResult r;
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd c1, c2;
  moments(a, mu1, c1);
  moments(b, mu2, c2);
  if (a.rows() < d + 1 || b.rows() < d + 1) {
    if (!allow_shrinkage) {
      throw std::invalid_argument("FID needs at least dim + 1 samples per set (" + std::to_string(d + 1) +
                                  "); enable shrinkage to proceed");
    }
    // Shrink toward a scaled identity so the estimate is full rank.
    for (Eigen::MatrixXd* c : {&c1, &c2}) {
      const double lam = 0.1, avg = c->trace() / double(d);
      *c = (1.0 - lam) * *c + lam * avg * Eigen::MatrixXd::Identity(d, d);
    }
    r.shrunk = true;
  }
  r.value = frechet_distance(mu1, c1, mu2, c2);
  return r;
}

PooledFeatureEmbedder::PooledFeatureEmbedder(std::unique_ptr<FeatureExtractor<float>> extractor)
    : extractor_(extractor ? std::move(extractor) : std::make_unique<RandomFeatureExtractor<float>>(3, 16, 99)) {}

std::string PooledFeatureEmbedder::name() const { return "pooled-" + extractor_->name(); }

int PooledFeatureEmbedder::dim() const {
  if (dim_ < 0) {
    auto* self = const_cast<PooledFeatureEmbedder*>(this);
    self->dim_ = int(self->embed(Tensor<float>(Shape{3, 16, 16})).size());
  }
  return dim_;
}

Eigen::VectorXd PooledFeatureEmbedder::embed(const Tensor<float>& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("embedder expects (3,H,W)");
  NoGradGuard ng;
  Tensor<float> x(Shape{1, 3, image.dim(1), image.dim(2)});
  x.array() = image.array() * 2.0f - 1.0f;
  std::vector<double> out;
  for (const auto& f : extractor_->embed(constant(std::move(x)))) {
    const Tensor<float> pooled = global_avg_pool(f).value();
    for (Index i = 0; i < pooled.size(); ++i) out.push_back(pooled[i]);
  }
  dim_ = int(out.size());
  return Eigen::Map<Eigen::VectorXd>(out.data(), Index(out.size()));
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  for (const auto& [k, v] : values) j[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  for (const auto& [k, v] : series) j["series_" + k] = v;
  for (const auto& [k, v] : metadata) j["meta_" + k] = v;
  return j.dump();
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  for (const auto& [k, v] : values) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-12s %12.4f\n", k.c_str(), v);
    os << buf;
  }
  for (const auto& [k, v] : metadata) os << k << ": " << v << "\n";
  return os.str();
}

MetricReport evaluate_frames(const std::vector<Tensor<float>>& predicted, const std::vector<Tensor<float>>& truth,
                             Embedder* embedder) {
  if (predicted.empty()) throw std::invalid_argument("no frames to evaluate");
  if (predicted.size() != truth.size()) throw std::invalid_argument("frame counts differ");
  MetricReport r;
  auto& l1s = r.series["l1"];
  auto& ps = r.series["psnr"];
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    Tensor<float> a = predicted[i], b = truth[i];
    require_same(a, b);
    a.array() *= 255.0f;
    b.array() *= 255.0f;
    l1s.push_back(l1_distance(a, b));
    const double m = mse(a, b);
    ps.push_back(psnr_from_mse(m));
  }
  double l1 = 0, p = 0;
  for (std::size_t i = 0; i < l1s.size(); ++i) l1 += l1s[i], p += ps[i];
  r.values["l1"] = l1 / double(l1s.size());
  r.values["psnr"] = p / double(ps.size());
  if (embedder) {
    const int n = int(predicted.size());
    Eigen::MatrixXd ea(n, embedder->dim()), eb(n, embedder->dim());
    auto& cs = r.series["csim"];
    double c = 0;
    for (int i = 0; i < n; ++i) {
      ea.row(i) = embedder->embed(predicted[i]).transpose();
      eb.row(i) = embedder->embed(truth[i]).transpose();
      cs.push_back(csim(ea.row(i).transpose(), eb.row(i).transpose()));
      c += cs.back();
    }
    r.values["csim"] = c / n;
    if (n >= 2) {
      const FidResult f = fid(ea, eb, true);
      r.values["fid"] = f.value;
      r.metadata["fid_shrinkage"] = f.shrunk ? "yes" : "no";
    }
    r.metadata["embedder"] = embedder->name();
  }
  r.metadata["frames"] = std::to_string(predicted.size());
  return r;
}

}  // namespace freehead
