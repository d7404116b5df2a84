#pragma once

#include "freehead/geometry.hpp"
#include "freehead/losses.hpp"
#include "freehead/tensor.hpp"

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace freehead {

// Image metrics take equal-shape tensors on the 0-255 scale.

double l1_distance(const Tensor<float>& a, const Tensor<float>& b);

/// 20 log10(255) - 10 log10(MSE); identical inputs report kPsnrCap.
constexpr double kPsnrCap = 100.0;
double psnr(const Tensor<float>& a, const Tensor<float>& b);
double psnr_from_mse(double mse);

/// Mean over frames of the mean absolute pitch/yaw/roll difference, degrees.
double ard(const std::vector<EulerAngles>& predicted, const std::vector<EulerAngles>& truth);

/// Mean angle between gaze vectors, degrees. Non-unit inputs are normalised
/// and counted in *renormalised when given.
double agd(const std::vector<Eigen::Vector3d>& predicted, const std::vector<Eigen::Vector3d>& truth,
           int* renormalised = nullptr);
double angle_between_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

/// Fraction of disagreeing action-unit flags, averaged over frames.
double au_hamming(const std::vector<std::vector<bool>>& predicted, const std::vector<std::vector<bool>>& truth);

double csim(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct FidResult {
  double value = 0;
  bool shrunk = false;  // covariance shrinkage was needed for a rank-deficient set
};

/// Frechet distance between Gaussians fitted to the rows of a and b. Sets with
/// fewer than dim + 1 rows are rejected unless allow_shrinkage is set.
FidResult fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool allow_shrinkage = false);
/// Closed form for known moments.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& cov2);

/// Maps an image (C,H,W) in [0,1] to a fixed-length vector.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd embed(const Tensor<float>& image) = 0;
};

/// Global-average-pooled maps of a fixed feature stack, concatenated. With the
/// default random extractor this is a stand-in for identity/Inception embedders.
class PooledFeatureEmbedder : public Embedder {
 public:
  explicit PooledFeatureEmbedder(std::unique_ptr<FeatureExtractor<float>> extractor = nullptr);
  std::string name() const override;
  int dim() const override;
  Eigen::VectorXd embed(const Tensor<float>& image) override;

 private:
  std::unique_ptr<FeatureExtractor<float>> extractor_;
  int dim_ = -1;
};

struct MetricReport {
  std::map<std::string, double> values;
  std::map<std::string, std::vector<double>> series;
  std::map<std::string, std::string> metadata;

  std::string to_json() const;
  std::string to_table() const;
};

/// Per-frame L1/PSNR (and CSIM/FID through the embedder, when given) between
/// paired frame lists in [0,1].
MetricReport evaluate_frames(const std::vector<Tensor<float>>& predicted, const std::vector<Tensor<float>>& truth,
                             Embedder* embedder = nullptr);

}  // namespace freehead
