#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "debiaslab/model.hpp"

namespace debiaslab {

// Second-moment statistics of the MLP keys at `layer`: the mean of k k^T
// over every (text, position) of the corpus, plus ridge * I. Symmetric, and
// positive definite for ridge > 0.
Eigen::MatrixXd estimate_key_covariance(const ModelHandle& model, int layer,
                                        const std::vector<std::string>& corpus, double ridge);

// Relative ridge used when none is configured: 1e-4 times the mean diagonal
// of the raw second-moment matrix.
double default_covariance_ridge(const Eigen::MatrixXd& raw_second_moment);

// Lazily computed per-layer covariance over a fixed corpus.
class CovarianceCache {
  public:
    CovarianceCache() = default;
    CovarianceCache(const ModelHandle* model, std::vector<std::string> corpus,
                    std::optional<double> ridge)
        : model_(model), corpus_(std::move(corpus)), ridge_(ridge) {}

    const Eigen::MatrixXd& at(int layer);

  private:
    const ModelHandle* model_ = nullptr;
    std::vector<std::string> corpus_;
    std::optional<double> ridge_;
    std::map<int, Eigen::MatrixXd> cache_;
};

} // namespace debiaslab
