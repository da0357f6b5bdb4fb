#include "debiaslab/covariance.hpp"

#include "debiaslab/error.hpp"

namespace debiaslab {

Eigen::MatrixXd estimate_key_covariance(const ModelHandle& model, int layer,
                                        const std::vector<std::string>& corpus, double ridge) {
    if (corpus.empty()) {
        throw Error(ErrorCode::invalid_input, "covariance corpus is empty");
    }
    if (ridge < 0.0) {
        throw Error(ErrorCode::invalid_input, "covariance ridge must be nonnegative");
    }
    Eigen::MatrixXd sum;
    size_t count = 0;
    for (const std::string& text : corpus) {
        size_t n_tokens = model.tokenizer().count(text);
        for (size_t pos = 0; pos < n_tokens; ++pos) {
            Eigen::VectorXd key = model.collect_mlp_key(layer, text, static_cast<int>(pos));
            if (sum.size() == 0) {
                sum.setZero(key.size(), key.size());
            }
            sum.noalias() += key * key.transpose();
            ++count;
        }
    }
    if (count == 0) {
        throw Error(ErrorCode::invalid_input, "covariance corpus has no tokens");
    }
    Eigen::MatrixXd c = sum / static_cast<double>(count);
    c.diagonal().array() += ridge;
    return c;
}

double default_covariance_ridge(const Eigen::MatrixXd& raw_second_moment) {
    return 1e-4 * raw_second_moment.diagonal().mean();
}

const Eigen::MatrixXd& CovarianceCache::at(int layer) {
    auto it = cache_.find(layer);
    if (it != cache_.end()) return it->second;
    if (model_ == nullptr) {
        throw Error(ErrorCode::invalid_input, "covariance cache has no model");
    }
    Eigen::MatrixXd raw = estimate_key_covariance(*model_, layer, corpus_, 0.0);
    double ridge = ridge_.has_value() ? *ridge_ : default_covariance_ridge(raw);
    raw.diagonal().array() += ridge;
    return cache_.emplace(layer, std::move(raw)).first->second;
}

} // namespace debiaslab
