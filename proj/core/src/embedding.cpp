#include "debiaslab/embedding.hpp"

#include <cctype>
#include <cstdint>

#include "debiaslab/error.hpp"

namespace debiaslab {

namespace {

uint64_t fnv1a(const char* data, size_t len) {
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

EmbeddingFn make_ngram_embedding(int dim) {
    if (dim < 8) {
        throw Error(ErrorCode::invalid_input, "embedding dim must be >= 8");
    }
    return [dim](const std::string& text) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
        std::string lower;
        lower.reserve(text.size());
        for (char c : text) {
            lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
        for (int n = 1; n <= 3; ++n) {
            if (lower.size() < static_cast<size_t>(n)) break;
            for (size_t i = 0; i + n <= lower.size(); ++i) {
                uint64_t h = fnv1a(lower.data() + i, static_cast<size_t>(n));
                v(static_cast<Eigen::Index>(h % static_cast<uint64_t>(dim))) += 1.0;
            }
        }
        double norm = v.norm();
        if (norm > 0.0) v /= norm;
        return v;
    };
}

} // namespace debiaslab
