#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

namespace debiaslab {

// Text embedding used for retrieval (SERAC scope, IKE demonstrations).
using EmbeddingFn = std::function<Eigen::VectorXd(const std::string&)>;

// Default embedding: hashed bag of lowercased character n-grams (n = 1..3)
// over `dim` buckets, L2-normalized. Deterministic and model-free, so
// similarity reflects surface overlap.
EmbeddingFn make_ngram_embedding(int dim = 256);

} // namespace debiaslab
