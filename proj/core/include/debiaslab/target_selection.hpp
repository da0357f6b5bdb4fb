#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "debiaslab/dataset.hpp"
#include "debiaslab/model.hpp"
#include "debiaslab/pos_tagger.hpp"

namespace debiaslab {

struct PosFilterConfig {
    std::set<PosTag> excluded_tags = {PosTag::DET, PosTag::AUX, PosTag::PUNCT, PosTag::PRON,
                                      PosTag::ADP};
};

// Maximal shared prefix of two token lists.
std::vector<std::string> longest_common_prefix(const std::vector<std::string>& tokens_a,
                                               const std::vector<std::string>& tokens_b);

// Audit trail of one rule-based selection.
struct RuleSelectionAudit {
    std::string case_id;
    bool used_common_prefix = false; // false = fell back to the subject split
    bool all_true_fallback = false; // mask would have been all-false
    std::vector<TaggedToken> target_tags;
};

// Re-derives the prompt as the word-level longest common prefix of the two
// sentences (never ending before the subject; otherwise falls back to the
// subject split), then masks target tokens whose POS tag is excluded. An
// all-false mask falls back to all-true and is flagged.
EditRequest rule_based_mask(const SentencePair& pair, const PosFilterConfig& config,
                            const ModelHandle& model, const PosTagger& tagger,
                            const SubjectMatchConfig& match = {},
                            RuleSelectionAudit* audit = nullptr);

// Per-token probabilities before and after corrupting the subject embeddings.
struct TraceResult {
    std::vector<double> baseline; // clean P(token_i | prefix)
    std::vector<double> corrupted; // mean over noise samples
    std::vector<double> reduction; // baseline - corrupted
    double noise_sigma = 0.0; // applied standard deviation (multiplier * sigma)
    int num_noise_samples = 0;
};

struct CausalTraceConfig {
    int top_k = 5;
    double sigma_multiplier = 3.0;
    int num_samples = 10;
    uint64_t noise_seed = 0;
    // Sample used to estimate the embedding variance sigma^2; when empty,
    // the request's own sentence is used.
    std::vector<std::string> sigma_sample;
};

// Marks as edit targets the top-k target positions whose predicted
// probability drops most when the subject embeddings are corrupted with
// zero-mean Gaussian noise of standard deviation multiplier * sigma. Ties
// break to the earliest position; a target of at most k tokens is fully
// selected.
std::pair<EditRequest, TraceResult> causal_trace_mask(const ModelHandle& model,
                                                      const EditRequest& request,
                                                      const CausalTraceConfig& config);

// One noise draw (hidden_dim x n_positions) with standard deviation `sigma`.
// Exposed so the sampled vectors can be reproduced outside the trace loop.
Eigen::MatrixXd trace_noise_sample(int hidden_dim, int n_positions, double sigma,
                                   std::mt19937_64& rng);

} // namespace debiaslab
