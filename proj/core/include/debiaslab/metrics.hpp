#pragma once

#include <optional>
#include <string>
#include <vector>

#include "debiaslab/dataset.hpp"
#include "debiaslab/editors.hpp"

namespace debiaslab {

// Percentage of pairs with score(x_less) > score(x_more), strictly; ties
// count as failures. Nullopt on an empty input.
std::optional<double> success_rate(const Scorer& scorer, const std::vector<SentencePair>& pairs);

// Percentage of probes whose argmax next token matches the baseline answer.
std::optional<double> knowledge_acc(const Scorer& scorer, const std::vector<KnowledgeProbe>& probes,
                                    const std::vector<int>& baseline_answers);

// Baseline answers computed against the pre-edit model.
std::vector<int> compute_baseline_answers(const Scorer& scorer,
                                          const std::vector<KnowledgeProbe>& probes);

// True iff score(x_less) beats every paraphrase of x_more. Nullopt when the
// pair has no biased paraphrases.
std::optional<bool> gen_forward(const Scorer& scorer, const SentencePair& pair);

// True iff the minimum over unbiased paraphrases beats the maximum over
// biased paraphrases (strict mode additionally requires beating x_more
// itself). Nullopt when either paraphrase list is empty.
std::optional<bool> gen_backward(const Scorer& scorer, const SentencePair& pair,
                                 bool strict = false);

struct GenAggregate {
    std::optional<double> rate; // percentage over defined pairs
    size_t defined = 0;
    size_t excluded = 0; // pairs without the required paraphrases
};
GenAggregate gen_forward_rate(const Scorer& scorer, const std::vector<SentencePair>& pairs);
GenAggregate gen_backward_rate(const Scorer& scorer, const std::vector<SentencePair>& pairs,
                               bool strict = false);

// Arithmetic mean of the four metrics; nullopt when any is missing.
std::optional<double> compute_average(std::optional<double> success,
                                      std::optional<double> knowledge,
                                      std::optional<double> gen_fwd,
                                      std::optional<double> gen_bwd);

// Percentage of benchmark pairs preferring the stereotypical sentence
// (lower is better). Nullopt on empty input.
std::optional<double> pairwise_bias_benchmark(const Scorer& scorer,
                                              const std::vector<SentencePair>& pairs);

} // namespace debiaslab
