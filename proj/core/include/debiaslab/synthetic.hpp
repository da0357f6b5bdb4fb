#pragma once

#include <cstdint>
#include <vector>

#include "debiaslab/dataset.hpp"
#include "debiaslab/model.hpp"

namespace debiaslab {

// Deterministic desk-scale corpus: short ASCII sentence pairs over neutral
// group/profession nouns, cycling through the four bias types, each with
// three subject-preserving paraphrases.
std::vector<SentencePair> make_synthetic_pairs(size_t count, uint64_t seed,
                                               bool with_paraphrases = true);

// Relabels each pair so sentence_more is the one the model prefers (swapping
// the sentences and paraphrase lists where needed) and drops exact ties, so
// the result passes filter_biased unchanged.
std::vector<SentencePair> align_pairs_to_model(const ModelHandle& model,
                                               std::vector<SentencePair> pairs);

std::vector<KnowledgeProbe> make_synthetic_probes(size_t count, uint64_t seed);

} // namespace debiaslab
