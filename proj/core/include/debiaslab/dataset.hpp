#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "debiaslab/model.hpp"

namespace debiaslab {

enum class BiasType { race, gender, religion, profession };

const char* bias_type_name(BiasType type);
BiasType bias_type_from_string(const std::string& name);
inline constexpr int kNumBiasTypes = 4;

// A stereotyped / anti-stereotyped sentence pair sharing a subject.
struct SentencePair {
    std::string case_id;
    BiasType bias_type = BiasType::race;
    std::string subject;
    std::string sentence_more; // stereotypical
    std::string sentence_less; // anti-stereotypical
    std::vector<std::string> paraphrases_more; // exactly 0 or 3
    std::vector<std::string> paraphrases_less; // exactly 0 or 3
};

// The unit handed to editors: prompt ends at the first subject occurrence,
// target is the rest of the unbiased sentence.
struct EditRequest {
    std::string case_id;
    std::string prompt;
    std::string target;
    std::pair<int, int> subject_span{0, 0}; // [begin, end) token indices in prompt
    std::optional<std::vector<bool>> loss_mask; // per target token; absent = all

    std::string sentence() const { return prompt + target; }
};

struct DatasetSplit {
    enum class Name { train, val, edit };
    Name name = Name::edit;
    std::vector<SentencePair> pairs;
    std::string filtering_model_id;
};

const char* split_name(DatasetSplit::Name name);

struct KnowledgeProbe {
    std::string probe_id;
    std::string prompt;
};

// --- subject matching ---

struct SubjectMatchConfig {
    bool case_sensitive = true;
};

// Byte offset of the first word-boundary occurrence of `subject` in `text`,
// or npos.
size_t find_subject(const std::string& text, const std::string& subject,
                    const SubjectMatchConfig& cfg = {});

// --- operations ---

// Prompt = prefix up to and including the first subject occurrence, target =
// remainder (leading separator stays with the target); prompt + target
// reconstructs the sentence exactly. Throws subject-not-found.
std::pair<std::string, std::string> split_prompt_target(const std::string& sentence,
                                                        const std::string& subject,
                                                        const SubjectMatchConfig& cfg = {});

// Builds the editor request for a pair (prompt/target from sentence_less,
// token-level subject span, no mask). Throws when the target is empty or
// tokenizes to zero tokens.
EditRequest make_edit_request(const SentencePair& pair, const ModelHandle& model,
                              const SubjectMatchConfig& cfg = {});

// Retains exactly the pairs the model is biased on:
// logprob(sentence_more) > logprob(sentence_less), strictly.
std::vector<SentencePair> filter_biased(const ModelHandle& model,
                                        const std::vector<SentencePair>& pairs,
                                        bool length_normalized = false);

// Deterministic seeded shuffle followed by a contiguous partition. Ratios
// must be positive and sum to 1 (tolerance 1e-9); split sizes differ from
// the exact ratios by at most one.
struct SplitRatios {
    double train = 0.5;
    double val = 0.1;
    double edit = 0.4;
};
struct Splits {
    DatasetSplit train, val, edit;
};
Splits make_splits(const std::vector<SentencePair>& pairs, const SplitRatios& ratios,
                   uint64_t seed, const std::string& filtering_model_id = "");

// Seeded Fisher-Yates permutation of [0, n).
std::vector<size_t> shuffled_indices(size_t n, uint64_t seed);

// One row of the dataset statistics table; population standard deviations.
struct StatsRow {
    std::string bias_type; // "All" or a type name
    size_t count = 0;
    double prompt_mean = 0.0, prompt_std = 0.0;
    double target_mean = 0.0, target_std = 0.0;
};
// One "All" row followed by one row per bias type; empty input -> empty.
std::vector<StatsRow> compute_stats(const std::vector<SentencePair>& pairs,
                                    const ModelHandle& model, const SubjectMatchConfig& cfg = {});

// --- files ---

// Dataset file: one JSON document, an array of pair records.
std::vector<SentencePair> load_dataset(const std::string& path);
void save_dataset(const std::vector<SentencePair>& pairs, const std::string& path);

struct Violation {
    std::string case_id;
    std::string field;
    std::string message;
};
// Checks every SentencePair invariant; an empty report means valid.
std::vector<Violation> validate_dataset(const std::vector<SentencePair>& pairs,
                                        const SubjectMatchConfig& cfg = {});

std::vector<KnowledgeProbe> load_probes(const std::string& path);
void save_probes(const std::vector<KnowledgeProbe>& probes, const std::string& path);

// Deterministic probe subsample (fixed-seed selection of up to `max_probes`).
std::vector<KnowledgeProbe> sample_probes(const std::vector<KnowledgeProbe>& probes,
                                          size_t max_probes, uint64_t seed);

} // namespace debiaslab
