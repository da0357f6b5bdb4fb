#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "debiaslab/dataset.hpp"
#include "debiaslab/editors.hpp"
#include "debiaslab/pos_tagger.hpp"
#include "debiaslab/records.hpp"
#include "debiaslab/target_selection.hpp"

namespace debiaslab {

// Checkpoint-and-run schedule of the sequential protocol.
struct ProtocolPlan {
    std::vector<int> checkpoints; // strictly increasing edit counts
    std::map<int, int> runs_per_checkpoint;
    uint64_t edit_order_seed = 0;

    void validate(size_t split_size) const;
    int runs_at(int checkpoint) const;
    int max_runs() const;

    // Power-of-four checkpoints [1, 4, 16] for ten runs and [64, 256, ALL]
    // for three runs, with ALL resolved to the split size.
    static ProtocolPlan default_plan(size_t split_size, uint64_t edit_order_seed = 0);
};

enum class TargetSelection { none, rule, causal };
const char* target_selection_name(TargetSelection selection);
TargetSelection target_selection_from_string(const std::string& name);

// Editing strategy under a protocol: applies one edit and exposes the
// matching scoring path. Test doubles (e.g. an identity editor) implement
// the same interface.
class EditorDriver {
  public:
    virtual ~EditorDriver() = default;
    virtual std::string name() const = 0;
    virtual bool supports_sequential() const { return true; }
    virtual EditOutcome edit(ModelHandle& model, const SentencePair& pair,
                             const EditRequest& request) = 0;
    // `last_outcome` is the outcome of the most recent edit (single-edit
    // protocol); sequential evaluation passes nullptr.
    virtual std::unique_ptr<Scorer> scorer(const ModelHandle& model,
                                           const EditOutcome* last_outcome) const = 0;
};

std::unique_ptr<EditorDriver> make_editor_driver(const EditorConfig& config, EditorContext ctx);

// Shared protocol inputs.
struct ProtocolOptions {
    std::string run_id = "run";
    uint64_t seed = 0;
    TargetSelection selection = TargetSelection::none;
    PosFilterConfig pos_filter;
    CausalTraceConfig trace;
    const PosTagger* tagger = nullptr; // required for rule selection
    SubjectMatchConfig match;
    bool strict_backward = false;
};

struct ProtocolResult {
    std::vector<MetricRecord> records;
    std::vector<std::string> selection_audit; // JSON lines, one per case
};

// Restores the baseline, applies one edit per pair, evaluates all four
// metrics on that pair (knowledge over the probe set), restores, and
// appends one aggregate record after the per-pair records. The model ends
// bit-identical to the baseline.
ProtocolResult run_single_edit(ModelHandle& model, EditorDriver& driver,
                               const std::vector<SentencePair>& edit_split,
                               const std::vector<KnowledgeProbe>& probes,
                               const ProtocolOptions& options);

// Fig.-2 style stream: per run, seeded-shuffles the edit order, applies
// edits without restoring, and evaluates edited/unedited populations at
// every scheduled checkpoint; aggregates mean and std across the run counts.
ProtocolResult run_sequential_edit(ModelHandle& model, EditorDriver& driver,
                                   const std::vector<SentencePair>& edit_split,
                                   const std::vector<KnowledgeProbe>& probes,
                                   const ProtocolPlan& plan, const ProtocolOptions& options);

struct CrossTypeResult {
    // matrix[edit_type][eval_type]; missing bias types leave a null row.
    std::array<std::array<std::optional<double>, kNumBiasTypes>, kNumBiasTypes> matrix;
    ProtocolResult result;
};

// Edits all pairs of one bias type sequentially, evaluates the success rate
// on every type's pairs, and repeats per type from the restored baseline.
CrossTypeResult run_cross_type(ModelHandle& model, EditorDriver& driver,
                               const std::vector<SentencePair>& edit_split,
                               const std::vector<KnowledgeProbe>& probes,
                               const ProtocolOptions& options);

// Pairwise bias benchmark over an unedited or edited scorer.
MetricRecord run_pairwise_benchmark(const Scorer& scorer,
                                    const std::vector<SentencePair>& benchmark_pairs,
                                    const std::string& editor_name,
                                    const ProtocolOptions& options);

} // namespace debiaslab
