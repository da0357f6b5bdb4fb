#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "debiaslab/covariance.hpp"
#include "debiaslab/dataset.hpp"
#include "debiaslab/embedding.hpp"
#include "debiaslab/model.hpp"

namespace debiaslab {

enum class EditorKind { FT, FTL, ROME, MEMIT, SERAC, IKE };

const char* editor_kind_name(EditorKind kind);
EditorKind editor_kind_from_string(const std::string& name);
bool editor_is_internal(EditorKind kind);

struct EditorConfig {
    EditorKind kind = EditorKind::FT;
    int layer = 0; // FT, FT-L, ROME
    std::pair<int, int> layer_range{0, 0}; // MEMIT, inclusive
    double learning_rate = 5e-4;
    int max_steps = 25;
    double stop_nll_per_token = 0.01;
    double linf_bound = 1e-3; // FT-L epsilon
    double kl_weight = 0.0625;
    int value_steps = 20;
    double value_step_size = 0.5; // initial line-search step of the value solve
    std::optional<double> covariance_ridge; // absolute; unset = 1e-4 * mean diagonal
    double scope_threshold = 0.8; // SERAC tau
    double counterfactual_alpha = 0.5; // SERAC exact-match mixture weight
    int demos_k = 8; // IKE

    void validate(const ModelHandle& model) const;
};

// Result of one edit. Internal editors record weight deltas per touched
// site; external editors record memory entries and leave weights untouched.
struct EditOutcome {
    EditorKind kind = EditorKind::FT;
    std::vector<Site> touched_sites;
    std::vector<Eigen::MatrixXd> deltas; // parallel to touched_sites
    std::vector<MemoryEntry> memory_entries;
    int steps_used = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool hit_stop_threshold = false;
    bool flagged = false; // set when the edit did not improve the pair margin
    std::string flag_reason;
    std::string ike_context; // composed demonstration context (IKE only)
    // Audit values of the rank-one path.
    std::optional<Eigen::VectorXd> key_vector;
    std::optional<Eigen::VectorXd> value_vector;
};

// --- closed-form update ---

// Constrained least-squares rank-one update: returns
//   W + (v* - W k*) (C^-1 k*)^T / ((C^-1 k*)^T k*),
// which satisfies W' k* = v* exactly. Throws ill-conditioned-update when C
// is singular or the denominator vanishes.
Eigen::MatrixXd rank_one_update(const Eigen::MatrixXd& w, const Eigen::VectorXd& k_star,
                                const Eigen::VectorXd& v_star, const Eigen::MatrixXd& c);

// --- gradient-based editors ---

using StepObserver = std::function<void(const Eigen::MatrixXd& cumulative_delta)>;

EditOutcome edit_ft(ModelHandle& model, const EditRequest& request, const EditorConfig& config);
EditOutcome edit_ftl(ModelHandle& model, const EditRequest& request, const EditorConfig& config,
                     const StepObserver& observer = nullptr);

// Elementwise projection of a cumulative delta into the L-infinity ball.
Eigen::MatrixXd project_linf(const Eigen::MatrixXd& delta, double bound);

// --- rank-one editors ---

// Optimizes the MLP output vector substituted at (layer, subject last token)
// to minimize the masked-target NLL plus kl_weight times a KL anchor on the
// next-token distribution at the subject position. Backtracking line search
// from the clean value; value_steps = 0 returns the clean value unchanged.
Eigen::VectorXd solve_value_vector(const ModelHandle& model, const EditRequest& request, int layer,
                                   const EditorConfig& config);

EditOutcome edit_rome(ModelHandle& model, const EditRequest& request, const EditorConfig& config,
                      CovarianceCache& covariances);
EditOutcome edit_memit(ModelHandle& model, const EditRequest& request, const EditorConfig& config,
                       CovarianceCache& covariances);

// --- external editors ---

// Appends (prompt, full unbiased sentence, unit-norm embedding) to the
// model-attached memory without touching weights.
EditOutcome serac_edit(ModelHandle& model, const EditRequest& request, const EditorConfig& config,
                       const EmbeddingFn& embed);

// Routed sentence score: base model on scope misses; on hits, a mixture of
// the stored sentence (weight alpha) and the base model conditioned on it.
double serac_score(const ModelHandle& model, const EditMemory& memory, const std::string& text,
                   const EditorConfig& config, const EmbeddingFn& embed);
int serac_next_token(const ModelHandle& model, const EditMemory& memory, const std::string& prompt,
                     const EditorConfig& config, const EmbeddingFn& embed);

// One demonstration of the in-context editor.
enum class DemoType { copy, update, retain };
struct Demonstration {
    DemoType type;
    std::string fact; // the unbiased sentence being taught
    std::string text; // the demonstrated completion
    Eigen::VectorXd embedding;
};

// Store built from the train split; retain demonstrations use probe prompts
// continued by the base model when probes are available.
class DemoStore {
  public:
    static DemoStore build(const ModelHandle& model, const std::vector<SentencePair>& train_pairs,
                           const std::vector<KnowledgeProbe>& probes, const EmbeddingFn& embed);

    const std::vector<Demonstration>& demos() const { return demos_; }
    std::vector<const Demonstration*> retrieve(const Eigen::VectorXd& query, int k) const;

  private:
    std::vector<Demonstration> demos_;
};

// Composes k retrieved demonstration blocks (each labeled with its type)
// followed by the new edit statement.
std::string ike_compose(const DemoStore& store, const EditRequest& request, int k,
                        const EmbeddingFn& embed);

double ike_score(const ModelHandle& model, const std::string& context, const std::string& text);
int ike_next_token(const ModelHandle& model, const std::string& context,
                   const std::string& prompt);

// --- scorer routing ---

// The edited model's scoring path, including SERAC/IKE routing.
class Scorer {
  public:
    virtual ~Scorer() = default;
    virtual double score(const std::string& text) const = 0;
    virtual int next_token(const std::string& prompt) const = 0;
};

std::unique_ptr<Scorer> make_plain_scorer(const ModelHandle& model,
                                          bool length_normalized = false);
std::unique_ptr<Scorer> make_serac_scorer(const ModelHandle& model, const EditorConfig& config,
                                          EmbeddingFn embed, bool length_normalized = false);
std::unique_ptr<Scorer> make_ike_scorer(const ModelHandle& model, std::string context,
                                        bool length_normalized = false);

// --- dispatch ---

struct EditorContext {
    CovarianceCache covariances;
    EmbeddingFn embed;
    const DemoStore* demo_store = nullptr; // IKE
    bool length_normalized = false;
};

// Applies the configured editor and flags the outcome when the pair margin
// score(x_less) - score(x_more) did not improve (the no-silent-failures
// contract). On editor failure the model is restored and the error
// propagates.
EditOutcome apply_edit(ModelHandle& model, const SentencePair& pair, const EditRequest& request,
                       const EditorConfig& config, EditorContext& ctx);

// Scorer matching the editor kind after apply_edit.
std::unique_ptr<Scorer> make_scorer_for(const ModelHandle& model, const EditorConfig& config,
                                        const EditorContext& ctx, const EditOutcome* outcome);

} // namespace debiaslab
