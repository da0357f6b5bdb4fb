#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "debiaslab/tokenizer.hpp"

namespace debiaslab {

// A weight matrix an editor may patch, identified by layer and name.
struct Site {
    int layer = 0;
    std::string name = "mlp_down";

    bool operator==(const Site& other) const {
        return layer == other.layer && name == other.name;
    }
};

std::string site_to_string(const Site& site);

// One retrieval entry of the external edit memory (SERAC).
struct MemoryEntry {
    std::string case_id;
    std::string prompt;
    std::string sentence; // full unbiased sentence
    Eigen::VectorXd embedding; // unit norm
};

// Ordered edit memory attached to a model. Entries are unique by case_id;
// re-editing a case replaces its entry in place.
class EditMemory {
  public:
    void upsert(MemoryEntry entry);
    void clear() { entries_.clear(); }
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<MemoryEntry>& entries() const { return entries_; }

    // Index and cosine similarity of the entry closest to `query`, or
    // nullopt when the memory is empty.
    std::optional<std::pair<size_t, double>> best_match(const Eigen::VectorXd& query) const;

  private:
    std::vector<MemoryEntry> entries_;
};

// Immutable full-state capture: every mutable parameter plus the external
// edit memory, tagged with an architecture fingerprint.
struct ModelSnapshot {
    std::string snapshot_id;
    uint64_t arch_fingerprint = 0;
    std::vector<double> parameters;
    std::vector<MemoryEntry> memory_entries;

    void save(const std::string& path) const;
    static ModelSnapshot load(const std::string& path);
};

// Options for a scoring pass used by causal tracing: additive noise on the
// input embeddings of selected sequence positions. `noise` holds one column
// per corrupted position.
struct EmbeddingNoise {
    std::vector<int> text_positions; // token indices within the text
    Eigen::MatrixXd noise; // hidden_dim x text_positions.size()
};

// Uniform scoring-and-editing interface over a causal language model.
// Scoring members are const and safe to call concurrently; mutating members
// (weight patches, restore, memory writes) require exclusive access.
class ModelHandle {
  public:
    virtual ~ModelHandle() = default;

    virtual const std::string& model_id() const = 0;
    virtual int vocab_size() const = 0;
    virtual int num_layers() const = 0;
    virtual int hidden_dim() const = 0;
    virtual std::vector<Site> editable_sites() const = 0;
    virtual const ByteTokenizer& tokenizer() const = 0;

    // --- scoring ---

    // Sum over positions of log P(token | prefix); the first token is
    // conditioned on the begin-of-sequence context.
    virtual double sequence_logprob(const std::string& text) const = 0;

    // Log-probability of `text` given `context` tokens as additional prefix.
    virtual double sequence_logprob_given(const std::string& context,
                                          const std::string& text) const = 0;

    // Highest-probability next token after `prompt`; ties break to the
    // lowest token id.
    virtual int next_token_argmax(const std::string& prompt) const = 0;
    virtual int next_token_argmax_given(const std::string& context,
                                        const std::string& prompt) const = 0;

    // Full next-token distribution after `prompt` (probabilities).
    virtual Eigen::VectorXd next_token_distribution(const std::string& prompt) const = 0;

    // P(token_i | prefix) for every token of `text`, optionally with
    // embedding noise injected at the given positions.
    virtual std::vector<double> per_token_probs(const std::string& text,
                                                const EmbeddingNoise* noise) const = 0;

    // --- weights and activations ---

    virtual Eigen::MatrixXd site_weights(const Site& site) const = 0;
    virtual void apply_weight_delta(const Site& site, const Eigen::MatrixXd& delta) = 0;
    // Exact assignment; same validation as apply_weight_delta.
    virtual void overwrite_site_weights(const Site& site, const Eigen::MatrixXd& weights) = 0;

    // Input activation of the MLP down-projection at (layer, position) on a
    // clean pass over `text`. `position` indexes the text's tokens.
    virtual Eigen::VectorXd collect_mlp_key(int layer, const std::string& text,
                                            int position) const = 0;
    // Output of the MLP block at (layer, position) on a clean pass.
    virtual Eigen::VectorXd collect_mlp_value(int layer, const std::string& text,
                                              int position) const = 0;

    // Population variance of the token-embedding components over the tokens
    // of `texts` (basis for causal-tracing noise scale).
    virtual double embedding_component_variance(const std::vector<std::string>& texts) const = 0;

    // --- gradient services for editors ---

    // Mean NLL of the mask-selected target tokens of prompt+target, and its
    // gradient with respect to the weights at `site`.
    virtual double masked_nll_and_site_grad(const Site& site, const std::string& prompt,
                                            const std::string& target,
                                            const std::vector<bool>* loss_mask,
                                            Eigen::MatrixXd* grad) const = 0;

    struct ValueLoss {
        double nll = 0.0;
        double kl = 0.0;
        double total = 0.0;
    };
    // Loss of substituting `value` as the MLP output at (layer, position of
    // the subject's last token): masked-target mean NLL plus kl_weight times
    // KL(reference || current) of the next-token distribution at the subject
    // position. `ref_probs` is that distribution under the clean model.
    // When `grad` is non-null it receives dLoss/dvalue.
    virtual ValueLoss value_substitution_loss(int layer, int subject_last_token,
                                              const Eigen::VectorXd& value,
                                              const std::string& prompt, const std::string& target,
                                              const std::vector<bool>* loss_mask,
                                              const Eigen::VectorXd& ref_probs, double kl_weight,
                                              Eigen::VectorXd* grad) const = 0;

    // Next-token probability distribution at a given text position (used as
    // the KL reference of the value solve).
    virtual Eigen::VectorXd token_distribution_at(const std::string& text,
                                                  int position) const = 0;

    // --- snapshot / restore ---

    virtual ModelSnapshot capture_snapshot() const = 0;
    virtual void restore_snapshot(const ModelSnapshot& snapshot) = 0;

    // --- attached external memory ---

    virtual EditMemory& memory() = 0;
    virtual const EditMemory& memory() const = 0;
};

} // namespace debiaslab
