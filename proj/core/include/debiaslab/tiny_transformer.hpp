#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "debiaslab/model.hpp"

namespace debiaslab {

enum class InitScheme { random, uniform_output };

// Deterministic tiny decoder-only transformer used for hermetic runs.
// Identical config + seed yields bit-identical parameters.
struct TinyTransformerConfig {
    int num_layers = 2;
    int hidden_dim = 32;
    int num_heads = 4;
    int vocab_size = 128;
    int max_seq_len = 1024;
    uint64_t seed = 0;
    InitScheme init_scheme = InitScheme::random;

    void validate() const;
    uint64_t fingerprint() const;

    // Key-value config file ("key = value" lines, '#' comments).
    static TinyTransformerConfig load(const std::string& path);
    void save(const std::string& path) const;
};

class TinyTransformer final : public ModelHandle {
  public:
    explicit TinyTransformer(const TinyTransformerConfig& config);
    ~TinyTransformer() override;

    const TinyTransformerConfig& config() const { return config_; }

    const std::string& model_id() const override { return model_id_; }
    int vocab_size() const override { return config_.vocab_size; }
    int num_layers() const override { return config_.num_layers; }
    int hidden_dim() const override { return config_.hidden_dim; }
    std::vector<Site> editable_sites() const override;
    const ByteTokenizer& tokenizer() const override { return tokenizer_; }

    double sequence_logprob(const std::string& text) const override;
    double sequence_logprob_given(const std::string& context,
                                  const std::string& text) const override;
    int next_token_argmax(const std::string& prompt) const override;
    int next_token_argmax_given(const std::string& context,
                                const std::string& prompt) const override;
    Eigen::VectorXd next_token_distribution(const std::string& prompt) const override;
    std::vector<double> per_token_probs(const std::string& text,
                                        const EmbeddingNoise* noise) const override;

    Eigen::MatrixXd site_weights(const Site& site) const override;
    void apply_weight_delta(const Site& site, const Eigen::MatrixXd& delta) override;
    void overwrite_site_weights(const Site& site, const Eigen::MatrixXd& weights) override;

    Eigen::VectorXd collect_mlp_key(int layer, const std::string& text,
                                    int position) const override;
    Eigen::VectorXd collect_mlp_value(int layer, const std::string& text,
                                      int position) const override;
    double embedding_component_variance(const std::vector<std::string>& texts) const override;

    double masked_nll_and_site_grad(const Site& site, const std::string& prompt,
                                    const std::string& target,
                                    const std::vector<bool>* loss_mask,
                                    Eigen::MatrixXd* grad) const override;
    ValueLoss value_substitution_loss(int layer, int subject_last_token,
                                      const Eigen::VectorXd& value, const std::string& prompt,
                                      const std::string& target,
                                      const std::vector<bool>* loss_mask,
                                      const Eigen::VectorXd& ref_probs, double kl_weight,
                                      Eigen::VectorXd* grad) const override;
    Eigen::VectorXd token_distribution_at(const std::string& text, int position) const override;

    ModelSnapshot capture_snapshot() const override;
    void restore_snapshot(const ModelSnapshot& snapshot) override;

    EditMemory& memory() override { return memory_; }
    const EditMemory& memory() const override { return memory_; }

    // Read-only view of a named parameter block (introspection for tests
    // and diffing). Names: "wtok", "wpos", "layer<i>.<ln1_g|ln1_b|wqkv|bqkv|
    // wo|bo|ln2_g|ln2_b|wup|bup|wdown|bdown>", "lnf_g", "lnf_b", "whead",
    // "bhead".
    Eigen::MatrixXd named_param(const std::string& name) const;
    std::vector<std::string> param_names() const;
    const std::vector<double>& raw_parameters() const;

  private:
    struct Impl;
    TinyTransformerConfig config_;
    std::string model_id_;
    ByteTokenizer tokenizer_;
    EditMemory memory_;
    std::unique_ptr<Impl> impl_;
};

// Default edit layer for known pretrained adapter ids; adapters follow the
// same ModelHandle contract. Returns `fallback` for unknown ids.
int default_edit_layer(const std::string& model_id, int fallback = 0);

} // namespace debiaslab
