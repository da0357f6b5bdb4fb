#include "debiaslab/editors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "debiaslab/error.hpp"

namespace debiaslab {

const char* editor_kind_name(EditorKind kind) {
    switch (kind) {
        case EditorKind::FT: return "FT";
        case EditorKind::FTL: return "FT-L";
        case EditorKind::ROME: return "ROME";
        case EditorKind::MEMIT: return "MEMIT";
        case EditorKind::SERAC: return "SERAC";
        case EditorKind::IKE: return "IKE";
    }
    return "FT";
}

EditorKind editor_kind_from_string(const std::string& name) {
    if (name == "FT") return EditorKind::FT;
    if (name == "FT-L" || name == "FTL") return EditorKind::FTL;
    if (name == "ROME") return EditorKind::ROME;
    if (name == "MEMIT") return EditorKind::MEMIT;
    if (name == "SERAC") return EditorKind::SERAC;
    if (name == "IKE") return EditorKind::IKE;
    throw Error(ErrorCode::config_error, "unknown editor kind '" + name + "'");
}

bool editor_is_internal(EditorKind kind) {
    return kind == EditorKind::FT || kind == EditorKind::FTL || kind == EditorKind::ROME ||
           kind == EditorKind::MEMIT;
}

void EditorConfig::validate(const ModelHandle& model) const {
    const int depth = model.num_layers();
    switch (kind) {
        case EditorKind::FT:
        case EditorKind::FTL:
        case EditorKind::ROME:
            if (layer < 0 || layer >= depth) {
                throw Error(ErrorCode::config_error, "editor layer out of range");
            }
            break;
        case EditorKind::MEMIT:
            if (layer_range.first < 0 || layer_range.second >= depth ||
                layer_range.first > layer_range.second) {
                throw Error(ErrorCode::config_error, "editor layer_range invalid");
            }
            break;
        case EditorKind::SERAC:
            if (scope_threshold < 0.0 || scope_threshold > 1.0) {
                throw Error(ErrorCode::config_error, "scope_threshold must be in [0, 1]");
            }
            break;
        case EditorKind::IKE:
            if (demos_k < 0) {
                throw Error(ErrorCode::config_error, "demos_k must be nonnegative");
            }
            break;
    }
    if (kind == EditorKind::FT || kind == EditorKind::FTL) {
        if (learning_rate <= 0.0 || max_steps < 0) {
            throw Error(ErrorCode::config_error, "FT needs positive learning_rate, max_steps >= 0");
        }
    }
    if (kind == EditorKind::FTL && linf_bound < 0.0) {
        throw Error(ErrorCode::config_error, "linf_bound must be nonnegative");
    }
    if (kind == EditorKind::ROME || kind == EditorKind::MEMIT) {
        if (value_steps < 0 || kl_weight < 0.0) {
            throw Error(ErrorCode::config_error, "value solve needs value_steps, kl_weight >= 0");
        }
        if (covariance_ridge.has_value() && *covariance_ridge < 0.0) {
            throw Error(ErrorCode::config_error, "covariance_ridge must be nonnegative");
        }
    }
}

// ---------------------------------------------------------------------------
// rank-one update

Eigen::MatrixXd rank_one_update(const Eigen::MatrixXd& w, const Eigen::VectorXd& k_star,
                                const Eigen::VectorXd& v_star, const Eigen::MatrixXd& c) {
    if (w.cols() != k_star.size() || w.rows() != v_star.size() || c.rows() != k_star.size() ||
        c.cols() != k_star.size()) {
        throw Error(ErrorCode::invalid_input, "rank_one_update dimension mismatch");
    }
    Eigen::LDLT<Eigen::MatrixXd> solver(c);
    if (solver.info() != Eigen::Success || !solver.isPositive()) {
        throw Error(ErrorCode::ill_conditioned_update, "covariance matrix is not positive definite");
    }
    Eigen::VectorXd cinv_k = solver.solve(k_star);
    double denom = cinv_k.dot(k_star);
    double scale = std::abs(denom);
    double floor = 1e-12 * std::max(1.0, cinv_k.norm() * k_star.norm());
    if (!std::isfinite(denom) || scale < floor) {
        throw Error(ErrorCode::ill_conditioned_update,
                    "rank-one denominator (C^-1 k)^T k is numerically zero");
    }
    Eigen::VectorXd residual = v_star - w * k_star;
    return w + (residual / denom) * cinv_k.transpose();
}

// ---------------------------------------------------------------------------
// gradient-based editors

namespace {

struct AdamState {
    Eigen::MatrixXd m, v;
    int t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void init(Eigen::Index rows, Eigen::Index cols) {
        m.setZero(rows, cols);
        v.setZero(rows, cols);
    }

    Eigen::MatrixXd step(const Eigen::MatrixXd& grad, double lr) {
        ++t;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad).eval();
        double bc1 = 1.0 - std::pow(beta1, t);
        double bc2 = 1.0 - std::pow(beta2, t);
        Eigen::MatrixXd mhat = m / bc1;
        Eigen::MatrixXd denom = ((v / bc2).array().sqrt() + eps).matrix();
        return -lr * mhat.cwiseQuotient(denom);
    }
};

const std::vector<bool>* mask_ptr(const EditRequest& request) {
    return request.loss_mask.has_value() ? &request.loss_mask.value() : nullptr;
}

int subject_last_token(const EditRequest& request) {
    auto [begin, end] = request.subject_span;
    if (begin < 0 || end <= begin) {
        throw Error(ErrorCode::invalid_input, "request has no valid subject span");
    }
    return end - 1;
}

EditOutcome gradient_edit(ModelHandle& model, const EditRequest& request,
                          const EditorConfig& config, bool constrained,
                          const StepObserver& observer) {
    const Site site{config.layer, "mlp_down"};
    EditOutcome outcome;
    outcome.kind = constrained ? EditorKind::FTL : EditorKind::FT;
    outcome.touched_sites = {site};

    const Eigen::MatrixXd w_orig = model.site_weights(site);
    if (constrained && config.linf_bound == 0.0) {
        // Degenerate bound: every step projects back to zero.
        outcome.deltas = {Eigen::MatrixXd::Zero(w_orig.rows(), w_orig.cols())};
        double nll = model.masked_nll_and_site_grad(site, request.prompt, request.target,
                                                    mask_ptr(request), nullptr);
        outcome.initial_loss = outcome.final_loss = nll;
        outcome.hit_stop_threshold = nll < config.stop_nll_per_token;
        return outcome;
    }

    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(w_orig.rows(), w_orig.cols());
    AdamState adam;
    adam.init(w_orig.rows(), w_orig.cols());

    double nll = 0.0;
    bool first = true;
    try {
        for (int step = 0;; ++step) {
            Eigen::MatrixXd grad;
            nll = model.masked_nll_and_site_grad(site, request.prompt, request.target,
                                                 mask_ptr(request), &grad);
            if (!std::isfinite(nll)) {
                throw Error(ErrorCode::divergence, "non-finite loss during fine-tuning");
            }
            if (first) {
                outcome.initial_loss = nll;
                first = false;
            }
            if (nll < config.stop_nll_per_token) {
                outcome.hit_stop_threshold = true;
                break;
            }
            if (step >= config.max_steps) break;
            delta += adam.step(grad, config.learning_rate);
            if (constrained) {
                delta = project_linf(delta, config.linf_bound);
            }
            model.overwrite_site_weights(site, w_orig + delta);
            outcome.steps_used = step + 1;
            if (observer) observer(delta);
        }
    } catch (const Error&) {
        model.overwrite_site_weights(site, w_orig);
        throw;
    }
    outcome.final_loss = nll;
    outcome.deltas = {delta};
    return outcome;
}

} // namespace

Eigen::MatrixXd project_linf(const Eigen::MatrixXd& delta, double bound) {
    return delta.cwiseMax(-bound).cwiseMin(bound);
}

EditOutcome edit_ft(ModelHandle& model, const EditRequest& request, const EditorConfig& config) {
    return gradient_edit(model, request, config, false, nullptr);
}

EditOutcome edit_ftl(ModelHandle& model, const EditRequest& request, const EditorConfig& config,
                     const StepObserver& observer) {
    return gradient_edit(model, request, config, true, observer);
}

// ---------------------------------------------------------------------------
// value solve and rank-one editors

Eigen::VectorXd solve_value_vector(const ModelHandle& model, const EditRequest& request, int layer,
                                   const EditorConfig& config) {
    const int subj = subject_last_token(request);
    const std::string sentence = request.prompt + request.target;
    Eigen::VectorXd v = model.collect_mlp_value(layer, sentence, subj);
    if (config.value_steps == 0) return v;

    // KL reference: the clean next-token distribution at the subject position.
    Eigen::VectorXd ref = model.token_distribution_at(sentence, subj);

    auto loss_at = [&](const Eigen::VectorXd& cand, Eigen::VectorXd* grad) {
        return model.value_substitution_loss(layer, subj, cand, request.prompt, request.target,
                                             mask_ptr(request), ref, config.kl_weight, grad);
    };

    Eigen::VectorXd grad;
    ModelHandle::ValueLoss loss = loss_at(v, &grad);
    for (int step = 0; step < config.value_steps; ++step) {
        if (!std::isfinite(loss.total)) {
            throw Error(ErrorCode::value_solve_failed, "non-finite loss in value solve");
        }
        if (loss.nll < config.stop_nll_per_token) break;
        double gnorm2 = grad.squaredNorm();
        if (gnorm2 == 0.0) break;
        // Armijo backtracking on the total loss.
        double eta = config.value_step_size;
        bool accepted = false;
        for (int trial = 0; trial < 40; ++trial) {
            Eigen::VectorXd cand = v - eta * grad;
            ModelHandle::ValueLoss cand_loss = loss_at(cand, nullptr);
            if (std::isfinite(cand_loss.total) &&
                cand_loss.total <= loss.total - 1e-4 * eta * gnorm2) {
                v = cand;
                loss = cand_loss;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if (!accepted) break;
        loss = loss_at(v, &grad);
    }
    return v;
}

EditOutcome edit_rome(ModelHandle& model, const EditRequest& request, const EditorConfig& config,
                      CovarianceCache& covariances) {
    const Site site{config.layer, "mlp_down"};
    const int subj = subject_last_token(request);
    const std::string sentence = request.prompt + request.target;

    Eigen::VectorXd k_star = model.collect_mlp_key(config.layer, sentence, subj);
    Eigen::VectorXd v_star = solve_value_vector(model, request, config.layer, config);
    const Eigen::MatrixXd w = model.site_weights(site);
    Eigen::MatrixXd w_new = rank_one_update(w, k_star, v_star, covariances.at(config.layer));

    EditOutcome outcome;
    outcome.kind = EditorKind::ROME;
    outcome.touched_sites = {site};
    outcome.deltas = {w_new - w};
    outcome.key_vector = k_star;
    outcome.value_vector = v_star;
    model.overwrite_site_weights(site, w_new);
    return outcome;
}

EditOutcome edit_memit(ModelHandle& model, const EditRequest& request, const EditorConfig& config,
                       CovarianceCache& covariances) {
    auto [first_layer, last_layer] = config.layer_range;
    const int subj = subject_last_token(request);
    const std::string sentence = request.prompt + request.target;

    EditorConfig solve_cfg = config;
    solve_cfg.layer = last_layer;
    Eigen::VectorXd v_star = solve_value_vector(model, request, last_layer, solve_cfg);

    EditOutcome outcome;
    outcome.kind = EditorKind::MEMIT;
    outcome.value_vector = v_star;

    std::vector<std::pair<Site, Eigen::MatrixXd>> applied; // for rollback
    try {
        for (int layer = first_layer; layer <= last_layer; ++layer) {
            const Site site{layer, "mlp_down"};
            // Keys and values recomputed against the current weights.
            Eigen::VectorXd key = model.collect_mlp_key(layer, sentence, subj);
            Eigen::VectorXd deep_value = model.collect_mlp_value(last_layer, sentence, subj);
            Eigen::VectorXd residual = v_star - deep_value;
            int remaining = last_layer - layer + 1;
            Eigen::VectorXd layer_value =
                model.collect_mlp_value(layer, sentence, subj) + residual / remaining;
            const Eigen::MatrixXd w = model.site_weights(site);
            Eigen::MatrixXd w_new = rank_one_update(w, key, layer_value, covariances.at(layer));
            model.overwrite_site_weights(site, w_new);
            applied.emplace_back(site, w);
            outcome.touched_sites.push_back(site);
            outcome.deltas.push_back(w_new - w);
            if (layer == last_layer) outcome.key_vector = key;
        }
    } catch (const Error&) {
        for (auto it = applied.rbegin(); it != applied.rend(); ++it) {
            model.overwrite_site_weights(it->first, it->second);
        }
        throw;
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// SERAC

namespace {

Eigen::VectorXd unit_embedding(const EmbeddingFn& embed, const std::string& text) {
    Eigen::VectorXd e = embed(text);
    double norm = e.norm();
    if (norm > 0.0) e /= norm;
    return e;
}

// Mixture counterfactual: the stored sentence carries probability mass
// alpha; everything else follows the base model conditioned on the stored
// sentence. Keeps an exact match strictly preferred over any alternative.
double counterfactual_logprob(const ModelHandle& model, const MemoryEntry& entry,
                              const std::string& text, double alpha) {
    double conditioned = model.sequence_logprob_given(entry.sentence + "\n", text);
    if (alpha <= 0.0) return conditioned;
    double miss = std::log1p(-alpha) + conditioned;
    if (text == entry.sentence) {
        double hit = std::log(alpha);
        double mx = std::max(hit, miss);
        return mx + std::log(std::exp(hit - mx) + std::exp(miss - mx));
    }
    return miss;
}

} // namespace

EditOutcome serac_edit(ModelHandle& model, const EditRequest& request, const EditorConfig& config,
                       const EmbeddingFn& embed) {
    MemoryEntry entry;
    entry.case_id = request.case_id;
    entry.prompt = request.prompt;
    entry.sentence = request.sentence();
    entry.embedding = unit_embedding(embed, entry.sentence);
    model.memory().upsert(entry);

    EditOutcome outcome;
    outcome.kind = EditorKind::SERAC;
    outcome.memory_entries = {std::move(entry)};
    (void)config;
    return outcome;
}

double serac_score(const ModelHandle& model, const EditMemory& memory, const std::string& text,
                   const EditorConfig& config, const EmbeddingFn& embed) {
    auto match = memory.best_match(unit_embedding(embed, text));
    if (!match.has_value() || match->second < config.scope_threshold) {
        return model.sequence_logprob(text);
    }
    const MemoryEntry& entry = memory.entries()[match->first];
    return counterfactual_logprob(model, entry, text, config.counterfactual_alpha);
}

int serac_next_token(const ModelHandle& model, const EditMemory& memory, const std::string& prompt,
                     const EditorConfig& config, const EmbeddingFn& embed) {
    // A prompt that is a prefix of a stored sentence is an unambiguous scope
    // hit; the counterfactual continues the stored sentence.
    if (config.counterfactual_alpha > 0.0 && !prompt.empty()) {
        for (const MemoryEntry& entry : memory.entries()) {
            if (entry.sentence.size() > prompt.size() &&
                entry.sentence.compare(0, prompt.size(), prompt) == 0) {
                std::vector<int> ids =
                    model.tokenizer().encode(entry.sentence.substr(prompt.size()));
                if (!ids.empty()) return ids.front();
            }
        }
    }
    auto match = memory.best_match(unit_embedding(embed, prompt));
    if (!match.has_value() || match->second < config.scope_threshold) {
        return model.next_token_argmax(prompt);
    }
    const MemoryEntry& entry = memory.entries()[match->first];
    return model.next_token_argmax_given(entry.sentence + "\n", prompt);
}

// ---------------------------------------------------------------------------
// IKE

namespace {

const char* demo_type_label(DemoType type) {
    switch (type) {
        case DemoType::copy: return "copy";
        case DemoType::update: return "update";
        case DemoType::retain: return "retain";
    }
    return "copy";
}

} // namespace

DemoStore DemoStore::build(const ModelHandle& model, const std::vector<SentencePair>& train_pairs,
                           const std::vector<KnowledgeProbe>& probes, const EmbeddingFn& embed) {
    DemoStore store;
    size_t probe_cursor = 0;
    for (const SentencePair& pair : train_pairs) {
        Demonstration copy;
        copy.type = DemoType::copy;
        copy.fact = pair.sentence_less;
        copy.text = pair.sentence_less;
        copy.embedding = unit_embedding(embed, pair.sentence_less);
        store.demos_.push_back(copy);

        Demonstration update;
        update.type = DemoType::update;
        update.fact = pair.sentence_less;
        update.text =
            pair.paraphrases_less.empty() ? pair.sentence_less : pair.paraphrases_less.front();
        update.embedding = unit_embedding(embed, update.text);
        store.demos_.push_back(update);

        if (!probes.empty()) {
            const KnowledgeProbe& probe = probes[probe_cursor % probes.size()];
            ++probe_cursor;
            Demonstration retain;
            retain.type = DemoType::retain;
            retain.fact = pair.sentence_less;
            int next = model.next_token_argmax(probe.prompt);
            retain.text = probe.prompt + model.tokenizer().decode({next});
            retain.embedding = unit_embedding(embed, retain.text);
            store.demos_.push_back(retain);
        }
    }
    return store;
}

std::vector<const Demonstration*> DemoStore::retrieve(const Eigen::VectorXd& query, int k) const {
    std::vector<const Demonstration*> all;
    all.reserve(demos_.size());
    for (const Demonstration& d : demos_) all.push_back(&d);
    std::stable_sort(all.begin(), all.end(), [&](const Demonstration* a, const Demonstration* b) {
        return a->embedding.dot(query) > b->embedding.dot(query);
    });
    if (static_cast<int>(all.size()) > k) all.resize(static_cast<size_t>(k));
    return all;
}

std::string ike_compose(const DemoStore& store, const EditRequest& request, int k,
                        const EmbeddingFn& embed) {
    std::ostringstream out;
    if (k > 0) {
        Eigen::VectorXd query = unit_embedding(embed, request.sentence());
        for (const Demonstration* demo : store.retrieve(query, k)) {
            out << "New fact: " << demo->fact << "\n[" << demo_type_label(demo->type) << "] "
                << demo->text << "\n\n";
        }
    }
    const std::string statement = request.sentence();
    if (!statement.empty()) {
        out << "New fact: " << statement << "\n";
    }
    return out.str();
}

double ike_score(const ModelHandle& model, const std::string& context, const std::string& text) {
    if (context.empty()) return model.sequence_logprob(text);
    return model.sequence_logprob_given(context, text);
}

int ike_next_token(const ModelHandle& model, const std::string& context,
                   const std::string& prompt) {
    if (context.empty()) return model.next_token_argmax(prompt);
    return model.next_token_argmax_given(context, prompt);
}

// ---------------------------------------------------------------------------
// scorers

namespace {

class PlainScorer final : public Scorer {
  public:
    PlainScorer(const ModelHandle& model, bool normalized) : model_(model), normalized_(normalized) {}

    double score(const std::string& text) const override {
        double lp = model_.sequence_logprob(text);
        if (normalized_) lp /= static_cast<double>(model_.tokenizer().count(text));
        return lp;
    }
    int next_token(const std::string& prompt) const override {
        return model_.next_token_argmax(prompt);
    }

  private:
    const ModelHandle& model_;
    bool normalized_;
};

class SeracScorer final : public Scorer {
  public:
    SeracScorer(const ModelHandle& model, EditorConfig config, EmbeddingFn embed, bool normalized)
        : model_(model), config_(std::move(config)), embed_(std::move(embed)),
          normalized_(normalized) {}

    double score(const std::string& text) const override {
        double lp = serac_score(model_, model_.memory(), text, config_, embed_);
        if (normalized_) lp /= static_cast<double>(model_.tokenizer().count(text));
        return lp;
    }
    int next_token(const std::string& prompt) const override {
        return serac_next_token(model_, model_.memory(), prompt, config_, embed_);
    }

  private:
    const ModelHandle& model_;
    EditorConfig config_;
    EmbeddingFn embed_;
    bool normalized_;
};

class IkeScorer final : public Scorer {
  public:
    IkeScorer(const ModelHandle& model, std::string context, bool normalized)
        : model_(model), context_(std::move(context)), normalized_(normalized) {}

    double score(const std::string& text) const override {
        double lp = ike_score(model_, context_, text);
        if (normalized_) lp /= static_cast<double>(model_.tokenizer().count(text));
        return lp;
    }
    int next_token(const std::string& prompt) const override {
        return ike_next_token(model_, context_, prompt);
    }

  private:
    const ModelHandle& model_;
    std::string context_;
    bool normalized_;
};

} // namespace

std::unique_ptr<Scorer> make_plain_scorer(const ModelHandle& model, bool length_normalized) {
    return std::make_unique<PlainScorer>(model, length_normalized);
}

std::unique_ptr<Scorer> make_serac_scorer(const ModelHandle& model, const EditorConfig& config,
                                          EmbeddingFn embed, bool length_normalized) {
    return std::make_unique<SeracScorer>(model, config, std::move(embed), length_normalized);
}

std::unique_ptr<Scorer> make_ike_scorer(const ModelHandle& model, std::string context,
                                        bool length_normalized) {
    return std::make_unique<IkeScorer>(model, std::move(context), length_normalized);
}

// ---------------------------------------------------------------------------
// dispatch

EditOutcome apply_edit(ModelHandle& model, const SentencePair& pair, const EditRequest& request,
                       const EditorConfig& config, EditorContext& ctx) {
    std::unique_ptr<Scorer> before = make_scorer_for(model, config, ctx, nullptr);
    double margin_before = before->score(pair.sentence_less) - before->score(pair.sentence_more);

    EditOutcome outcome;
    switch (config.kind) {
        case EditorKind::FT: outcome = edit_ft(model, request, config); break;
        case EditorKind::FTL: outcome = edit_ftl(model, request, config); break;
        case EditorKind::ROME: outcome = edit_rome(model, request, config, ctx.covariances); break;
        case EditorKind::MEMIT:
            outcome = edit_memit(model, request, config, ctx.covariances);
            break;
        case EditorKind::SERAC: outcome = serac_edit(model, request, config, ctx.embed); break;
        case EditorKind::IKE: {
            if (ctx.demo_store == nullptr) {
                throw Error(ErrorCode::invalid_input, "IKE requires a demonstration store");
            }
            outcome.kind = EditorKind::IKE;
            outcome.ike_context = ike_compose(*ctx.demo_store, request, config.demos_k, ctx.embed);
            MemoryEntry entry;
            entry.case_id = request.case_id;
            entry.prompt = request.prompt;
            entry.sentence = request.sentence();
            entry.embedding = unit_embedding(ctx.embed, entry.sentence);
            outcome.memory_entries = {std::move(entry)};
            break;
        }
    }

    std::unique_ptr<Scorer> after = make_scorer_for(model, config, ctx, &outcome);
    double margin_after = after->score(pair.sentence_less) - after->score(pair.sentence_more);
    if (!(margin_after > margin_before)) {
        outcome.flagged = true;
        outcome.flag_reason = "pair margin did not improve";
    }
    return outcome;
}

std::unique_ptr<Scorer> make_scorer_for(const ModelHandle& model, const EditorConfig& config,
                                        const EditorContext& ctx, const EditOutcome* outcome) {
    switch (config.kind) {
        case EditorKind::SERAC:
            return make_serac_scorer(model, config, ctx.embed, ctx.length_normalized);
        case EditorKind::IKE:
            return make_ike_scorer(model, outcome != nullptr ? outcome->ike_context : "",
                                   ctx.length_normalized);
        default: return make_plain_scorer(model, ctx.length_normalized);
    }
}

} // namespace debiaslab
