#include "debiaslab/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "debiaslab/error.hpp"
#include "debiaslab/metrics.hpp"

namespace debiaslab {

using nlohmann::json;

void ProtocolPlan::validate(size_t split_size) const {
    if (checkpoints.empty()) {
        throw Error(ErrorCode::invalid_input, "protocol plan has no checkpoints");
    }
    for (size_t i = 0; i < checkpoints.size(); ++i) {
        if (checkpoints[i] < 1 || (i > 0 && checkpoints[i] <= checkpoints[i - 1])) {
            throw Error(ErrorCode::invalid_input, "checkpoints must be strictly increasing");
        }
    }
    if (static_cast<size_t>(checkpoints.back()) > split_size) {
        throw Error(ErrorCode::invalid_input, "final checkpoint exceeds the edit split size");
    }
    for (int c : checkpoints) {
        if (runs_at(c) < 1) {
            throw Error(ErrorCode::invalid_input,
                        "checkpoint " + std::to_string(c) + " has no run count");
        }
    }
}

int ProtocolPlan::runs_at(int checkpoint) const {
    auto it = runs_per_checkpoint.find(checkpoint);
    return it == runs_per_checkpoint.end() ? 0 : it->second;
}

int ProtocolPlan::max_runs() const {
    int mx = 0;
    for (const auto& [c, runs] : runs_per_checkpoint) mx = std::max(mx, runs);
    return mx;
}

ProtocolPlan ProtocolPlan::default_plan(size_t split_size, uint64_t edit_order_seed) {
    if (split_size == 0) {
        throw Error(ErrorCode::invalid_input, "cannot schedule an empty edit split");
    }
    ProtocolPlan plan;
    plan.edit_order_seed = edit_order_seed;
    const int all = static_cast<int>(split_size);
    for (int c : {1, 4, 16, 64, 256}) {
        if (c < all) plan.checkpoints.push_back(c);
    }
    plan.checkpoints.push_back(all);
    for (int c : plan.checkpoints) {
        plan.runs_per_checkpoint[c] = c <= 16 ? 10 : 3;
    }
    return plan;
}

const char* target_selection_name(TargetSelection selection) {
    switch (selection) {
        case TargetSelection::none: return "none";
        case TargetSelection::rule: return "rule";
        case TargetSelection::causal: return "causal";
    }
    return "none";
}

TargetSelection target_selection_from_string(const std::string& name) {
    if (name == "none") return TargetSelection::none;
    if (name == "rule") return TargetSelection::rule;
    if (name == "causal") return TargetSelection::causal;
    throw Error(ErrorCode::config_error, "unknown target selection '" + name + "'");
}

// ---------------------------------------------------------------------------

namespace {

class ConfiguredDriver final : public EditorDriver {
  public:
    ConfiguredDriver(EditorConfig config, EditorContext ctx)
        : config_(std::move(config)), ctx_(std::move(ctx)) {}

    std::string name() const override { return editor_kind_name(config_.kind); }
    bool supports_sequential() const override { return config_.kind != EditorKind::IKE; }

    EditOutcome edit(ModelHandle& model, const SentencePair& pair,
                     const EditRequest& request) override {
        return apply_edit(model, pair, request, config_, ctx_);
    }

    std::unique_ptr<Scorer> scorer(const ModelHandle& model,
                                   const EditOutcome* last_outcome) const override {
        return make_scorer_for(model, config_, ctx_, last_outcome);
    }

  private:
    EditorConfig config_;
    EditorContext ctx_;
};

struct RequestBuild {
    EditRequest request;
    std::optional<std::string> audit_line;
};

RequestBuild build_request(ModelHandle& model, const SentencePair& pair,
                           const ProtocolOptions& options) {
    RequestBuild out;
    switch (options.selection) {
        case TargetSelection::none:
            out.request = make_edit_request(pair, model, options.match);
            break;
        case TargetSelection::rule: {
            if (options.tagger == nullptr) {
                throw Error(ErrorCode::invalid_input, "rule selection requires a tagger");
            }
            RuleSelectionAudit audit;
            out.request = rule_based_mask(pair, options.pos_filter, model, *options.tagger,
                                          options.match, &audit);
            json tags = json::array();
            for (const TaggedToken& t : audit.target_tags) {
                tags.push_back(json{{"token", t.token}, {"tag", pos_tag_name(t.tag)}});
            }
            json j{{"case_id", audit.case_id},
                   {"method", "rule"},
                   {"used_common_prefix", audit.used_common_prefix},
                   {"all_true_fallback", audit.all_true_fallback},
                   {"mask", *out.request.loss_mask},
                   {"tags", tags}};
            out.audit_line = j.dump();
            break;
        }
        case TargetSelection::causal: {
            EditRequest base = make_edit_request(pair, model, options.match);
            auto [request, trace] = causal_trace_mask(model, base, options.trace);
            out.request = request;
            json j{{"case_id", pair.case_id},
                   {"method", "causal"},
                   {"mask", *out.request.loss_mask},
                   {"reductions", trace.reduction},
                   {"noise_sigma", trace.noise_sigma},
                   {"num_noise_samples", trace.num_noise_samples}};
            out.audit_line = j.dump();
            break;
        }
    }
    return out;
}

struct PopulationMetrics {
    std::optional<double> success, knowledge, gen_fwd, gen_bwd;
};

PopulationMetrics evaluate_population(const Scorer& scorer, const std::vector<SentencePair>& pairs,
                                      const std::vector<KnowledgeProbe>& probes,
                                      const std::vector<int>& baseline_answers,
                                      bool strict_backward) {
    PopulationMetrics m;
    m.success = success_rate(scorer, pairs);
    if (!pairs.empty()) {
        m.knowledge = knowledge_acc(scorer, probes, baseline_answers);
        m.gen_fwd = gen_forward_rate(scorer, pairs).rate;
        m.gen_bwd = gen_backward_rate(scorer, pairs, strict_backward).rate;
    }
    return m;
}

MetricRecord base_record(const ProtocolOptions& options, Protocol protocol,
                         const std::string& editor) {
    MetricRecord r;
    r.run_id = options.run_id;
    r.protocol = protocol;
    r.editor_kind = editor;
    r.seed = options.seed;
    return r;
}

void fill_metrics(MetricRecord& r, const PopulationMetrics& m) {
    r.success_rate = m.success;
    r.knowledge_acc = m.knowledge;
    r.gen_forward = m.gen_fwd;
    r.gen_backward = m.gen_bwd;
    r.average = compute_average(m.success, m.knowledge, m.gen_fwd, m.gen_bwd);
}

struct MeanStd {
    double mean = 0.0, stdev = 0.0;
    int n = 0;
};

std::optional<MeanStd> mean_std(const std::vector<std::optional<double>>& values) {
    std::vector<double> xs;
    for (const auto& v : values) {
        if (v.has_value()) xs.push_back(*v);
    }
    if (xs.empty()) return std::nullopt;
    MeanStd out;
    out.n = static_cast<int>(xs.size());
    for (double x : xs) out.mean += x;
    out.mean /= xs.size();
    for (double x : xs) out.stdev += (x - out.mean) * (x - out.mean);
    out.stdev = std::sqrt(out.stdev / xs.size());
    return out;
}

} // namespace

std::unique_ptr<EditorDriver> make_editor_driver(const EditorConfig& config, EditorContext ctx) {
    return std::make_unique<ConfiguredDriver>(config, std::move(ctx));
}

// ---------------------------------------------------------------------------

ProtocolResult run_single_edit(ModelHandle& model, EditorDriver& driver,
                               const std::vector<SentencePair>& edit_split,
                               const std::vector<KnowledgeProbe>& probes,
                               const ProtocolOptions& options) {
    ProtocolResult result;
    ModelSnapshot baseline = model.capture_snapshot();
    std::vector<int> baseline_answers =
        compute_baseline_answers(*make_plain_scorer(model), probes);

    std::vector<std::optional<double>> successes, knowledges, gen_fwds, gen_bwds;
    for (const SentencePair& pair : edit_split) {
        model.restore_snapshot(baseline);
        MetricRecord rec = base_record(options, Protocol::single, driver.name());
        rec.scope = "pair";
        rec.case_id = pair.case_id;
        rec.n_edits = 1;
        rec.checkpoint = 1;
        rec.population = Population::edited;
        std::optional<EditOutcome> outcome;
        try {
            RequestBuild build = build_request(model, pair, options);
            if (build.audit_line) result.selection_audit.push_back(*build.audit_line);
            outcome = driver.edit(model, pair, build.request);
            rec.edit_flagged = outcome->flagged;
        } catch (const Error& e) {
            rec.note = std::string("edit-failed: ") + e.what();
        }
        std::unique_ptr<Scorer> scorer =
            driver.scorer(model, outcome.has_value() ? &*outcome : nullptr);
        std::vector<SentencePair> single{pair};
        PopulationMetrics m =
            evaluate_population(*scorer, single, probes, baseline_answers, options.strict_backward);
        fill_metrics(rec, m);
        successes.push_back(m.success);
        knowledges.push_back(m.knowledge);
        gen_fwds.push_back(m.gen_fwd);
        gen_bwds.push_back(m.gen_bwd);
        result.records.push_back(std::move(rec));
    }
    model.restore_snapshot(baseline);

    MetricRecord agg = base_record(options, Protocol::single, driver.name());
    agg.scope = "aggregate";
    agg.n_edits = static_cast<int>(edit_split.size());
    agg.checkpoint = 1;
    agg.population = Population::edited;
    auto s = mean_std(successes);
    auto k = mean_std(knowledges);
    auto gf = mean_std(gen_fwds);
    auto gb = mean_std(gen_bwds);
    agg.success_rate = s ? std::optional<double>(s->mean) : std::nullopt;
    agg.knowledge_acc = k ? std::optional<double>(k->mean) : std::nullopt;
    agg.gen_forward = gf ? std::optional<double>(gf->mean) : std::nullopt;
    agg.gen_backward = gb ? std::optional<double>(gb->mean) : std::nullopt;
    agg.average =
        compute_average(agg.success_rate, agg.knowledge_acc, agg.gen_forward, agg.gen_backward);
    agg.n_runs = static_cast<int>(edit_split.size());
    result.records.push_back(std::move(agg));
    return result;
}

ProtocolResult run_sequential_edit(ModelHandle& model, EditorDriver& driver,
                                   const std::vector<SentencePair>& edit_split,
                                   const std::vector<KnowledgeProbe>& probes,
                                   const ProtocolPlan& plan, const ProtocolOptions& options) {
    if (!driver.supports_sequential()) {
        throw Error(ErrorCode::unsupported_protocol,
                    driver.name() + " supports single-edit only");
    }
    plan.validate(edit_split.size());

    ProtocolResult result;
    ModelSnapshot baseline = model.capture_snapshot();
    std::vector<int> baseline_answers =
        compute_baseline_answers(*make_plain_scorer(model), probes);

    // values[checkpoint][population] -> per-run metric lists
    struct Series {
        std::vector<std::optional<double>> success, knowledge, gen_fwd, gen_bwd;
    };
    std::map<std::pair<int, int>, Series> series;

    const int total_runs = plan.max_runs();
    for (int run = 0; run < total_runs; ++run) {
        model.restore_snapshot(baseline);
        uint64_t run_seed = plan.edit_order_seed + static_cast<uint64_t>(run);
        std::vector<size_t> order = shuffled_indices(edit_split.size(), run_seed);
        int deepest = 0;
        for (int c : plan.checkpoints) {
            if (plan.runs_at(c) > run) deepest = c;
        }
        if (deepest == 0) continue;

        int applied = 0;
        for (int i = 0; i < deepest; ++i) {
            const SentencePair& pair = edit_split[order[static_cast<size_t>(i)]];
            try {
                RequestBuild build = build_request(model, pair, options);
                if (build.audit_line && run == 0) {
                    result.selection_audit.push_back(*build.audit_line);
                }
                EditOutcome outcome = driver.edit(model, pair, build.request);
                (void)outcome;
            } catch (const Error& e) {
                MetricRecord fail = base_record(options, Protocol::sequential, driver.name());
                fail.scope = "pair";
                fail.seed = run_seed;
                fail.case_id = pair.case_id;
                fail.n_edits = i + 1;
                fail.note = std::string("edit-failed: ") + e.what();
                result.records.push_back(std::move(fail));
            }
            ++applied;
            if (plan.runs_at(applied) > run &&
                std::find(plan.checkpoints.begin(), plan.checkpoints.end(), applied) !=
                    plan.checkpoints.end()) {
                std::unique_ptr<Scorer> scorer = driver.scorer(model, nullptr);
                std::vector<SentencePair> edited, unedited;
                for (int j = 0; j < static_cast<int>(edit_split.size()); ++j) {
                    const SentencePair& p = edit_split[order[static_cast<size_t>(j)]];
                    (j < applied ? edited : unedited).push_back(p);
                }
                for (int pop = 0; pop < 2; ++pop) {
                    const std::vector<SentencePair>& pairs = pop == 0 ? edited : unedited;
                    PopulationMetrics m = evaluate_population(*scorer, pairs, probes,
                                                              baseline_answers,
                                                              options.strict_backward);
                    MetricRecord rec = base_record(options, Protocol::sequential, driver.name());
                    rec.scope = "run";
                    rec.seed = run_seed;
                    rec.n_edits = applied;
                    rec.checkpoint = applied;
                    rec.population = pop == 0 ? Population::edited : Population::unedited;
                    fill_metrics(rec, m);
                    result.records.push_back(std::move(rec));
                    Series& s = series[{applied, pop}];
                    s.success.push_back(m.success);
                    s.knowledge.push_back(m.knowledge);
                    s.gen_fwd.push_back(m.gen_fwd);
                    s.gen_bwd.push_back(m.gen_bwd);
                }
            }
        }
    }
    model.restore_snapshot(baseline);

    for (const auto& [key, s] : series) {
        MetricRecord agg = base_record(options, Protocol::sequential, driver.name());
        agg.scope = "aggregate";
        agg.n_edits = key.first;
        agg.checkpoint = key.first;
        agg.population = key.second == 0 ? Population::edited : Population::unedited;
        auto su = mean_std(s.success);
        auto kn = mean_std(s.knowledge);
        auto gf = mean_std(s.gen_fwd);
        auto gb = mean_std(s.gen_bwd);
        if (su) {
            agg.success_rate = su->mean;
            agg.success_std = su->stdev;
            agg.n_runs = su->n;
        }
        if (kn) {
            agg.knowledge_acc = kn->mean;
            agg.knowledge_std = kn->stdev;
        }
        if (gf) {
            agg.gen_forward = gf->mean;
            agg.gen_forward_std = gf->stdev;
        }
        if (gb) {
            agg.gen_backward = gb->mean;
            agg.gen_backward_std = gb->stdev;
        }
        agg.average = compute_average(agg.success_rate, agg.knowledge_acc, agg.gen_forward,
                                      agg.gen_backward);
        result.records.push_back(std::move(agg));
    }
    return result;
}

CrossTypeResult run_cross_type(ModelHandle& model, EditorDriver& driver,
                               const std::vector<SentencePair>& edit_split,
                               const std::vector<KnowledgeProbe>& probes,
                               const ProtocolOptions& options) {
    CrossTypeResult out;
    ModelSnapshot baseline = model.capture_snapshot();
    std::vector<int> baseline_answers =
        compute_baseline_answers(*make_plain_scorer(model), probes);
    (void)baseline_answers;

    std::array<std::vector<SentencePair>, kNumBiasTypes> by_type;
    for (const SentencePair& pair : edit_split) {
        by_type[static_cast<int>(pair.bias_type)].push_back(pair);
    }

    for (int edit_type = 0; edit_type < kNumBiasTypes; ++edit_type) {
        const std::string edit_name = bias_type_name(static_cast<BiasType>(edit_type));
        if (by_type[edit_type].empty()) {
            MetricRecord warn = base_record(options, Protocol::cross_type, driver.name());
            warn.scope = "aggregate";
            warn.edit_bias_type = edit_name;
            warn.note = "bias type missing from the edit split; row skipped";
            out.result.records.push_back(std::move(warn));
            continue;
        }
        model.restore_snapshot(baseline);
        int applied = 0;
        for (const SentencePair& pair : by_type[edit_type]) {
            try {
                RequestBuild build = build_request(model, pair, options);
                driver.edit(model, pair, build.request);
            } catch (const Error& e) {
                MetricRecord fail = base_record(options, Protocol::cross_type, driver.name());
                fail.scope = "pair";
                fail.case_id = pair.case_id;
                fail.edit_bias_type = edit_name;
                fail.note = std::string("edit-failed: ") + e.what();
                out.result.records.push_back(std::move(fail));
            }
            ++applied;
        }
        std::unique_ptr<Scorer> scorer = driver.scorer(model, nullptr);
        for (int eval_type = 0; eval_type < kNumBiasTypes; ++eval_type) {
            std::optional<double> rate = success_rate(*scorer, by_type[eval_type]);
            out.matrix[edit_type][eval_type] = rate;
            MetricRecord rec = base_record(options, Protocol::cross_type, driver.name());
            rec.scope = "aggregate";
            rec.n_edits = applied;
            rec.checkpoint = applied;
            rec.edit_bias_type = edit_name;
            rec.eval_bias_type = bias_type_name(static_cast<BiasType>(eval_type));
            rec.success_rate = rate;
            out.result.records.push_back(std::move(rec));
        }
    }
    model.restore_snapshot(baseline);
    return out;
}

MetricRecord run_pairwise_benchmark(const Scorer& scorer,
                                    const std::vector<SentencePair>& benchmark_pairs,
                                    const std::string& editor_name,
                                    const ProtocolOptions& options) {
    MetricRecord rec = base_record(options, Protocol::pairwise_bench, editor_name);
    rec.scope = "aggregate";
    rec.n_edits = 0;
    std::optional<double> stereo = pairwise_bias_benchmark(scorer, benchmark_pairs);
    rec.success_rate = stereo; // fraction preferring the stereotypical sentence
    rec.note = "pairwise benchmark: fraction preferring the stereotypical sentence (lower is better)";
    return rec;
}

} // namespace debiaslab
