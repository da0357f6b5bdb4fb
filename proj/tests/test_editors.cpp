#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "debiaslab/editors.hpp"
#include "debiaslab/error.hpp"
#include "debiaslab/synthetic.hpp"
#include "debiaslab/tiny_transformer.hpp"

using namespace debiaslab;

namespace {

TinyTransformer make_model(uint64_t seed = 11) {
    TinyTransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 4;
    cfg.vocab_size = 128;
    cfg.max_seq_len = 2048;
    cfg.seed = seed;
    return TinyTransformer(cfg);
}

SentencePair sample_pair(const ModelHandle& model) {
    std::vector<SentencePair> pairs = align_pairs_to_model(model, make_synthetic_pairs(4, 21));
    return pairs.front();
}

EditRequest request_for(const ModelHandle& model, const SentencePair& pair) {
    return make_edit_request(pair, model);
}

EditorConfig ft_config() {
    EditorConfig cfg;
    cfg.kind = EditorKind::FT;
    cfg.layer = 0;
    cfg.learning_rate = 0.05;
    cfg.max_steps = 40;
    cfg.stop_nll_per_token = 0.05;
    return cfg;
}

EditorContext make_ctx(const ModelHandle& model, const std::vector<std::string>& corpus) {
    EditorContext ctx;
    ctx.covariances = CovarianceCache(&model, corpus, std::nullopt);
    ctx.embed = make_ngram_embedding();
    return ctx;
}

} // namespace

TEST_CASE("rank_one_update hand example") {
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd k(2), v(2);
    k << 1, 0;
    v << 2, 0;
    Eigen::MatrixXd c = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd w2 = rank_one_update(w, k, v, c);
    CHECK(w2(0, 0) == doctest::Approx(2.0));
    CHECK(w2(0, 1) == doctest::Approx(0.0));
    CHECK(w2(1, 0) == doctest::Approx(0.0));
    CHECK(w2(1, 1) == doctest::Approx(1.0));

    SUBCASE("already satisfied: zero update") {
        Eigen::MatrixXd same = rank_one_update(w, k, w * k, c);
        CHECK((same - w).cwiseAbs().maxCoeff() <= 1e-15);
    }

    SUBCASE("scaling C cancels out") {
        for (double scale : {0.5, 2.0, 10.0}) {
            Eigen::MatrixXd scaled = rank_one_update(w, k, v, scale * c);
            CHECK((scaled - w2).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }

    SUBCASE("singular C rejected") {
        Eigen::MatrixXd singular = Eigen::MatrixXd::Zero(2, 2);
        CHECK_THROWS_AS(rank_one_update(w, k, v, singular), Error);
    }

    SUBCASE("orthogonal degenerate case rejected") {
        // C^-1 k orthogonal to k cannot happen with SPD C, but k = 0 gives a
        // zero denominator.
        Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
        CHECK_THROWS_AS(rank_one_update(w, zero, v, c), Error);
    }
}

TEST_CASE("rank_one_update exactness and rank on random instances") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        int rows = 2 + static_cast<int>(rng() % 6);
        int cols = 2 + static_cast<int>(rng() % 6);
        Eigen::MatrixXd w(rows, cols);
        Eigen::VectorXd k(cols), v(rows);
        Eigen::MatrixXd a(cols, cols);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) w(i, j) = normal(rng);
        }
        for (int j = 0; j < cols; ++j) k(j) = normal(rng);
        for (int i = 0; i < rows; ++i) v(i) = normal(rng);
        for (int i = 0; i < cols; ++i) {
            for (int j = 0; j < cols; ++j) a(i, j) = normal(rng);
        }
        Eigen::MatrixXd c = a.transpose() * a + 0.1 * Eigen::MatrixXd::Identity(cols, cols);
        Eigen::MatrixXd w2 = rank_one_update(w, k, v, c);
        CHECK((w2 * k - v).cwiseAbs().maxCoeff() <= 1e-8);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(w2 - w);
        CHECK(svd.singularValues()(0) > 0.0);
        if (svd.singularValues().size() > 1) {
            CHECK(svd.singularValues()(1) <= 1e-8 * svd.singularValues()(0));
        }
    }
}

TEST_CASE("edit_ft") {
    TinyTransformer model = make_model(7);
    SentencePair pair = sample_pair(model);
    EditRequest req = request_for(model, pair);
    EditorConfig cfg = ft_config();

    SUBCASE("loss already below threshold: zero steps, zero delta") {
        EditorConfig lax = cfg;
        lax.stop_nll_per_token = 1e9;
        EditOutcome out = edit_ft(model, req, lax);
        CHECK(out.steps_used == 0);
        CHECK(out.hit_stop_threshold);
        CHECK(out.deltas[0].cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("loss strictly decreases on a seeded model") {
        double before = -model.sequence_logprob(pair.sentence_less);
        EditOutcome out = edit_ft(model, req, cfg);
        CHECK(out.final_loss < out.initial_loss);
        double after = -model.sequence_logprob(pair.sentence_less);
        CHECK(after < before);
    }

    SUBCASE("locality: only the configured site changes") {
        TinyTransformer fresh = make_model(7);
        std::vector<std::string> names = fresh.param_names();
        std::vector<Eigen::MatrixXd> before;
        for (const auto& n : names) before.push_back(fresh.named_param(n));
        edit_ft(fresh, req, cfg);
        for (size_t i = 0; i < names.size(); ++i) {
            if (names[i] == "layer0.wdown") continue;
            CHECK(fresh.named_param(names[i]) == before[i]);
        }
    }

    SUBCASE("reproducibility: same config gives bitwise-equal deltas") {
        TinyTransformer m1 = make_model(7);
        TinyTransformer m2 = make_model(7);
        EditOutcome o1 = edit_ft(m1, req, cfg);
        EditOutcome o2 = edit_ft(m2, req, cfg);
        CHECK(o1.deltas[0] == o2.deltas[0]);
        CHECK(o1.steps_used == o2.steps_used);
    }
}

TEST_CASE("edit_ftl") {
    TinyTransformer model = make_model(9);
    SentencePair pair = sample_pair(model);
    EditRequest req = request_for(model, pair);
    EditorConfig cfg = ft_config();
    cfg.kind = EditorKind::FTL;

    SUBCASE("epsilon = 0 leaves the weights bitwise unchanged") {
        cfg.linf_bound = 0.0;
        std::vector<double> before = model.raw_parameters();
        EditOutcome out = edit_ftl(model, req, cfg);
        CHECK(model.raw_parameters() == before);
        CHECK(out.deltas[0].cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("cumulative delta bounded after every step") {
        cfg.linf_bound = 1e-3;
        int observed = 0;
        EditOutcome out = edit_ftl(model, req, cfg, [&](const Eigen::MatrixXd& delta) {
            CHECK(delta.cwiseAbs().maxCoeff() <= cfg.linf_bound);
            ++observed;
        });
        CHECK(observed == out.steps_used);
        CHECK(out.deltas[0].cwiseAbs().maxCoeff() <= cfg.linf_bound);
    }

    SUBCASE("projection clamps elementwise") {
        Eigen::MatrixXd delta(2, 3);
        delta << 0.7, -0.7, 0.2, -0.1, 0.5, -0.51;
        Eigen::MatrixXd clamped = project_linf(delta, 0.5);
        for (int i = 0; i < delta.rows(); ++i) {
            for (int j = 0; j < delta.cols(); ++j) {
                double expected = std::min(0.5, std::max(-0.5, delta(i, j)));
                CHECK(clamped(i, j) == expected);
            }
        }
        CHECK(clamped.cwiseAbs().maxCoeff() <= 0.5);
    }
}

TEST_CASE("solve_value_vector") {
    TinyTransformer model = make_model(13);
    SentencePair pair = sample_pair(model);
    EditRequest req = request_for(model, pair);
    EditorConfig cfg;
    cfg.kind = EditorKind::ROME;
    cfg.layer = 0;
    cfg.value_steps = 20;
    const std::string sentence = req.prompt + req.target;
    const int subj_last = req.subject_span.second - 1;
    Eigen::VectorXd clean = model.collect_mlp_value(0, sentence, subj_last);

    SUBCASE("value_steps = 0 returns the clean value exactly") {
        cfg.value_steps = 0;
        Eigen::VectorXd v = solve_value_vector(model, req, 0, cfg);
        CHECK(v == clean);
    }

    SUBCASE("huge kl weight keeps the value at the clean vector") {
        cfg.kl_weight = 1e6;
        Eigen::VectorXd v = solve_value_vector(model, req, 0, cfg);
        CHECK((v - clean).norm() <= 1e-3);
    }

    SUBCASE("substituting the solved value lowers the masked NLL") {
        cfg.kl_weight = 0.0625;
        Eigen::VectorXd v = solve_value_vector(model, req, 0, cfg);
        Eigen::VectorXd ref = model.token_distribution_at(sentence, subj_last);
        auto clean_loss = model.value_substitution_loss(0, subj_last, clean, req.prompt,
                                                        req.target, nullptr, ref, 0.0, nullptr);
        auto solved_loss = model.value_substitution_loss(0, subj_last, v, req.prompt, req.target,
                                                         nullptr, ref, 0.0, nullptr);
        CHECK(solved_loss.nll < clean_loss.nll);
    }
}

TEST_CASE("edit_rome") {
    TinyTransformer model = make_model(17);
    SentencePair pair = sample_pair(model);
    EditRequest req = request_for(model, pair);
    EditorConfig cfg;
    cfg.kind = EditorKind::ROME;
    cfg.layer = 0;
    cfg.value_steps = 20;
    std::vector<std::string> corpus = {pair.sentence_less, pair.sentence_more, "Some filler text."};
    CovarianceCache cov(&model, corpus, std::nullopt);

    EditOutcome out = edit_rome(model, req, cfg, cov);
    REQUIRE(out.touched_sites.size() == 1);
    CHECK(out.touched_sites[0].layer == 0);
    REQUIRE(out.key_vector.has_value());
    REQUIRE(out.value_vector.has_value());

    SUBCASE("exactness: W' k* = v*") {
        Eigen::MatrixXd w_new = model.site_weights(out.touched_sites[0]);
        Eigen::VectorXd residual = w_new * (*out.key_vector) - *out.value_vector;
        CHECK(residual.cwiseAbs().maxCoeff() <= 1e-5);
    }

    SUBCASE("rank one") {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.deltas[0]);
        CHECK(svd.singularValues()(0) > 0.0);
        CHECK(svd.singularValues()(1) <= 1e-8 * svd.singularValues()(0));
    }

    SUBCASE("edit raises the target probability") {
        TinyTransformer fresh = make_model(17);
        double before = fresh.sequence_logprob(pair.sentence_less);
        CovarianceCache cov2(&fresh, corpus, std::nullopt);
        edit_rome(fresh, req, cfg, cov2);
        CHECK(fresh.sequence_logprob(pair.sentence_less) > before);
    }
}

TEST_CASE("edit_memit") {
    TinyTransformer model = make_model(19);
    SentencePair pair = sample_pair(model);
    EditRequest req = request_for(model, pair);
    std::vector<std::string> corpus = {pair.sentence_less, pair.sentence_more, "Some filler."};

    SUBCASE("size-one range is equivalent to ROME") {
        EditorConfig cfg;
        cfg.kind = EditorKind::MEMIT;
        cfg.layer_range = {1, 1};
        cfg.value_steps = 10;
        TinyTransformer m1 = make_model(19);
        TinyTransformer m2 = make_model(19);
        CovarianceCache cov1(&m1, corpus, std::nullopt);
        CovarianceCache cov2(&m2, corpus, std::nullopt);
        EditOutcome memit = edit_memit(m1, req, cfg, cov1);
        EditorConfig rome_cfg = cfg;
        rome_cfg.kind = EditorKind::ROME;
        rome_cfg.layer = 1;
        EditOutcome rome = edit_rome(m2, req, rome_cfg, cov2);
        REQUIRE(memit.deltas.size() == 1);
        CHECK((memit.deltas[0] - rome.deltas[0]).cwiseAbs().maxCoeff() <= 1e-6);
    }

    SUBCASE("touched sites span the range and probability improves") {
        EditorConfig cfg;
        cfg.kind = EditorKind::MEMIT;
        cfg.layer_range = {0, 1};
        cfg.value_steps = 20;
        CovarianceCache cov(&model, corpus, std::nullopt);
        double before = model.sequence_logprob(pair.sentence_less);
        double target_before =
            model.sequence_logprob(pair.sentence_less) -
            model.sequence_logprob(req.prompt);
        (void)target_before;
        EditOutcome out = edit_memit(model, req, cfg, cov);
        CHECK(out.touched_sites.size() == 2);
        CHECK(out.touched_sites[0].layer == 0);
        CHECK(out.touched_sites[1].layer == 1);
        CHECK(model.sequence_logprob(pair.sentence_less) > before);
    }
}

TEST_CASE("serac memory editing and routing") {
    TinyTransformer model = make_model(23);
    SentencePair pair = sample_pair(model);
    EditRequest req = request_for(model, pair);
    EditorConfig cfg;
    cfg.kind = EditorKind::SERAC;
    cfg.scope_threshold = 0.8;
    EmbeddingFn embed = make_ngram_embedding();

    SUBCASE("empty memory scores like the base model") {
        for (const char* text : {"The nurses were kind.", "anything at all"}) {
            CHECK(serac_score(model, model.memory(), text, cfg, embed) ==
                  model.sequence_logprob(text));
        }
    }

    SUBCASE("editing appends a unit-norm entry and leaves weights untouched") {
        std::vector<double> before = model.raw_parameters();
        EditOutcome out = serac_edit(model, req, cfg, embed);
        CHECK(model.raw_parameters() == before);
        REQUIRE(model.memory().size() == 1);
        CHECK(model.memory().entries()[0].case_id == pair.case_id);
        CHECK(model.memory().entries()[0].embedding.norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(out.memory_entries.size() == 1);
        CHECK(out.touched_sites.empty());

        // re-editing the same case replaces, not duplicates
        serac_edit(model, req, cfg, embed);
        CHECK(model.memory().size() == 1);
    }

    SUBCASE("exact match routes through the counterfactual and wins") {
        serac_edit(model, req, cfg, embed);
        const std::string stored = pair.sentence_less;
        double in_scope = serac_score(model, model.memory(), stored, cfg, embed);
        CHECK(in_scope != model.sequence_logprob(stored));
        CHECK(in_scope >= std::log(cfg.counterfactual_alpha));
        double more_score = serac_score(model, model.memory(), pair.sentence_more, cfg, embed);
        CHECK(in_scope > more_score);
    }

    SUBCASE("out-of-scope text falls back to the base model") {
        serac_edit(model, req, cfg, embed);
        const std::string unrelated = "Completely different topic entirely.";
        CHECK(serac_score(model, model.memory(), unrelated, cfg, embed) ==
              model.sequence_logprob(unrelated));
        CHECK(serac_next_token(model, model.memory(), unrelated, cfg, embed) ==
              model.next_token_argmax(unrelated));
    }

    SUBCASE("prefix prompts continue the stored sentence") {
        serac_edit(model, req, cfg, embed);
        int next = serac_next_token(model, model.memory(), req.prompt, cfg, embed);
        std::vector<int> target_ids = model.tokenizer().encode(req.target);
        CHECK(next == target_ids.front());
    }
}

TEST_CASE("ike composition and scoring") {
    TinyTransformer model = make_model(29);
    std::vector<SentencePair> train = align_pairs_to_model(model, make_synthetic_pairs(9, 31));
    std::vector<KnowledgeProbe> probes = make_synthetic_probes(4, 1);
    EmbeddingFn embed = make_ngram_embedding();
    DemoStore store = DemoStore::build(model, train, probes, embed);
    SentencePair pair = sample_pair(model);
    EditRequest req = request_for(model, pair);

    SUBCASE("composed context has exactly k labeled demonstration blocks") {
        for (int k : {1, 3, 8}) {
            std::string context = ike_compose(store, req, k, embed);
            int blocks = 0;
            for (const char* label : {"[copy]", "[update]", "[retain]"}) {
                size_t pos = 0;
                while ((pos = context.find(label, pos)) != std::string::npos) {
                    ++blocks;
                    pos += std::string(label).size();
                }
            }
            CHECK(blocks == k);
            // ends with the new edit statement
            CHECK(context.find("New fact: " + req.sentence() + "\n") != std::string::npos);
        }
    }

    SUBCASE("k = 0 with empty statement scores like the base model") {
        EditRequest empty;
        empty.case_id = "empty";
        empty.prompt = "";
        empty.target = "";
        std::string context = ike_compose(store, empty, 0, embed);
        CHECK(context.empty());
        CHECK(ike_score(model, context, "Some text.") == model.sequence_logprob("Some text."));
        CHECK(ike_next_token(model, context, "Some") == model.next_token_argmax("Some"));
    }

    SUBCASE("weights untouched by composition and scoring") {
        std::vector<double> before = model.raw_parameters();
        std::string context = ike_compose(store, req, 4, embed);
        ike_score(model, context, pair.sentence_less);
        CHECK(model.raw_parameters() == before);
    }
}

TEST_CASE("apply_edit flags non-improving edits instead of failing silently") {
    TinyTransformer model = make_model(37);
    SentencePair pair = sample_pair(model);
    EditRequest req = request_for(model, pair);
    EditorContext ctx = make_ctx(model, {pair.sentence_less, pair.sentence_more});

    SUBCASE("FT with zero steps is flagged") {
        EditorConfig cfg = ft_config();
        cfg.max_steps = 0;
        EditOutcome out = apply_edit(model, pair, req, cfg, ctx);
        CHECK(out.flagged);
    }

    SUBCASE("every editor either improves the margin or is flagged") {
        std::vector<SentencePair> train = align_pairs_to_model(model, make_synthetic_pairs(6, 41));
        std::vector<KnowledgeProbe> probes = make_synthetic_probes(3, 2);
        DemoStore store = DemoStore::build(model, train, probes, ctx.embed);
        ctx.demo_store = &store;

        ModelSnapshot baseline = model.capture_snapshot();
        for (EditorKind kind : {EditorKind::FT, EditorKind::FTL, EditorKind::ROME,
                                EditorKind::MEMIT, EditorKind::SERAC, EditorKind::IKE}) {
            model.restore_snapshot(baseline);
            EditorConfig cfg = ft_config();
            cfg.kind = kind;
            cfg.layer = 0;
            cfg.layer_range = {0, 1};
            cfg.value_steps = 15;
            std::unique_ptr<Scorer> before = make_scorer_for(model, cfg, ctx, nullptr);
            double margin_before =
                before->score(pair.sentence_less) - before->score(pair.sentence_more);
            EditOutcome out = apply_edit(model, pair, req, cfg, ctx);
            std::unique_ptr<Scorer> after = make_scorer_for(model, cfg, ctx, &out);
            double margin_after =
                after->score(pair.sentence_less) - after->score(pair.sentence_more);
            bool improved = margin_after > margin_before;
            CHECK((improved || out.flagged));
            if (editor_is_internal(kind)) {
                CHECK_FALSE(out.touched_sites.empty());
                CHECK(out.memory_entries.empty());
            } else {
                CHECK(out.touched_sites.empty());
                CHECK_FALSE(out.memory_entries.empty());
            }
        }
    }
}

TEST_CASE("editor config validation") {
    TinyTransformer model = make_model();
    EditorConfig cfg;
    cfg.kind = EditorKind::ROME;
    cfg.layer = 99;
    CHECK_THROWS_AS(cfg.validate(model), Error);
    cfg.layer = 0;
    CHECK_NOTHROW(cfg.validate(model));
    cfg.kind = EditorKind::MEMIT;
    cfg.layer_range = {1, 0};
    CHECK_THROWS_AS(cfg.validate(model), Error);
    cfg.kind = EditorKind::SERAC;
    cfg.scope_threshold = 1.5;
    CHECK_THROWS_AS(cfg.validate(model), Error);
}
