#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "debiaslab/error.hpp"
#include "debiaslab/synthetic.hpp"
#include "debiaslab/target_selection.hpp"
#include "debiaslab/tiny_transformer.hpp"

using namespace debiaslab;

namespace {

TinyTransformer make_model(uint64_t seed = 11) {
    TinyTransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 4;
    cfg.vocab_size = 128;
    cfg.max_seq_len = 256;
    cfg.seed = seed;
    return TinyTransformer(cfg);
}

SentencePair nurse_pair() {
    SentencePair pair;
    pair.case_id = "nurse";
    pair.bias_type = BiasType::profession;
    pair.subject = "nurse";
    pair.sentence_more = "The nurse was kind.";
    pair.sentence_less = "The nurse was mean.";
    return pair;
}

} // namespace

TEST_CASE("longest_common_prefix basics") {
    std::vector<std::string> a = {"the", "nurse", "was", "kind"};
    std::vector<std::string> b = {"the", "nurse", "was", "mean"};
    CHECK(longest_common_prefix(a, b) == std::vector<std::string>{"the", "nurse", "was"});
    CHECK(longest_common_prefix(a, a) == a);
    CHECK(longest_common_prefix(a, b) == longest_common_prefix(b, a));
    CHECK(longest_common_prefix({}, a).empty());
}

TEST_CASE("longest_common_prefix matches a naive scan on 1000 random pairs") {
    std::mt19937_64 rng(99);
    const std::vector<std::string> vocab = {"a", "b", "c", "d"};
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::string> a, b;
        size_t na = rng() % 8, nb = rng() % 8;
        for (size_t i = 0; i < na; ++i) a.push_back(vocab[rng() % vocab.size()]);
        for (size_t i = 0; i < nb; ++i) b.push_back(vocab[rng() % vocab.size()]);
        std::vector<std::string> got = longest_common_prefix(a, b);
        // naive element-by-element scan
        std::vector<std::string> expected;
        for (size_t i = 0; i < std::min(na, nb); ++i) {
            if (a[i] != b[i]) break;
            expected.push_back(a[i]);
        }
        CHECK(got == expected);
        // prefix property and maximality
        CHECK(got.size() <= std::min(na, nb));
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i] == a[i]);
            CHECK(got[i] == b[i]);
        }
        if (got.size() < std::min(na, nb)) {
            CHECK(a[got.size()] != b[got.size()]);
        }
    }
}

TEST_CASE("rule_based_mask on the nurse pair") {
    TinyTransformer model = make_model();
    auto tagger = make_rule_based_tagger();
    RuleSelectionAudit audit;
    EditRequest req = rule_based_mask(nurse_pair(), PosFilterConfig{}, model, *tagger, {}, &audit);
    CHECK(req.prompt == "The nurse was");
    CHECK(req.target == " mean.");
    CHECK(audit.used_common_prefix);
    CHECK_FALSE(audit.all_true_fallback);
    REQUIRE(req.loss_mask.has_value());
    // bytes of " mean.": space+m e a n -> ADJ (true), '.' -> PUNCT (false)
    REQUIRE(req.loss_mask->size() == 6);
    CHECK((*req.loss_mask)[0]); // leading space attaches to "mean"
    CHECK((*req.loss_mask)[1]);
    CHECK((*req.loss_mask)[4]);
    CHECK_FALSE((*req.loss_mask)[5]);
    CHECK(req.prompt + req.target == nurse_pair().sentence_less);
}

TEST_CASE("rule_based_mask falls back to all-true when everything is excluded") {
    TinyTransformer model = make_model();
    auto tagger = make_rule_based_tagger();
    SentencePair pair;
    pair.case_id = "pron";
    pair.bias_type = BiasType::gender;
    pair.subject = "teacher";
    pair.sentence_more = "They saw the teacher with him."; // target after LCP: " her."
    pair.sentence_less = "They saw the teacher with her.";
    RuleSelectionAudit audit;
    EditRequest req = rule_based_mask(pair, PosFilterConfig{}, model, *tagger, {}, &audit);
    CHECK(req.target == " her.");
    CHECK(audit.all_true_fallback);
    REQUIRE(req.loss_mask.has_value());
    for (bool m : *req.loss_mask) CHECK(m);
}

TEST_CASE("rule_based_mask falls back to the subject split when the common prefix is shorter") {
    TinyTransformer model = make_model();
    auto tagger = make_rule_based_tagger();
    SentencePair pair;
    pair.case_id = "early";
    pair.bias_type = BiasType::race;
    pair.subject = "nomads";
    pair.sentence_more = "Angry nomads came here.";
    pair.sentence_less = "Gentle nomads came here."; // differs at word 0
    RuleSelectionAudit audit;
    EditRequest req = rule_based_mask(pair, PosFilterConfig{}, model, *tagger, {}, &audit);
    CHECK_FALSE(audit.used_common_prefix);
    CHECK(req.prompt == "Gentle nomads");
    CHECK(req.target == " came here.");
}

TEST_CASE("rule_based_mask rejects a degenerate identical pair") {
    TinyTransformer model = make_model();
    auto tagger = make_rule_based_tagger();
    SentencePair pair = nurse_pair();
    pair.sentence_more = pair.sentence_less; // empty target after LCP
    CHECK_THROWS_AS(rule_based_mask(pair, PosFilterConfig{}, model, *tagger, {}, nullptr), Error);
}

TEST_CASE("empty excluded_tags rejected") {
    TinyTransformer model = make_model();
    auto tagger = make_rule_based_tagger();
    PosFilterConfig cfg;
    cfg.excluded_tags.clear();
    CHECK_THROWS_AS(rule_based_mask(nurse_pair(), cfg, model, *tagger, {}, nullptr), Error);
}

TEST_CASE("causal trace with zero noise is a no-op") {
    TinyTransformer model = make_model(31);
    SentencePair pair = nurse_pair();
    EditRequest base = make_edit_request(pair, model);
    CausalTraceConfig cfg;
    cfg.sigma_multiplier = 0.0;
    cfg.num_samples = 4;
    auto [req, trace] = causal_trace_mask(model, base, cfg);
    REQUIRE(trace.reduction.size() == base.target.size());
    for (double r : trace.reduction) CHECK(std::abs(r) <= 1e-10);
    // mask = first k positions by tie-breaking
    REQUIRE(req.loss_mask.has_value());
    int true_count = 0;
    for (size_t i = 0; i < req.loss_mask->size(); ++i) {
        if ((*req.loss_mask)[i]) {
            ++true_count;
            CHECK(i < static_cast<size_t>(cfg.top_k));
        }
    }
    CHECK(true_count == std::min<int>(cfg.top_k, static_cast<int>(base.target.size())));
}

TEST_CASE("short targets select every position") {
    TinyTransformer model = make_model(31);
    SentencePair pair;
    pair.case_id = "short";
    pair.bias_type = BiasType::gender;
    pair.subject = "men";
    pair.sentence_more = "The men ran";
    pair.sentence_less = "The men sat";
    EditRequest base = make_edit_request(pair, model);
    REQUIRE(base.target.size() == 4); // " sat"
    CausalTraceConfig cfg;
    cfg.top_k = 5;
    cfg.num_samples = 2;
    auto [req, trace] = causal_trace_mask(model, base, cfg);
    REQUIRE(req.loss_mask.has_value());
    for (bool m : *req.loss_mask) CHECK(m);
}

TEST_CASE("causal trace reductions match the re-run averaging oracle") {
    TinyTransformer model = make_model(71);
    SentencePair pair = nurse_pair();
    EditRequest base = make_edit_request(pair, model);
    CausalTraceConfig cfg;
    cfg.sigma_multiplier = 3.0;
    cfg.num_samples = 64;
    cfg.noise_seed = 1234;
    cfg.sigma_sample = {pair.sentence_less, pair.sentence_more};
    auto [req, trace] = causal_trace_mask(model, base, cfg);

    // Oracle: regenerate the identical noise stream, rerun each corrupted
    // pass independently, average.
    const std::string sentence = base.prompt + base.target;
    const int n_prompt = static_cast<int>(base.prompt.size());
    const int n_target = static_cast<int>(base.target.size());
    double sigma2 = model.embedding_component_variance(cfg.sigma_sample);
    double applied = cfg.sigma_multiplier * std::sqrt(sigma2);
    CHECK(trace.noise_sigma == doctest::Approx(applied).epsilon(1e-12));

    std::vector<int> subj_positions;
    for (int p = base.subject_span.first; p < base.subject_span.second; ++p) {
        subj_positions.push_back(p);
    }
    std::mt19937_64 rng(cfg.noise_seed);
    std::vector<std::vector<double>> runs;
    for (int s = 0; s < cfg.num_samples; ++s) {
        EmbeddingNoise noise;
        noise.text_positions = subj_positions;
        noise.noise = trace_noise_sample(model.hidden_dim(),
                                         static_cast<int>(subj_positions.size()), applied, rng);
        runs.push_back(model.per_token_probs(sentence, &noise));
    }
    for (int t = 0; t < n_target; ++t) {
        double sum = 0.0;
        for (const auto& run : runs) sum += run[static_cast<size_t>(n_prompt + t)];
        double mean = sum / cfg.num_samples;
        CHECK(trace.corrupted[static_cast<size_t>(t)] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(trace.reduction[static_cast<size_t>(t)] ==
              doctest::Approx(trace.baseline[static_cast<size_t>(t)] - mean).epsilon(1e-12));
    }

    // permutation invariance of the averaging, same noise set
    for (int t = 0; t < n_target; ++t) {
        double sum = 0.0;
        for (auto it = runs.rbegin(); it != runs.rend(); ++it) {
            sum += (*it)[static_cast<size_t>(n_prompt + t)];
        }
        double mean = sum / cfg.num_samples;
        CHECK(std::abs(trace.corrupted[static_cast<size_t>(t)] - mean) <= 1e-10);
    }
}

TEST_CASE("causal trace mask cardinality is min(k, target length)") {
    TinyTransformer model = make_model(73);
    std::vector<SentencePair> pairs = align_pairs_to_model(model, make_synthetic_pairs(12, 3));
    CausalTraceConfig cfg;
    cfg.num_samples = 3;
    for (const SentencePair& pair : pairs) {
        EditRequest base = make_edit_request(pair, model);
        auto [req, trace] = causal_trace_mask(model, base, cfg);
        int true_count = 0;
        for (bool m : *req.loss_mask) {
            if (m) ++true_count;
        }
        CHECK(true_count ==
              std::min<int>(cfg.top_k, static_cast<int>(model.tokenizer().count(base.target))));
        CHECK(trace.baseline.size() == trace.corrupted.size());
        CHECK(trace.baseline.size() == trace.reduction.size());
    }
}

TEST_CASE("invalid subject span rejected") {
    TinyTransformer model = make_model();
    EditRequest req;
    req.case_id = "x";
    req.prompt = "The nurse";
    req.target = " was mean.";
    req.subject_span = {-1, -1};
    CausalTraceConfig cfg;
    CHECK_THROWS_AS(causal_trace_mask(model, req, cfg), Error);
}
