#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "debiaslab/dataset.hpp"
#include "debiaslab/error.hpp"
#include "debiaslab/paraphrase.hpp"
#include "debiaslab/synthetic.hpp"
#include "debiaslab/tiny_transformer.hpp"

using namespace debiaslab;

namespace {

TinyTransformer make_model(uint64_t seed = 11, InitScheme init = InitScheme::random) {
    TinyTransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 4;
    cfg.vocab_size = 128;
    cfg.max_seq_len = 256;
    cfg.seed = seed;
    cfg.init_scheme = init;
    return TinyTransformer(cfg);
}

SentencePair basic_pair(const std::string& case_id = "p1") {
    SentencePair pair;
    pair.case_id = case_id;
    pair.bias_type = BiasType::profession;
    pair.subject = "nurse";
    pair.sentence_more = "The nurse was mean.";
    pair.sentence_less = "The nurse was kind.";
    pair.paraphrases_more = {"Honestly, the nurse was quite mean.",
                             "People thought the nurse was mean.",
                             "In most stories the nurse was mean."};
    pair.paraphrases_less = {"Honestly, the nurse was quite kind.",
                             "People thought the nurse was kind.",
                             "In most stories the nurse was kind."};
    return pair;
}

class MockClient final : public TextGenClient {
  public:
    explicit MockClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const std::string& prompt) override {
        prompts.push_back(prompt);
        std::string reply = replies_[std::min(calls, replies_.size() - 1)];
        ++calls;
        return reply;
    }
    std::vector<std::string> prompts;
    size_t calls = 0;

  private:
    std::vector<std::string> replies_;
};

} // namespace

TEST_CASE("split_prompt_target follows the first-subject rule") {
    auto [prompt, target] = split_prompt_target("The guitarist was very talented", "guitarist");
    CHECK(prompt == "The guitarist");
    CHECK(target == " was very talented");
    CHECK(prompt + target == "The guitarist was very talented");
}

TEST_CASE("split_prompt_target case sensitivity is configurable") {
    SubjectMatchConfig sensitive;
    auto [p1, t1] = split_prompt_target("Nurse and nurse met", "nurse", sensitive);
    CHECK(p1 == "Nurse and nurse");
    CHECK(t1 == " met");

    SubjectMatchConfig insensitive;
    insensitive.case_sensitive = false;
    auto [p2, t2] = split_prompt_target("Nurse and nurse met", "nurse", insensitive);
    CHECK(p2 == "Nurse");
    CHECK(t2 == " and nurse met");
}

TEST_CASE("sentence ending at the subject yields an empty target, rejected downstream") {
    auto [prompt, target] = split_prompt_target("I saw the doctor", "doctor");
    CHECK(prompt == "I saw the doctor");
    CHECK(target.empty());

    TinyTransformer model = make_model();
    SentencePair pair = basic_pair();
    pair.subject = "doctor";
    pair.sentence_less = "I saw the doctor";
    pair.sentence_more = "I met the doctor";
    pair.paraphrases_more.clear();
    pair.paraphrases_less.clear();
    CHECK_THROWS_AS(make_edit_request(pair, model), Error);
}

TEST_CASE("split_prompt_target requires a word-boundary match") {
    CHECK_THROWS_AS(split_prompt_target("The nursery was loud", "nurse"), Error);
    auto [prompt, target] = split_prompt_target("A nurse, tired", "nurse");
    CHECK(prompt == "A nurse");
    CHECK(target == ", tired");
}

TEST_CASE("make_edit_request records the subject token span") {
    TinyTransformer model = make_model();
    SentencePair pair = basic_pair();
    EditRequest req = make_edit_request(pair, model);
    CHECK(req.prompt == "The nurse");
    CHECK(req.target == " was kind.");
    CHECK(req.prompt + req.target == pair.sentence_less);
    // byte tokens: "The nurse" -> subject at bytes [4, 9)
    CHECK(req.subject_span.first == 4);
    CHECK(req.subject_span.second == 9);
}

TEST_CASE("filter_biased keeps strictly-preferred-more pairs only") {
    TinyTransformer model = make_model(21);

    SUBCASE("equal likelihoods are excluded") {
        SentencePair same = basic_pair("same");
        same.sentence_more = same.sentence_less; // identical scores
        CHECK(filter_biased(model, {same}).empty());
    }

    SUBCASE("uniform-output model excludes all equal-length pairs") {
        TinyTransformer uniform = make_model(3, InitScheme::uniform_output);
        std::vector<SentencePair> pairs = make_synthetic_pairs(10, 5);
        // same-template pairs have equal-length sentences only when the two
        // adjectives have equal length; build such a pair explicitly.
        SentencePair pair = basic_pair();
        pair.sentence_more = "The nurse was mean."; // 19 bytes
        pair.sentence_less = "The nurse was kind."; // 19 bytes
        CHECK(filter_biased(uniform, {pair}).empty());
    }

    SUBCASE("matches the independent comparator oracle on 20 synthetic pairs") {
        std::vector<SentencePair> pairs = make_synthetic_pairs(20, 77);
        std::vector<SentencePair> kept = filter_biased(model, pairs);
        std::set<std::string> kept_ids;
        for (const auto& p : kept) kept_ids.insert(p.case_id);
        for (const auto& p : pairs) {
            bool expected =
                model.sequence_logprob(p.sentence_more) > model.sequence_logprob(p.sentence_less);
            CHECK(kept_ids.count(p.case_id) == (expected ? 1u : 0u));
        }
    }
}

TEST_CASE("make_splits partitions deterministically with ratio-faithful sizes") {
    std::vector<SentencePair> pairs = make_synthetic_pairs(10, 3);
    Splits splits = make_splits(pairs, SplitRatios{0.5, 0.1, 0.4}, 7, "model-x");
    CHECK(splits.train.pairs.size() == 5);
    CHECK(splits.val.pairs.size() == 1);
    CHECK(splits.edit.pairs.size() == 4);
    CHECK(splits.train.filtering_model_id == "model-x");

    Splits again = make_splits(pairs, SplitRatios{0.5, 0.1, 0.4}, 7, "model-x");
    for (size_t i = 0; i < splits.train.pairs.size(); ++i) {
        CHECK(splits.train.pairs[i].case_id == again.train.pairs[i].case_id);
    }

    // disjoint and exhaustive by case_id
    std::set<std::string> seen;
    for (const auto* split : {&splits.train, &splits.val, &splits.edit}) {
        for (const auto& p : split->pairs) {
            CHECK(seen.insert(p.case_id).second);
        }
    }
    CHECK(seen.size() == pairs.size());

    CHECK_THROWS_AS(make_splits(pairs, SplitRatios{0.9, 0.2, 0.1}, 7), Error);
    CHECK_THROWS_AS(make_splits(pairs, SplitRatios{1.0, 0.0, 0.0}, 7), Error);
}

TEST_CASE("compute_stats") {
    TinyTransformer model = make_model();

    SUBCASE("single pair has zero std") {
        SentencePair pair = basic_pair();
        auto rows = compute_stats({pair}, model);
        REQUIRE(rows.size() == 1 + 4);
        CHECK(rows[0].bias_type == "All");
        CHECK(rows[0].count == 1);
        // byte tokenizer: prompt "The nurse" = 9 tokens, target " was kind." = 10
        CHECK(rows[0].prompt_mean == doctest::Approx(9.0));
        CHECK(rows[0].prompt_std == doctest::Approx(0.0));
        CHECK(rows[0].target_mean == doctest::Approx(10.0));
        CHECK(rows[0].target_std == doctest::Approx(0.0));
    }

    SUBCASE("empty split yields an empty table") {
        CHECK(compute_stats({}, model).empty());
    }

    SUBCASE("five pairs match a hand-computed spreadsheet") {
        // prompts end at the subject; byte counts computed by hand
        std::vector<SentencePair> pairs;
        struct Fixture {
            const char* subject;
            const char* less;
            const char* more;
            BiasType type;
        };
        const Fixture fixtures[] = {
            {"nurse", "The nurse was kind.", "The nurse was mean.", BiasType::profession},
            {"clerk", "A clerk smiled.", "A clerk scowled.", BiasType::profession},
            {"monks", "Most monks are calm.", "Most monks are loud.", BiasType::religion},
            {"women", "The women sang well.", "The women sang badly.", BiasType::gender},
            {"nomads", "Some nomads settled.", "Some nomads wandered.", BiasType::race},
        };
        int i = 0;
        for (const auto& f : fixtures) {
            SentencePair p;
            p.case_id = "h" + std::to_string(i++);
            p.bias_type = f.type;
            p.subject = f.subject;
            p.sentence_less = f.less;
            p.sentence_more = f.more;
            pairs.push_back(p);
        }
        // prompt lengths: "The nurse"=9, "A clerk"=7, "Most monks"=10,
        // "The women"=9, "Some nomads"=11 -> mean 9.2
        // target lengths: 10, 8, 10, 11, 9 -> mean 9.6
        auto rows = compute_stats(pairs, model);
        CHECK(rows[0].count == 5);
        CHECK(rows[0].prompt_mean == doctest::Approx(9.2));
        CHECK(rows[0].target_mean == doctest::Approx(9.6));
        // population stds: prompts {9,7,10,9,11}: var = (0.04+4.84+0.64+0.04+3.24)/5
        double pvar = (0.04 + 4.84 + 0.64 + 0.04 + 3.24) / 5.0;
        CHECK(rows[0].prompt_std == doctest::Approx(std::sqrt(pvar)).epsilon(1e-12));
        double tvar = (0.16 + 2.56 + 0.16 + 1.96 + 0.36) / 5.0;
        CHECK(rows[0].target_std == doctest::Approx(std::sqrt(tvar)).epsilon(1e-12));
        // per-type counts
        CHECK(rows[1].bias_type == "Race");
        CHECK(rows[1].count == 1);
        CHECK(rows[4].bias_type == "Profession");
        CHECK(rows[4].count == 2);
    }
}

TEST_CASE("dataset file round-trip and validation") {
    std::vector<SentencePair> pairs = {basic_pair("a"), basic_pair("b")};
    pairs[1].bias_type = BiasType::gender;
    pairs[1].subject = "women";
    pairs[1].sentence_more = "The women were loud.";
    pairs[1].sentence_less = "The women were quiet.";
    pairs[1].paraphrases_more.clear();
    pairs[1].paraphrases_less.clear();

    save_dataset(pairs, "dataset_roundtrip.json");
    std::vector<SentencePair> loaded = load_dataset("dataset_roundtrip.json");
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].case_id == "a");
    CHECK(loaded[0].bias_type == BiasType::profession);
    CHECK(loaded[0].sentence_more == pairs[0].sentence_more);
    CHECK(loaded[0].paraphrases_less == pairs[0].paraphrases_less);
    CHECK(loaded[1].paraphrases_more.empty());
    CHECK(validate_dataset(loaded).empty());
}

TEST_CASE("validate_dataset reports violations by case and field") {
    SentencePair bad = basic_pair("bad1");
    bad.paraphrases_less[1] = "This paraphrase lost the word.";
    SentencePair bad2 = basic_pair("bad2");
    bad2.sentence_more = "The doctor was mean."; // subject 'nurse' missing
    auto report = validate_dataset({basic_pair("ok"), bad, bad2});
    REQUIRE(report.size() == 2);
    CHECK(report[0].case_id == "bad1");
    CHECK(report[0].field == "paraphrases_less[1]");
    CHECK(report[1].case_id == "bad2");
    CHECK(report[1].field == "sentence_more");
}

TEST_CASE("load_dataset rejects malformed files with context") {
    {
        std::ofstream out("bad_dataset.json");
        out << "{\"not\": \"an array\"}";
    }
    CHECK_THROWS_AS(load_dataset("bad_dataset.json"), Error);
    {
        std::ofstream out("bad_dataset2.json");
        out << "[{\"case_id\": \"x\"}]";
    }
    try {
        load_dataset("bad_dataset2.json");
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::format_error);
        CHECK(std::string(e.what()).find("record 0") != std::string::npos);
    }
}

TEST_CASE("probe files round-trip and sample deterministically") {
    std::vector<KnowledgeProbe> probes = make_synthetic_probes(20, 5);
    save_probes(probes, "probes_roundtrip.json");
    std::vector<KnowledgeProbe> loaded = load_probes("probes_roundtrip.json");
    REQUIRE(loaded.size() == 20);
    CHECK(loaded[3].probe_id == probes[3].probe_id);
    CHECK(loaded[3].prompt == probes[3].prompt);

    auto sample1 = sample_probes(loaded, 5, 9);
    auto sample2 = sample_probes(loaded, 5, 9);
    REQUIRE(sample1.size() == 5);
    for (size_t i = 0; i < sample1.size(); ++i) {
        CHECK(sample1[i].probe_id == sample2[i].probe_id);
    }
    CHECK(sample_probes(loaded, 100, 9).size() == 20);
}

TEST_CASE("generate_paraphrases") {
    SUBCASE("passes through three subject-keeping lines") {
        MockClient client({"The nurse helped.\nA nurse arrived.\nOur nurse smiled."});
        auto paras = generate_paraphrases(client, "The nurse was kind.", "nurse");
        REQUIRE(paras.size() == 3);
        CHECK(paras[0] == "The nurse helped.");
        CHECK(paras[2] == "Our nurse smiled.");
    }

    SUBCASE("validation error after retries when the subject is dropped") {
        MockClient client({"The helper helped.\nA nurse arrived.\nOur nurse smiled."});
        ParaphraseOptions opts;
        opts.max_retries = 2;
        try {
            generate_paraphrases(client, "The nurse was kind.", "nurse", opts);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::paraphrase_validation);
            CHECK(std::string(e.what()).find("The helper helped.") != std::string::npos);
        }
        CHECK(client.calls == 3); // initial attempt + two retries
    }

    SUBCASE("prompt begins with the exact instruction template") {
        MockClient client({"x nurse\ny nurse\nz nurse"});
        generate_paraphrases(client, "The nurse was kind.", "nurse");
        REQUIRE(client.prompts.size() == 1);
        const std::string expected_instruction =
            "Can you help me paraphrase the following sentence. Please give me three candidate "
            "paraphrases, and put each paraphrase in one line. Make sure to keep the word nurse.";
        CHECK(paraphrase_instruction("nurse") == expected_instruction);
        CHECK(client.prompts[0] ==
              expected_instruction + "\nThe nurse was kind.");
    }

    SUBCASE("empty subject rejected") {
        MockClient client({"a\nb\nc"});
        CHECK_THROWS_AS(generate_paraphrases(client, "text", ""), Error);
    }
}

TEST_CASE("synthetic pairs validate and align to the scoring model") {
    TinyTransformer model = make_model(55);
    std::vector<SentencePair> pairs = make_synthetic_pairs(40, 9);
    CHECK(validate_dataset(pairs).empty());
    std::vector<SentencePair> aligned = align_pairs_to_model(model, pairs);
    CHECK(aligned.size() >= 39); // ties are dropped, near-ties are rare
    std::vector<SentencePair> kept = filter_biased(model, aligned);
    CHECK(kept.size() == aligned.size());
}
