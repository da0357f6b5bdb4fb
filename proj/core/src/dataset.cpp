#include "debiaslab/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "debiaslab/error.hpp"

namespace debiaslab {

using nlohmann::json;

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c == '_'; }

bool equals_at(const std::string& text, size_t pos, const std::string& needle,
               bool case_sensitive) {
    if (pos + needle.size() > text.size()) return false;
    for (size_t i = 0; i < needle.size(); ++i) {
        char a = text[pos + i];
        char b = needle[i];
        if (!case_sensitive) {
            a = static_cast<char>(std::tolower(static_cast<unsigned char>(a)));
            b = static_cast<char>(std::tolower(static_cast<unsigned char>(b)));
        }
        if (a != b) return false;
    }
    return true;
}

double population_std(const std::vector<double>& xs, double mean) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

} // namespace

const char* bias_type_name(BiasType type) {
    switch (type) {
        case BiasType::race: return "Race";
        case BiasType::gender: return "Gender";
        case BiasType::religion: return "Religion";
        case BiasType::profession: return "Profession";
    }
    return "Race";
}

BiasType bias_type_from_string(const std::string& name) {
    std::string lower;
    for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower == "race") return BiasType::race;
    if (lower == "gender") return BiasType::gender;
    if (lower == "religion") return BiasType::religion;
    if (lower == "profession") return BiasType::profession;
    throw Error(ErrorCode::format_error, "unknown bias_type '" + name + "'");
}

const char* split_name(DatasetSplit::Name name) {
    switch (name) {
        case DatasetSplit::Name::train: return "train";
        case DatasetSplit::Name::val: return "val";
        case DatasetSplit::Name::edit: return "edit";
    }
    return "edit";
}

size_t find_subject(const std::string& text, const std::string& subject,
                    const SubjectMatchConfig& cfg) {
    if (subject.empty()) return std::string::npos;
    for (size_t pos = 0; pos + subject.size() <= text.size(); ++pos) {
        if (!equals_at(text, pos, subject, cfg.case_sensitive)) continue;
        bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(text[pos - 1]));
        size_t end = pos + subject.size();
        bool right_ok = end == text.size() || !is_word_char(static_cast<unsigned char>(text[end]));
        if (left_ok && right_ok) return pos;
    }
    return std::string::npos;
}

std::pair<std::string, std::string> split_prompt_target(const std::string& sentence,
                                                        const std::string& subject,
                                                        const SubjectMatchConfig& cfg) {
    size_t pos = find_subject(sentence, subject, cfg);
    if (pos == std::string::npos) {
        throw Error(ErrorCode::subject_not_found,
                    "subject '" + subject + "' not found in: " + sentence);
    }
    size_t split = pos + subject.size();
    return {sentence.substr(0, split), sentence.substr(split)};
}

EditRequest make_edit_request(const SentencePair& pair, const ModelHandle& model,
                              const SubjectMatchConfig& cfg) {
    auto [prompt, target] = split_prompt_target(pair.sentence_less, pair.subject, cfg);
    if (target.empty()) {
        throw Error(ErrorCode::invalid_input,
                    "pair " + pair.case_id + " has an empty target after the split");
    }
    std::vector<int> target_ids = model.tokenizer().encode(target);
    if (target_ids.empty()) {
        throw Error(ErrorCode::invalid_input,
                    "pair " + pair.case_id + " target tokenizes to zero tokens");
    }
    size_t subj_begin = find_subject(prompt, pair.subject, cfg);
    // Tokens overlapping the subject's byte range.
    std::vector<TokenSpan> spans = model.tokenizer().encode_with_offsets(prompt);
    int tok_begin = -1, tok_end = -1;
    for (size_t i = 0; i < spans.size(); ++i) {
        if (spans[i].byte_end > subj_begin && spans[i].byte_begin < subj_begin + pair.subject.size()) {
            if (tok_begin < 0) tok_begin = static_cast<int>(i);
            tok_end = static_cast<int>(i) + 1;
        }
    }
    EditRequest req;
    req.case_id = pair.case_id;
    req.prompt = prompt;
    req.target = target;
    req.subject_span = {tok_begin, tok_end};
    return req;
}

std::vector<SentencePair> filter_biased(const ModelHandle& model,
                                        const std::vector<SentencePair>& pairs,
                                        bool length_normalized) {
    std::vector<SentencePair> kept;
    for (const SentencePair& pair : pairs) {
        double more = model.sequence_logprob(pair.sentence_more);
        double less = model.sequence_logprob(pair.sentence_less);
        if (length_normalized) {
            more /= static_cast<double>(model.tokenizer().count(pair.sentence_more));
            less /= static_cast<double>(model.tokenizer().count(pair.sentence_less));
        }
        if (more > less) kept.push_back(pair);
    }
    return kept;
}

std::vector<size_t> shuffled_indices(size_t n, uint64_t seed) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (size_t i = n; i > 1; --i) {
        size_t j = rng() % i;
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

Splits make_splits(const std::vector<SentencePair>& pairs, const SplitRatios& ratios,
                   uint64_t seed, const std::string& filtering_model_id) {
    double r[3] = {ratios.train, ratios.val, ratios.edit};
    double sum = r[0] + r[1] + r[2];
    if (r[0] <= 0 || r[1] <= 0 || r[2] <= 0 || std::abs(sum - 1.0) > 1e-9) {
        throw Error(ErrorCode::invalid_input, "split ratios must be positive and sum to 1");
    }
    const size_t n = pairs.size();
    // Largest-remainder apportionment keeps each size within one of the
    // exact ratio.
    size_t base[3];
    double frac[3];
    size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double ideal = r[i] * static_cast<double>(n);
        base[i] = static_cast<size_t>(std::floor(ideal + 1e-12));
        frac[i] = ideal - static_cast<double>(base[i]);
        assigned += base[i];
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i) {
            if (frac[i] > frac[best]) best = i;
        }
        ++base[best];
        frac[best] = -1.0;
        ++assigned;
    }

    std::vector<size_t> order = shuffled_indices(n, seed);
    Splits out;
    out.train.name = DatasetSplit::Name::train;
    out.val.name = DatasetSplit::Name::val;
    out.edit.name = DatasetSplit::Name::edit;
    out.train.filtering_model_id = filtering_model_id;
    out.val.filtering_model_id = filtering_model_id;
    out.edit.filtering_model_id = filtering_model_id;
    size_t cursor = 0;
    for (size_t i = 0; i < base[0]; ++i) out.train.pairs.push_back(pairs[order[cursor++]]);
    for (size_t i = 0; i < base[1]; ++i) out.val.pairs.push_back(pairs[order[cursor++]]);
    for (size_t i = 0; i < base[2]; ++i) out.edit.pairs.push_back(pairs[order[cursor++]]);
    return out;
}

std::vector<StatsRow> compute_stats(const std::vector<SentencePair>& pairs,
                                    const ModelHandle& model, const SubjectMatchConfig& cfg) {
    if (pairs.empty()) return {};
    struct Acc {
        std::vector<double> prompt_tokens, target_tokens;
    };
    Acc all;
    Acc per_type[kNumBiasTypes];
    for (const SentencePair& pair : pairs) {
        auto [prompt, target] = split_prompt_target(pair.sentence_less, pair.subject, cfg);
        double pt = static_cast<double>(model.tokenizer().count(prompt));
        double tt = static_cast<double>(model.tokenizer().count(target));
        all.prompt_tokens.push_back(pt);
        all.target_tokens.push_back(tt);
        Acc& t = per_type[static_cast<int>(pair.bias_type)];
        t.prompt_tokens.push_back(pt);
        t.target_tokens.push_back(tt);
    }
    auto make_row = [](const std::string& name, const Acc& acc) {
        StatsRow row;
        row.bias_type = name;
        row.count = acc.prompt_tokens.size();
        if (!acc.prompt_tokens.empty()) {
            double psum = 0.0, tsum = 0.0;
            for (double v : acc.prompt_tokens) psum += v;
            for (double v : acc.target_tokens) tsum += v;
            row.prompt_mean = psum / static_cast<double>(acc.prompt_tokens.size());
            row.target_mean = tsum / static_cast<double>(acc.target_tokens.size());
            row.prompt_std = population_std(acc.prompt_tokens, row.prompt_mean);
            row.target_std = population_std(acc.target_tokens, row.target_mean);
        }
        return row;
    };
    std::vector<StatsRow> rows;
    rows.push_back(make_row("All", all));
    for (int i = 0; i < kNumBiasTypes; ++i) {
        rows.push_back(make_row(bias_type_name(static_cast<BiasType>(i)), per_type[i]));
    }
    return rows;
}

namespace {

SentencePair pair_from_json(const json& rec, size_t index) {
    auto context = [&](const std::string& field) {
        return "record " + std::to_string(index) + " field '" + field + "'";
    };
    SentencePair pair;
    try {
        pair.case_id = rec.at("case_id").get<std::string>();
        pair.bias_type = bias_type_from_string(rec.at("bias_type").get<std::string>());
        pair.subject = rec.at("subject").get<std::string>();
        pair.sentence_more = rec.at("sentence_more").get<std::string>();
        pair.sentence_less = rec.at("sentence_less").get<std::string>();
        pair.paraphrases_more = rec.at("paraphrases_more").get<std::vector<std::string>>();
        pair.paraphrases_less = rec.at("paraphrases_less").get<std::vector<std::string>>();
    } catch (const json::out_of_range& e) {
        throw Error(ErrorCode::format_error, context("?") + ": " + e.what());
    } catch (const json::type_error& e) {
        throw Error(ErrorCode::format_error, context("?") + ": " + e.what());
    }
    return pair;
}

json pair_to_json(const SentencePair& pair) {
    return json{{"case_id", pair.case_id},
                {"bias_type", bias_type_name(pair.bias_type)},
                {"subject", pair.subject},
                {"sentence_more", pair.sentence_more},
                {"sentence_less", pair.sentence_less},
                {"paraphrases_more", pair.paraphrases_more},
                {"paraphrases_less", pair.paraphrases_less}};
}

} // namespace

std::vector<SentencePair> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::io_error, "cannot open dataset: " + path);
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::format_error, path + ": " + e.what());
    }
    if (!doc.is_array()) {
        throw Error(ErrorCode::format_error, path + ": expected a JSON array of records");
    }
    std::vector<SentencePair> pairs;
    pairs.reserve(doc.size());
    for (size_t i = 0; i < doc.size(); ++i) {
        pairs.push_back(pair_from_json(doc[i], i));
    }
    return pairs;
}

void save_dataset(const std::vector<SentencePair>& pairs, const std::string& path) {
    json doc = json::array();
    for (const SentencePair& pair : pairs) doc.push_back(pair_to_json(pair));
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::io_error, "cannot write dataset: " + path);
    }
    out << doc.dump(2) << "\n";
}

std::vector<Violation> validate_dataset(const std::vector<SentencePair>& pairs,
                                        const SubjectMatchConfig& cfg) {
    std::vector<Violation> violations;
    auto flag = [&](const SentencePair& p, const std::string& field, const std::string& msg) {
        violations.push_back(Violation{p.case_id, field, msg});
    };
    for (const SentencePair& p : pairs) {
        if (p.case_id.empty()) flag(p, "case_id", "empty case_id");
        if (p.subject.empty()) flag(p, "subject", "empty subject");
        if (find_subject(p.sentence_more, p.subject, cfg) == std::string::npos) {
            flag(p, "sentence_more", "subject does not occur as a word");
        }
        if (find_subject(p.sentence_less, p.subject, cfg) == std::string::npos) {
            flag(p, "sentence_less", "subject does not occur as a word");
        }
        auto check_paras = [&](const std::vector<std::string>& paras, const std::string& field) {
            if (paras.size() != 0 && paras.size() != 3) {
                flag(p, field, "paraphrase count must be 0 or 3, got " +
                                   std::to_string(paras.size()));
            }
            for (size_t i = 0; i < paras.size(); ++i) {
                if (paras[i].find(p.subject) == std::string::npos) {
                    flag(p, field + "[" + std::to_string(i) + "]",
                         "paraphrase does not contain the subject");
                }
            }
        };
        check_paras(p.paraphrases_more, "paraphrases_more");
        check_paras(p.paraphrases_less, "paraphrases_less");
    }
    return violations;
}

std::vector<KnowledgeProbe> load_probes(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::io_error, "cannot open probe file: " + path);
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::format_error, path + ": " + e.what());
    }
    if (!doc.is_array()) {
        throw Error(ErrorCode::format_error, path + ": expected a JSON array of probes");
    }
    std::vector<KnowledgeProbe> probes;
    for (size_t i = 0; i < doc.size(); ++i) {
        try {
            probes.push_back(KnowledgeProbe{doc[i].at("probe_id").get<std::string>(),
                                            doc[i].at("prompt").get<std::string>()});
        } catch (const json::exception& e) {
            throw Error(ErrorCode::format_error,
                        path + ": probe " + std::to_string(i) + ": " + e.what());
        }
    }
    return probes;
}

void save_probes(const std::vector<KnowledgeProbe>& probes, const std::string& path) {
    json doc = json::array();
    for (const KnowledgeProbe& p : probes) {
        doc.push_back(json{{"probe_id", p.probe_id}, {"prompt", p.prompt}});
    }
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::io_error, "cannot write probe file: " + path);
    }
    out << doc.dump(2) << "\n";
}

std::vector<KnowledgeProbe> sample_probes(const std::vector<KnowledgeProbe>& probes,
                                          size_t max_probes, uint64_t seed) {
    if (probes.size() <= max_probes) return probes;
    std::vector<size_t> order = shuffled_indices(probes.size(), seed);
    std::vector<KnowledgeProbe> out;
    out.reserve(max_probes);
    for (size_t i = 0; i < max_probes; ++i) out.push_back(probes[order[i]]);
    return out;
}

} // namespace debiaslab
