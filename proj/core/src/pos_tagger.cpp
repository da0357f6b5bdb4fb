#include "debiaslab/pos_tagger.hpp"

#include <cctype>
#include <unordered_map>
#include <unordered_set>

#include "debiaslab/error.hpp"

namespace debiaslab {

const char* pos_tag_name(PosTag tag) {
    switch (tag) {
        case PosTag::ADJ: return "ADJ";
        case PosTag::ADP: return "ADP";
        case PosTag::ADV: return "ADV";
        case PosTag::AUX: return "AUX";
        case PosTag::CCONJ: return "CCONJ";
        case PosTag::DET: return "DET";
        case PosTag::NOUN: return "NOUN";
        case PosTag::NUM: return "NUM";
        case PosTag::PART: return "PART";
        case PosTag::PRON: return "PRON";
        case PosTag::PROPN: return "PROPN";
        case PosTag::PUNCT: return "PUNCT";
        case PosTag::VERB: return "VERB";
    }
    return "NOUN";
}

PosTag pos_tag_from_string(const std::string& name) {
    static const std::unordered_map<std::string, PosTag> table = {
        {"ADJ", PosTag::ADJ},     {"ADP", PosTag::ADP},   {"ADV", PosTag::ADV},
        {"AUX", PosTag::AUX},     {"CCONJ", PosTag::CCONJ}, {"DET", PosTag::DET},
        {"NOUN", PosTag::NOUN},   {"NUM", PosTag::NUM},   {"PART", PosTag::PART},
        {"PRON", PosTag::PRON},   {"PROPN", PosTag::PROPN}, {"PUNCT", PosTag::PUNCT},
        {"VERB", PosTag::VERB},
    };
    auto it = table.find(name);
    if (it == table.end()) {
        throw Error(ErrorCode::invalid_input, "unknown POS tag '" + name + "'");
    }
    return it->second;
}

namespace {

const std::unordered_set<std::string>& det_words() {
    static const std::unordered_set<std::string> s = {
        "the", "a", "an", "this", "that", "these", "those", "every",
        "each", "some", "any",  "no",   "all",  "both",  "another"};
    return s;
}

const std::unordered_set<std::string>& aux_words() {
    static const std::unordered_set<std::string> s = {
        "is",   "are",  "was",   "were",  "be",    "been",  "being", "am",
        "has",  "have", "had",   "do",    "does",  "did",   "will",  "would",
        "can",  "could", "shall", "should", "may",  "might", "must",  "seems",
        "seemed", "seem"};
    return s;
}

const std::unordered_set<std::string>& pron_words() {
    static const std::unordered_set<std::string> s = {
        "i",    "you",   "he",    "she",   "it",    "we",    "they",   "me",
        "him",  "her",   "us",    "them",  "my",    "mine",  "your",   "yours",
        "his",  "hers",  "its",   "our",   "ours",  "their", "theirs", "who",
        "whom", "which", "what",  "himself", "herself", "itself", "themselves",
        "someone", "everyone", "anybody", "nobody"};
    return s;
}

const std::unordered_set<std::string>& adp_words() {
    static const std::unordered_set<std::string> s = {
        "of",   "in",    "on",      "at",      "by",      "with",    "for",
        "from", "to",    "into",    "onto",    "over",    "under",   "about",
        "after", "before", "between", "through", "during", "against", "among",
        "without", "within", "near", "across",  "behind",  "beyond",  "toward",
        "towards", "upon", "off",    "around"};
    return s;
}

const std::unordered_set<std::string>& cconj_words() {
    static const std::unordered_set<std::string> s = {"and", "or", "but", "nor", "so", "yet"};
    return s;
}

const std::unordered_set<std::string>& part_words() {
    static const std::unordered_set<std::string> s = {"not", "n't", "'s"};
    return s;
}

const std::unordered_set<std::string>& adj_words() {
    // Adjectives that appear in the stereotype corpus and its tests.
    static const std::unordered_set<std::string> s = {
        "kind",    "mean",    "lazy",    "smart",   "rich",    "poor",     "good",
        "bad",     "strong",  "weak",    "brave",   "rude",    "calm",     "wise",
        "dull",    "neat",    "messy",   "loud",    "quiet",   "greedy",   "honest",
        "cruel",   "gentle",  "clever",  "stupid",  "angry",   "happy",    "violent",
        "peaceful", "dirty",  "clean",   "cold",    "warm",    "boring",   "creative",
        "careless", "careful", "patient", "hostile", "friendly", "talented", "skilled",
        "nervous", "helpful", "selfish", "generous", "arrogant", "humble",  "strict",
        "fair",    "unfair",  "new",     "old",     "young",   "big",      "small",
        "tall",    "short"};
    return s;
}

const std::unordered_set<std::string>& adv_words() {
    static const std::unordered_set<std::string> s = {"very", "quite", "always", "never",
                                                      "often", "too",  "rather", "so"};
    return s;
}

bool all_digits(const std::string& w) {
    if (w.empty()) return false;
    for (char c : w) {
        if (std::isdigit(static_cast<unsigned char>(c)) == 0) return false;
    }
    return true;
}

bool ends_with(const std::string& w, const char* suffix) {
    std::string s(suffix);
    return w.size() >= s.size() && w.compare(w.size() - s.size(), s.size(), s) == 0;
}

std::string lowercase(const std::string& w) {
    std::string out;
    out.reserve(w.size());
    for (char c : w) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
}

PosTag classify_word(const std::string& word, bool sentence_initial) {
    std::string lower = lowercase(word);
    if (det_words().count(lower)) return PosTag::DET;
    if (aux_words().count(lower)) return PosTag::AUX;
    if (pron_words().count(lower)) return PosTag::PRON;
    if (adp_words().count(lower)) return PosTag::ADP;
    if (cconj_words().count(lower)) return PosTag::CCONJ;
    if (part_words().count(lower)) return PosTag::PART;
    if (adj_words().count(lower)) return PosTag::ADJ;
    if (adv_words().count(lower)) return PosTag::ADV;
    if (all_digits(lower)) return PosTag::NUM;
    if (ends_with(lower, "ly")) return PosTag::ADV;
    if (ends_with(lower, "ing") || ends_with(lower, "ed")) return PosTag::VERB;
    if (ends_with(lower, "ous") || ends_with(lower, "ful") || ends_with(lower, "ish") ||
        ends_with(lower, "ive") || ends_with(lower, "able") || ends_with(lower, "al")) {
        return PosTag::ADJ;
    }
    if (!sentence_initial && std::isupper(static_cast<unsigned char>(word[0])) != 0) {
        return PosTag::PROPN;
    }
    return PosTag::NOUN;
}

class RuleBasedTagger final : public PosTagger {
  public:
    std::vector<TaggedToken> tag(const std::string& sentence) const override {
        std::vector<TaggedToken> out;
        size_t i = 0;
        bool seen_word = false;
        while (i < sentence.size()) {
            unsigned char c = static_cast<unsigned char>(sentence[i]);
            if (std::isspace(c) != 0) {
                ++i;
                continue;
            }
            if (std::isalnum(c) != 0 || c == '\'') {
                size_t begin = i;
                while (i < sentence.size()) {
                    unsigned char d = static_cast<unsigned char>(sentence[i]);
                    if (std::isalnum(d) != 0 || d == '\'' || d == '-') {
                        ++i;
                    } else {
                        break;
                    }
                }
                std::string word = sentence.substr(begin, i - begin);
                out.push_back(
                    TaggedToken{word, classify_word(word, !seen_word), begin, i});
                seen_word = true;
            } else {
                out.push_back(TaggedToken{std::string(1, sentence[i]), PosTag::PUNCT, i, i + 1});
                ++i;
            }
        }
        return out;
    }
};

} // namespace

std::unique_ptr<PosTagger> make_rule_based_tagger() { return std::make_unique<RuleBasedTagger>(); }

} // namespace debiaslab
