#pragma once

#include <memory>
#include <string>
#include <vector>

namespace debiaslab {

// Universal POS inventory (the subset this corpus needs).
enum class PosTag {
    ADJ,
    ADP,
    ADV,
    AUX,
    CCONJ,
    DET,
    NOUN,
    NUM,
    PART,
    PRON,
    PROPN,
    PUNCT,
    VERB,
};

const char* pos_tag_name(PosTag tag);
PosTag pos_tag_from_string(const std::string& name);

struct TaggedToken {
    std::string token;
    PosTag tag;
    size_t byte_begin = 0; // offset into the tagged sentence
    size_t byte_end = 0;
};

// Tagger plugin interface: sentence -> (token, tag) list. Implementations
// throw tagging-error carrying the sentence on failure.
class PosTagger {
  public:
    virtual ~PosTagger() = default;
    virtual std::vector<TaggedToken> tag(const std::string& sentence) const = 0;
};

// Deterministic lexicon-and-suffix tagger backing the test corpus. Words and
// punctuation are separate tokens; unknown words default to NOUN.
std::unique_ptr<PosTagger> make_rule_based_tagger();

} // namespace debiaslab
