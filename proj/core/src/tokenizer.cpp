#include "debiaslab/tokenizer.hpp"

#include "debiaslab/error.hpp"

namespace debiaslab {

ByteTokenizer::ByteTokenizer(int vocab_size) : vocab_size_(vocab_size) {
    if (vocab_size < 2) {
        throw Error(ErrorCode::invalid_input, "tokenizer vocab_size must be >= 2");
    }
}

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) {
        int id = static_cast<int>(c);
        if (id >= bos_id()) {
            throw Error(ErrorCode::invalid_input,
                        "byte value " + std::to_string(id) + " outside tokenizer range (vocab " +
                            std::to_string(vocab_size_) + ")");
        }
        ids.push_back(id);
    }
    return ids;
}

std::vector<TokenSpan> ByteTokenizer::encode_with_offsets(std::string_view text) const {
    std::vector<TokenSpan> spans;
    spans.reserve(text.size());
    std::vector<int> ids = encode(text);
    for (size_t i = 0; i < ids.size(); ++i) {
        spans.push_back(TokenSpan{ids[i], i, i + 1});
    }
    return spans;
}

std::string ByteTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= bos_id()) {
            throw Error(ErrorCode::invalid_input,
                        "token id " + std::to_string(id) + " not decodable");
        }
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

} // namespace debiaslab
