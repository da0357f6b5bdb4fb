#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace debiaslab {

struct TokenSpan {
    int id;
    size_t byte_begin;
    size_t byte_end;
};

// Byte-level tokenizer. Token id == byte value; the highest id is reserved
// for the begin-of-sequence marker. Bytes at or above the BOS id are
// rejected, so a vocab of 257 covers arbitrary UTF-8 and a vocab of 128
// covers ASCII.
class ByteTokenizer {
  public:
    explicit ByteTokenizer(int vocab_size);

    int vocab_size() const { return vocab_size_; }
    int bos_id() const { return vocab_size_ - 1; }

    std::vector<int> encode(std::string_view text) const;
    std::vector<TokenSpan> encode_with_offsets(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;

    // Number of tokens `text` encodes to. Throws like encode().
    size_t count(std::string_view text) const { return encode(text).size(); }

  private:
    int vocab_size_;
};

} // namespace debiaslab
