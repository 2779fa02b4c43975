#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qe {

// One shared vocabulary across every language of a run. Word-level tokens:
// whitespace split, lowercased. Ids 0-3 are reserved specials.
class Vocabulary {
public:
    static constexpr int kCls = 0;
    static constexpr int kSep = 1;
    static constexpr int kPad = 2;
    static constexpr int kUnk = 3;

    Vocabulary() = default;

    // Deterministic: tokens with count >= min_frequency, ordered by
    // descending frequency, ties lexicographic.
    static Vocabulary build(const std::vector<std::string>& corpus,
                            std::size_t min_frequency);

    std::size_t size() const { return id_to_token_.size(); }
    std::size_t min_frequency() const { return min_frequency_; }

    int id_of(std::string_view token) const;  // kUnk when absent
    const std::string& token_of(int id) const;
    bool contains(std::string_view token) const;

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    bool operator==(const Vocabulary& other) const {
        return id_to_token_ == other.id_to_token_ &&
               min_frequency_ == other.min_frequency_;
    }

    const std::vector<std::string>& tokens() const { return id_to_token_; }

    // Used by checkpoint embedding; tokens must start with the 4 specials.
    static Vocabulary from_tokens(std::vector<std::string> tokens,
                                  std::size_t min_frequency);

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::size_t min_frequency_ = 1;
};

// Lowercased whitespace tokenization shared by the vocabulary builder and
// the encoders.
std::vector<std::string> tokenize(std::string_view text);

struct EncodedPair {
    std::vector<int> ids;
    std::vector<int> segment_mask;    // 0 source side, 1 target side
    std::vector<int> attention_mask;  // 1 real token, 0 pad
};

// [CLS] source [SEP] target [SEP], padded to max_seq_len. Over-length input
// is trimmed one token at a time from the end of whichever side is currently
// longer (ties trim the target); both [SEP]s survive.
EncodedPair encode_pair(const Vocabulary& vocab, std::string_view source,
                        std::string_view target, std::size_t max_seq_len);

// [CLS] sentence [SEP], tail-truncated, padded; segment mask all zero.
EncodedPair encode_single(const Vocabulary& vocab, std::string_view sentence,
                          std::size_t max_seq_len);

// Content tokens of an encoding, specials and UNK dropped.
std::vector<std::string> decode(const Vocabulary& vocab,
                                const std::vector<int>& ids);

}  // namespace qe
