#include "qe/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "qe/errors.hpp"

namespace qe {

namespace {

const std::vector<std::string> kSpecials = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};

std::string lowercase(std::string_view text) {
    std::string out(text);
    for (char& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() &&
               std::isspace(static_cast<unsigned char>(text[i])))
            ++i;
        std::size_t start = i;
        while (i < text.size() &&
               !std::isspace(static_cast<unsigned char>(text[i])))
            ++i;
        if (i > start) tokens.push_back(lowercase(text.substr(start, i - start)));
    }
    return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus,
                             std::size_t min_frequency) {
    if (corpus.empty()) throw DataError("vocabulary: empty corpus");
    if (min_frequency < 1)
        throw ContractError("vocabulary: min_frequency must be >= 1");

    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& sentence : corpus)
        for (auto& token : tokenize(sentence)) ++counts[token];

    std::vector<std::pair<std::string, std::size_t>> kept;
    kept.reserve(counts.size());
    for (auto& [token, count] : counts)
        if (count >= min_frequency) kept.emplace_back(token, count);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.min_frequency_ = min_frequency;
    vocab.id_to_token_ = kSpecials;
    vocab.id_to_token_.reserve(kSpecials.size() + kept.size());
    for (auto& [token, count] : kept) vocab.id_to_token_.push_back(token);
    for (std::size_t i = 0; i < vocab.id_to_token_.size(); ++i)
        vocab.token_to_id_[vocab.id_to_token_[i]] = static_cast<int>(i);
    return vocab;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens,
                                   std::size_t min_frequency) {
    if (tokens.size() < kSpecials.size() ||
        !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin()))
        throw DataError("vocabulary: token list must begin with the specials");
    Vocabulary vocab;
    vocab.min_frequency_ = min_frequency;
    vocab.id_to_token_ = std::move(tokens);
    for (std::size_t i = 0; i < vocab.id_to_token_.size(); ++i) {
        auto [it, inserted] =
            vocab.token_to_id_.emplace(vocab.id_to_token_[i], static_cast<int>(i));
        if (!inserted)
            throw DataError("vocabulary: duplicate token '" + vocab.id_to_token_[i] +
                            "'");
    }
    return vocab;
}

int Vocabulary::id_of(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
        throw ContractError("vocabulary: id " + std::to_string(id) +
                            " out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
    return token_to_id_.count(std::string(token)) > 0;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json doc;
    doc["version"] = 1;
    doc["min_frequency"] = min_frequency_;
    doc["tokens"] = id_to_token_;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("vocabulary: cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("vocabulary: cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("vocabulary: malformed JSON in " + path.string() + ": " +
                        e.what());
    }
    if (!doc.contains("version") || doc["version"].get<int>() != 1)
        throw DataError("vocabulary: unsupported file version in " +
                        path.string());
    return from_tokens(doc.at("tokens").get<std::vector<std::string>>(),
                       doc.at("min_frequency").get<std::size_t>());
}

namespace {

EncodedPair finalize(std::vector<int> ids, std::vector<int> segments,
                     std::size_t max_seq_len) {
    EncodedPair out;
    out.attention_mask.assign(ids.size(), 1);
    out.ids = std::move(ids);
    out.segment_mask = std::move(segments);
    out.ids.resize(max_seq_len, Vocabulary::kPad);
    out.segment_mask.resize(max_seq_len, 0);
    out.attention_mask.resize(max_seq_len, 0);
    return out;
}

}  // namespace

EncodedPair encode_pair(const Vocabulary& vocab, std::string_view source,
                        std::string_view target, std::size_t max_seq_len) {
    if (max_seq_len < 5)
        throw ContractError("encode_pair: max_seq_len must be >= 5");
    std::vector<std::string> src = tokenize(source);
    std::vector<std::string> tgt = tokenize(target);

    // Longest-first trimming keeps context balanced between the sides.
    while (src.size() + tgt.size() + 3 > max_seq_len) {
        if (src.size() > tgt.size())
            src.pop_back();
        else
            tgt.pop_back();
    }

    std::vector<int> ids;
    std::vector<int> segments;
    ids.reserve(src.size() + tgt.size() + 3);
    ids.push_back(Vocabulary::kCls);
    segments.push_back(0);
    for (const auto& token : src) {
        ids.push_back(vocab.id_of(token));
        segments.push_back(0);
    }
    ids.push_back(Vocabulary::kSep);
    segments.push_back(0);
    for (const auto& token : tgt) {
        ids.push_back(vocab.id_of(token));
        segments.push_back(1);
    }
    ids.push_back(Vocabulary::kSep);
    segments.push_back(1);
    return finalize(std::move(ids), std::move(segments), max_seq_len);
}

EncodedPair encode_single(const Vocabulary& vocab, std::string_view sentence,
                          std::size_t max_seq_len) {
    if (max_seq_len < 5)
        throw ContractError("encode_single: max_seq_len must be >= 5");
    std::vector<std::string> tokens = tokenize(sentence);
    if (tokens.size() + 2 > max_seq_len) tokens.resize(max_seq_len - 2);

    std::vector<int> ids;
    ids.reserve(tokens.size() + 2);
    ids.push_back(Vocabulary::kCls);
    for (const auto& token : tokens) ids.push_back(vocab.id_of(token));
    ids.push_back(Vocabulary::kSep);
    std::vector<int> segments(ids.size(), 0);
    return finalize(std::move(ids), std::move(segments), max_seq_len);
}

std::vector<std::string> decode(const Vocabulary& vocab,
                                const std::vector<int>& ids) {
    std::vector<std::string> tokens;
    for (int id : ids) {
        if (id == Vocabulary::kCls || id == Vocabulary::kSep ||
            id == Vocabulary::kPad || id == Vocabulary::kUnk)
            continue;
        tokens.push_back(vocab.token_of(id));
    }
    return tokens;
}

}  // namespace qe
