#pragma once

#include <cctype>
#include <string>
#include <unordered_map>
#include <vector>

#include "shefu/common.hpp"

namespace shefu {

// Line-oriented vocabulary: line number = token id, id 0 is UNK, id 1 is PAD.
struct Vocabulary {
    static constexpr size_t kUnk = 0;
    static constexpr size_t kPad = 1;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, size_t> index;

    static Vocabulary from_tokens(std::vector<std::string> toks) {
        Vocabulary v;
        v.tokens = std::move(toks);
        for (size_t i = 0; i < v.tokens.size(); ++i) v.index.emplace(v.tokens[i], i);
        return v;
    }

    size_t size() const { return tokens.size(); }

    size_t lookup(const std::string& w) const {
        auto it = index.find(w);
        return it == index.end() ? kUnk : it->second;
    }

    bool contains(const std::string& w) const { return index.count(w) > 0; }

    bool operator==(const Vocabulary& o) const { return tokens == o.tokens; }
};

// Fixed-length token id sequence with slot positions and a validity mask
// (true exactly on non-PAD slots).
struct TokenSequence {
    std::vector<size_t> ids;
    std::vector<size_t> positions;
    std::vector<uint8_t> mask;

    size_t length() const { return ids.size(); }
    bool operator==(const TokenSequence& o) const { return ids == o.ids; }
};

// Lowercase, strip punctuation, split on whitespace, look up with UNK
// fallback, truncate to d_l and PAD-fill.
inline std::vector<std::string> split_words(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char c : text) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc))
            cleaned.push_back(static_cast<char>(std::tolower(uc)));
        else if (c == '<' || c == '>')  // keep reserved-token markers intact
            cleaned.push_back(c);
        else
            cleaned.push_back(' ');
    }
    std::vector<std::string> words;
    size_t i = 0;
    while (i < cleaned.size()) {
        while (i < cleaned.size() && cleaned[i] == ' ') ++i;
        size_t j = i;
        while (j < cleaned.size() && cleaned[j] != ' ') ++j;
        if (j > i) words.push_back(cleaned.substr(i, j - i));
        i = j;
    }
    return words;
}

inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, size_t d_l) {
    if (d_l < 1) throw ContractError("tokenize: d_l must be >= 1");
    TokenSequence seq;
    seq.ids.assign(d_l, Vocabulary::kPad);
    seq.positions.resize(d_l);
    for (size_t i = 0; i < d_l; ++i) seq.positions[i] = i;
    seq.mask.assign(d_l, 0);
    auto words = split_words(text);
    size_t n = std::min(words.size(), d_l);
    for (size_t i = 0; i < n; ++i) {
        seq.ids[i] = vocab.lookup(words[i]);
        seq.mask[i] = 1;
    }
    return seq;
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (!seq.mask[i]) continue;
        if (!out.empty()) out += ' ';
        out += seq.ids[i] < vocab.size() ? vocab.tokens[seq.ids[i]] : "<unk>";
    }
    return out;
}

}  // namespace shefu
