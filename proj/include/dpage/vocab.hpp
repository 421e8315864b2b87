#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dpage/error.hpp"

namespace dpage {

using TokenId = std::size_t;
using TokenSequence = std::vector<TokenId>;
using Words = std::vector<std::string>;

// Bijective token <-> id map. Ids 0..3 are reserved for the specials.
class Vocabulary {
 public:
  static constexpr TokenId pad = 0;
  static constexpr TokenId bos = 1;
  static constexpr TokenId eos = 2;
  static constexpr TokenId unk = 3;
  static constexpr std::size_t num_specials = 4;

  Vocabulary() {
    for (const char* s : {"<pad>", "<s>", "</s>", "<unk>"}) add(s);
  }

  // Rebuilds a vocabulary from its id-ordered token list (e.g. a checkpoint).
  explicit Vocabulary(const Words& tokens) : Vocabulary() {
    if (tokens.size() < num_specials)
      throw DataFormatError("vocabulary: fewer tokens than reserved specials");
    for (std::size_t i = 0; i < num_specials; ++i)
      if (tokens[i] != tokens_[i])
        throw DataFormatError("vocabulary: reserved id " + std::to_string(i) + " is '" +
                              tokens[i] + "', expected '" + tokens_[i] + "'");
    for (std::size_t i = num_specials; i < tokens.size(); ++i) {
      if (contains(tokens[i])) throw DataFormatError("vocabulary: duplicate token '" + tokens[i] + "'");
      add(tokens[i]);
    }
  }

  TokenId add(const std::string& token) {
    auto [it, inserted] = index_.emplace(token, tokens_.size());
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? unk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const Words& tokens() const noexcept { return tokens_; }

  TokenSequence encode(const Words& words) const {
    TokenSequence ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
  }

  Words decode(const TokenSequence& ids) const {
    Words words;
    words.reserve(ids.size());
    for (TokenId i : ids) words.push_back(token(i));
    return words;
  }

 private:
  Words tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

inline Words split_tokens(std::string_view line) {
  Words out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join_tokens(const Words& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

inline void validate_sequence(const TokenSequence& seq, std::size_t vocab_size, const char* what) {
  if (seq.empty()) throw ContractError(std::string(what) + ": empty sequence");
  for (TokenId id : seq)
    if (id >= vocab_size)
      throw ContractError(std::string(what) + ": token id " + std::to_string(id) +
                          " out of range for vocabulary of " + std::to_string(vocab_size));
}

}  // namespace dpage
