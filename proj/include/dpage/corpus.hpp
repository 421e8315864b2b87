#pragma once

#include <optional>
#include <vector>

#include "dpage/vocab.hpp"

namespace dpage {

// Id-level training pair. The pattern label exists only for synthetic data
// and is never read by the trainer.
struct ParaphrasePair {
  TokenSequence source;
  TokenSequence target;
  std::optional<std::size_t> pattern;
};

using Corpus = std::vector<ParaphrasePair>;

// Text-level pair as read from / written to disk.
struct TextPair {
  Words source;
  Words target;
  std::optional<std::size_t> pattern;
};

inline Corpus encode_corpus(const Vocabulary& vocab, const std::vector<TextPair>& pairs) {
  Corpus out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({vocab.encode(p.source), vocab.encode(p.target), p.pattern});
  return out;
}

}  // namespace dpage
