#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpage/corpus.hpp"
#include "dpage/error.hpp"
#include "dpage/rng.hpp"
#include "dpage/vocab.hpp"

namespace dpage::data {

struct SynConfig {
  std::uint64_t seed = 7;
  std::size_t num_patterns = 5;  // K
  std::size_t vocab_size = 50;   // Syn-Sub source words (and words per dictionary)
  std::size_t min_len = 6;
  std::size_t max_len = 20;
  std::size_t train_inputs = 5000;
  std::size_t test_inputs = 1000;

  void validate() const {
    if (num_patterns < 1 || vocab_size < 1 || train_inputs < 1 || test_inputs < 1)
      throw ConfigError("synthetic data: counts must be positive");
    if (min_len < 1 || min_len > max_len) throw ConfigError("synthetic data: invalid length range");
  }
};

struct SyntheticDataset {
  std::vector<TextPair> train;
  std::vector<Words> test_inputs;
  std::vector<std::vector<Words>> references;  // [pattern][test line]
};

// ---------------------------------------------------------------------------
// Syn-Sub

// K word-for-word dictionaries over one source vocabulary. Dictionary k maps
// onto its own target words, so the K target vocabularies never overlap.
class SynonymDictionaryBank {
 public:
  SynonymDictionaryBank(std::size_t num_words, std::size_t num_patterns, Rng& rng) {
    for (std::size_t i = 0; i < num_words; ++i) source_words_.push_back("x" + std::to_string(i));
    maps_.resize(num_patterns);
    for (std::size_t k = 0; k < num_patterns; ++k) {
      std::vector<std::size_t> perm(num_words);
      for (std::size_t i = 0; i < num_words; ++i) perm[i] = i;
      rng.shuffle(perm);
      for (std::size_t i = 0; i < num_words; ++i)
        maps_[k][source_words_[i]] = "y" + std::to_string(k) + "_" + std::to_string(perm[i]);
    }
  }

  std::size_t num_patterns() const noexcept { return maps_.size(); }
  const Words& source_words() const noexcept { return source_words_; }
  const std::unordered_map<std::string, std::string>& map(std::size_t k) const { return maps_.at(k); }

  Words apply(std::size_t k, const Words& input) const {
    Words out;
    out.reserve(input.size());
    for (const auto& w : input) {
      auto it = maps_.at(k).find(w);
      if (it == maps_[k].end()) throw ContractError("dictionary " + std::to_string(k) + " has no entry for '" + w + "'");
      out.push_back(it->second);
    }
    return out;
  }

 private:
  Words source_words_;
  std::vector<std::unordered_map<std::string, std::string>> maps_;
};

namespace detail {

inline Words random_sentence(const Words& vocab, std::size_t min_len, std::size_t max_len, Rng& rng) {
  const std::size_t len = min_len + static_cast<std::size_t>(rng.below(max_len - min_len + 1));
  Words out;
  out.reserve(len);
  for (std::size_t i = 0; i < len; ++i) out.push_back(vocab[rng.below(vocab.size())]);
  return out;
}

}  // namespace detail

inline SyntheticDataset gen_syn_sub(const SynConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const SynonymDictionaryBank bank(config.vocab_size, config.num_patterns, rng);
  std::set<Words> seen;
  SyntheticDataset ds;
  ds.references.resize(config.num_patterns);
  auto fresh_input = [&] {
    for (int attempt = 0; attempt < 1000000; ++attempt) {
      Words s = detail::random_sentence(bank.source_words(), config.min_len, config.max_len, rng);
      if (seen.insert(s).second) return s;
    }
    throw ConfigError("syn-sub: could not draw enough distinct inputs");
  };
  for (std::size_t i = 0; i < config.train_inputs; ++i) {
    const Words input = fresh_input();
    for (std::size_t k = 0; k < config.num_patterns; ++k) ds.train.push_back({input, bank.apply(k, input), std::nullopt});
  }
  for (std::size_t i = 0; i < config.test_inputs; ++i) {
    Words input = fresh_input();
    for (std::size_t k = 0; k < config.num_patterns; ++k) ds.references[k].push_back(bank.apply(k, input));
    ds.test_inputs.push_back(std::move(input));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Syn-Scale

enum class Unit { km, dm, cm, mm, um };

inline constexpr Unit kScaleUnits[] = {Unit::km, Unit::dm, Unit::cm, Unit::mm, Unit::um};

inline std::string unit_token(Unit u) {
  switch (u) {
    case Unit::km: return "km";
    case Unit::dm: return "dm";
    case Unit::cm: return "cm";
    case Unit::mm: return "mm";
    case Unit::um: return "\xCE\xBCm";  // μm
  }
  return "?";
}

inline Unit parse_unit(const std::string& token) {
  for (Unit u : kScaleUnits)
    if (unit_token(u) == token) return u;
  throw ConfigError("unsupported unit '" + token + "'");
}

// Power of ten the meter value is multiplied by.
inline int unit_exponent(Unit u) {
  switch (u) {
    case Unit::km: return -3;
    case Unit::dm: return 1;
    case Unit::cm: return 2;
    case Unit::mm: return 3;
    case Unit::um: return 6;
  }
  return 0;
}

/// Exact decimal rescaling of an integer meter value, one token per digit,
/// the decimal point as its own token, and the unit token last. All digits
/// are kept (no trailing-zero trimming).
inline Words convert_unit(long meters, Unit unit) {
  if (meters < 1000 || meters > 10000)
    throw ContractError("convert_unit: value " + std::to_string(meters) + " outside [1000, 10000]");
  std::string digits = std::to_string(meters);
  const int exp = unit_exponent(unit);
  if (exp > 0) digits.append(static_cast<std::size_t>(exp), '0');
  Words out;
  const std::size_t point = exp < 0 ? digits.size() - static_cast<std::size_t>(-exp) : digits.size();
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i == point) out.emplace_back(".");
    out.emplace_back(1, digits[i]);
  }
  out.push_back(unit_token(unit));
  return out;
}

inline Words meters_tokens(long meters) {
  Words out;
  for (char c : std::to_string(meters)) out.emplace_back(1, c);
  out.emplace_back("m");
  return out;
}

inline SyntheticDataset gen_syn_scale(const SynConfig& config) {
  config.validate();
  constexpr long lo = 1000, hi = 10000;
  const std::size_t available = static_cast<std::size_t>(hi - lo + 1);
  if (config.train_inputs + config.test_inputs > available)
    throw ConfigError("syn-scale: at most " + std::to_string(available) + " distinct inputs exist");
  Rng rng(config.seed);
  std::vector<long> values(available);
  for (std::size_t i = 0; i < available; ++i) values[i] = lo + static_cast<long>(i);
  rng.shuffle(values);

  SyntheticDataset ds;
  ds.references.resize(std::size(kScaleUnits));
  for (std::size_t i = 0; i < config.train_inputs; ++i) {
    const Words input = meters_tokens(values[i]);
    for (Unit u : kScaleUnits) ds.train.push_back({input, convert_unit(values[i], u), std::nullopt});
  }
  for (std::size_t i = 0; i < config.test_inputs; ++i) {
    const long v = values[config.train_inputs + i];
    ds.test_inputs.push_back(meters_tokens(v));
    for (std::size_t k = 0; k < std::size(kScaleUnits); ++k) ds.references[k].push_back(convert_unit(v, kScaleUnits[k]));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// File I/O

inline std::vector<std::string> read_raw_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

/// One tokenized line per text line (empty lines become empty sequences).
inline std::vector<Words> read_lines(const std::filesystem::path& path) {
  std::vector<Words> out;
  for (const auto& l : read_raw_lines(path)) out.push_back(split_tokens(l));
  return out;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<Words>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << join_tokens(l) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct TsvCorpus {
  std::vector<TextPair> pairs;
  std::vector<ParseIssue> errors;
};

/// Reads "source<TAB>target" lines. Blank lines are skipped; malformed lines
/// are collected in `errors` and skipped.
inline TsvCorpus load_tsv_corpus(const std::filesystem::path& path) {
  TsvCorpus out;
  const auto lines = read_raw_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      out.errors.push_back({i + 1, "expected exactly one TAB"});
      continue;
    }
    TextPair pair{split_tokens(std::string_view(line).substr(0, tab)),
                  split_tokens(std::string_view(line).substr(tab + 1)), std::nullopt};
    if (pair.source.empty() || pair.target.empty()) {
      out.errors.push_back({i + 1, "empty source or target"});
      continue;
    }
    out.pairs.push_back(std::move(pair));
  }
  return out;
}

inline void write_tsv_corpus(const std::filesystem::path& path, const std::vector<TextPair>& pairs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : pairs) out << join_tokens(p.source) << '\t' << join_tokens(p.target) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

/// Writes train.tsv, test.src and ref_0.txt ... ref_{K-1}.txt into `dir`.
inline void write_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
  write_tsv_corpus(dir / "train.tsv", ds.train);
  write_lines(dir / "test.src", ds.test_inputs);
  for (std::size_t k = 0; k < ds.references.size(); ++k)
    write_lines(dir / ("ref_" + std::to_string(k) + ".txt"), ds.references[k]);
}

/// Specials first, then tokens by descending frequency (ties lexicographic).
/// Tokens seen fewer than `min_freq` times are left out and encode as UNK.
inline Vocabulary build_vocab(const std::vector<TextPair>& corpus, std::size_t min_freq = 1) {
  if (corpus.empty()) throw ContractError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& p : corpus) {
    for (const auto& w : p.source) ++freq[w];
    for (const auto& w : p.target) ++freq[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [w, n] : ranked)
    if (n >= min_freq && !vocab.contains(w)) vocab.add(w);
  return vocab;
}

}  // namespace dpage::data
