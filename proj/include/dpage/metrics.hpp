#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dpage/error.hpp"
#include "dpage/vocab.hpp"

namespace dpage::metrics {

using TextCorpus = std::vector<Words>;
// references[line] holds every reference for that line.
using MultiReferences = std::vector<std::vector<Words>>;

// ---------------------------------------------------------------------------
// n-gram helpers

using NgramCounts = std::map<std::string, std::size_t>;

inline NgramCounts count_ngrams(const Words& words, std::size_t n) {
  NgramCounts counts;
  if (n == 0 || words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::string key = words[i];
    for (std::size_t j = 1; j < n; ++j) {
      key += '\x1f';
      key += words[i + j];
    }
    ++counts[key];
  }
  return counts;
}

/// Reshapes K line-aligned reference corpora into per-line reference sets.
inline MultiReferences transpose_references(const std::vector<TextCorpus>& reference_sets) {
  if (reference_sets.empty()) return {};
  const std::size_t lines = reference_sets.front().size();
  for (const auto& r : reference_sets)
    if (r.size() != lines) throw DataFormatError("reference sets are not line-aligned");
  MultiReferences out(lines);
  for (std::size_t i = 0; i < lines; ++i)
    for (const auto& r : reference_sets) out[i].push_back(r[i]);
  return out;
}

inline MultiReferences single_reference(const TextCorpus& refs) { return transpose_references({refs}); }

// ---------------------------------------------------------------------------
// BLEU

struct BleuStats {
  std::vector<std::size_t> matches;  // per order
  std::vector<std::size_t> totals;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;  // closest reference length, summed
};

inline BleuStats bleu_stats(const TextCorpus& hypotheses, const MultiReferences& references,
                            std::size_t max_order = 4) {
  if (hypotheses.size() != references.size())
    throw DataFormatError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                          std::to_string(references.size()) + " reference lines");
  if (hypotheses.empty()) throw DataFormatError("bleu: empty corpus");
  BleuStats st;
  st.matches.assign(max_order, 0);
  st.totals.assign(max_order, 0);
  for (std::size_t line = 0; line < hypotheses.size(); ++line) {
    const Words& hyp = hypotheses[line];
    const auto& refs = references[line];
    if (refs.empty()) throw DataFormatError("bleu: line " + std::to_string(line + 1) + " has no reference");
    st.hyp_length += hyp.size();
    // Closest reference length; ties go to the shorter reference.
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t len) { return len > hyp.size() ? len - hyp.size() : hyp.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    st.ref_length += best;
    for (std::size_t n = 1; n <= max_order; ++n) {
      const NgramCounts h = count_ngrams(hyp, n);
      NgramCounts max_ref;
      for (const auto& r : refs)
        for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      for (const auto& [g, c] : h) {
        st.totals[n - 1] += c;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) st.matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  return st;
}

/// Corpus BLEU from sufficient statistics. Orders with no hypothesis n-grams
/// are left out of the geometric mean; a zero match count above order 1 is
/// replaced by add-one smoothing 1 / (total + 1).
inline double bleu_from_stats(const BleuStats& st) {
  if (st.hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t i = 0; i < st.totals.size(); ++i) {
    if (st.totals[i] == 0) continue;
    double p;
    if (st.matches[i] > 0) {
      p = static_cast<double>(st.matches[i]) / static_cast<double>(st.totals[i]);
    } else if (i == 0) {
      return 0.0;
    } else {
      p = 1.0 / static_cast<double>(st.totals[i] + 1);
    }
    log_sum += std::log(p);
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double c = static_cast<double>(st.hyp_length), r = static_cast<double>(st.ref_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

/// Corpus-level multi-reference BLEU.
inline double multi_ref_bleu(const TextCorpus& hypotheses, const MultiReferences& references,
                             std::size_t max_order = 4) {
  return bleu_from_stats(bleu_stats(hypotheses, references, max_order));
}

// ---------------------------------------------------------------------------
// SARI

namespace detail {

// Vacuous precision/recall (empty candidate or reference set) count as 1.
inline double f1(double p, double r) { return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline NgramCounts scaled(const NgramCounts& c, std::size_t factor) {
  NgramCounts out;
  for (const auto& [g, n] : c) out[g] = n * factor;
  return out;
}

inline NgramCounts intersect(const NgramCounts& a, const NgramCounts& b) {
  NgramCounts out;
  for (const auto& [g, n] : a) {
    auto it = b.find(g);
    if (it != b.end()) out[g] = std::min(n, it->second);
  }
  return out;
}

inline NgramCounts subtract(const NgramCounts& a, const NgramCounts& b) {
  NgramCounts out;
  for (const auto& [g, n] : a) {
    auto it = b.find(g);
    const std::size_t m = it == b.end() ? 0 : it->second;
    if (n > m) out[g] = n - m;
  }
  return out;
}

inline std::size_t lookup(const NgramCounts& c, const std::string& g) {
  auto it = c.find(g);
  return it == c.end() ? 0 : it->second;
}

struct SariParts {
  double keep = 0.0, del = 0.0, add = 0.0;
};

inline SariParts sari_ngram(const NgramCounts& src, const NgramCounts& hyp, const std::vector<NgramCounts>& refs) {
  const std::size_t num_refs = refs.size();
  NgramCounts ref_all;
  for (const auto& r : refs)
    for (const auto& [g, n] : r) ref_all[g] += n;
  const NgramCounts src_rep = scaled(src, num_refs);
  const NgramCounts hyp_rep = scaled(hyp, num_refs);

  // keep
  const NgramCounts keep = intersect(src_rep, hyp_rep);
  const NgramCounts keep_good = intersect(keep, ref_all);
  const NgramCounts keep_all = intersect(src_rep, ref_all);
  double kp = 1.0, kr = 1.0;
  if (!keep.empty()) {
    double s = 0.0;
    for (const auto& [g, n] : keep) s += static_cast<double>(lookup(keep_good, g)) / static_cast<double>(n);
    kp = s / static_cast<double>(keep.size());
  }
  if (!keep_all.empty()) {
    double s = 0.0;
    for (const auto& [g, n] : keep_all) s += static_cast<double>(lookup(keep_good, g)) / static_cast<double>(n);
    kr = s / static_cast<double>(keep_all.size());
  }

  // deletion (precision only)
  const NgramCounts del = subtract(src_rep, hyp_rep);
  const NgramCounts del_good = subtract(del, ref_all);
  double dp = 1.0;
  if (!del.empty()) {
    double s = 0.0;
    for (const auto& [g, n] : del) s += static_cast<double>(lookup(del_good, g)) / static_cast<double>(n);
    dp = s / static_cast<double>(del.size());
  }

  // addition (set based)
  std::set<std::string> added, added_all;
  for (const auto& [g, n] : hyp)
    if (!src.count(g)) added.insert(g);
  for (const auto& [g, n] : ref_all)
    if (!src.count(g)) added_all.insert(g);
  std::size_t added_good = 0;
  for (const auto& g : added)
    if (ref_all.count(g)) ++added_good;
  const double ap = added.empty() ? 1.0 : static_cast<double>(added_good) / static_cast<double>(added.size());
  const double ar = added_all.empty() ? 1.0 : static_cast<double>(added_good) / static_cast<double>(added_all.size());

  return {f1(kp, kr), dp, f1(ap, ar)};
}

}  // namespace detail

/// Sentence SARI: mean over orders 1..4 of keep-F1, deletion precision and
/// addition-F1, averaged over the three components.
inline double sari_sentence(const Words& source, const Words& hypothesis, const std::vector<Words>& refs,
                            std::size_t max_order = 4) {
  if (refs.empty()) throw DataFormatError("sari: line without references");
  double keep = 0.0, del = 0.0, add = 0.0;
  for (std::size_t n = 1; n <= max_order; ++n) {
    std::vector<NgramCounts> rc;
    for (const auto& r : refs) rc.push_back(count_ngrams(r, n));
    const auto parts = detail::sari_ngram(count_ngrams(source, n), count_ngrams(hypothesis, n), rc);
    keep += parts.keep;
    del += parts.del;
    add += parts.add;
  }
  const double orders = static_cast<double>(max_order);
  return (keep / orders + del / orders + add / orders) / 3.0;
}

/// Corpus SARI as the mean of sentence scores.
inline double sari(const TextCorpus& sources, const TextCorpus& hypotheses, const MultiReferences& references) {
  if (sources.size() != hypotheses.size() || hypotheses.size() != references.size())
    throw DataFormatError("sari: misaligned inputs (" + std::to_string(sources.size()) + " sources, " +
                          std::to_string(hypotheses.size()) + " hypotheses, " +
                          std::to_string(references.size()) + " reference lines)");
  if (sources.empty()) throw DataFormatError("sari: empty corpus");
  double total = 0.0;
  for (std::size_t i = 0; i < sources.size(); ++i) total += sari_sentence(sources[i], hypotheses[i], references[i]);
  return total / static_cast<double>(sources.size());
}

// ---------------------------------------------------------------------------
// Lexical diversity

/// Distinct n-grams over total n-grams across the whole corpus.
inline double distinct_n(const TextCorpus& corpus, std::size_t n) {
  std::set<std::string> unique;
  std::size_t total = 0;
  for (const auto& line : corpus)
    for (const auto& [g, c] : count_ngrams(line, n)) {
      unique.insert(g);
      total += c;
    }
  if (total == 0) throw DataFormatError("distinct-" + std::to_string(n) + ": corpus has no n-grams of that order");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Word distributions and divergences

using WordDistribution = std::map<std::string, double>;

inline WordDistribution word_distribution(const TextCorpus& corpus) {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& line : corpus)
    for (const auto& w : line) {
      ++counts[w];
      ++total;
    }
  // A decoder that only emitted empty lines has an empty distribution;
  // smoothing turns it into the uniform one over the union vocabulary.
  WordDistribution out;
  if (total == 0) return out;
  for (const auto& [w, c] : counts) out[w] = static_cast<double>(c) / static_cast<double>(total);
  return out;
}

namespace detail {

inline std::set<std::string> union_vocabulary(const std::vector<const WordDistribution*>& dists) {
  std::set<std::string> vocab;
  for (const auto* d : dists)
    for (const auto& [w, p] : *d) vocab.insert(w);
  return vocab;
}

// Additive smoothing over `vocab`, then renormalization.
inline std::vector<double> smooth(const WordDistribution& q, const std::set<std::string>& vocab, double epsilon) {
  std::vector<double> out;
  out.reserve(vocab.size());
  double total = 0.0;
  for (const auto& w : vocab) {
    auto it = q.find(w);
    out.push_back((it == q.end() ? 0.0 : it->second) + epsilon);
    total += out.back();
  }
  for (auto& v : out) v /= total;
  return out;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / q[i]);
  return total;
}

}  // namespace detail

/// KL(Q_i || Q_j) in nats, after epsilon-smoothing both over their union vocabulary.
inline double kl_divergence(const WordDistribution& qi, const WordDistribution& qj, double epsilon = 1e-10) {
  const auto vocab = detail::union_vocabulary({&qi, &qj});
  return detail::kl(detail::smooth(qi, vocab, epsilon), detail::smooth(qj, vocab, epsilon));
}

/// Mean KL over all ordered pairs (i != j), smoothing over the union of all K vocabularies.
inline double jeffreys_divergence(const std::vector<WordDistribution>& dists, double epsilon = 1e-10) {
  const std::size_t K = dists.size();
  if (K < 2) throw ContractError("jeffreys divergence needs at least 2 distributions");
  std::vector<const WordDistribution*> ptrs;
  for (const auto& d : dists) ptrs.push_back(&d);
  const auto vocab = detail::union_vocabulary(ptrs);
  std::vector<std::vector<double>> smoothed;
  for (const auto& d : dists) smoothed.push_back(detail::smooth(d, vocab, epsilon));
  double total = 0.0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j)
      if (i != j) total += detail::kl(smoothed[i], smoothed[j]);
  return total / static_cast<double>(K * (K - 1));
}

struct WordContribution {
  std::string word;
  double contribution = 0.0;
};

/// For each decoder i, words ranked by sum_{j != i} Q_i(w) ln(Q_i(w) / Q_j(w)),
/// descending, ties broken lexicographically. At most `top_m` per decoder.
inline std::vector<std::vector<WordContribution>> jd_word_contributions(const std::vector<WordDistribution>& dists,
                                                                        std::size_t top_m, double epsilon = 1e-10) {
  const std::size_t K = dists.size();
  if (K < 2) throw ContractError("jd word contributions need at least 2 distributions");
  std::vector<const WordDistribution*> ptrs;
  for (const auto& d : dists) ptrs.push_back(&d);
  const auto vocab = detail::union_vocabulary(ptrs);
  const std::vector<std::string> words(vocab.begin(), vocab.end());
  std::vector<std::vector<double>> smoothed;
  for (const auto& d : dists) smoothed.push_back(detail::smooth(d, vocab, epsilon));

  std::vector<std::vector<WordContribution>> out(K);
  for (std::size_t i = 0; i < K; ++i) {
    std::vector<WordContribution> ranked;
    ranked.reserve(words.size());
    for (std::size_t w = 0; w < words.size(); ++w) {
      double c = 0.0;
      for (std::size_t j = 0; j < K; ++j)
        if (j != i) c += smoothed[i][w] * std::log(smoothed[i][w] / smoothed[j][w]);
      ranked.push_back({words[w], c});
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const WordContribution& a, const WordContribution& b) { return a.contribution > b.contribution; });
    if (ranked.size() > top_m) ranked.resize(top_m);
    out[i] = std::move(ranked);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confusion matrix

// values[i][j]: BLEU of decoder i's outputs against reference pattern j alone.
struct ConfusionMatrix {
  std::vector<std::vector<double>> values;

  std::size_t rows() const noexcept { return values.size(); }
  std::size_t cols() const noexcept { return values.empty() ? 0 : values.front().size(); }
  double at(std::size_t i, std::size_t j) const { return values.at(i).at(j); }
};

inline ConfusionMatrix confusion_matrix(const std::vector<TextCorpus>& outputs, const std::vector<TextCorpus>& references) {
  if (outputs.empty() || references.empty()) throw DataFormatError("confusion matrix: no corpora");
  const std::size_t lines = outputs.front().size();
  for (const auto& c : outputs)
    if (c.size() != lines) throw DataFormatError("confusion matrix: output sets are not line-aligned");
  for (const auto& c : references)
    if (c.size() != lines) throw DataFormatError("confusion matrix: reference sets are not aligned to the outputs");
  ConfusionMatrix m;
  m.values.assign(outputs.size(), std::vector<double>(references.size(), 0.0));
  for (std::size_t j = 0; j < references.size(); ++j) {
    const MultiReferences refs = single_reference(references[j]);
    for (std::size_t i = 0; i < outputs.size(); ++i) m.values[i][j] = multi_ref_bleu(outputs[i], refs);
  }
  return m;
}

// Decoder -> reference matching. `reference_of[i]` is the column assigned to row i.
struct Matching {
  std::vector<std::size_t> reference_of;
  double mean_score = 0.0;
  std::size_t matched_at_threshold = 0;
};

/// Injective row -> column assignment maximizing the mean matched entry
/// (exhaustive over permutations; intended for K <= 8). Requires rows <= cols.
inline Matching best_assignment(const ConfusionMatrix& m) {
  const std::size_t R = m.rows(), C = m.cols();
  if (R == 0 || R > C) throw ContractError("best_assignment: need 1 <= rows <= cols");
  std::vector<std::size_t> cols(C);
  std::iota(cols.begin(), cols.end(), 0);
  Matching best;
  best.mean_score = -1.0;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < R; ++i) s += m.values[i][cols[i]];
    s /= static_cast<double>(R);
    if (s > best.mean_score) {
      best.mean_score = s;
      best.reference_of.assign(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(R));
    }
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

/// Size of the largest injective decoder -> reference matching that uses
/// only entries >= threshold.
inline std::size_t matched_patterns(const ConfusionMatrix& m, double threshold) {
  const std::size_t R = m.rows(), C = m.cols();
  std::vector<std::size_t> owner(C, R);  // R marks "free"
  std::size_t matched = 0;
  for (std::size_t i = 0; i < R; ++i) {
    std::vector<bool> seen(C, false);
    // Kuhn's augmenting path
    std::function<bool(std::size_t)> augment = [&](std::size_t row) {
      for (std::size_t j = 0; j < C; ++j) {
        if (m.values[row][j] < threshold || seen[j]) continue;
        seen[j] = true;
        if (owner[j] == R || augment(owner[j])) {
          owner[j] = row;
          return true;
        }
      }
      return false;
    };
    if (augment(i)) ++matched;
  }
  return matched;
}

// ---------------------------------------------------------------------------
// Length statistics

struct LengthReport {
  double source_avg = 0.0;
  std::vector<double> decoder_avg;
  double delta = 0.0;  // max - min over decoders
};

inline double average_length(const TextCorpus& corpus) {
  if (corpus.empty()) throw DataFormatError("average length: empty corpus");
  std::size_t total = 0;
  for (const auto& l : corpus) total += l.size();
  return static_cast<double>(total) / static_cast<double>(corpus.size());
}

inline LengthReport length_report(const TextCorpus& sources, const std::vector<TextCorpus>& outputs) {
  if (outputs.empty()) throw DataFormatError("length report: no output corpora");
  LengthReport r;
  r.source_avg = average_length(sources);
  for (const auto& c : outputs) r.decoder_avg.push_back(average_length(c));
  const auto [lo, hi] = std::minmax_element(r.decoder_avg.begin(), r.decoder_avg.end());
  r.delta = *hi - *lo;
  return r;
}

}  // namespace dpage::metrics
