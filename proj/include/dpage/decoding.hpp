#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dpage/error.hpp"
#include "dpage/model.hpp"
#include "dpage/tensor.hpp"
#include "dpage/trainer.hpp"
#include "dpage/vocab.hpp"

namespace dpage {

enum class DecodeMode { dpage, beam, noise, vae, greedy };

inline std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::dpage: return "dpage";
    case DecodeMode::beam: return "beam";
    case DecodeMode::noise: return "noise";
    case DecodeMode::vae: return "vae";
    case DecodeMode::greedy: return "greedy";
  }
  return "unknown";
}

inline DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "dpage") return DecodeMode::dpage;
  if (name == "beam") return DecodeMode::beam;
  if (name == "noise") return DecodeMode::noise;
  if (name == "vae") return DecodeMode::vae;
  if (name == "greedy") return DecodeMode::greedy;
  throw ConfigError("unknown decode mode '" + name + "'");
}

struct DecodeConfig {
  std::size_t beam_size = 5;
  std::size_t top_k = 5;
  std::size_t max_len = 30;
  DecodeMode mode = DecodeMode::dpage;
  std::uint64_t noise_seed = 1;

  void validate() const {
    if (beam_size < 1) throw ConfigError("decode: beam size must be >= 1");
    if (max_len < 1) throw ConfigError("decode: max_len must be >= 1");
    if (top_k < 1) throw ConfigError("decode: K must be >= 1");
    if (mode == DecodeMode::beam && top_k > beam_size)
      throw ConfigError("decode: beam mode needs K <= beam size (K=" + std::to_string(top_k) +
                        ", beam=" + std::to_string(beam_size) + ")");
  }
};

struct Hypothesis {
  TokenSequence tokens;  // without BOS/EOS
  double log_prob = 0.0;
  bool finished = false;
};

namespace detail {

// Tokens a decoder may emit; PAD and BOS are never generated.
inline bool emittable(TokenId t) { return t != Vocabulary::pad && t != Vocabulary::bos; }

struct LiveHypothesis {
  Hypothesis hyp;
  std::vector<std::vector<double>> h, c;  // per layer, one row each
};

inline Tensor stack_rows(const std::vector<const std::vector<double>*>& rows) {
  const std::size_t width = rows.front()->size();
  Tensor out({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r]->begin(), rows[r]->end(), out.data() + r * width);
  return out;
}

inline bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace detail

/// Beam search for one source under a fixed single-row conditioning.
///
/// Each step expands every live hypothesis over the vocabulary and keeps the
/// best `beam` candidates by cumulative log probability. Candidates ending in
/// EOS are retired to the finished pool. A hypothesis that already holds
/// `max_len` tokens can only take EOS. The search stops when nothing is live,
/// or once `n_best` finished hypotheses all beat every live one. The result is
/// sorted best-first; its first `n_best` entries are exact for the beam.
inline std::vector<Hypothesis> beam_search(const Seq2SeqModel& model, const TokenSequence& source,
                                           std::size_t beam, const Conditioning& cond, std::size_t max_len,
                                           std::size_t n_best = 0) {
  if (beam < 1) throw ConfigError("beam_search: beam size must be >= 1");
  if (max_len < 1) throw ConfigError("beam_search: max_len must be >= 1");
  if (n_best == 0) n_best = beam;
  NoGradGuard no_grad;
  const std::size_t L = model.config().num_layers;
  const std::size_t V = model.config().vocab_size;
  const EncoderOutput enc = encode(model, source);
  const DecoderState init = initial_state(model, enc, cond.state_offset);

  std::vector<detail::LiveHypothesis> live(1);
  for (std::size_t l = 0; l < L; ++l) {
    live[0].h.emplace_back(init.layers[l].h->value.values().begin(), init.layers[l].h->value.values().end());
    live[0].c.emplace_back(init.layers[l].c->value.values().begin(), init.layers[l].c->value.values().end());
  }
  std::vector<Hypothesis> pool;
  std::map<std::size_t, EncoderOutput> tiled;

  struct Candidate {
    double score;
    double step_lp;
    std::size_t hyp;
    TokenId token;
  };
  auto cand_order = [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.step_lp != b.step_lp) return a.step_lp > b.step_lp;
    if (a.hyp != b.hyp) return a.hyp < b.hyp;
    return a.token < b.token;
  };

  while (!live.empty()) {
    const std::size_t n = live.size();
    auto it = tiled.find(n);
    if (it == tiled.end()) it = tiled.emplace(n, tile(enc, n)).first;
    DecoderState state;
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<const std::vector<double>*> hs, cs;
      for (const auto& lh : live) {
        hs.push_back(&lh.h[l]);
        cs.push_back(&lh.c[l]);
      }
      state.layers.push_back({constant(detail::stack_rows(hs)), constant(detail::stack_rows(cs))});
    }
    std::vector<TokenId> prev(n);
    for (std::size_t i = 0; i < n; ++i)
      prev[i] = live[i].hyp.tokens.empty() ? Vocabulary::bos : live[i].hyp.tokens.back();
    Var pattern = cond.pattern ? repeat_rows(cond.pattern, n) : nullptr;
    StepOutput step = decoder_forward(model, state, prev, pattern, it->second);
    const Var logp = log_softmax(step.logits);

    std::vector<Candidate> cands;
    cands.reserve(n * V);
    for (std::size_t i = 0; i < n; ++i) {
      const double base = live[i].hyp.log_prob;
      if (live[i].hyp.tokens.size() >= max_len) {
        const double lp = logp->value.at(i, Vocabulary::eos);
        cands.push_back({base + lp, lp, i, Vocabulary::eos});
        continue;
      }
      for (TokenId t = 0; t < V; ++t) {
        if (!detail::emittable(t)) continue;
        const double lp = logp->value.at(i, t);
        cands.push_back({base + lp, lp, i, t});
      }
    }
    const std::size_t keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), cand_order);

    std::vector<detail::LiveHypothesis> next;
    for (std::size_t j = 0; j < keep; ++j) {
      const Candidate& cd = cands[j];
      Hypothesis h = live[cd.hyp].hyp;
      h.log_prob = cd.score;
      if (cd.token == Vocabulary::eos) {
        h.finished = true;
        pool.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(cd.token);
      detail::LiveHypothesis lh;
      lh.hyp = std::move(h);
      for (std::size_t l = 0; l < L; ++l) {
        const auto hr = step.state.layers[l].h->value.row(cd.hyp);
        const auto cr = step.state.layers[l].c->value.row(cd.hyp);
        lh.h.emplace_back(hr.begin(), hr.end());
        lh.c.emplace_back(cr.begin(), cr.end());
      }
      next.push_back(std::move(lh));
    }
    live = std::move(next);

    if (pool.size() >= n_best && !live.empty()) {
      std::vector<double> scores;
      for (const auto& p : pool) scores.push_back(p.log_prob);
      std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(n_best - 1), scores.end(),
                       std::greater<>());
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& lh : live) best_live = std::max(best_live, lh.hyp.log_prob);
      if (scores[n_best - 1] > best_live) break;
    }
  }

  std::vector<Hypothesis> out = std::move(pool);
  for (auto& lh : live) out.push_back(std::move(lh.hyp));
  std::sort(out.begin(), out.end(), detail::better);
  std::set<TokenSequence> seen;
  std::vector<Hypothesis> unique;
  for (auto& h : out)
    if (seen.insert(h.tokens).second) unique.push_back(std::move(h));
  return unique;
}

/// Argmax decoding (lowest token id on ties), EOS forced after max_len tokens.
inline Hypothesis greedy_decode(const Seq2SeqModel& model, const TokenSequence& source, const Conditioning& cond,
                                std::size_t max_len) {
  NoGradGuard no_grad;
  const EncoderOutput enc = encode(model, source);
  DecoderState state = initial_state(model, enc, cond.state_offset);
  Hypothesis out;
  TokenId prev = Vocabulary::bos;
  while (true) {
    const TokenId prev_ids[1] = {prev};
    StepOutput step = decoder_forward(model, state, prev_ids, cond.pattern, enc);
    const Var logp = log_softmax(step.logits);
    TokenId best = Vocabulary::eos;
    if (out.tokens.size() < max_len) {
      double best_lp = -std::numeric_limits<double>::infinity();
      for (TokenId t = 0; t < model.config().vocab_size; ++t) {
        if (!detail::emittable(t)) continue;
        if (logp->value[t] > best_lp) {
          best_lp = logp->value[t];
          best = t;
        }
      }
    }
    out.log_prob += logp->value[best];
    if (best == Vocabulary::eos) break;
    out.tokens.push_back(best);
    state = std::move(step.state);
    prev = best;
  }
  out.finished = true;
  return out;
}

namespace detail {

inline Conditioning pattern_row(const Tensor& bank, std::size_t k) {
  Tensor row({1, bank.cols()});
  std::copy_n(bank.data() + k * bank.cols(), bank.cols(), row.data());
  return fixed_pattern(std::move(row));
}

inline Conditioning offset_row(const Tensor& bank, std::size_t k) {
  Tensor row({1, bank.cols()});
  std::copy_n(bank.data() + k * bank.cols(), bank.cols(), row.data());
  return fixed_state_offset(std::move(row));
}

inline void require_mode(const Seq2SeqModel& model, ModelMode expected, DecodeMode scheme) {
  if (model.config().mode != expected)
    throw ConfigError(to_string(scheme) + " decoding needs a model trained in " + to_string(expected) +
                      " mode, got " + to_string(model.config().mode));
}

inline TokenSequence top1(std::vector<Hypothesis> hyps) {
  return hyps.empty() ? TokenSequence{} : std::move(hyps.front().tokens);
}

}  // namespace detail

/// One beam search per pattern embedding; output k comes from d_k.
inline std::vector<TokenSequence> dpage_decode_k(const Seq2SeqModel& model, const TokenSequence& source,
                                                 std::size_t beam, std::size_t max_len) {
  detail::require_mode(model, ModelMode::dpage, DecodeMode::dpage);
  std::vector<TokenSequence> out;
  for (std::size_t k = 0; k < model.config().num_patterns; ++k) {
    const std::size_t ids[1] = {k};
    NoGradGuard no_grad;
    out.push_back(detail::top1(beam_search(model, source, beam, bank_patterns(model, ids), max_len, 1)));
  }
  return out;
}

/// The K best distinct hypotheses of a single beam.
inline std::vector<TokenSequence> beam_topk_decode(const Seq2SeqModel& model, const TokenSequence& source,
                                                   std::size_t beam, std::size_t k, std::size_t max_len) {
  if (k > beam)
    throw ConfigError("beam decoding needs K <= beam size (K=" + std::to_string(k) + ", beam=" +
                      std::to_string(beam) + ")");
  detail::require_mode(model, ModelMode::seq2seq, DecodeMode::beam);
  auto hyps = beam_search(model, source, beam, {}, max_len, k);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < hyps.size() && out.size() < k; ++i) out.push_back(std::move(hyps[i].tokens));
  return out;
}

/// Decoder k sees the k-th fixed noise vector at every step.
inline std::vector<TokenSequence> noise_decode_k(const Seq2SeqModel& model, const TokenSequence& source,
                                                 std::size_t beam, std::size_t k, std::uint64_t seed,
                                                 std::size_t max_len) {
  detail::require_mode(model, ModelMode::noise, DecodeMode::noise);
  const Tensor bank = make_noise_bank(k, model.config().decoder_pattern_dim(), seed);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(detail::top1(beam_search(model, source, beam, detail::pattern_row(bank, i), max_len, 1)));
  return out;
}

/// Decoder k starts from the encoder state shifted by the k-th fixed noise vector.
inline std::vector<TokenSequence> vae_decode_k(const Seq2SeqModel& model, const TokenSequence& source,
                                               std::size_t beam, std::size_t k, std::uint64_t seed,
                                               std::size_t max_len) {
  detail::require_mode(model, ModelMode::vae, DecodeMode::vae);
  const Tensor bank = make_noise_bank(k, model.config().state_offset_dim(), seed);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(detail::top1(beam_search(model, source, beam, detail::offset_row(bank, i), max_len, 1)));
  return out;
}

/// K outputs for one source under the configured scheme. The result always
/// has K entries for dpage/noise/vae; beam may return fewer when the search
/// finds fewer than K distinct hypotheses, and greedy returns one.
inline std::vector<TokenSequence> decode_k(const Seq2SeqModel& model, const TokenSequence& source,
                                           const DecodeConfig& config) {
  config.validate();
  switch (config.mode) {
    case DecodeMode::dpage:
      if (config.top_k != model.config().num_patterns)
        throw ConfigError("dpage decoding: K=" + std::to_string(config.top_k) + " but the model has " +
                          std::to_string(model.config().num_patterns) + " pattern embeddings");
      return dpage_decode_k(model, source, config.beam_size, config.max_len);
    case DecodeMode::beam:
      return beam_topk_decode(model, source, config.beam_size, config.top_k, config.max_len);
    case DecodeMode::noise:
      return noise_decode_k(model, source, config.beam_size, config.top_k, config.noise_seed, config.max_len);
    case DecodeMode::vae:
      return vae_decode_k(model, source, config.beam_size, config.top_k, config.noise_seed, config.max_len);
    case DecodeMode::greedy: {
      detail::require_mode(model, ModelMode::seq2seq, DecodeMode::greedy);
      return {greedy_decode(model, source, {}, config.max_len).tokens};
    }
  }
  throw ConfigError("unknown decode mode");
}

}  // namespace dpage
