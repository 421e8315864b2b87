#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "dpage/corpus.hpp"
#include "dpage/error.hpp"
#include "dpage/model.hpp"
#include "dpage/rng.hpp"
#include "dpage/tensor.hpp"

namespace dpage {

struct TrainingConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1.0;
  double lr_decay = 0.5;
  std::size_t decay_start = 5;  // lr is multiplied by lr_decay for every epoch after this one
  double clip = 5.0;
  std::uint64_t seed = 1;
  ModelMode mode = ModelMode::dpage;

  void validate() const {
    if (epochs < 1) throw ConfigError("training: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("training: batch size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("training: learning rate must be > 0");
    if (!(clip > 0.0)) throw ConfigError("training: clip must be > 0");
    if (!(lr_decay > 0.0)) throw ConfigError("training: lr decay must be > 0");
  }

  // 1-based epoch.
  double lr_for_epoch(std::size_t epoch) const {
    if (epoch <= decay_start) return lr;
    return lr * std::pow(lr_decay, static_cast<double>(epoch - decay_start));
  }

  bool operator==(const TrainingConfig&) const = default;
};

// Number of training pairs won by each decoder.
struct AssignmentStats {
  std::size_t num_patterns = 1;
  std::vector<std::vector<std::size_t>> per_epoch;
  std::vector<std::vector<std::size_t>> first_batches;  // first 10 batches of epoch 1

  static std::vector<double> fractions(const std::vector<std::size_t>& counts) {
    std::size_t total = 0;
    for (auto c : counts) total += c;
    std::vector<double> out(counts.size(), 0.0);
    if (total == 0) return out;
    for (std::size_t k = 0; k < counts.size(); ++k)
      out[k] = static_cast<double>(counts[k]) / static_cast<double>(total);
    return out;
  }
};

struct TrainResult {
  AssignmentStats assignments;
  std::vector<double> epoch_loss;  // mean per-pair loss of each epoch
};

/// K fixed standard-normal vectors as rows of a [K x dim] tensor.
inline Tensor make_noise_bank(std::size_t k, std::size_t dim, std::uint64_t seed) {
  if (k < 1) throw ContractError("noise bank: K must be >= 1");
  Rng rng(seed);
  Tensor out({k, dim});
  for (auto& v : out.values()) v = rng.normal();
  return out;
}

struct PatternLoss {
  std::size_t pattern = 0;
  double loss = 0.0;
};

namespace detail {

inline std::size_t argmin_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k)
    if (values[k] < values[best]) best = k;
  return best;
}

// Per-example losses under every pattern, computed without a graph.
// Returns [example][pattern].
inline std::vector<std::vector<double>> all_pattern_losses(const Seq2SeqModel& model,
                                                           std::span<const TokenSequence> sources,
                                                           std::span<const TokenSequence> targets) {
  NoGradGuard no_grad;
  const std::size_t B = sources.size(), K = model.config().num_patterns;
  const EncoderOutput enc = encode_batch(model, sources);
  std::vector<std::vector<double>> losses(B, std::vector<double>(K));
  std::vector<std::size_t> ids(B);
  for (std::size_t k = 0; k < K; ++k) {
    std::fill(ids.begin(), ids.end(), k);
    const Var nll = batch_nll(model, enc, bank_patterns(model, ids), targets);
    for (std::size_t b = 0; b < B; ++b) losses[b][k] = nll->value[b];
  }
  return losses;
}

}  // namespace detail

/// Loss of one pair under every pattern; returns the minimum (lowest index
/// on ties).
inline PatternLoss min_loss_assign(const Seq2SeqModel& model, const TokenSequence& source,
                                   const TokenSequence& target) {
  if (!model.patterns) {
    NoGradGuard no_grad;
    return {0, sequence_nll(model, source, target, 0)->value[0]};
  }
  const auto losses = detail::all_pattern_losses(model, std::span<const TokenSequence>(&source, 1),
                                                 std::span<const TokenSequence>(&target, 1));
  const std::size_t k = detail::argmin_lowest(losses[0]);
  return {k, losses[0][k]};
}

struct StepResult {
  double mean_loss = 0.0;
  std::vector<std::size_t> counts;  // pairs won per decoder
  double grad_norm = 0.0;
};

/// Builds the batch loss graph (mean over pairs of each pair's training
/// loss) without touching parameters. In dpage mode the loss of each pair
/// is taken through its minimum-loss pattern only.
inline std::pair<Var, StepResult> batch_loss(const Seq2SeqModel& model, std::span<const ParaphrasePair* const> batch,
                                             ModelMode mode, Rng& noise_rng) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  if (mode != model.config().mode)
    throw ConfigError("training mode " + to_string(mode) + " does not match model mode " +
                      to_string(model.config().mode));
  StepResult result;
  result.counts.assign(model.config().num_patterns, 0);

  // Encoder batches need equal source lengths; group while keeping order.
  std::map<std::size_t, std::vector<const ParaphrasePair*>> groups;
  for (const ParaphrasePair* p : batch) groups[p->source.size()].push_back(p);

  Var total;
  for (const auto& [len, members] : groups) {
    const std::size_t B = members.size();
    std::vector<TokenSequence> sources, targets;
    sources.reserve(B);
    targets.reserve(B);
    for (const auto* p : members) {
      sources.push_back(p->source);
      targets.push_back(p->target);
    }
    Conditioning cond;
    switch (mode) {
      case ModelMode::dpage: {
        const auto losses = detail::all_pattern_losses(model, sources, targets);
        std::vector<std::size_t> winners(B);
        for (std::size_t b = 0; b < B; ++b) {
          winners[b] = detail::argmin_lowest(losses[b]);
          ++result.counts[winners[b]];
        }
        cond = bank_patterns(model, winners);
        break;
      }
      case ModelMode::noise: {
        Tensor z({B, model.config().decoder_pattern_dim()});
        for (auto& v : z.values()) v = noise_rng.normal();
        cond = fixed_pattern(std::move(z));
        result.counts[0] += B;
        break;
      }
      case ModelMode::vae: {
        Tensor z({B, model.config().state_offset_dim()});
        for (auto& v : z.values()) v = noise_rng.normal();
        cond = fixed_state_offset(std::move(z));
        result.counts[0] += B;
        break;
      }
      case ModelMode::seq2seq:
        result.counts[0] += B;
        break;
    }
    const EncoderOutput enc = encode_batch(model, sources);
    const Var group_loss = sum(batch_nll(model, enc, cond, targets));
    total = total ? add(total, group_loss) : group_loss;
  }
  const Var mean = scale(total, 1.0 / static_cast<double>(batch.size()));
  result.mean_loss = mean->value[0];
  return {mean, result};
}

/// One SGD update on a batch.
inline StepResult train_step(Seq2SeqModel& model, std::span<const ParaphrasePair* const> batch,
                             const TrainingConfig& config, double lr, Rng& noise_rng) {
  auto [loss, result] = batch_loss(model, batch, config.mode, noise_rng);
  backward(loss);
  result.grad_norm = sgd_step(model.parameters(), lr, config.clip);
  return result;
}

inline StepResult train_step(Seq2SeqModel& model, const Corpus& batch, const TrainingConfig& config, double lr,
                             Rng& noise_rng) {
  std::vector<const ParaphrasePair*> ptrs;
  for (const auto& p : batch) ptrs.push_back(&p);
  return train_step(model, ptrs, config, lr, noise_rng);
}

namespace detail {

// Shuffled batches drawn from length buckets: every batch holds pairs whose
// sources share one length.
inline std::vector<std::vector<const ParaphrasePair*>> make_batches(const Corpus& corpus, std::size_t batch_size,
                                                                    Rng& rng) {
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::map<std::size_t, std::vector<const ParaphrasePair*>> buckets;
  for (std::size_t i : order) buckets[corpus[i].source.size()].push_back(&corpus[i]);
  std::vector<std::vector<const ParaphrasePair*>> batches;
  for (auto& [len, members] : buckets)
    for (std::size_t start = 0; start < members.size(); start += batch_size)
      batches.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(start),
                           members.begin() + static_cast<std::ptrdiff_t>(std::min(members.size(), start + batch_size)));
  rng.shuffle(batches);
  return batches;
}

}  // namespace detail

struct EpochReport {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<std::size_t> counts;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Full training loop. Deterministic in (model init, corpus, config).
inline TrainResult train(Seq2SeqModel& model, const Corpus& corpus, const TrainingConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  if (corpus.empty()) throw ContractError("train: empty corpus");
  if (config.mode != model.config().mode)
    throw ConfigError("training mode " + to_string(config.mode) + " does not match model mode " +
                      to_string(model.config().mode));
  Rng shuffle_rng(Rng::derive(config.seed, 0));
  Rng noise_rng(Rng::derive(config.seed, 1));
  const std::size_t K = model.config().num_patterns;

  TrainResult result;
  result.assignments.num_patterns = K;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.lr_for_epoch(epoch);
    std::vector<std::size_t> counts(K, 0);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    const auto batches = detail::make_batches(corpus, config.batch_size, shuffle_rng);
    for (const auto& batch : batches) {
      const StepResult step = train_step(model, batch, config, lr, noise_rng);
      loss_sum += step.mean_loss * static_cast<double>(batch.size());
      seen += batch.size();
      for (std::size_t k = 0; k < K; ++k) counts[k] += step.counts[k];
      if (epoch == 1 && result.assignments.first_batches.size() < 10)
        result.assignments.first_batches.push_back(step.counts);
    }
    result.assignments.per_epoch.push_back(counts);
    result.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
    if (on_epoch) on_epoch({epoch, lr, result.epoch_loss.back(), counts});
  }
  return result;
}

/// Mean per-pair loss on a corpus without updating parameters. dpage takes
/// the minimum over patterns; noise and vae draw fresh noise from `seed`.
inline double evaluate_loss(const Seq2SeqModel& model, const Corpus& corpus, std::uint64_t seed = 0,
                            std::size_t batch_size = 64) {
  if (corpus.empty()) throw ContractError("evaluate_loss: empty corpus");
  NoGradGuard no_grad;
  Rng noise_rng(seed);
  std::map<std::size_t, std::vector<const ParaphrasePair*>> buckets;
  for (const auto& p : corpus) buckets[p.source.size()].push_back(&p);
  double total = 0.0;
  for (const auto& [len, members] : buckets) {
    for (std::size_t start = 0; start < members.size(); start += batch_size) {
      const std::size_t end = std::min(members.size(), start + batch_size);
      std::span<const ParaphrasePair* const> chunk(members.data() + start, end - start);
      auto [loss, step] = batch_loss(model, chunk, model.config().mode, noise_rng);
      total += loss->value[0] * static_cast<double>(chunk.size());
    }
  }
  return total / static_cast<double>(corpus.size());
}

}  // namespace dpage
