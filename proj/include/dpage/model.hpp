#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpage/error.hpp"
#include "dpage/rng.hpp"
#include "dpage/tensor.hpp"
#include "dpage/vocab.hpp"

namespace dpage {

// How the decoder is conditioned. Stored with the model so checkpoints know
// which decoding schemes they support.
enum class ModelMode { seq2seq, dpage, noise, vae };

inline std::string to_string(ModelMode mode) {
  switch (mode) {
    case ModelMode::seq2seq: return "seq2seq";
    case ModelMode::dpage: return "dpage";
    case ModelMode::noise: return "noise";
    case ModelMode::vae: return "vae";
  }
  return "unknown";
}

inline ModelMode parse_model_mode(const std::string& name) {
  if (name == "seq2seq") return ModelMode::seq2seq;
  if (name == "dpage") return ModelMode::dpage;
  if (name == "noise") return ModelMode::noise;
  if (name == "vae") return ModelMode::vae;
  throw ConfigError("unknown model mode '" + name + "'");
}

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 1;
  std::size_t pattern_dim = 8;
  std::size_t num_patterns = 1;  // K
  std::uint64_t seed = 1;
  ModelMode mode = ModelMode::seq2seq;

  void validate() const {
    if (vocab_size < Vocabulary::num_specials + 1)
      throw ConfigError("model: vocabulary must hold at least 5 tokens");
    if (embed_dim < 1 || hidden_dim < 1 || num_layers < 1)
      throw ConfigError("model: embed, hidden and layer counts must be >= 1");
    if (num_patterns < 1) throw ConfigError("model: K must be >= 1");
    if (mode == ModelMode::dpage && pattern_dim < 1)
      throw ConfigError("model: dpage mode needs pattern_dim >= 1");
  }

  // Width of the extra decoder input slot next to the word embedding.
  std::size_t decoder_pattern_dim() const {
    return (mode == ModelMode::dpage || mode == ModelMode::noise) ? pattern_dim : 0;
  }

  // Length of a vector that offsets every (h, c) of the encoder's final state.
  std::size_t state_offset_dim() const { return 2 * num_layers * hidden_dim; }

  bool operator==(const ModelConfig&) const = default;
};

struct LstmCell {
  Var w_input, w_forget, w_output, w_update;  // each hidden x (input + hidden + 1)
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
};

struct LayerState {
  Var h, c;
};

// Stacked-LSTM encoder, LSTM decoder with dot-product global attention, and
// the optional bank of K pattern embeddings.
class Seq2SeqModel {
 public:
  explicit Seq2SeqModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t E = config_.embed_dim, H = config_.hidden_dim, V = config_.vocab_size;
    src_embedding = add_param("encoder.embedding", {V, E});
    for (std::size_t l = 0; l < config_.num_layers; ++l)
      encoder.push_back(add_cell("encoder.layer" + std::to_string(l), l == 0 ? E : H));
    tgt_embedding = add_param("decoder.embedding", {V, E});
    for (std::size_t l = 0; l < config_.num_layers; ++l)
      decoder.push_back(
          add_cell("decoder.layer" + std::to_string(l), l == 0 ? E + config_.decoder_pattern_dim() : H));
    attn_combine = add_param("decoder.attention.W_c", {H, 2 * H + 1});
    output = add_param("decoder.output.W", {V, H + 1});
    if (config_.mode == ModelMode::dpage)
      patterns = add_param("decoder.patterns", {config_.num_patterns, config_.pattern_dim});

    Rng rng(config_.seed);
    for (auto& p : params_)
      for (auto& v : p.node->value.values()) v = rng.uniform(-0.1, 0.1);
  }

  Seq2SeqModel(Seq2SeqModel&&) noexcept = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) noexcept = default;
  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;

  // Deep copy; parameters are not shared with the original.
  Seq2SeqModel clone() const {
    Seq2SeqModel copy(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) copy.params_[i].node->value = params_[i].node->value;
    return copy;
  }

  const ModelConfig& config() const noexcept { return config_; }
  const ParameterList& parameters() const noexcept { return params_; }

  Var find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.node;
    throw ContractError("model: no parameter named '" + name + "'");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.node->value.size();
    return n;
  }

  Var src_embedding;
  Var tgt_embedding;
  std::vector<LstmCell> encoder;
  std::vector<LstmCell> decoder;
  Var attn_combine;
  Var output;
  Var patterns;  // [K x pattern_dim], dpage mode only

 private:
  Var add_param(std::string name, Shape shape) {
    auto node = trainable(Tensor(std::move(shape)));
    params_.push_back({std::move(name), node});
    return node;
  }

  LstmCell add_cell(const std::string& prefix, std::size_t input_dim) {
    const std::size_t H = config_.hidden_dim;
    const Shape shape{H, input_dim + H + 1};
    LstmCell cell;
    cell.w_input = add_param(prefix + ".W_i", shape);
    cell.w_forget = add_param(prefix + ".W_f", shape);
    cell.w_output = add_param(prefix + ".W_o", shape);
    cell.w_update = add_param(prefix + ".W_u", shape);
    cell.input_dim = input_dim;
    cell.hidden_dim = H;
    return cell;
  }

  ModelConfig config_;
  ParameterList params_;
};

// ---------------------------------------------------------------------------
// Forward pieces. Every function works on a batch: rows are independent
// examples (or beam hypotheses).

inline Var ones_column(std::size_t rows) { return constant(Tensor({rows, 1}, 1.0)); }

/// One LSTM step:
///   i, f, o = sigmoid(W_{i,f,o} [x, h_prev, 1]),  u = tanh(W_u [x, h_prev, 1])
///   c = f * c_prev + i * u,  h = o * tanh(c)
inline LayerState lstm_step(const LstmCell& cell, const Var& h_prev, const Var& c_prev, const Var& x) {
  const std::size_t rows = x->value.rows();
  if (x->value.rank() != 2 || x->shape()[1] != cell.input_dim)
    throw DimensionError("lstm_step: input " + shape_str(x->shape()) + " does not match cell input width " +
                         std::to_string(cell.input_dim));
  if (h_prev->shape() != Shape{rows, cell.hidden_dim} || c_prev->shape() != Shape{rows, cell.hidden_dim})
    throw DimensionError("lstm_step: state shapes " + shape_str(h_prev->shape()) + ", " +
                         shape_str(c_prev->shape()) + " do not match hidden width " +
                         std::to_string(cell.hidden_dim));
  const Var joined = concat({x, h_prev, ones_column(rows)}, 1);
  const Var i = sigmoid(matmul_nt(joined, cell.w_input));
  const Var f = sigmoid(matmul_nt(joined, cell.w_forget));
  const Var o = sigmoid(matmul_nt(joined, cell.w_output));
  const Var u = tanh(matmul_nt(joined, cell.w_update));
  const Var c = add(mul(f, c_prev), mul(i, u));
  const Var h = mul(o, tanh(c));
  return {h, c};
}

struct EncoderOutput {
  std::vector<Var> states;         // top-layer h per source position, each [B x H]
  std::vector<LayerState> finals;  // per layer
};

/// Runs the stacked encoder over a batch of equal-length sources.
inline EncoderOutput encode_batch(const Seq2SeqModel& model, std::span<const TokenSequence> sources) {
  if (sources.empty()) throw ContractError("encode: empty batch");
  const std::size_t N = sources.front().size();
  const std::size_t B = sources.size();
  const std::size_t V = model.config().vocab_size;
  for (const auto& s : sources) {
    validate_sequence(s, V, "encode");
    if (s.size() != N) throw ContractError("encode: batch sources must share one length");
  }
  const std::size_t H = model.config().hidden_dim;
  std::vector<LayerState> state(model.encoder.size(),
                                LayerState{constant(Tensor({B, H})), constant(Tensor({B, H}))});
  EncoderOutput out;
  out.states.reserve(N);
  std::vector<TokenId> column(B);
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t b = 0; b < B; ++b) column[b] = sources[b][t];
    Var x = gather_rows(model.src_embedding, column);
    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
      state[l] = lstm_step(model.encoder[l], state[l].h, state[l].c, x);
      x = state[l].h;
    }
    out.states.push_back(x);
  }
  out.finals = std::move(state);
  return out;
}

inline EncoderOutput encode(const Seq2SeqModel& model, const TokenSequence& source) {
  return encode_batch(model, std::span<const TokenSequence>(&source, 1));
}

/// Tiles a single-row encoder output to `rows` rows (for beam hypotheses).
inline EncoderOutput tile(const EncoderOutput& enc, std::size_t rows) {
  EncoderOutput out;
  for (const auto& s : enc.states) out.states.push_back(repeat_rows(s, rows));
  for (const auto& f : enc.finals) out.finals.push_back({repeat_rows(f.h, rows), repeat_rows(f.c, rows)});
  return out;
}

struct Attention {
  Var context;  // [B x H]
  Var weights;  // [B x N]
};

/// Dot-product global attention over all source positions.
inline Attention attend(const Var& h_dec, const EncoderOutput& enc) {
  if (enc.states.empty()) throw ContractError("attend: empty encoder output");
  std::vector<Var> scores;
  scores.reserve(enc.states.size());
  for (const auto& e : enc.states) scores.push_back(sum_cols(mul(h_dec, e)));
  const Var weights = softmax(concat(scores, 1));
  Var context;
  for (std::size_t s = 0; s < enc.states.size(); ++s) {
    const Var term = mul_column(enc.states[s], slice(weights, 1, s, 1));
    context = context ? add(context, term) : term;
  }
  return {context, weights};
}

struct DecoderState {
  std::vector<LayerState> layers;
  std::size_t step = 0;
};

// Optional decoder conditioning. `pattern` is concatenated to the word
// embedding at every step; `state_offset` [B x 2*layers*H] is added to the
// encoder's final (h, c) pairs before decoding starts.
struct Conditioning {
  Var pattern;
  Var state_offset;
};

/// Pattern embeddings d_k for each row, drawn from the trainable bank.
inline Conditioning bank_patterns(const Seq2SeqModel& model, std::span<const std::size_t> pattern_ids) {
  if (!model.patterns) throw ContractError("model has no pattern bank (mode " + to_string(model.config().mode) + ")");
  return {gather_rows(model.patterns, pattern_ids), nullptr};
}

inline Conditioning fixed_pattern(Tensor rows) { return {constant(std::move(rows)), nullptr}; }

inline Conditioning fixed_state_offset(Tensor rows) { return {nullptr, constant(std::move(rows))}; }

/// Decoder initial state: the encoder's per-layer final (h, c), optionally offset.
inline DecoderState initial_state(const Seq2SeqModel& model, const EncoderOutput& enc, const Var& offset) {
  DecoderState state;
  state.layers = enc.finals;
  if (!offset) return state;
  const std::size_t H = model.config().hidden_dim;
  const std::size_t rows = enc.finals.front().h->value.rows();
  if (offset->shape() != Shape{rows, model.config().state_offset_dim()})
    throw DimensionError("state offset " + shape_str(offset->shape()) + " does not match [" +
                         std::to_string(rows) + "x" + std::to_string(model.config().state_offset_dim()) + "]");
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    state.layers[l].h = add(state.layers[l].h, slice(offset, 1, 2 * l * H, H));
    state.layers[l].c = add(state.layers[l].c, slice(offset, 1, (2 * l + 1) * H, H));
  }
  return state;
}

struct StepOutput {
  Var logits;  // [B x V]
  DecoderState state;
  Var attention;  // [B x N]
};

/// One decoder step producing unnormalized scores over the vocabulary.
inline StepOutput decoder_forward(const Seq2SeqModel& model, const DecoderState& state,
                                  std::span<const TokenId> y_prev, const Var& pattern,
                                  const EncoderOutput& enc) {
  const std::size_t rows = y_prev.size();
  const std::size_t slot = model.config().decoder_pattern_dim();
  Var x = gather_rows(model.tgt_embedding, y_prev);
  if (pattern) {
    if (pattern->shape() != Shape{rows, slot})
      throw DimensionError("decode_step: pattern " + shape_str(pattern->shape()) + " does not match [" +
                           std::to_string(rows) + "x" + std::to_string(slot) + "]");
    if (slot > 0) x = concat(x, pattern, 1);
  } else if (slot > 0) {
    throw ContractError("decode_step: model mode " + to_string(model.config().mode) +
                        " requires a pattern input");
  }
  StepOutput out;
  out.state.step = state.step + 1;
  out.state.layers.reserve(model.decoder.size());
  for (std::size_t l = 0; l < model.decoder.size(); ++l) {
    out.state.layers.push_back(lstm_step(model.decoder[l], state.layers[l].h, state.layers[l].c, x));
    x = out.state.layers.back().h;
  }
  const Attention att = attend(x, enc);
  const Var ones = ones_column(rows);
  const Var attentional = tanh(matmul_nt(concat({att.context, x, ones}, 1), model.attn_combine));
  out.logits = matmul_nt(concat(attentional, ones, 1), model.output);
  out.attention = att.weights;
  return out;
}

/// One decoder step returning the word distribution p(y_t | y_<t, X, pattern).
inline std::pair<Var, DecoderState> decode_step(const Seq2SeqModel& model, const DecoderState& state,
                                                std::span<const TokenId> y_prev, const Var& pattern,
                                                const EncoderOutput& enc) {
  for (TokenId y : y_prev)
    if (y >= model.config().vocab_size) throw ContractError("decode_step: previous token out of range");
  StepOutput step = decoder_forward(model, state, y_prev, pattern, enc);
  return {softmax(step.logits), std::move(step.state)};
}

/// Teacher-forced negative log-likelihood per example, summed over target
/// positions including the appended EOS. Returns [B x 1].
inline Var batch_nll(const Seq2SeqModel& model, const EncoderOutput& enc, const Conditioning& cond,
                     std::span<const TokenSequence> targets) {
  const std::size_t B = targets.size();
  std::size_t longest = 0;
  for (const auto& y : targets) {
    validate_sequence(y, model.config().vocab_size, "sequence_nll target");
    longest = std::max(longest, y.size());
  }
  DecoderState state = initial_state(model, enc, cond.state_offset);
  std::vector<TokenId> prev(B, Vocabulary::bos), gold(B);
  Var total;
  for (std::size_t t = 0; t <= longest; ++t) {
    bool ragged = false;
    Tensor mask({B, 1}, 1.0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& y = targets[b];
      if (t < y.size()) {
        gold[b] = y[t];
      } else if (t == y.size()) {
        gold[b] = Vocabulary::eos;
      } else {
        gold[b] = Vocabulary::pad;
        mask[b] = 0.0;
        ragged = true;
      }
    }
    StepOutput step = decoder_forward(model, state, prev, cond.pattern, enc);
    Var picked = select_columns(log_softmax(step.logits), gold);
    if (ragged) picked = mul(picked, constant(std::move(mask)));
    total = total ? add(total, picked) : picked;
    state = std::move(step.state);
    prev = gold;
  }
  return neg(total);
}

/// Scalar NLL of one pair under an explicit conditioning.
inline Var sequence_nll(const Seq2SeqModel& model, const TokenSequence& source, const TokenSequence& target,
                        const Conditioning& cond) {
  validate_sequence(source, model.config().vocab_size, "sequence_nll source");
  const EncoderOutput enc = encode(model, source);
  return sum(batch_nll(model, enc, cond, std::span<const TokenSequence>(&target, 1)));
}

/// Scalar NLL of one pair under pattern k. Models without a pattern bank
/// accept only k == 0 and are evaluated with a zero pattern slot.
inline Var sequence_nll(const Seq2SeqModel& model, const TokenSequence& source, const TokenSequence& target,
                        std::size_t k) {
  Conditioning cond;
  if (model.patterns) {
    if (k >= model.config().num_patterns) throw ContractError("sequence_nll: pattern index out of range");
    const std::size_t ids[1] = {k};
    cond = bank_patterns(model, ids);
  } else {
    if (k != 0) throw ContractError("sequence_nll: model has a single decoder");
    if (model.config().decoder_pattern_dim() > 0)
      cond.pattern = constant(Tensor({1, model.config().decoder_pattern_dim()}));
  }
  return sequence_nll(model, source, target, cond);
}

}  // namespace dpage
