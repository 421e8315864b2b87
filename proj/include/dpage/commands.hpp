#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpage/checkpoint.hpp"
#include "dpage/datagen.hpp"
#include "dpage/decoding.hpp"
#include "dpage/error.hpp"
#include "dpage/metrics.hpp"
#include "dpage/trainer.hpp"

namespace dpage::cli {

namespace fs = std::filesystem;

inline constexpr const char* kReportSchemaVersion = "1.0";

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  std::string dataset = "syn-scale";  // syn-sub | syn-scale
  std::uint64_t seed = 7;
  fs::path out_dir;
  std::size_t train_inputs = 5000;
  std::size_t test_inputs = 1000;
  std::size_t num_patterns = 5;  // syn-sub only; syn-scale always has five units
};

inline void cmd_gen_data(const GenDataOptions& opt) {
  data::SynConfig sc;
  sc.seed = opt.seed;
  sc.train_inputs = opt.train_inputs;
  sc.test_inputs = opt.test_inputs;
  sc.num_patterns = opt.num_patterns;
  data::SyntheticDataset ds;
  if (opt.dataset == "syn-sub")
    ds = data::gen_syn_sub(sc);
  else if (opt.dataset == "syn-scale")
    ds = data::gen_syn_scale(sc);
  else
    throw ConfigError("unknown dataset '" + opt.dataset + "' (expected syn-sub or syn-scale)");
  data::write_dataset(ds, opt.out_dir);
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  fs::path data_dir;
  fs::path out_dir;  // receives model.ckpt and training_log.json
  ModelConfig model;
  TrainingConfig training;
};

inline Corpus load_training_corpus(const fs::path& data_dir, Vocabulary& vocab) {
  const fs::path tsv = data_dir / "train.tsv";
  if (!fs::exists(tsv)) throw IoError("missing training data " + tsv.string());
  const data::TsvCorpus parsed = data::load_tsv_corpus(tsv);
  if (!parsed.errors.empty())
    throw DataFormatError(tsv.string() + ":" + std::to_string(parsed.errors.front().line) + ": " +
                          parsed.errors.front().message);
  if (parsed.pairs.empty()) throw DataFormatError(tsv.string() + ": no training pairs");
  vocab = data::build_vocab(parsed.pairs);
  return encode_corpus(vocab, parsed.pairs);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

inline nlohmann::json training_log_json(const TrainResult& r, const TrainingConfig& tc, const ModelConfig& mc) {
  nlohmann::json epochs = nlohmann::json::array();
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
    epochs.push_back({{"epoch", e + 1},
                      {"lr", tc.lr_for_epoch(e + 1)},
                      {"loss", r.epoch_loss[e]},
                      {"counts", r.assignments.per_epoch[e]},
                      {"fractions", AssignmentStats::fractions(r.assignments.per_epoch[e])}});
  nlohmann::json first = nlohmann::json::array();
  for (const auto& c : r.assignments.first_batches) first.push_back({{"counts", c}, {"fractions", AssignmentStats::fractions(c)}});
  return {{"mode", to_string(mc.mode)},
          {"num_patterns", mc.num_patterns},
          {"model_config", to_json(mc)},
          {"training_config", to_json(tc)},
          {"epochs", epochs},
          {"first_batches", first}};
}

struct TrainOutput {
  TrainResult result;
  Seq2SeqModel model;  // exactly the saved weights
  Vocabulary vocab;
};

/// Trains and writes out_dir/model.ckpt and out_dir/training_log.json.
/// Only D-PAGE keeps K pattern embeddings; every other mode trains a single
/// decoder. Weights are rounded to float32 before saving so the saved model
/// decodes exactly like the trained one.
inline TrainOutput cmd_train(TrainOptions opt, std::ostream* progress = nullptr) {
  if (opt.model.mode != ModelMode::dpage) opt.model.num_patterns = 1;
  opt.training.mode = opt.model.mode;
  opt.training.validate();
  Vocabulary vocab;
  const Corpus corpus = load_training_corpus(opt.data_dir, vocab);
  opt.model.vocab_size = vocab.size();
  Seq2SeqModel model(opt.model);
  ensure_dir(opt.out_dir);
  const TrainResult result = train(model, corpus, opt.training, [&](const EpochReport& e) {
    if (!progress) return;
    *progress << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.loss << " counts";
    for (auto c : e.counts) *progress << ' ' << c;
    *progress << std::endl;
  });
  quantize_to_float32(model);
  save_checkpoint(opt.out_dir / "model.ckpt", model, opt.training, vocab);
  write_text(opt.out_dir / "training_log.json", training_log_json(result, opt.training, opt.model).dump(2) + "\n");
  return {result, std::move(model), std::move(vocab)};
}

// ---------------------------------------------------------------------------
// decode

struct DecodeOptions {
  fs::path checkpoint;
  fs::path input;
  fs::path out_dir;
  std::string mode = "dpage";  // dpage | beam | noise | vae | seq2seq (greedy)
  DecodeConfig decode;
};

inline ModelMode required_model_mode(DecodeMode m) {
  switch (m) {
    case DecodeMode::dpage: return ModelMode::dpage;
    case DecodeMode::noise: return ModelMode::noise;
    case DecodeMode::vae: return ModelMode::vae;
    case DecodeMode::beam:
    case DecodeMode::greedy: return ModelMode::seq2seq;
  }
  return ModelMode::seq2seq;
}

inline DecodeMode decode_mode_from_flag(const std::string& flag) {
  return flag == "seq2seq" ? DecodeMode::greedy : parse_decode_mode(flag);
}

/// K-way decoding of every test line. Returns outputs[k][line].
inline std::vector<std::vector<Words>> decode_corpus(const Seq2SeqModel& model, const Vocabulary& vocab,
                                                     const std::vector<Words>& sources, const DecodeConfig& config) {
  config.validate();
  const std::size_t K = config.mode == DecodeMode::greedy ? 1 : config.top_k;
  std::vector<std::vector<Words>> outputs(K);
  for (std::size_t line = 0; line < sources.size(); ++line) {
    if (sources[line].empty()) throw DataFormatError("decode: input line " + std::to_string(line + 1) + " is empty");
    const auto seqs = decode_k(model, vocab.encode(sources[line]), config);
    for (std::size_t k = 0; k < K; ++k) outputs[k].push_back(k < seqs.size() ? vocab.decode(seqs[k]) : Words{});
  }
  return outputs;
}

inline std::size_t cmd_decode(DecodeOptions opt) {
  opt.decode.mode = decode_mode_from_flag(opt.mode);
  opt.decode.validate();
  Checkpoint ck = load_checkpoint(opt.checkpoint);
  const ModelMode need = required_model_mode(opt.decode.mode);
  if (ck.model.mode != need)
    throw ConfigError("mode/checkpoint mismatch: " + opt.mode + " decoding needs a " + to_string(need) +
                      " checkpoint, but " + opt.checkpoint.string() + " was trained in " + to_string(ck.model.mode) +
                      " mode");
  const auto sources = data::read_lines(opt.input);
  const auto outputs = decode_corpus(ck.weights, ck.vocab, sources, opt.decode);
  ensure_dir(opt.out_dir);
  for (std::size_t k = 0; k < outputs.size(); ++k)
    data::write_lines(opt.out_dir / ("decoder_" + std::to_string(k) + ".txt"), outputs[k]);
  return outputs.size();
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  fs::path decoded_dir;            // decoder_0.txt ...
  std::vector<fs::path> refs;      // ref_0.txt ...
  fs::path source;                 // test.src
  fs::path out_dir;                // report.json, confusion.csv
  std::vector<std::string> invocation;
  std::uint64_t seed = 0;
  std::size_t top_words = 10;
};

// FNV-1a over the invocation; stable across platforms.
inline std::string run_id(const std::vector<std::string>& invocation) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& arg : invocation) {
    for (unsigned char c : arg) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::vector<fs::path> decoder_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (std::size_t k = 0;; ++k) {
    const fs::path p = dir / ("decoder_" + std::to_string(k) + ".txt");
    if (!fs::exists(p)) break;
    out.push_back(p);
  }
  if (out.empty()) throw IoError("no decoder_0.txt in " + dir.string());
  return out;
}

inline std::vector<fs::path> reference_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (std::size_t k = 0;; ++k) {
    const fs::path p = dir / ("ref_" + std::to_string(k) + ".txt");
    if (!fs::exists(p)) break;
    out.push_back(p);
  }
  if (out.empty()) throw IoError("no ref_0.txt in " + dir.string());
  return out;
}

namespace detail {

inline double finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw DomainError("metric '" + what + "' is not finite");
  return v;
}

// distinct-N of a corpus with no n-grams at all is reported as 0.
inline double distinct_or_zero(const metrics::TextCorpus& c, std::size_t n) {
  for (const auto& l : c)
    if (l.size() >= n) return metrics::distinct_n(c, n);
  return 0.0;
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

struct EvalResult {
  nlohmann::json report;
  metrics::ConfusionMatrix confusion;
};

inline EvalResult evaluate_outputs(const std::vector<metrics::TextCorpus>& outputs,
                                   const std::vector<metrics::TextCorpus>& references, const metrics::TextCorpus& sources,
                                   std::size_t top_words = 10) {
  if (outputs.empty()) throw DataFormatError("eval: no decoder outputs");
  if (references.empty()) throw DataFormatError("eval: no reference sets");
  const metrics::MultiReferences all_refs = metrics::transpose_references(references);
  const metrics::ConfusionMatrix cm = metrics::confusion_matrix(outputs, references);
  const metrics::LengthReport lengths = metrics::length_report(sources, outputs);

  std::vector<metrics::WordDistribution> dists;
  for (const auto& c : outputs) dists.push_back(metrics::word_distribution(c));

  nlohmann::json decoders = nlohmann::json::array();
  metrics::TextCorpus pooled;
  double bleu_sum = 0.0, sari_sum = 0.0;
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const double b = detail::finite(metrics::multi_ref_bleu(outputs[k], all_refs), "bleu");
    const double s = detail::finite(metrics::sari(sources, outputs[k], all_refs), "sari");
    bleu_sum += b;
    sari_sum += s;
    decoders.push_back({{"index", k},
                        {"bleu", b},
                        {"sari", s},
                        {"distinct_1", detail::distinct_or_zero(outputs[k], 1)},
                        {"distinct_2", detail::distinct_or_zero(outputs[k], 2)},
                        {"avg_length", lengths.decoder_avg[k]}});
    pooled.insert(pooled.end(), outputs[k].begin(), outputs[k].end());
  }

  double jd = 0.0;
  nlohmann::json top = nlohmann::json::array();
  if (outputs.size() >= 2) {
    jd = detail::finite(metrics::jeffreys_divergence(dists), "jd");
    for (const auto& words : metrics::jd_word_contributions(dists, top_words)) {
      nlohmann::json row = nlohmann::json::array();
      for (const auto& w : words) row.push_back({{"word", w.word}, {"contribution", detail::finite(w.contribution, "jd word")}});
      top.push_back(row);
    }
  }

  nlohmann::json assignment = nullptr;
  if (cm.rows() <= cm.cols()) {
    const metrics::Matching m = metrics::best_assignment(cm);
    assignment = {{"reference_of", m.reference_of}, {"mean_bleu", m.mean_score}};
  }
  const double K = static_cast<double>(outputs.size());
  nlohmann::json metric_map = {{"bleu_mean", bleu_sum / K},
                               {"sari_mean", sari_sum / K},
                               {"distinct_1", detail::distinct_or_zero(pooled, 1)},
                               {"distinct_2", detail::distinct_or_zero(pooled, 2)},
                               {"jd", jd},
                               {"source_avg_length", lengths.source_avg},
                               {"length_delta", lengths.delta},
                               {"patterns_matched_at_0.95", metrics::matched_patterns(cm, 0.95)}};
  if (!assignment.is_null()) metric_map["assignment_mean_bleu"] = assignment["mean_bleu"];
  for (auto& [name, v] : metric_map.items())
    if (v.is_number_float()) detail::finite(v.get<double>(), name);

  nlohmann::json report = {{"num_decoders", outputs.size()},
                           {"num_references", references.size()},
                           {"num_lines", sources.size()},
                           {"metrics", metric_map},
                           {"decoders", decoders},
                           {"jd", jd},
                           {"jd_top_words", top},
                           {"confusion_matrix", {{"path", "confusion.csv"}, {"values", cm.values}}},
                           {"assignment", assignment}};
  return {report, cm};
}

inline std::string confusion_csv(const metrics::ConfusionMatrix& cm) {
  std::string out = "decoder";
  for (std::size_t j = 0; j < cm.cols(); ++j) out += ",ref_" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < cm.rows(); ++i) {
    out += "decoder_" + std::to_string(i);
    for (std::size_t j = 0; j < cm.cols(); ++j) out += "," + detail::fixed6(cm.at(i, j));
    out += '\n';
  }
  return out;
}

inline nlohmann::json cmd_eval(const EvalOptions& opt) {
  const auto out_files = decoder_files(opt.decoded_dir);
  const metrics::TextCorpus sources = data::read_lines(opt.source);
  std::vector<metrics::TextCorpus> outputs, references;
  for (const auto& p : out_files) {
    outputs.push_back(data::read_lines(p));
    if (outputs.back().size() != sources.size())
      throw DataFormatError("misaligned files: " + p.string() + " has " + std::to_string(outputs.back().size()) +
                            " lines, " + opt.source.string() + " has " + std::to_string(sources.size()));
  }
  for (const auto& p : opt.refs) {
    references.push_back(data::read_lines(p));
    if (references.back().size() != sources.size())
      throw DataFormatError("misaligned files: " + p.string() + " has " + std::to_string(references.back().size()) +
                            " lines, " + opt.source.string() + " has " + std::to_string(sources.size()));
  }
  EvalResult r = evaluate_outputs(outputs, references, sources, opt.top_words);
  // File names only, so the report does not depend on where the run lives.
  std::vector<std::string> out_names, ref_names;
  for (const auto& p : out_files) out_names.push_back(p.filename().string());
  for (const auto& p : opt.refs) ref_names.push_back(p.filename().string());
  nlohmann::json report = {{"schema_version", kReportSchemaVersion},
                           {"run_id", run_id(opt.invocation)},
                           {"seed", opt.seed},
                           {"invocation", opt.invocation},
                           {"config",
                            {{"decoder_files", out_names},
                             {"reference_files", ref_names},
                             {"source_file", opt.source.filename().string()},
                             {"top_words", opt.top_words}}}};
  report.update(r.report);
  ensure_dir(opt.out_dir);
  write_text(opt.out_dir / "report.json", report.dump(2) + "\n");
  write_text(opt.out_dir / "confusion.csv", confusion_csv(r.confusion));
  return report;
}

// ---------------------------------------------------------------------------

/// Runs a command body, mapping failures to exit codes. The first stderr line
/// of every failure is "<CODE>: <message>".
inline int run_guarded(const std::function<void()>& body, std::ostream& err = std::cerr) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    err << e.code() << ": " << e.what() << std::endl;
    return e.exit_code();
  } catch (const std::bad_alloc&) {
    err << "E_RESOURCE: out of memory" << std::endl;
    return 2;
  } catch (const std::exception& e) {
    err << "E_INTERNAL: " << e.what() << std::endl;
    return 2;
  }
}

}  // namespace dpage::cli
