// dpage: dataset generation, training, decoding and evaluation.
//
//   dpage gen-data --dataset syn-scale --seed 7 --out data/
//   dpage train    --data data/ --mode dpage --k 5 --seed 7 --out run/
//   dpage decode   --checkpoint run/model.ckpt --input data/test.src --mode dpage --k 5 --out run/dec
//   dpage eval     --decoded run/dec --data data/ --out run/eval

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dpage/commands.hpp"

namespace {

using namespace dpage;

// argv[0] is reduced to its file name so reports do not depend on install paths.
std::vector<std::string> invocation(int argc, char** argv) {
  std::vector<std::string> out(argv, argv + argc);
  if (!out.empty()) out[0] = std::filesystem::path(out[0]).filename().string();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diverse paraphrase generation with pattern embeddings"};
  app.require_subcommand(1);

  cli::GenDataOptions gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--dataset", gen.dataset, "syn-sub or syn-scale")->check(CLI::IsMember({"syn-sub", "syn-scale"}));
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--train-inputs", gen.train_inputs, "Distinct training inputs");
  gen_cmd->add_option("--test-inputs", gen.test_inputs, "Distinct test inputs");
  gen_cmd->add_option("--k", gen.num_patterns, "Number of dictionaries (syn-sub)");

  cli::TrainOptions tr;
  std::string tr_data, tr_out, tr_mode = "dpage";
  std::uint64_t tr_seed = 7;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", tr_data, "Directory holding train.tsv")->required();
  train_cmd->add_option("--out", tr_out, "Output directory (model.ckpt, training_log.json)")->required();
  train_cmd->add_option("--mode", tr_mode, "dpage, seq2seq, noise or vae")
      ->check(CLI::IsMember({"dpage", "seq2seq", "noise", "vae"}));
  train_cmd->add_option("--k", tr.model.num_patterns, "Pattern embeddings (dpage)");
  train_cmd->add_option("--seed", tr_seed, "Initialization and shuffling seed");
  train_cmd->add_option("--hidden", tr.model.hidden_dim, "LSTM hidden size");
  train_cmd->add_option("--embed", tr.model.embed_dim, "Word embedding size");
  train_cmd->add_option("--pattern-dim", tr.model.pattern_dim, "Pattern / noise vector size");
  train_cmd->add_option("--layers", tr.model.num_layers, "LSTM layers");
  train_cmd->add_option("--epochs", tr.training.epochs, "Training epochs");
  train_cmd->add_option("--lr", tr.training.lr, "Initial SGD learning rate");
  train_cmd->add_option("--batch", tr.training.batch_size, "Mini-batch size");

  cli::DecodeOptions dec;
  std::string dec_ckpt, dec_in, dec_out;
  auto* decode_cmd = app.add_subcommand("decode", "Decode K outputs per input line");
  decode_cmd->add_option("--checkpoint", dec_ckpt, "model.ckpt")->required();
  decode_cmd->add_option("--input", dec_in, "Source lines (test.src)")->required();
  decode_cmd->add_option("--out", dec_out, "Output directory (decoder_k.txt)")->required();
  decode_cmd->add_option("--mode", dec.mode, "dpage, beam, noise, vae or seq2seq")
      ->check(CLI::IsMember({"dpage", "beam", "noise", "vae", "seq2seq"}));
  decode_cmd->add_option("--k", dec.decode.top_k, "Outputs per input");
  decode_cmd->add_option("--beam", dec.decode.beam_size, "Beam size");
  decode_cmd->add_option("--max-len", dec.decode.max_len, "Maximum output length");
  decode_cmd->add_option("--seed", dec.decode.noise_seed, "Noise bank seed (noise, vae)");

  cli::EvalOptions ev;
  std::string ev_decoded, ev_data, ev_src, ev_out;
  std::vector<std::string> ev_refs;
  auto* eval_cmd = app.add_subcommand("eval", "Score decoder outputs against references");
  eval_cmd->add_option("--decoded", ev_decoded, "Directory holding decoder_k.txt")->required();
  eval_cmd->add_option("--data", ev_data, "Dataset directory (test.src, ref_k.txt)");
  eval_cmd->add_option("--refs", ev_refs, "Reference files (overrides --data)");
  eval_cmd->add_option("--src", ev_src, "Source file (overrides --data)");
  eval_cmd->add_option("--out", ev_out, "Output directory (report.json, confusion.csv)")->required();
  eval_cmd->add_option("--seed", ev.seed, "Seed echoed into the report");
  eval_cmd->add_option("--top-words", ev.top_words, "JD contributor words per decoder");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "E_CONFIG: " << e.what() << std::endl;
    return 2;
  }

  return cli::run_guarded([&] {
    if (*gen_cmd) {
      gen.out_dir = gen_out;
      cli::cmd_gen_data(gen);
    } else if (*train_cmd) {
      tr.data_dir = tr_data;
      tr.out_dir = tr_out;
      tr.model.mode = parse_model_mode(tr_mode);
      tr.model.seed = tr_seed;
      tr.training.seed = tr_seed;
      cli::cmd_train(tr, &std::cout);
    } else if (*decode_cmd) {
      dec.checkpoint = dec_ckpt;
      dec.input = dec_in;
      dec.out_dir = dec_out;
      cli::cmd_decode(dec);
    } else if (*eval_cmd) {
      if (ev_data.empty() && (ev_refs.empty() || ev_src.empty()))
        throw ConfigError("eval needs --data or both --refs and --src");
      ev.decoded_dir = ev_decoded;
      ev.out_dir = ev_out;
      ev.source = ev_src.empty() ? std::filesystem::path(ev_data) / "test.src" : std::filesystem::path(ev_src);
      if (!ev_refs.empty())
        ev.refs.assign(ev_refs.begin(), ev_refs.end());
      else
        ev.refs = cli::reference_files(ev_data);
      ev.invocation = invocation(argc, argv);
      cli::cmd_eval(ev);
    }
  });
}
