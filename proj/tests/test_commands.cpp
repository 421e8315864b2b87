#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "dpage/checkpoint.hpp"
#include "dpage/commands.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "dpage_cli_test";

struct CliRun {
  int code = -1;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

CliRun cli(const std::vector<std::string>& args) {
  std::string cmd = quote(DPAGE_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  const fs::path err = kWork / "stderr.txt";
  cmd += " > /dev/null 2> " + quote(err.string());
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::getline(in, r.err);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

bool has_error_code(const std::string& line) { return std::regex_search(line, std::regex("^E_[A-Z_]+: ")); }

// Shared tiny pipeline: data, one dpage model and one seq2seq model.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    ASSERT_EQ(cli({"gen-data", "--dataset", "syn-scale", "--seed", "7", "--train-inputs", "30", "--test-inputs",
                     "6", "--out", (kWork / "data").string()})
                  .code,
              0);
    for (const char* mode : {"dpage", "seq2seq"})
      ASSERT_EQ(cli({"train", "--data", (kWork / "data").string(), "--out", (kWork / mode).string(), "--mode", mode,
                       "--k", "3", "--seed", "7", "--hidden", "8", "--embed", "6", "--pattern-dim", "3", "--epochs",
                       "2", "--batch", "8"})
                    .code,
                0);
  }
  static fs::path data() { return kWork / "data"; }
};

}  // namespace

TEST_F(CliTest, GenDataWritesFileSetDeterministically) {
  for (const char* f : {"train.tsv", "test.src", "ref_0.txt", "ref_1.txt", "ref_2.txt", "ref_3.txt", "ref_4.txt"})
    EXPECT_TRUE(fs::exists(data() / f)) << f;
  EXPECT_FALSE(fs::exists(data() / "ref_5.txt"));
  EXPECT_EQ(count_lines(data() / "train.tsv"), 150u);
  ASSERT_EQ(cli({"gen-data", "--dataset", "syn-scale", "--seed", "7", "--train-inputs", "30", "--test-inputs", "6",
                   "--out", (kWork / "data2").string()})
                .code,
            0);
  for (const char* f : {"train.tsv", "test.src", "ref_0.txt", "ref_4.txt"})
    EXPECT_EQ(slurp(data() / f), slurp(kWork / "data2" / f)) << f;
}

TEST_F(CliTest, GenDataUnwritableDirectoryIsIoError) {
  std::ofstream(kWork / "plain_file") << "x";
  const CliRun r = cli({"gen-data", "--out", (kWork / "plain_file" / "sub").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(has_error_code(r.err)) << r.err;
  EXPECT_EQ(r.err.rfind("E_IO: ", 0), 0u);
}

TEST_F(CliTest, TrainForcesSingleDecoderOutsideDpage) {
  const auto ck = dpage::load_checkpoint(kWork / "seq2seq" / "model.ckpt");
  EXPECT_EQ(ck.model.num_patterns, 1u);
  EXPECT_EQ(ck.model.mode, dpage::ModelMode::seq2seq);
  EXPECT_EQ(dpage::load_checkpoint(kWork / "dpage" / "model.ckpt").model.num_patterns, 3u);
}

TEST_F(CliTest, TrainingLogFractionsSumToOne) {
  const json log = json::parse(slurp(kWork / "dpage" / "training_log.json"));
  ASSERT_EQ(log["epochs"].size(), 2u);
  for (const auto& e : log["epochs"]) {
    double total = 0.0;
    for (double f : e["fractions"]) total += f;
    EXPECT_NEAR(total, 1.0, 1e-9);
    EXPECT_EQ(e["counts"].size(), 3u);
    EXPECT_TRUE(std::isfinite(e["loss"].get<double>()));
  }
  EXPECT_FALSE(log["first_batches"].empty());
}

TEST_F(CliTest, TrainRerunGivesIdenticalCheckpointBytes) {
  ASSERT_EQ(cli({"train", "--data", data().string(), "--out", (kWork / "dpage_again").string(), "--mode", "dpage",
                   "--k", "3", "--seed", "7", "--hidden", "8", "--embed", "6", "--pattern-dim", "3", "--epochs", "2",
                   "--batch", "8"})
                .code,
            0);
  EXPECT_EQ(slurp(kWork / "dpage" / "model.ckpt"), slurp(kWork / "dpage_again" / "model.ckpt"));
  EXPECT_EQ(slurp(kWork / "dpage" / "training_log.json"), slurp(kWork / "dpage_again" / "training_log.json"));
}

TEST_F(CliTest, TrainMissingDataIsIoError) {
  const CliRun r = cli({"train", "--data", (kWork / "nowhere").string(), "--out", (kWork / "x").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(has_error_code(r.err)) << r.err;
}

TEST_F(CliTest, TrainMalformedDataIsDataFormatError) {
  fs::create_directories(kWork / "bad_data");
  std::ofstream(kWork / "bad_data" / "train.tsv") << "a b\tc\nno tab\n";
  const CliRun r = cli({"train", "--data", (kWork / "bad_data").string(), "--out", (kWork / "x").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(has_error_code(r.err)) << r.err;
}

TEST_F(CliTest, DecodeWritesKAlignedFiles) {
  const fs::path out = kWork / "dec_dpage";
  ASSERT_EQ(cli({"decode", "--checkpoint", (kWork / "dpage" / "model.ckpt").string(), "--input",
                   (data() / "test.src").string(), "--out", out.string(), "--mode", "dpage", "--k", "3", "--beam", "2"})
                .code,
            0);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(count_lines(out / ("decoder_" + std::to_string(k) + ".txt")), 6u);
  EXPECT_FALSE(fs::exists(out / "decoder_3.txt"));

  const fs::path beam = kWork / "dec_beam";
  ASSERT_EQ(cli({"decode", "--checkpoint", (kWork / "seq2seq" / "model.ckpt").string(), "--input",
                   (data() / "test.src").string(), "--out", beam.string(), "--mode", "beam", "--k", "5", "--beam", "5"})
                .code,
            0);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(count_lines(beam / ("decoder_" + std::to_string(k) + ".txt")), 6u);
}

TEST_F(CliTest, DecodeBeamKLargerThanBeamFails) {
  const CliRun r = cli({"decode", "--checkpoint", (kWork / "seq2seq" / "model.ckpt").string(), "--input",
                       (data() / "test.src").string(), "--out", (kWork / "x").string(), "--mode", "beam", "--k", "5",
                       "--beam", "3"});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(has_error_code(r.err)) << r.err;
}

TEST_F(CliTest, DecodeModeCheckpointMismatch) {
  const CliRun r = cli({"decode", "--checkpoint", (kWork / "seq2seq" / "model.ckpt").string(), "--input",
                       (data() / "test.src").string(), "--out", (kWork / "x").string(), "--mode", "dpage", "--k", "3"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("E_CONFIG: ", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("mismatch"), std::string::npos);
}

TEST_F(CliTest, DecodeCorruptCheckpointIsDataFormatError) {
  std::string bytes = slurp(kWork / "dpage" / "model.ckpt");
  bytes.resize(bytes.size() - 10);
  std::ofstream(kWork / "trunc.ckpt", std::ios::binary) << bytes;
  const CliRun r = cli({"decode", "--checkpoint", (kWork / "trunc.ckpt").string(), "--input",
                       (data() / "test.src").string(), "--out", (kWork / "x").string(), "--k", "3"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("payload length mismatch"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvalReferenceCopiesGiveIdentityRowsAndZeroJd) {
  const fs::path dec = kWork / "dec_refs";
  fs::create_directories(dec);
  fs::copy_file(data() / "ref_2.txt", dec / "decoder_0.txt", fs::copy_options::overwrite_existing);
  fs::copy_file(data() / "ref_2.txt", dec / "decoder_1.txt", fs::copy_options::overwrite_existing);
  const std::vector<std::string> args = {"eval", "--decoded", dec.string(), "--data", data().string(),
                                         "--out", (kWork / "eval_refs").string(), "--seed", "11"};
  ASSERT_EQ(cli(args).code, 0);
  const json rep = json::parse(slurp(kWork / "eval_refs" / "report.json"));
  EXPECT_EQ(rep["confusion_matrix"]["values"][0][2].get<double>(), 1.0);
  EXPECT_EQ(rep["confusion_matrix"]["values"][1][2].get<double>(), 1.0);
  EXPECT_NEAR(rep["jd"].get<double>(), 0.0, 1e-9);
  EXPECT_EQ(rep["seed"].get<int>(), 11);
  std::vector<std::string> expected = {"dpage"};
  expected.insert(expected.end(), args.begin(), args.end());
  EXPECT_EQ(rep["invocation"].get<std::vector<std::string>>(), expected);
  EXPECT_EQ(rep["schema_version"], "1.0");
  const std::string csv = slurp(kWork / "eval_refs" / "confusion.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "decoder,ref_0,ref_1,ref_2,ref_3,ref_4");
  EXPECT_NE(csv.find("decoder_0,"), std::string::npos);
  EXPECT_NE(csv.find(",1.000000,"), std::string::npos);
}

TEST_F(CliTest, EvalMisalignmentNamesFiles) {
  const fs::path dec = kWork / "dec_short";
  fs::create_directories(dec);
  std::ofstream(dec / "decoder_0.txt") << "1 m\n";
  const CliRun r = cli({"eval", "--decoded", dec.string(), "--data", data().string(), "--out", (kWork / "x").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.err.rfind("E_DATA_FORMAT: ", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("decoder_0.txt"), std::string::npos);
  EXPECT_NE(r.err.find("test.src"), std::string::npos);
}

TEST_F(CliTest, ReportsValidateAgainstPublishedSchema) {
  const fs::path dec = kWork / "dec_dpage";
  ASSERT_EQ(cli({"decode", "--checkpoint", (kWork / "dpage" / "model.ckpt").string(), "--input",
                   (data() / "test.src").string(), "--out", dec.string(), "--k", "3", "--beam", "2"})
                .code,
            0);
  ASSERT_EQ(cli({"eval", "--decoded", dec.string(), "--data", data().string(), "--out",
                   (kWork / "eval_dpage").string()})
                .code,
            0);
  ASSERT_EQ(cli({"eval", "--decoded", (kWork / "dec_refs").string(), "--data", data().string(), "--out",
                   (kWork / "eval_refs").string()})
                .code,
            0);
  const std::string schema = std::string(DPAGE_SOURCE_DIR) + "/docs/report.schema.json";
  for (const char* run : {"eval_dpage", "eval_refs"}) {
    const std::string cmd = "python3 -c " +
                            quote("import json,sys,jsonschema; jsonschema.validate(json.load(open(sys.argv[2])), "
                                  "json.load(open(sys.argv[1])))") +
                            " " + quote(schema) + " " + quote((kWork / run / "report.json").string());
    EXPECT_EQ(std::system(cmd.c_str()), 0) << run;
  }
}

TEST_F(CliTest, EveryFailureLeadsWithErrorCode) {
  const std::vector<std::vector<std::string>> failing = {
      {"bogus-command"},
      {"train", "--data", data().string()},
      {"train", "--data", data().string(), "--out", (kWork / "x").string(), "--mode", "transformer"},
      {"train", "--data", data().string(), "--out", (kWork / "x").string(), "--batch", "0"},
      {"decode", "--checkpoint", (kWork / "none.ckpt").string(), "--input", (data() / "test.src").string(), "--out",
       (kWork / "x").string()},
      {"eval", "--decoded", (kWork / "empty").string(), "--data", data().string(), "--out", (kWork / "x").string()},
      {"eval", "--decoded", (kWork / "dec_refs").string(), "--out", (kWork / "x").string()},
  };
  for (const auto& args : failing) {
    const CliRun r = cli(args);
    EXPECT_NE(r.code, 0) << args[0];
    EXPECT_TRUE(has_error_code(r.err)) << args[0] << ": " << r.err;
  }
}
