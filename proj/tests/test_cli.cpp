#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "structlab/cli.hpp"
#include "structlab/corpus.hpp"

namespace structlab::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = 0;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("structlab-cli-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

// Parser weights chosen by hand so that "I like cats" gets the distances
// [high, low] and the heights I < cats < like, i.e. (I (like cats)) with
// `like` as root and both other words attached to it.
fs::path hand_built_checkpoint() {
  model::ModelConfig c;
  c.vocab_size = 6;
  c.layers = 1;
  c.d_model = 4;
  c.heads = 2;
  c.d_ff = 8;
  c.parser_layers = 1;
  c.dropout = 0;
  c.max_train_length = 8;
  c.max_eval_length = 8;
  c.precision = model::Precision::k64;
  model::StructFormer<double> m(c);
  auto& p = m.parameters();
  const std::size_t d = 4;
  auto& embed = p.get("embed.tokens").value;
  embed.fill(0);
  for (std::size_t w = 0; w < 3; ++w) embed.at(3 + w, w) = 1;  // I, like, cats on axes 0, 1, 2
  auto& conv = p.get("parser.conv0.weight").value;
  conv.fill(0);
  for (std::size_t k = 0; k < d; ++k) conv.at(d + k, k) = 1;  // centre tap passes the word through
  auto& dh = p.get("parser.distance.hidden").value;
  dh.fill(0);
  dh.at(0, 0) = 1;  // fires only when `I` is on the left of the gap
  auto& dout = p.get("parser.distance.out").value;
  dout.fill(0);
  dout[0] = 3;
  auto& hh = p.get("parser.height.hidden").value;
  hh.fill(0);
  for (std::size_t k = 0; k < d; ++k) hh.at(k, k) = 1;
  auto& hout = p.get("parser.height.out").value;
  hout.fill(0);
  hout[0] = 0.5;
  hout[1] = 3;
  hout[2] = 2;
  p.get("dist.temperature").value.fill(model::inverse_softplus(0.05));

  const auto dir = scratch("hand");
  const std::vector<std::string> vocab{corpus::Vocab::kUnkToken, corpus::Vocab::kPadToken,
                                       corpus::Vocab::kMaskToken, "I", "like", "cats"};
  model::save_checkpoint(dir / "model.ckpt", m, vocab);
  return dir / "model.ckpt";
}

TEST(CliParse, HandBuiltCheckpointGivesExpectedTree) {
  const auto ckpt = hand_built_checkpoint();
  const auto input = ckpt.parent_path() / "input.txt";
  write_file(input, "I like cats\n\nI like cats\n");
  const auto r = run_cli({"parse", "--checkpoint", ckpt.string(), "--corpus", input.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto lines = json_lines(r.out);
  ASSERT_EQ(lines.size(), 2u);  // the empty line is skipped
  EXPECT_NE(r.err.find("empty"), std::string::npos) << r.err;
  EXPECT_EQ(lines[0]["tree"], "(I (like cats))");
  EXPECT_EQ(lines[0]["heads"], (std::vector<std::string>{"like", "ROOT", "like"}));
  EXPECT_EQ(lines[0]["parents"], (std::vector<int>{2, 0, 2}));
  EXPECT_EQ(lines[0], lines[1]);
  // same input, same output
  EXPECT_EQ(run_cli({"parse", "--checkpoint", ckpt.string(), "--corpus", input.string()}).out, r.out);
}

TEST(CliParse, ConllOutputAndDump) {
  const auto ckpt = hand_built_checkpoint();
  const auto input = ckpt.parent_path() / "input.txt";
  write_file(input, "I like cats\n");
  const auto conll = run_cli({"parse", "--checkpoint", ckpt.string(), "--corpus", input.string(), "--format", "conll"});
  ASSERT_EQ(conll.code, kOk) << conll.err;
  std::istringstream in(conll.out);
  const auto graphs = corpus::read_conll(in);
  ASSERT_EQ(graphs.size(), 1u);
  EXPECT_EQ(*graphs[0].parents, (std::vector<int>{1, -1, 1}));

  const auto dump = run_cli({"parse", "--checkpoint", ckpt.string(), "--corpus", input.string(), "--dump"});
  const auto j = json_lines(dump.out).at(0);
  EXPECT_EQ(j["tau"].size(), 2u);
  EXPECT_EQ(j["delta"].size(), 3u);
  EXPECT_GT(j["tau"][0].get<double>(), j["tau"][1].get<double>());
}

TEST(CliInspect, RelationWeightsAndParentRows) {
  const auto ckpt = hand_built_checkpoint();
  const auto input = ckpt.parent_path() / "input.txt";
  write_file(input, "I like cats\ncats like I\n");
  const auto r = run_cli({"inspect", "--checkpoint", ckpt.string(), "--corpus", input.string()});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto lines = json_lines(r.out);
  ASSERT_EQ(lines.size(), 3u);
  const auto& header = lines[0];
  ASSERT_EQ(header["relation_weights"].size(), 1u);
  ASSERT_EQ(header["relation_weights"][0].size(), 2u);
  for (const auto& mix : header["relation_weights"][0]) {
    EXPECT_NEAR(mix["parent"].get<double>() + mix["dep"].get<double>(), 1.0, 1e-12);
  }
  EXPECT_NEAR(header["temperatures"][0].get<double>(), 0.05, 1e-9);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto matrix = lines[k]["parent_matrix"].get<std::vector<double>>();
    ASSERT_EQ(matrix.size(), 9u);
    for (std::size_t i = 0; i < 3; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_GE(matrix[i * 3 + j], 0.0);
        row += matrix[i * 3 + j];
      }
      EXPECT_LE(row, 1.0 + 1e-9);
    }
  }
}

TEST(CliEval, PassThroughAndBaselines) {
  const auto dir = scratch("eval");
  ASSERT_EQ(run_cli({"generate", "--out", dir.string(), "--sentences", "50", "--heldout", "20"}).code, kOk);
  const auto gold = (dir / "heldout.trees").string();
  const auto perfect = run_cli({"eval", "--predicted-trees", gold, "--gold-trees", gold, "--json"});
  ASSERT_EQ(perfect.code, kOk) << perfect.err;
  EXPECT_DOUBLE_EQ(json::parse(perfect.out)["uf1"].get<double>(), 100.0);

  const auto report_dir = dir / "report";
  const auto right = run_cli({"eval", "--baseline", "right", "--gold-trees", gold, "--gold-deps-conll",
                              (dir / "heldout.conll").string(), "--out", report_dir.string()});
  ASSERT_EQ(right.code, kOk) << right.err;
  const auto report = json::parse(read_file(report_dir / "report.json"));
  EXPECT_TRUE(report.contains("uf1"));
  EXPECT_TRUE(report.contains("uas_conll"));
  EXPECT_LT(report["uf1"].get<double>(), 100.0);
  EXPECT_TRUE(fs::exists(report_dir / "report.txt"));
  EXPECT_TRUE(fs::exists(report_dir / "config.txt"));

  const auto random = run_cli({"eval", "--baseline", "random", "--seeds", "1,2,3", "--gold-trees", gold, "--json"});
  ASSERT_EQ(random.code, kOk) << random.err;
  EXPECT_EQ(json::parse(random.out)["runs"], 3);
}

TEST(CliGenerate, WritesAlignedSplits) {
  const auto dir = scratch("generate");
  ASSERT_EQ(run_cli({"generate", "--out", dir.string(), "--seed", "3", "--sentences", "40", "--heldout", "10"}).code,
            kOk);
  std::ifstream txt(dir / "train.txt"), trees(dir / "train.trees");
  std::size_t a = 0, b = 0;
  for (std::string line; std::getline(txt, line);) ++a;
  for (std::string line; std::getline(trees, line);) ++b;
  EXPECT_EQ(a, 40u);
  EXPECT_EQ(b, 40u);
  EXPECT_EQ(corpus::read_conll(dir / "heldout.conll").size(), 10u);
}

std::vector<std::string> tiny_train(const fs::path& corpus_path, const fs::path& out) {
  return {"train", "--corpus", corpus_path.string(), "--out", out.string(), "--precision", "64",
          "--steps", "20", "--set", "layers=1", "--set", "d_model=16", "--set", "heads=2",
          "--set", "d_ff=32", "--set", "parser_layers=1", "--set", "batch_size=4", "--set",
          "warmup=5", "--set", "log_every=10"};
}

TEST(CliTrain, SmokeRunLogsPerplexityAndWritesCheckpoint) {
  const auto dir = scratch("train");
  ASSERT_EQ(run_cli({"generate", "--out", dir.string(), "--sentences", "60", "--heldout", "10"}).code, kOk);
  const auto r = run_cli(tiny_train(dir / "train.txt", dir / "run"));
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("final masked perplexity"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "run" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "vocab.txt"));
  const auto metrics = json_lines(read_file(dir / "run" / "metrics.jsonl"));
  ASSERT_FALSE(metrics.empty());
  EXPECT_GT(metrics.back()["ppl"].get<double>(), 1.0);
}

TEST(CliTrain, EchoedConfigReproducesTheRun) {
  const auto dir = scratch("echo");
  ASSERT_EQ(run_cli({"generate", "--out", dir.string(), "--sentences", "60", "--heldout", "10"}).code, kOk);
  ASSERT_EQ(run_cli(tiny_train(dir / "train.txt", dir / "a")).code, kOk);
  const auto again = run_cli({"train", "--config", (dir / "a" / "config.txt").string(), "--out", (dir / "b").string()});
  ASSERT_EQ(again.code, kOk) << again.err;
  EXPECT_EQ(read_file(dir / "a" / "model.ckpt"), read_file(dir / "b" / "model.ckpt"));
  EXPECT_EQ(read_file(dir / "a" / "config.txt"), read_file(dir / "b" / "config.txt").replace(
                                                      read_file(dir / "b" / "config.txt").find((dir / "b").string()),
                                                      (dir / "b").string().size(), (dir / "a").string()));
}

TEST(CliExitCodes, UsageDataAndNumerical) {
  EXPECT_EQ(run_cli({}).code, kUsage);
  EXPECT_EQ(run_cli({"parse"}).code, kUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, kUsage);
  const auto dir = scratch("codes");
  ASSERT_EQ(run_cli({"generate", "--out", dir.string(), "--sentences", "30", "--heldout", "5"}).code, kOk);
  auto bad_key = tiny_train(dir / "train.txt", dir / "x");
  bad_key.insert(bad_key.end(), {"--set", "no_such_key=1"});
  const auto usage = run_cli(bad_key);
  EXPECT_EQ(usage.code, kUsage);
  EXPECT_NE(usage.err.find("no_such_key"), std::string::npos) << usage.err;
  EXPECT_EQ(run_cli({"parse", "--checkpoint", (dir / "missing.ckpt").string()}).code, kData);
  EXPECT_EQ(run_cli(tiny_train(dir / "absent.txt", dir / "y")).code, kData);
  auto diverging = tiny_train(dir / "train.txt", dir / "z");
  diverging.insert(diverging.end(), {"--set", "learning_rate=1e300", "--set", "warmup=0"});
  const auto numeric = run_cli(diverging);
  EXPECT_EQ(numeric.code, kNumerical) << numeric.err;
}

TEST(CliExitCodes, ProcessExitStatus) {
  const std::string binary = STRUCTLAB_CLI_PATH;
  const int status = std::system((binary + " parse > /dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), kUsage);
}

}  // namespace
}  // namespace structlab::cli
