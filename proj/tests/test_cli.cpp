#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cbert/io.hpp"
#include "cli.hpp"
#include "test_util.hpp"

namespace cbert::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

// The run directory announced on the first output line.
fs::path run_dir(const Result& r) {
  const std::string prefix = "run directory: ";
  const auto line = r.out.substr(0, r.out.find('\n'));
  EXPECT_EQ(line.rfind(prefix, 0), 0u) << r.out << r.err;
  return line.substr(prefix.size());
}

std::string value_of(const std::string& report, const std::string& key) {
  std::istringstream in(report);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + "\t", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

void put(const fs::path& p, const std::string& text) { write_file_atomic(p, text); }

// A small model for commands that train.
json tiny_model() {
  return {{"layers", 1},      {"attention_heads", 2}, {"hidden", 16},
          {"ffn", 32},        {"max_positions", 24},  {"dropout", 0.0},
          {"mlm_vocab_size", 12},
          {"charcnn", {{"char_dim", 4}, {"filters", {{1, 4}, {2, 8}}}, {"highway_layers", 1}}}};
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  const auto unknown = run({"frobnicate"});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("unknown command"), std::string::npos);
  test::TempDir dir("cli");
  EXPECT_EQ(run({"count-params", "--no-such-flag", "--out", dir.path().string()}).code, 2);
  EXPECT_EQ(run({"count-params", "--mode", "bytes", "--out", dir.path().string()}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_TRUE(fs::is_empty(dir.path()));
}

TEST(Cli, CountParamsBaseCharacter) {
  test::TempDir dir("cli");
  const auto r = run({"count-params", "--base", "--mode", "character", "--out",
                      dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const double backbone = std::stod(value_of(r.out, "backbone"));
  EXPECT_NEAR(backbone, 104.6e6, 0.01 * 104.6e6);
  EXPECT_EQ(value_of(r.out, "charcnn"), "18562416");
  EXPECT_TRUE(fs::exists(run_dir(r) / "count_params.tsv"));
}

TEST(Cli, GradcheckTinyConfigPasses) {
  test::TempDir dir("cli");
  for (const char* mode : {"character", "wordpiece"}) {
    const auto r = run({"gradcheck", "--mode", mode, "--samples", "8", "--out",
                        dir.path().string()});
    ASSERT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("0.0001\tPASS"), std::string::npos) << r.out;
    const auto report = json::parse(read_file(run_dir(r) / "gradcheck.json"));
    EXPECT_LT(report[0]["max_rel_error"].get<double>(), 1e-4);
  }
}

TEST(Cli, AnalyzeTokenizationWithCoveringVocab) {
  test::TempDir dir("cli");
  put(dir.path() / "corpus.txt", "aspirin dose aspirin\nwarfarin\n");
  put(dir.path() / "vocab.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\naspirin\ndose\nwarfarin\n");
  const auto r = run({"analyze-tokenization", "--corpus", (dir.path() / "corpus.txt").string(),
                      "--vocab", (dir.path() / "vocab.txt").string(), "--out",
                      (dir.path() / "runs").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(read_file(run_dir(r) / "fragmentation-0.json"));
  EXPECT_EQ(report["unsplit_fraction"].get<double>(), 1.0);

  put(dir.path() / "small.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\n");
  const auto mismatch =
      run({"analyze-tokenization", "--corpus", (dir.path() / "corpus.txt").string(), "--vocab",
           (dir.path() / "vocab.txt").string(), (dir.path() / "small.txt").string(), "--out",
           (dir.path() / "runs").string()});
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_NE(mismatch.err.find("equal sizes"), std::string::npos);
}

TEST(Cli, ConfigFileFlagsOverrideAndRunConfigIsLogged) {
  test::TempDir dir("cli");
  put(dir.path() / "cfg.json",
      json{{"seed", 5}, {"samples", 4}, {"tolerance", 0.5}, {"out", dir.path().string()}}.dump());
  const auto r = run({"gradcheck", "--config", (dir.path() / "cfg.json").string(), "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path d = run_dir(r);
  EXPECT_NE(d.filename().string().find("gradcheck-"), std::string::npos);
  EXPECT_EQ(d.filename().string().substr(d.filename().string().size() - 6), "-seed9");
  const auto logged = json::parse(read_file(d / "run_config.json"));
  EXPECT_EQ(logged["seed"], 9);
  EXPECT_EQ(logged["options"]["samples"], "4");
  EXPECT_EQ(logged["options"]["tolerance"], "0.5");
  EXPECT_EQ(logged["command"], "gradcheck");
  EXPECT_TRUE(logged.contains("model"));

  // Re-running from the logged options reproduces the report.
  const auto again = run({"gradcheck", "--config", (dir.path() / "cfg.json").string(), "--seed",
                          "9"});
  EXPECT_NE(run_dir(again), d);
  EXPECT_EQ(read_file(run_dir(again) / "gradcheck.json"), read_file(d / "gradcheck.json"));

  put(dir.path() / "bad.json", json{{"no_such_option", 1}}.dump());
  EXPECT_EQ(run({"gradcheck", "--config", (dir.path() / "bad.json").string()}).code, 2);
}

TEST(Cli, BuildVocabAndPerturb) {
  test::TempDir dir("cli");
  put(dir.path() / "words.txt", "lower lowest newer newest wider widest\n");
  const auto v = run({"build-vocab", "--corpus", (dir.path() / "words.txt").string(), "--size",
                      "40", "--out", dir.path().string()});
  ASSERT_EQ(v.code, 0) << v.err;
  EXPECT_TRUE(fs::exists(run_dir(v) / "vocab.txt"));

  put(dir.path() / "test.tsv", "the cat sat\ton the mat\tyes\nhello\t\tno\n");
  const auto p = run({"perturb", "--input", (dir.path() / "test.tsv").string(), "--level", "1",
                      "--out", dir.path().string()});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(value_of(p.out, "tokens"), "7");
  EXPECT_EQ(value_of(p.out, "perturbed"), "7");
  const std::string noisy = read_file(run_dir(p) / "test.tsv");
  EXPECT_NE(noisy, read_file(dir.path() / "test.tsv"));
  EXPECT_NE(noisy.find("\tyes\n"), std::string::npos);
  EXPECT_EQ(run({"perturb", "--input", (dir.path() / "test.tsv").string(), "--level", "2",
                 "--out", dir.path().string()})
                .code,
            1);
}

TEST(Cli, PretrainFinetuneEnsembleRobustnessBench) {
  test::TempDir dir("cli");
  const std::string out = (dir.path() / "runs").string();
  put(dir.path() / "docs.txt",
      "the cat sat on the mat\nthe dog ate the bone\n\na bird sang a song\nthe sun was warm\n\n"
      "we read a book\nit was long\n");
  put(dir.path() / "cfg.json", json{{"model", tiny_model()}}.dump());
  const std::string cfg = (dir.path() / "cfg.json").string();

  const auto pre = run({"pretrain", "--config", cfg, "--corpus",
                        (dir.path() / "docs.txt").string(), "--updates", "3", "--batch", "2",
                        "--seq-len", "16", "--out", out});
  ASSERT_EQ(pre.code, 0) << pre.err;
  const fs::path ckpt = run_dir(pre) / "final";
  EXPECT_TRUE(fs::exists(ckpt / "manifest.json"));
  EXPECT_TRUE(fs::exists(run_dir(pre) / "loss.tsv"));

  put(dir.path() / "task.json",
      json{{"name", "toy"}, {"kind", "pair_class"}, {"labels", {"neg", "pos"}},
           {"metric", "accuracy"}}
          .dump());
  std::string train, test;
  for (int i = 0; i < 10; ++i) {
    train += std::string(i % 2 ? "bad" : "good") + " film\tok\t" + (i % 2 ? "neg" : "pos") + "\n";
  }
  test = "good plot\t\tpos\nbad plot\t\tneg\n";
  put(dir.path() / "train.tsv", train);
  put(dir.path() / "test.tsv", test);
  const std::vector<std::string> data{"--task",  (dir.path() / "task.json").string(),
                                      "--train", (dir.path() / "train.tsv").string(),
                                      "--test",  (dir.path() / "test.tsv").string()};

  std::vector<std::string> ft{"finetune", "--checkpoint", ckpt.string(), "--seeds", "3",
                              "--epochs", "1",            "--batch",     "4", "--out", out};
  ft.insert(ft.end(), data.begin(), data.end());
  const auto fr = run(ft);
  ASSERT_EQ(fr.code, 0) << fr.err;
  const fs::path fdir = run_dir(fr);
  EXPECT_TRUE(fs::exists(fdir / "aggregate.tsv"));

  // A character checkpoint requested as wordpiece is a mode error.
  auto wrong = ft;
  wrong.insert(wrong.end(), {"--mode", "wordpiece"});
  EXPECT_EQ(run(wrong).code, 1);

  const auto en = run({"ensemble", "--task", (dir.path() / "task.json").string(), "--test",
                       (dir.path() / "test.tsv").string(), "--runs",
                       (fdir / "run-seed0.json").string(), (fdir / "run-seed1.json").string(),
                       (fdir / "run-seed2.json").string(), "--out", out});
  ASSERT_EQ(en.code, 0) << en.err;
  EXPECT_FALSE(value_of(en.out, "ensemble_variance").empty());

  std::vector<std::string> rb{"robustness", "--config", cfg,   "--seeds", "1",      "--epochs",
                              "1",          "--levels", "0",   "0.5",     "--out",  out};
  rb.insert(rb.end(), data.begin(), data.end());
  const auto rr = run(rb);
  ASSERT_EQ(rr.code, 0) << rr.err;
  EXPECT_TRUE(fs::exists(run_dir(rr) / "curve.tsv"));
  EXPECT_NE(rr.out.find("character\ttest_only\t0.5\t1\t"), std::string::npos) << rr.out;

  put(dir.path() / "vocab.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nthe\na\n"
                                "c\nd\nb\ns\nw\ni\nr\nm\n##a\n##t\n##e\n##o\n##n\n##g\n##s\n"
                                "##i\n##r\n##d\n##u\n##k\n##l\n##w\n##b\n##m\n");
  const auto be = run({"bench", "--config", cfg, "--corpus", (dir.path() / "docs.txt").string(),
                       "--vocab", (dir.path() / "vocab.txt").string(), "--out", out});
  ASSERT_EQ(be.code, 0) << be.err;
  const auto bench = json::parse(read_file(run_dir(be) / "bench.json"));
  EXPECT_EQ(bench["throughput"].size(), 4u);
  EXPECT_GT(bench["input_lengths"][1]["mean"].get<double>(),
            bench["input_lengths"][0]["mean"].get<double>());
}

}  // namespace
}  // namespace cbert::cli
