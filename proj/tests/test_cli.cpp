#include <cstdlib>
#include <filesystem>

#include "doctest.h"
#include "json.hpp"
#include "redbert/cli.hpp"
#include "test_util.hpp"

using namespace redbert;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "redbert");
  return cli_dispatch(args);
}

nlohmann::json manifest(const fs::path& dir) {
  return nlohmann::json::parse(testutil::read_file(dir / "manifest.json"));
}

// One small generated corpus shared by the tests below.
const testutil::TempDir& workspace() {
  static testutil::TempDir dir("cli");
  static const int status = run({"gen-corpus", "--run-root", dir.path().string(), "--name", "gen",
                                 "--docs", "80", "--examples", "80", "--dep-dim", "8", "--seed",
                                 "1"});
  REQUIRE(status == 0);
  return dir;
}

std::vector<std::string> tiny_model_flags() {
  return {"--layers", "1", "--hidden", "16", "--heads", "2", "--max-len", "32",
          "--dep-dim", "8", "--dep-heads", "2", "--batch-size", "16", "--lr", "1e-3",
          "--epochs", "1"};
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(run({}) == kExitUsage);
  CHECK(run({"teleport"}) == kExitUsage);
  CHECK(run({"gen-corpus", "--bogus"}) == kExitUsage);
  CHECK(run({"pretrain"}) == kExitUsage);  // --corpus is required
  CHECK(run({"--help"}) == kExitOk);
  CHECK(run({"finetune", "--help"}) == kExitOk);
}

TEST_CASE("gen-corpus writes the manifest and every output") {
  const auto& ws = workspace();
  const fs::path gen = ws / "gen";
  const auto m = manifest(gen);
  CHECK(m["command"] == "gen-corpus");
  CHECK(m["seed"] == 1);
  CHECK(m["config"]["docs"] == "80");
  CHECK(m.contains("version"));
  for (const auto& out : m["outputs"]) CHECK(fs::exists(gen / out.get<std::string>()));
  CHECK(fs::exists(gen / "config.txt"));
}

TEST_CASE("data and configuration failures map to exit codes") {
  const auto& ws = workspace();
  const std::string root = ws.path().string();
  CHECK(run({"finetune", "--run-root", root, "--name", "bad-task", "--task", "weather", "--data",
             (ws / "gen" / "intent.jsonl").string()}) == kExitUsage);
  CHECK(run({"finetune", "--run-root", root, "--name", "no-data", "--task", "intent", "--data",
             (ws / "missing.jsonl").string()}) == kExitFailure);
  CHECK(run({"gen-corpus", "--run-root", root, "--name", "bad-frac", "--chat-fraction", "2"}) ==
        kExitUsage);
}

TEST_CASE("flags override the config file, which overrides defaults") {
  const auto& ws = workspace();
  testutil::write_file(ws / "settings.txt", "docs = 30\nexamples=20\nchat-fraction=0.5\n");
  REQUIRE(run({"gen-corpus", "--run-root", ws.path().string(), "--name", "precedence", "--config",
               (ws / "settings.txt").string(), "--docs", "25"}) == 0);
  const auto m = manifest(ws / "precedence");
  CHECK(m["config"]["docs"] == "25");
  CHECK(m["config"]["examples"] == "20");
  CHECK(m["config"]["chat-fraction"] == "0.5");
  CHECK(m["config"]["dep-dim"] == "300");
}

TEST_CASE("the run root falls back to REDBERT_RUN_DIR") {
  testutil::TempDir dir("envroot");
  ::setenv("REDBERT_RUN_DIR", dir.path().c_str(), 1);
  const int status = run({"gen-corpus", "--docs", "10", "--examples", "10", "--dep-dim", "4"});
  ::unsetenv("REDBERT_RUN_DIR");
  CHECK(status == 0);
  CHECK(fs::exists(dir / "gen-corpus-seed0" / "manifest.json"));
}

TEST_CASE("pretrain, finetune, eval and project chain together") {
  const auto& ws = workspace();
  const std::string root = ws.path().string();
  const fs::path gen = ws / "gen";
  const auto base = with({"--run-root", root, "--corpus", (gen / "corpus.jsonl").string(),
                          "--vocab", (gen / "vocab.txt").string(), "--instances", "64"},
                         tiny_model_flags());
  REQUIRE(run(with({"pretrain", "--name", "plain"}, base)) == 0);
  REQUIRE(run(with({"pretrain", "--name", "dep", "--inject-deps", "--dep-embeddings",
                    (gen / "dep_embeddings.txt").string()},
                   base)) == 0);
  for (const auto* name : {"plain", "dep"}) {
    CHECK(fs::exists(ws / name / "checkpoint.bin"));
    CHECK(testutil::read_file(ws / name / "metrics.csv").rfind("step,split,loss,f1\n", 0) == 0);
  }

  REQUIRE(run(with({"finetune", "--run-root", root, "--name", "ner", "--task", "ner", "--data",
                    (gen / "ner.jsonl").string(), "--labels", (gen / "ner.labels").string(),
                    "--vocab", (gen / "vocab.txt").string(), "--checkpoint",
                    (ws / "dep" / "checkpoint.bin").string()},
                   {"--batch-size", "16", "--lr", "1e-3", "--epochs", "1"})) == 0);
  const std::string report = testutil::read_file(ws / "ner" / "report.csv");
  for (const auto* tag : {"B-brand", "I-brand", "B-product", "B-quantity", "O"}) {
    CHECK(report.find(std::string("\n") + tag + ",") != std::string::npos);
  }

  REQUIRE(run({"eval", "--run-root", root, "--name", "ner-eval", "--checkpoint",
               (ws / "ner" / "checkpoint.bin").string(), "--data", (gen / "ner.jsonl").string(),
               "--vocab", (gen / "vocab.txt").string()}) == 0);
  CHECK(fs::exists(ws / "ner-eval" / "report.csv"));

  REQUIRE(run({"project", "--run-root", root, "--name", "proj", "--sentence",
               "i want to buy asian paints", "--model-a", (ws / "plain" / "checkpoint.bin").string(),
               "--model-b", (ws / "ner" / "checkpoint.bin").string(), "--vocab",
               (gen / "vocab.txt").string()}) == 0);
  for (const auto* f : {"projection.svg", "projection.csv", "distances.csv"}) {
    CHECK(fs::exists(ws / "proj" / f));
  }
}

TEST_CASE("re-running from the written config reproduces metrics bit for bit") {
  const auto& ws = workspace();
  const std::string root = ws.path().string();
  const fs::path gen = ws / "gen";
  REQUIRE(run(with({"pretrain", "--run-root", root, "--name", "first", "--seed", "5", "--corpus",
                    (gen / "corpus.jsonl").string(), "--vocab", (gen / "vocab.txt").string(),
                    "--instances", "48"},
                   tiny_model_flags())) == 0);
  REQUIRE(run({"pretrain", "--config", (ws / "first" / "config.txt").string(), "--name",
               "second"}) == 0);
  const std::string a = testutil::read_file(ws / "first" / "metrics.csv");
  CHECK(a.size() > 30);
  CHECK(a == testutil::read_file(ws / "second" / "metrics.csv"));
  CHECK(manifest(ws / "first")["config"] == [&] {
    auto c = manifest(ws / "second")["config"];
    c["name"] = "first";
    return c;
  }());
}
