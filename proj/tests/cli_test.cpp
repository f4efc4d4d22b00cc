#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out;  // stdout and stderr combined
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(HCAM_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hcam_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

constexpr const char* kTinyModel =
    " --d-model 16 --heads 2 --mlp-hidden 16 --layers 1 --batch 4 --eval-episodes 8 --wall-time 0";

TEST(Cli, GradcheckPasses) {
  const CliRun r = run("gradcheck");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("gradcheck passed"), std::string::npos);
  EXPECT_NE(r.out.find("selftest=mutation"), std::string::npos);
  EXPECT_EQ(r.out.find("status=FAIL"), std::string::npos);
}

TEST(Cli, BenchReportsExactCounts) {
  const CliRun r = run("bench -N 32 -C 8 -k 2 --trials 2");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("hcam_scores=48 "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("dense_scores=256 "), std::string::npos) << r.out;
}

TEST(Cli, DumpEpisodesWritesJsonLines) {
  const fs::path out = scratch("episodes.jsonl");
  const CliRun r = run("dump-episodes --task pai --chain-length 3 --count 5 --seed 9 --out " +
                    out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream in(out);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("task"), "pai");
    EXPECT_EQ(j.at("chain_length"), 3);
    ++n;
  }
  EXPECT_EQ(n, 5);
}

TEST(Cli, TrainThenEval) {
  const fs::path csv = scratch("metrics.csv");
  const fs::path ckpt = scratch("run.ckpt");
  const CliRun t = run(std::string("train --task ballet --steps 4 --eval-every 2") + kTinyModel +
                    " --out " + csv.string() + " --checkpoint " + ckpt.string());
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_NE(t.out.find("parameters total="), std::string::npos);
  EXPECT_NE(t.out.find("parity_trxl="), std::string::npos);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,train_loss,train_acc,eval_acc,wall_ms,attention_score_count");

  const CliRun e = run("eval --checkpoint " + ckpt.string() + " --episodes 16 --delay 24");
  EXPECT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("eval accuracy="), std::string::npos);

  const CliRun bad = run("eval --checkpoint " + ckpt.string() + " --top-k 1");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("error kind=manifest_mismatch"), std::string::npos) << bad.out;
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const fs::path cfg = scratch("run.cfg");
  const fs::path csv = scratch("cfg.csv");
  std::ofstream(cfg) << "task = ballet\nsteps = 100\neval-every = 1\n";
  const CliRun r = run("train --config " + cfg.string() + " --steps 2" + kTinyModel + " --out " +
                    csv.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("train steps=2"), std::string::npos) << r.out;
}

TEST(Cli, Deterministic) {
  const std::string args = std::string("train --steps 3 --eval-every 1 --seed 4") + kTinyModel;
  const CliRun a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
}

TEST(Cli, ErrorsAreStructured) {
  CliRun r = run("train --no-such-flag 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error kind=usage"), std::string::npos) << r.out;

  r = run("train --top-k zero");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error kind=config"), std::string::npos) << r.out;

  r = run("train --task pai --chunk-size 4 --steps 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error kind=contract"), std::string::npos) << r.out;

  r = run("eval --checkpoint " + scratch("missing.ckpt").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error kind=checkpoint"), std::string::npos) << r.out;

  r = run("");
  EXPECT_EQ(r.code, 2);
}

}  // namespace
