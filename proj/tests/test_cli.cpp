#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int rc = -1;
  std::string out, err;
};

fs::path work_dir() {
  auto d = fs::temp_directory_path() / "featlab_cli_tests";
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Run cli(const std::string& args) {
  static int counter = 0;
  const auto base = work_dir() / ("call" + std::to_string(counter++));
  const std::string cmd = std::string(FEATLAB_CLI_PATH) + " " + args + " >" + base.string() + ".out 2>" +
                          base.string() + ".err";
  const int st = std::system(cmd.c_str());
  Run r;
  r.rc = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.out = slurp(base.string() + ".out");
  r.err = slurp(base.string() + ".err");
  return r;
}

std::string out_dir(const std::string& name) {
  const auto d = work_dir() / name;
  fs::remove_all(d);
  return d.string();
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  std::string line, body;
  while (std::getline(f, line))
    if (line.empty() || line[0] != '#') body += line + "\n";
  return nlohmann::json::parse(body);
}

const std::string kSmallFeat =
    " --set inner_epochs=20 --set hidden=[8] --set data.envs.0.n=300 --set data.envs.1.n=300 --set ood.n=400"
    " --set data.d=6";

}  // namespace

TEST(Cli, SimulateZeroStepsWritesInitialRow) {
  const auto dir = out_dir("steps0");
  const auto r = cli("simulate erm --set steps=0 --out " + dir);
  ASSERT_EQ(r.rc, 0) << r.err;
  std::ifstream f(fs::path(dir) / "trajectory.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(f, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0].rfind("# featlab manifest=", 0), 0u);
  EXPECT_EQ(lines[2].rfind("0,", 0), 0u);
}

TEST(Cli, InvalidValueNamesKey) {
  const auto r = cli("simulate erm --set eta=-1 --out " + out_dir("bad_eta"));
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("/eta"), std::string::npos) << r.err;
}

TEST(Cli, UnknownCommandAndKey) {
  EXPECT_EQ(cli("frobnicate").rc, 2);
  EXPECT_EQ(cli("simulate sideways").rc, 2);
  const auto r = cli("simulate erm --set stepz=3 --out " + out_dir("bad_key"));
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("/stepz"), std::string::npos) << r.err;
  EXPECT_EQ(cli("simulate erm --config /nonexistent/cfg.json").rc, 2);
}

TEST(Cli, RacePreconditionIsAConfigError) {
  const auto r = cli("verify race --set envs.0.alpha=0.1 --set envs.1.alpha=0.1 --out " + out_dir("race_pre"));
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("alpha"), std::string::npos) << r.err;
}

TEST(Cli, FixedPointPrintsClosedForm) {
  const auto r = cli("verify fixed-point --alpha 0.25 --beta 0.1 0.2 --out " + out_dir("fp"));
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_NE(r.out.find("gamma1_inf = 1.098612"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("gamma2_inf = 1.734601"), std::string::npos) << r.out;
}

TEST(Cli, GradcheckPasses) {
  const auto dir = out_dir("gc");
  const auto r = cli("verify gradcheck --out " + dir);
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_TRUE(read_json(fs::path(dir) / "report.json").at("passed").get<bool>());
}

TEST(Cli, SingleRoundIfeatMatchesFeat) {
  const auto a = out_dir("k1_feat"), b = out_dir("k1_ifeat");
  ASSERT_EQ(cli("feat --set max_rounds=1" + kSmallFeat + " --out " + a).rc, 0);
  ASSERT_EQ(cli("ifeat --set max_rounds=1" + kSmallFeat + " --out " + b).rc, 0);
  const auto ra = read_json(fs::path(a) / "result.json"), rb = read_json(fs::path(b) / "result.json");
  EXPECT_EQ(ra.at("round_classifiers"), rb.at("round_classifiers"));
  EXPECT_EQ(ra.at("final_ood_acc"), rb.at("final_ood_acc"));
}

TEST(Cli, CleanDataStopsOnEmptyAugmentation) {
  const auto dir = out_dir("clean");
  const auto r = cli("feat" + kSmallFeat +
                     " --set data.envs.0.alpha=0 --set data.envs.0.beta=0 --set data.envs.1.alpha=0"
                     " --set data.envs.1.beta=0 --out " + dir);
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(read_json(fs::path(dir) / "result.json").at("termination_reason"), "empty_augmentation");
}

TEST(Cli, RerunsAreByteIdentical) {
  const auto a = out_dir("rerun_a"), b = out_dir("rerun_b");
  ASSERT_EQ(cli("feat --set max_rounds=2" + kSmallFeat + " --out " + a).rc, 0);
  ASSERT_EQ(cli("feat --set max_rounds=2" + kSmallFeat + " --out " + b).rc, 0);
  for (const char* f : {"result.json", "round_log.csv", "comparison.json"})
    EXPECT_EQ(slurp(fs::path(a) / f), slurp(fs::path(b) / f)) << f;
  const auto s1 = out_dir("rerun_sim_a"), s2 = out_dir("rerun_sim_b");
  ASSERT_EQ(cli("simulate irmv1 --set steps=30 --out " + s1).rc, 0);
  ASSERT_EQ(cli("simulate irmv1 --set steps=30 --out " + s2).rc, 0);
  EXPECT_EQ(slurp(fs::path(s1) / "trajectory.csv"), slurp(fs::path(s2) / "trajectory.csv"));
}

TEST(Cli, EveryOutputCarriesManifestHeader) {
  const auto a = out_dir("hdr_feat"), b = out_dir("hdr_ds");
  ASSERT_EQ(cli("feat --set max_rounds=1" + kSmallFeat + " --out " + a).rc, 0);
  ASSERT_EQ(cli("dataset --set data.envs.0.n=10 --set data.envs.1.n=10 --out " + b).rc, 0);
  std::size_t files = 0;
  for (const auto& dir : {a, b})
    for (const auto& e : fs::directory_iterator(dir)) {
      std::ifstream f(e.path());
      std::string first;
      std::getline(f, first);
      EXPECT_EQ(first.rfind("# featlab manifest=", 0), 0u) << e.path();
      ++files;
    }
  EXPECT_GE(files, 6u);
}

TEST(Cli, SeedSweepWritesOneDirectoryPerSeed) {
  const auto dir = out_dir("sweep");
  const auto r = cli("simulate erm --set steps=5 --sweep seeds=0..2 --out " + dir);
  ASSERT_EQ(r.rc, 0) << r.err;
  for (int s = 0; s <= 2; ++s) EXPECT_TRUE(fs::exists(fs::path(dir) / ("seed_" + std::to_string(s)) / "summary.json"));
  EXPECT_NE(slurp(fs::path(dir) / "seed_0" / "trajectory.csv"), slurp(fs::path(dir) / "seed_1" / "trajectory.csv"));
  EXPECT_EQ(cli("simulate erm --sweep seeds=3..1 --out " + out_dir("sweep_bad")).rc, 2);
}

TEST(Cli, ShippedConfigsLoad) {
  for (const auto& e : fs::directory_iterator(FEATLAB_CONFIG_DIR)) {
    const auto j = read_json(e.path());
    EXPECT_TRUE(j.is_object()) << e.path();
  }
  const auto r = cli(std::string("simulate pretrain-irmv1 --config ") + FEATLAB_CONFIG_DIR +
                     "/pretrain-switch.json --set steps=20 --set pretrain_steps=10 --out " + out_dir("cfg_switch"));
  EXPECT_EQ(r.rc, 0) << r.err;
}
