#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "panelcast/panelcast.hpp"

namespace fs = std::filesystem;

namespace {

const char* bin() {
  if (const char* p = std::getenv("PANELCAST_BIN")) return p;
#ifdef PANELCAST_BIN
  return PANELCAST_BIN;
#else
  return "panelcast";
#endif
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;
  std::string out;  // stdout and stderr of the last run

  void SetUp() override {
    dir = fs::temp_directory_path() / (std::string("panelcast-cli-") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
    write("synth.cfg", "stores = 2\nitems = 3\ndays = 120\nmin_history = 10\nseed = 4\n");
    write("run.cfg",
          "history_len = 8\nhorizon = 16\nhidden_dim = 3\nembed_dim = 2\ncond_hidden_dim = 3\nhead_hidden_dim = 3\n"
          "d_model = 4\nheads = 2\nblocks = 1\nff_dim = 4\nepochs = 2\nbatches_per_epoch = 2\nbatch_size = 4\n");
  }

  void TearDown() override { fs::remove_all(dir); }

  void write(const std::string& name, const std::string& text) { std::ofstream(dir / name) << text; }
  std::string p(const std::string& name) const { return (dir / name).string(); }

  int run(const std::string& args) {
    const auto log = dir / "last.log";
    const std::string cmd = std::string("\"") + bin() + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    out = slurp(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  void make_cube() { ASSERT_EQ(run("synth --config " + p("synth.cfg") + " --out " + p("c.cube")), 0) << out; }
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(out.find("train"), std::string::npos);
  EXPECT_EQ(run(""), 3);
  EXPECT_EQ(run("frobnicate"), 3);
  EXPECT_EQ(run("train"), 3);  // missing --cube
}

TEST_F(Cli, SynthIsDeterministic) {
  make_cube();
  ASSERT_EQ(run("synth --config " + p("synth.cfg") + " --out " + p("d.cube")), 0) << out;
  EXPECT_EQ(slurp(dir / "c.cube"), slurp(dir / "d.cube"));
  EXPECT_NE(out.find("train_end 39"), std::string::npos) << out;
}

TEST_F(Cli, ExitCodesForBadInputs) {
  EXPECT_EQ(run("train --cube " + p("missing.cube") + " --out " + p("o")), 2);
  EXPECT_EQ(run("ingest --data-dir " + p("nowhere") + " --out " + p("x.cube")), 2);
  write("bad.cfg", "colour = blue\n");
  EXPECT_EQ(run("synth --config " + p("bad.cfg") + " --out " + p("x.cube")), 3);
  write("junk.cube", "not a cube at all");
  EXPECT_EQ(run("train --cube " + p("junk.cube") + " --out " + p("o")), 4);
  make_cube();
  EXPECT_EQ(run("train --cube " + p("c.cube") + " --model lstm --out " + p("o")), 3);
  EXPECT_EQ(run("ablate --cube " + p("c.cube") + " --sweep length --model transformer --out " + p("o")), 3);
  EXPECT_EQ(run("ablate --cube " + p("c.cube") + " --sweep colour --out " + p("o")), 3);
  EXPECT_EQ(run("train --cube " + p("c.cube") + " --runs 0 --out " + p("o")), 3);
}

TEST_F(Cli, IngestRejectsMalformedCsv) {
  fs::create_directories(dir / "raw");
  std::ofstream(dir / "raw" / "train.csv") << "id,date,store_nbr,item_nbr,unit_sales,onpromotion\n0,2013-01-01,1\n";
  for (const char* f : {"stores.csv", "items.csv", "transactions.csv", "oil.csv", "holidays_events.csv"}) std::ofstream(dir / "raw" / f);
  EXPECT_EQ(run("ingest --data-dir " + p("raw") + " --split none --out " + p("x.cube")), 4);
}

TEST_F(Cli, TrainIsReproducibleAndWritesReports) {
  make_cube();
  const std::string args = "train --cube " + p("c.cube") + " --config " + p("run.cfg") + " --runs 1 --seed 7 --out ";
  ASSERT_EQ(run(args + p("a")), 0) << out;
  ASSERT_EQ(run(args + p("b")), 0) << out;
  for (const char* f : {"results.csv", "daily.csv", "groups.csv"}) EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  EXPECT_TRUE(fs::exists(dir / "a" / "run-7.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "a" / "run-7.cfg"));
  const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  EXPECT_EQ(m["seeds"], nlohmann::json::array({7}));
  EXPECT_FALSE(m["data_digest"].get<std::string>().empty());
  EXPECT_EQ(slurp(dir / "a" / "results.csv").rfind("period,model,config,metric,mean,std\n", 0), 0u);
}

TEST_F(Cli, EvaluateMatchesTrainingAndAddsBaselines) {
  make_cube();
  ASSERT_EQ(run("train --cube " + p("c.cube") + " --config " + p("run.cfg") + " --model transformer --runs 2 --seed 3 --out " +
                p("t")),
            0)
      << out;
  const std::string ckpts = " --checkpoint " + p("t/run-3.ckpt") + " --checkpoint " + p("t/run-4.ckpt");
  ASSERT_EQ(run("evaluate --cube " + p("c.cube") + ckpts + " --period all --baselines --out " + p("e")), 0) << out;
  EXPECT_NE(out.find("anova"), std::string::npos) << out;
  const auto results = slurp(dir / "e" / "results.csv");
  EXPECT_NE(results.find(",random,permutation,"), std::string::npos);
  EXPECT_NE(results.find(",average,log-mean,"), std::string::npos);
  // Test-period rows from training and from re-evaluating its checkpoints agree.
  std::istringstream trained(slurp(dir / "t" / "results.csv"));
  std::string line;
  std::size_t matched = 0;
  while (std::getline(trained, line)) {
    const auto at = line.find(",rmsle,");
    if (line.rfind("1,", 0) != 0 || at == std::string::npos) continue;
    EXPECT_NE(results.find(line.substr(at)), std::string::npos) << line;
    ++matched;
  }
  EXPECT_EQ(matched, 1u);

  EXPECT_EQ(run("evaluate --cube " + p("c.cube") + " --checkpoint " + p("t/run-9.ckpt") + " --out " + p("e")), 2);
  write("other.cfg", "history_len = 8\nhorizon = 16\nd_model = 4\nheads = 2\nblocks = 2\nff_dim = 4\n");
  EXPECT_EQ(run("evaluate --cube " + p("c.cube") + " --checkpoint " + p("t/run-3.ckpt") + " --config " + p("other.cfg") +
                " --out " + p("e")),
            5);
  EXPECT_EQ(run("evaluate --cube " + p("c.cube") + ckpts + " --period 7 --out " + p("e")), 3);
}

TEST_F(Cli, AblateWritesComparisons) {
  make_cube();
  ASSERT_EQ(run("ablate --cube " + p("c.cube") + " --config " + p("run.cfg") + " --sweep trick --runs 2 --out " + p("ab")), 0)
      << out;
  const auto csv = slurp(dir / "ab" / "ablation.csv");
  EXPECT_EQ(csv.rfind("period,config,metric,mean,std,t,p,significant\n", 0), 0u);
  EXPECT_NE(csv.find(",trick-off,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "ab" / "manifest.json"));
}
