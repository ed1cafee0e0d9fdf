#include <gtest/gtest.h>

#include <mpc/mpc.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mpc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) {
    const std::string cmd = std::string(MPC_CLI_PATH) + " " + args + " >" + (dir_ / "stdout.txt").string() + " 2>" +
                            (dir_ / "stderr.txt").string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  std::string read(const fs::path& p) const {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }

  std::string out() const { return read(dir_ / "stdout.txt"); }
  std::string err() const { return read(dir_ / "stderr.txt"); }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenerateEdmWritesMatrix) {
  ASSERT_EQ(run("generate --family edm --m 6 --out " + path("edm")), 0);
  mpc::ProblemInstance inst = mpc::load_instance(path("edm/manifest.json"));
  EXPECT_TRUE(inst.C == mpc::edm(6).C);
  json summary = json::parse(out());
  EXPECT_EQ(summary["rank"], 3);
}

TEST_F(Cli, GenerateGramWithHiddenSolution) {
  ASSERT_EQ(run("generate --family gram --m 15 --k 15 --seed 7 --out " + path("g")), 0);
  EXPECT_TRUE(fs::exists(path("g/hidden_X.txt")));
  EXPECT_EQ(run("verify --manifest " + path("g/manifest.json") + " --X " + path("g/hidden_X.txt")), 0);
}

TEST_F(Cli, GenerateUdisj) {
  ASSERT_EQ(run("generate --family udisj --d 3 --out " + path("u")), 0);
  mpc::ProblemInstance inst = mpc::load_instance(path("u/manifest.json"));
  EXPECT_EQ(inst.C.rows(), 16);
  EXPECT_EQ(inst.C.cols(), 16);
}

TEST_F(Cli, InvalidParametersExitTwo) {
  EXPECT_EQ(run("generate --family hadamard --m 6 --out " + path("h")), 2);
  EXPECT_EQ(run("generate --family nosuch --m 6"), 2);
  EXPECT_EQ(run("generate --family edm --m 6 --bogus 1"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  ASSERT_EQ(run("generate --family edm --m 6 --out " + path("e")), 0);
  EXPECT_EQ(run("solve --manifest " + path("e/manifest.json") + " --method gram --out " + path("s")), 2);
  EXPECT_EQ(run("solve --manifest " + path("e/manifest.json") + " --beta 2.5 --out " + path("s")), 2);
  EXPECT_EQ(run("bench --manifest " + path("e/manifest.json") + " --trials 0 --out " + path("b")), 2);
  EXPECT_EQ(run("flowfield --step 0 --out " + path("f.csv")), 2);
}

TEST_F(Cli, HelpListsFlags) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(out().find("generate"), std::string::npos);
  EXPECT_EQ(run("solve --help"), 0);
  for (const char* flag : {"--manifest", "--out", "--seed", "--beta", "--alpha", "--g", "--h", "--T", "--max-iter", "--tol",
                           "--trace-every", "--method", "--algorithm", "--swap-projections", "--init"})
    EXPECT_NE(out().find(flag), std::string::npos) << flag;
}

TEST_F(Cli, SolveEdmSpecialInit) {
  ASSERT_EQ(run("generate --family edm --m 6 --k 5 --out " + path("e")), 0);
  const std::string solve = "solve --manifest " + path("e/manifest.json") +
                            " --method rank_excessive --k 5 --beta 1 --g 0.5 --h 0.5 --init special --max-iter 20000 --out ";
  ASSERT_EQ(run(solve + path("r1")), 0) << err();
  json r = json::parse(read(path("r1/result.json")));
  EXPECT_EQ(r["status"], "solved");
  EXPECT_EQ(r["verified"], true);
  EXPECT_EQ(r["prng_id"], mpc::kPrngId);
  EXPECT_EQ(run("verify --manifest " + path("e/manifest.json") + " --X " + path("r1/X.txt") + " --Y " + path("r1/Y.txt")), 0);

  // Trace rows: one per sampled iteration plus the final record.
  const std::string trace = read(path("r1/trace.csv"));
  EXPECT_EQ(trace.rfind("iter,delta\n", 0), 0u);
  const long long rows = std::count(trace.begin(), trace.end(), '\n') - 1;
  const long long iters = r["iterations"];
  EXPECT_EQ(rows, iters + 1);

  ASSERT_EQ(run(solve + path("r2")), 0);
  EXPECT_EQ(read(path("r1/result.json")).substr(0, read(path("r1/result.json")).find("\"manifest\"")),
            read(path("r2/result.json")).substr(0, read(path("r2/result.json")).find("\"manifest\"")));
  EXPECT_EQ(read(path("r1/trace.csv")), read(path("r2/trace.csv")));
  EXPECT_EQ(read(path("r1/X.txt")), read(path("r2/X.txt")));
}

TEST_F(Cli, TraceEveryRowCount) {
  ASSERT_EQ(run("generate --family nmf_designed --m 8 --k 3 --seed 2 --out " + path("n")), 0);
  ASSERT_EQ(run("solve --manifest " + path("n/manifest.json") + " --max-iter 37 --tol 0 --trace-every 5 --out " + path("r")), 3);
  json r = json::parse(read(path("r/result.json")));
  EXPECT_EQ(r["status"], "max_iter");
  const std::string trace = read(path("r/trace.csv"));
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n') - 1, (37 + 4) / 5 + 1);
}

TEST_F(Cli, MaxIterZero) {
  ASSERT_EQ(run("generate --family nmf_designed --m 10 --k 4 --seed 1 --out " + path("n")), 0);
  EXPECT_EQ(run("solve --manifest " + path("n/manifest.json") + " --max-iter 0 --out " + path("r")), 3);
  json r = json::parse(read(path("r/result.json")));
  EXPECT_EQ(r["status"], "max_iter");
  EXPECT_EQ(r["iterations"], 0);
}

TEST_F(Cli, VerifyRejections) {
  ASSERT_EQ(run("generate --family nmf_designed --m 8 --k 3 --seed 3 --out " + path("n")), 0);
  const std::string m = path("n/manifest.json");
  EXPECT_EQ(run("verify --manifest " + m + " --X " + path("n/hidden_X.txt") + " --Y " + path("n/hidden_Y.txt")), 0);

  mpc::Matrix X = mpc::load_matrix(path("n/hidden_X.txt"));
  X(0, 0) += 0.5;
  mpc::save_matrix(path("bad.txt"), X);
  EXPECT_EQ(run("verify --manifest " + m + " --X " + path("bad.txt") + " --Y " + path("n/hidden_Y.txt")), 1);

  mpc::save_matrix(path("short.txt"), mpc::Matrix(X.topRows(5)));
  EXPECT_EQ(run("verify --manifest " + m + " --X " + path("short.txt") + " --Y " + path("n/hidden_Y.txt")), 1);
  EXPECT_NE(err().find("shape"), std::string::npos);
}

TEST_F(Cli, BenchAggregate) {
  ASSERT_EQ(run("generate --family nmf_designed --m 8 --k 3 --f 0 --seed 4 --out " + path("n")), 0);
  ASSERT_EQ(run("bench --manifest " + path("n/manifest.json") + " --trials 4 --jobs 2 --max-iter 5000 --out " + path("b")), 0)
      << err();
  json doc = json::parse(read(path("b/bench.json")));
  const json& agg = doc["aggregate"];
  const double rate = agg["success_rate"];
  EXPECT_GE(rate, 0.0);
  EXPECT_LE(rate, 1.0);
  ASSERT_EQ(doc["trials"].size(), 4u);
  if (agg.contains("median_iters")) {
    EXPECT_LE(agg["min"].get<double>(), agg["median_iters"].get<double>());
    EXPECT_LE(agg["median_iters"].get<double>(), agg["max"].get<double>());
  }
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(doc["trials"][t]["seed"], mpc::trial_seed(1, t));

  // Independent of the worker count.
  ASSERT_EQ(run("bench --manifest " + path("n/manifest.json") + " --trials 4 --jobs 1 --max-iter 5000 --out " + path("b1")), 0);
  json one = json::parse(read(path("b1/bench.json")));
  EXPECT_EQ(one["aggregate"], agg);
  EXPECT_EQ(one["trials"], doc["trials"]);

  ASSERT_EQ(run("bench --manifest " + path("n/manifest.json") + " --trials 1 --max-iter 5000 --out " + path("b2")), 0);
  json single = json::parse(read(path("b2/bench.json")));
  const json& t0 = single["trials"][0];
  if (t0["status"] == "solved") {
    EXPECT_EQ(single["aggregate"]["min"], t0["iterations"]);
    EXPECT_EQ(single["aggregate"]["max"], t0["iterations"]);
    EXPECT_EQ(single["aggregate"]["mean_iters"].get<double>(), t0["iterations"].get<double>());
  }
}

TEST_F(Cli, FlowField) {
  ASSERT_EQ(run("flowfield --c 15 --out " + path("f.csv")), 0);
  const std::string csv = read(path("f.csv"));
  EXPECT_EQ(csv.rfind("x,y,vx,vy\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 81 * 81 + 1);
  json meta = json::parse(read(path("f.csv.meta.json")));
  EXPECT_EQ(meta["nan_nodes"], 0);

  ASSERT_EQ(run("flowfield --c 15 --xmin 3 --xmax 3 --ymin 5 --ymax 5 --out " + path("one.csv")), 0);
  std::istringstream rows(read(path("one.csv")));
  std::string header, row;
  std::getline(rows, header);
  std::getline(rows, row);
  double x, y, vx, vy;
  char c;
  std::istringstream(row) >> x >> c >> y >> c >> vx >> c >> vy;
  EXPECT_EQ(x, 3.0);
  EXPECT_EQ(y, 5.0);
  EXPECT_LE(std::abs(vx) + std::abs(vy), 1e-12);
}
