// Drives the dfkan binary end to end.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dfkan/cli.hpp"

#ifndef DFKAN_BIN
#error "DFKAN_BIN must name the CLI binary"
#endif

namespace dfkan {
namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / "dfkan_test_cli" / info->name();
    fs::remove_all(dir);
    fs::create_directories(dir);
  }

  std::string write(const std::string& name, const std::string& text) const {
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p.string();
  }

  // Returns the exit status; stdout and stderr go to <dir>/last.log.
  int run(const std::string& args) const {
    const std::string cmd =
        std::string("\"") + DFKAN_BIN + "\" " + args + " > \"" + (dir / "last.log").string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string log() const { return read(dir / "last.log"); }

  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::vector<fs::path> files_ending(const fs::path& where, const std::string& suffix) const {
    std::vector<fs::path> out;
    if (!fs::exists(where)) return out;
    for (const auto& e : fs::directory_iterator(where)) {
      const std::string n = e.path().filename().string();
      if (n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0) {
        out.push_back(e.path());
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  fs::path dir;
};

const char* kQuadratic = R"({
  "name": "quad",
  "seed": 3,
  "data": {"generator": "sym_quadratic", "n": 200, "noise": 0.01},
  "layers": [
    {"n_in": 1, "n_out": 1, "input": "none", "output": "per_input",
     "output_basis": {"family": "standard_poly", "order": 3, "domain": "none"}}
  ],
  "train": {"epochs": 20, "batch_size": 32, "lr": 0.01}
})";

const char* kFranke = R"({
  "name": "franke",
  "seed": 1,
  "data": {"generator": "franke", "n": 300},
  "preset": {"kind": "hybrid", "hidden": [4], "order": 4},
  "train": {"epochs": 60, "batch_size": 32, "lr": 0.01}
})";

const char* kMlp = R"({
  "name": "mlp",
  "seed": 2,
  "data": {"generator": "friedman1", "n": 100},
  "preset": {"kind": "mlp", "hidden": [6], "activation": "tanh"},
  "train": {"epochs": 2}
})";

const char* kHybrid = R"({
  "name": "hybrid",
  "seed": 2,
  "data": {"generator": "feynman_II_6_11", "n": 100},
  "attention": true,
  "preset": {"kind": "hybrid", "hidden": [5], "order": 4},
  "train": {"epochs": 2}
})";

TEST_F(Cli, TrainWritesCheckpointManifestAndHistory) {
  const std::string cfg = write("quad.json", kQuadratic);
  ASSERT_EQ(run("train \"" + cfg + "\" --out \"" + (dir / "out").string() + "\""), kExitOk) << log();
  const auto ckpt = files_ending(dir / "out", ".ckpt");
  const auto manifest = files_ending(dir / "out", ".manifest.json");
  const auto history = files_ending(dir / "out", ".history.csv");
  ASSERT_EQ(ckpt.size(), 1u);
  ASSERT_EQ(manifest.size(), 1u);
  ASSERT_EQ(history.size(), 1u);
  const Json m = Json::parse(read(manifest[0]));
  EXPECT_TRUE(m.contains("config"));
  const std::string h = read(history[0]);
  EXPECT_EQ(std::count(h.begin(), h.end(), '\n'), 21);
  EXPECT_EQ(h.rfind("epoch,train_mse,val_mse\n", 0), 0u);
}

TEST_F(Cli, TrainIsDeterministic) {
  const std::string cfg = write("quad.json", kQuadratic);
  ASSERT_EQ(run("train \"" + cfg + "\" --out \"" + (dir / "a").string() + "\""), kExitOk) << log();
  ASSERT_EQ(run("train \"" + cfg + "\" --out \"" + (dir / "b").string() + "\""), kExitOk) << log();
  const auto ha = files_ending(dir / "a", ".history.csv");
  const auto hb = files_ending(dir / "b", ".history.csv");
  ASSERT_EQ(ha.size(), 1u);
  ASSERT_EQ(hb.size(), 1u);
  EXPECT_EQ(ha[0].filename(), hb[0].filename());
  EXPECT_EQ(read(ha[0]), read(hb[0]));
  EXPECT_EQ(read(files_ending(dir / "a", ".ckpt")[0]), read(files_ending(dir / "b", ".ckpt")[0]));
}

TEST_F(Cli, SeedOverrideChangesTheRun) {
  const std::string cfg = write("quad.json", kQuadratic);
  ASSERT_EQ(run("train \"" + cfg + "\" --seed 9 --out \"" + (dir / "a").string() + "\""), kExitOk) << log();
  ASSERT_EQ(run("train \"" + cfg + "\" --out \"" + (dir / "b").string() + "\""), kExitOk) << log();
  EXPECT_NE(files_ending(dir / "a", ".ckpt")[0].filename(), files_ending(dir / "b", ".ckpt")[0].filename());
}

TEST_F(Cli, MalformedConfigExitsWithConfigCode) {
  const std::string bad = write("bad.json", "{\"name\": \"x\",\n \"seed\": }");
  EXPECT_EQ(run("train \"" + bad + "\" --out \"" + dir.string() + "\""), kExitConfig);
  EXPECT_NE(log().find("line 2"), std::string::npos) << log();
  const std::string unknown = write("unknown.json", R"({"data": {"generator": "franke"}, "preset": {"kind": "mlp"},
      "bogus": 1})");
  EXPECT_EQ(run("train \"" + unknown + "\" --out \"" + dir.string() + "\""), kExitConfig);
  EXPECT_NE(log().find("config.bogus"), std::string::npos) << log();
  EXPECT_EQ(run("train \"" + (dir / "missing.json").string() + "\""), kExitConfig);
  EXPECT_EQ(run("frobnicate"), kExitConfig);
  EXPECT_EQ(run("--help"), kExitOk);
}

TEST_F(Cli, NumericFailureExitsWithNumericCode) {
  const std::string csv = write("huge.csv", "x,y\n0.1,1e300\n0.2,-1e300\n0.3,1e300\n0.4,-1e300\n0.5,1e300\n0.6,-1e300\n"
                                             "0.7,1e300\n0.8,-1e300\n0.9,1e300\n1.0,-1e300\n");
  const std::string cfg = write("huge.json", R"({"name": "huge", "data": {"path": ")" + csv +
                                                 R"(", "target": "y"},
      "layers": [{"n_in": 1, "n_out": 1}],
      "train": {"epochs": 3, "normalize_target": false}})");
  EXPECT_EQ(run("train \"" + cfg + "\" --out \"" + dir.string() + "\""), kExitNumeric) << log();
}

TEST_F(Cli, BenchmarkWritesOneRowPerCell) {
  const std::string suite = write("suite.json", R"({
    "name": "mini",
    "seed": 0,
    "repeats": 3,
    "datasets": [{"generator": "sym_quadratic", "n": 120}],
    "presets": [
      {"label": "mlp", "kind": "mlp", "hidden": [4]},
      {"label": "vanilla_kan", "kind": "vanilla_kan", "hidden": [2]},
      {"label": "hybrid", "kind": "hybrid", "hidden": [2], "order": 3}
    ],
    "train": {"epochs": 3, "batch_size": 32}
  })");
  ASSERT_EQ(run("benchmark \"" + suite + "\" --out \"" + (dir / "out").string() + "\""), kExitOk) << log();
  const std::string table = read(dir / "out" / "mini.benchmark.csv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4) << table;
  EXPECT_NE(table.find("sym_quadratic,hybrid,3,0,"), std::string::npos) << table;
  EXPECT_NE(table.find("sym_quadratic,mlp,3,0,"), std::string::npos) << table;
  EXPECT_NE(table.find("sym_quadratic,vanilla_kan,3,0,"), std::string::npos) << table;
  EXPECT_EQ(files_ending(dir / "out", ".manifest.json").size(), 9u);
  EXPECT_TRUE(fs::exists(dir / "out" / "mini.benchmark_timing.csv"));
  EXPECT_FALSE(fs::exists(dir / "out" / "mini.benchmark_failures.csv"));
}

TEST_F(Cli, BenchmarkIsIndependentOfThreadCount) {
  const std::string suite = write("suite.json", R"({
    "name": "threads",
    "repeats": 2,
    "datasets": [{"generator": "gauss_sin", "n": 100}, {"generator": "franke", "n": 100}],
    "presets": [{"label": "hybrid", "kind": "hybrid", "hidden": [3], "order": 3}],
    "train": {"epochs": 3}
  })");
  ASSERT_EQ(run("benchmark \"" + suite + "\" --out \"" + (dir / "one").string() + "\""), kExitOk) << log();
  ASSERT_EQ(run("benchmark \"" + suite + "\" --threads 3 --out \"" + (dir / "three").string() + "\""), kExitOk)
      << log();
  EXPECT_EQ(read(dir / "one" / "threads.benchmark.csv"), read(dir / "three" / "threads.benchmark.csv"));
}

TEST_F(Cli, GradcheckPassesOnPresets) {
  EXPECT_EQ(run("gradcheck \"" + write("mlp.json", kMlp) + "\" --out \"" + dir.string() + "\""), kExitOk) << log();
  EXPECT_NE(log().find("gradient check passed"), std::string::npos);
  EXPECT_EQ(run("gradcheck \"" + write("hybrid.json", kHybrid) + "\" --out \"" + dir.string() + "\""), kExitOk)
      << log();
  EXPECT_NE(log().find("attention"), std::string::npos) << log();
  EXPECT_EQ(files_ending(dir, ".gradcheck.csv").size(), 2u);
}

TEST_F(Cli, GradcheckCatchesACorruptedRule) {
  const std::string cfg = write("mlp.json", kMlp);
  EXPECT_EQ(run("gradcheck \"" + cfg + "\" --corrupt-op add_broadcast_row --corrupt-input 1 --out \"" + dir.string() +
                "\""),
            kExitCheckFailed)
      << log();
  const std::string out = log();
  EXPECT_NE(out.find("gradient check failed for:"), std::string::npos) << out;
  EXPECT_NE(out.find("layer0.b"), std::string::npos) << out;
  EXPECT_EQ(out.find("FAIL  layer0.W"), std::string::npos) << out;
}

TEST_F(Cli, AnalyzeExtractRecoversQuadratic) {
  const std::string cfg = write("quad.json", kQuadratic);
  ASSERT_EQ(run("train \"" + cfg + "\" --out \"" + dir.string() + "\""), kExitOk) << log();
  const auto ckpt = files_ending(dir, ".ckpt");
  ASSERT_EQ(ckpt.size(), 1u);
  ASSERT_EQ(run("analyze \"" + ckpt[0].string() + "\" extract --max-degree 2 --out \"" + dir.string() + "\""),
            kExitOk)
      << log();
  const auto summaries = files_ending(dir, ".extract.json");
  ASSERT_EQ(summaries.size(), 1u);
  const Json s = Json::parse(read(summaries[0]));
  ASSERT_TRUE(s.at("eligible").get<bool>());
  ASSERT_EQ(s.at("coefficients").size(), 1u);
  EXPECT_EQ(s.at("coefficients")[0].size(), 3u);
  EXPECT_EQ(s.at("composed_degree").get<int>(), 2);
}

TEST_F(Cli, AnalyzeInstrumentsOnAHybridRun) {
  ASSERT_EQ(run("train \"" + write("m.json", kFranke) + "\" --out \"" + dir.string() + "\""), kExitOk) << log();
  const std::string ckpt = files_ending(dir, ".ckpt").at(0).string();
  const std::string out = " --out \"" + dir.string() + "\"";

  ASSERT_EQ(run("analyze \"" + ckpt + "\" gradfield --points 5" + out), kExitOk) << log();
  const std::string field = read(files_ending(dir, ".gradfield.csv").at(0));
  EXPECT_EQ(std::count(field.begin(), field.end(), '\n'), 26);

  ASSERT_EQ(run("analyze \"" + ckpt + "\" prune" + out), kExitOk) << log();
  const Json summary = Json::parse(read(files_ending(dir, ".prune.json").at(0)));
  ASSERT_TRUE(summary.at("applicable").get<bool>()) << summary.dump();
  EXPECT_LE(summary.at("effective_params").get<long long>(), summary.at("total_params").get<long long>());
  const std::string prune = read(files_ending(dir, ".prune.csv").at(0));
  std::istringstream lines(prune);
  std::string line;
  std::getline(lines, line);
  double prev = 2.0;
  while (std::getline(lines, line)) {
    if (line.rfind("grid,", 0) != 0) continue;
    const double frac = std::stod(line.substr(5, line.find(',', 5) - 5));
    EXPECT_LT(frac, prev) << line;
    prev = frac;
  }
  EXPECT_EQ(prev, 0.0);

  EXPECT_EQ(run("analyze \"" + ckpt + "\" attention" + out), kExitConfig) << log();
  EXPECT_EQ(run("analyze \"" + ckpt + "\" decompose" + out), kExitConfig) << log();
  EXPECT_EQ(run("analyze \"" + ckpt + "\" extract" + out), kExitConfig) << log();
  EXPECT_EQ(run("analyze \"" + ckpt + "\" tea-leaves" + out), kExitConfig) << log();
}

TEST_F(Cli, GradfieldRejectsSingleInputModels) {
  ASSERT_EQ(run("train \"" + write("quad.json", kQuadratic) + "\" --out \"" + dir.string() + "\""), kExitOk) << log();
  const std::string ckpt = files_ending(dir, ".ckpt").at(0).string();
  EXPECT_EQ(run("analyze \"" + ckpt + "\" gradfield --out \"" + dir.string() + "\""), kExitConfig);
  EXPECT_NE(log().find("exactly 2"), std::string::npos) << log();
}

TEST_F(Cli, AnalyzeRejectsACheckpointFromAnotherConfig) {
  ASSERT_EQ(run("train \"" + write("quad.json", kQuadratic) + "\" --out \"" + dir.string() + "\""), kExitOk) << log();
  const std::string ckpt = files_ending(dir, ".ckpt").at(0).string();
  std::string other = kQuadratic;
  other.replace(other.find("\"seed\": 3"), 9, "\"seed\": 4");
  const std::string cfg = write("other.json", other);
  EXPECT_EQ(run("analyze \"" + ckpt + "\" extract --config \"" + cfg + "\" --out \"" + dir.string() + "\""),
            kExitConfig);
  EXPECT_NE(log().find("hash"), std::string::npos) << log();
}

TEST_F(Cli, GenDataWritesCsvAndProvenance) {
  const std::string csv = (dir / "f.csv").string();
  ASSERT_EQ(run("gen-data franke --n 50 --seed 4 --out \"" + csv + "\""), kExitOk) << log();
  const std::string text = read(csv);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 51);
  const Json prov = Json::parse(read(dir / "f.provenance.json"));
  EXPECT_EQ(prov.at("generator"), "franke");
  EXPECT_EQ(prov.at("seed"), 4);
  EXPECT_EQ(run("gen-data nope --out \"" + csv + "\""), kExitConfig);
}

}  // namespace
}  // namespace dfkan
