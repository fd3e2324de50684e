#include "support.hpp"

#include "commands.hpp"
#include "run_config.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace mixpinn;
namespace fs = std::filesystem;

namespace {

// Small end-to-end settings: 60x40x40 mm phantom, 2x2 positions, 4 depths.
const char* kSmallConfig = R"(# small pipeline
phantom.size = 60 40 40
phantom.cells = 6 4 4
phantom.inclusions = 5 5 5 25 25 25 ; 35 15 15 55 35 35
sweep.positions = 2 2
sweep.footprint = 10 5
sweep.depth_steps = 4
split.ratios = 0.5 0.25 0.25
model.layers = 2
model.hidden = 8
train.max_epochs = 2
profile.samples = 50
profile.warmup = 2
)";

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MIXPINN_EXE) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("config defaults, files and overrides") {
  testing::TempDir dir("cfg");
  cli::RunConfig c;
  CHECK(c.integer("model.layers") == 8);
  CHECK(c.integer("model.hidden") == 32);
  CHECK(c.real("train.lr") == 5e-4);
  CHECK(c.sweep().probe.depth_steps == 10);
  CHECK(c.split_ratios() == std::array<double, 3>{0.7, 0.2, 0.1});

  std::ofstream(dir / "a.cfg") << "# comment\n\nmodel.heads = 1   # trailing\ntrain.rel=true\n";
  c.merge_file(dir / "a.cfg");
  CHECK(c.integer("model.heads") == 1);
  CHECK(c.experiment(2).train.rel);
  c.set("model.heads", "2");
  CHECK(c.experiment(2).model.heads == 2);

  std::ofstream(dir / "b.cfg") << "model.heads = 2\nmodel.depth = 3\n";
  try {
    c.merge_file(dir / "b.cfg");
    FAIL("unknown key accepted");
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    CHECK(std::string(e.what()).find("model.depth") != std::string::npos);
  }
  CHECK_THROWS_AS(c.set("nope", "1"), UsageError);
  c.set("model.layers", "four");
  CHECK_THROWS_AS(c.validate(), UsageError);
  c.set("model.layers", "4");
  c.set("split.ratios", "0.5 0.5 0.5");
  CHECK_THROWS_AS(c.validate(), UsageError);

  cli::RunConfig d;
  std::istringstream dump(d.dump());
  std::string line, prev;
  while (std::getline(dump, line)) {
    CHECK(line > prev);
    prev = line;
  }
}

TEST_CASE("exit codes") {
  testing::TempDir dir("exit");
  const fs::path log = dir / "log.txt";
  CHECK(run("", log) == 1);
  CHECK(run("--set nope=1 phantom", log) == 1);
  CHECK(run("--workdir " + (dir / "w").string() + " --set model.heads=x phantom", log) == 1);
  CHECK(run("--workdir " + (dir / "empty").string() + " train", log) == 2);
  CHECK(run("--dump-config --heads 1 phantom", log) == 0);
  CHECK(slurp(log).find("model.heads = 1") != std::string::npos);
}

TEST_CASE("small pipeline end to end through the CLI") {
  testing::TempDir dir("pipe");
  const fs::path cfg = dir / "small.cfg", log = dir / "log.txt";
  std::ofstream(cfg) << kSmallConfig;
  const std::string base = "--config " + cfg.string() + " --workdir " + (dir / "w").string() + " ";

  REQUIRE(run(base + "phantom", log) == 0);
  REQUIRE(run(base + "simulate", log) == 0);
  REQUIRE(run(base + "--vn build-graphs", log) == 0);
  REQUIRE(run(base + "--vn train", log) == 0);
  const std::string curve = slurp(dir / "w" / "curve.csv");
  REQUIRE(run(base + "--vn eval", log) == 0);
  CHECK(slurp(log).find("zero-predictor MEE") != std::string::npos);
  REQUIRE(run(base + "--sample 3 predict", log) == 0);
  REQUIRE(run(base + "profile", log) == 0);
  for (const char* f : {"mesh.txt", "dataset.bin", "graphs.bin", "checkpoint.bin", "curve.csv", "eval.csv",
                        "prediction.csv", "profile.txt", "phantom.manifest", "simulate.manifest",
                        "build-graphs.manifest", "train.manifest", "eval.manifest", "predict.manifest",
                        "profile.manifest"})
    CHECK_MESSAGE(fs::exists(dir / "w" / f), f);

  const Mesh mesh = load_mesh(dir / "w" / "mesh.txt");
  std::istringstream pred(slurp(dir / "w" / "prediction.csv"));
  std::string line;
  Index rows = 0;
  while (std::getline(pred, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 2);
  }
  CHECK(rows == mesh.node_count());
  const std::string profile = slurp(dir / "w" / "profile.txt");
  for (const char* key : {"oracle_ms_mean", "inference_ms_mean", "speedup", "inference_cv_across_depths"})
    CHECK(profile.find(key) != std::string::npos);
  CHECK(slurp(dir / "w" / "train.manifest").find("[config]") != std::string::npos);

  // Same manifest, same curve.
  REQUIRE(run(base + "--vn train", log) == 0);
  CHECK(slurp(dir / "w" / "curve.csv") == curve);

  // A checkpoint trained without virtual nodes still evaluates; a foreign mesh is refused.
  REQUIRE(run(base + "--set phantom.cells=6\\ 4\\ 2 phantom", log) == 0);
  CHECK(run(base + "build-graphs", log) == 2);
  CHECK(slurp(log).find("mesh") != std::string::npos);
  CHECK(run(base + "eval", log) == 2);
}

TEST_CASE("untrained checkpoint evaluates near the zero-predictor baseline") {
  testing::TempDir dir("fresh");
  const fs::path cfg = dir / "small.cfg", log = dir / "log.txt";
  std::ofstream(cfg) << kSmallConfig;
  const std::string base = "--config " + cfg.string() + " --workdir " + (dir / "w").string() + " ";
  REQUIRE(run(base + "phantom", log) == 0);
  REQUIRE(run(base + "simulate", log) == 0);
  REQUIRE(run(base + "--max-epochs 1 --set train.lr=1e-12 train", log) == 0);
  REQUIRE(run(base + "eval", log) == 0);
  const std::string out = slurp(log);
  const double mee = std::stod(out.substr(out.find("MEE ") + 4));
  const double zero = std::stod(out.substr(out.find("zero-predictor MEE ") + 19));
  CHECK(zero > 0);
  // Same order of magnitude.
  CHECK(mee > 0.1 * zero);
  CHECK(mee < 10.0 * zero);
}

TEST_CASE("ablation writes the 13-row table") {
  testing::TempDir dir("abl");
  const fs::path cfg = dir / "small.cfg", log = dir / "log.txt";
  std::ofstream(cfg) << kSmallConfig;
  const std::string base = "--config " + cfg.string() + " --workdir " + (dir / "w").string() + " --max-epochs 1 ";
  REQUIRE(run(base + "phantom", log) == 0);
  REQUIRE(run(base + "simulate", log) == 0);
  REQUIRE(run(base + "ablate", log) == 0);
  std::istringstream in(slurp(dir / "w" / "ablation.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "experiment,heads,edge_feat,rel,vn,ve,mee,mae,mse,rigid_mee,soft_mee,ree,infer_ms");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
    CHECK(std::count(line.begin(), line.end(), ',') == 12);
  }
  CHECK(rows == 13);
}
