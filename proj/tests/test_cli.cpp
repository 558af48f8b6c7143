#include <fstream>
#include <sstream>

#include "../tools/cli.hpp"
#include "fps/losses.hpp"
#include "fps/synthetic.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace fps;
using fps::testing::TempDir;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "fps");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json load(const std::filesystem::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

// Raw (unstandardized) synthetic containers for the pipeline tests.
void write_raw_pair(const TempDir& dir, std::uint64_t seed, const std::string& prefix) {
  ShiftSpec spec;
  spec.per_class = 40;
  spec.patch_count = 3;
  spec.patch_noise = 0.3;
  spec.shift_rotation = 0.3;
  spec.seed = seed;
  const SyntheticPair p = generate(spec);
  write_container(p.source, synthetic_manifest(spec, "source"), dir / (prefix + "src.fpsb"));
  write_container(p.target, synthetic_manifest(spec, "target"), dir / (prefix + "tgt.fpsb"));
}

std::string path(const TempDir& dir, const std::string& name) { return (dir / name).string(); }

}  // namespace

TEST_CASE("demo with seed 42 prints the three-row comparison") {
  TempDir dir("cli_demo");
  const Result r = run({"demo", "--seed", "42", "--out-dir", dir.path().string()});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(r.out.find("source-only") != std::string::npos);
  CHECK(r.out.find("FPS") != std::string::npos);
  CHECK(r.out.find("joint") != std::string::npos);
  const nlohmann::json table = load(dir / "demo.json");
  CHECK(table["joint"].get<double>() >= table["fps"].get<double>());
  CHECK(table["fps"].get<double>() >= table["source_only"].get<double>());
  CHECK(std::filesystem::exists(dir / "head.json"));
  CHECK(std::filesystem::exists(dir / "trace.csv"));
  const nlohmann::json meta = load(dir / "run.json");
  CHECK(meta["command"] == "demo");
  CHECK(meta["seed"] == 42);
}

TEST_CASE("unknown flags and missing subcommands are usage errors") {
  const Result r = run({"adapt", "--no-such-flag"});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("preprocess, adapt and eval chain through files") {
  TempDir dir("cli_pipeline");
  write_raw_pair(dir, 5, "");
  const std::string prep = path(dir, "prep");
  Result r = run({"preprocess", "--source", path(dir, "src.fpsb"), "--target", path(dir, "tgt.fpsb"),
                  "--out-dir", prep});
  REQUIRE(r.code == cli::kExitOk);
  const nlohmann::json stats = load(dir / "prep" / "stats.json");
  CHECK(stats["s"] == 2.5);
  CHECK(stats["fingerprint"].get<std::string>().size() == 16);

  const std::string run_dir = path(dir, "adapt");
  r = run({"adapt", "--source", prep + "/source.fpsb", "--target", prep + "/target.fpsb", "--steps", "400",
           "--warmup", "40", "--seed", "3", "--out-dir", run_dir});
  REQUIRE(r.code == cli::kExitOk);
  for (const char* f : {"head.json", "trace.csv", "report.json", "run.json"}) {
    CHECK(std::filesystem::exists(std::filesystem::path(run_dir) / f));
  }
  const nlohmann::json report = load(std::filesystem::path(run_dir) / "report.json");
  CHECK(report["target_accuracy"].is_number());

  r = run({"eval", "--head", run_dir + "/head.json", "--data", prep + "/target.fpsb", "--out-dir",
           path(dir, "eval")});
  REQUIRE(r.code == cli::kExitOk);
  const nlohmann::json ev = load(dir / "eval" / "eval.json");
  CHECK(ev["accuracy"].get<double>() == doctest::Approx(report["target_accuracy"].get<double>()));
  CHECK(ev["plane"] == "target");
}

TEST_CASE("adapt on containers from different preprocessing runs exits with a data error") {
  TempDir dir("cli_mismatch");
  write_raw_pair(dir, 1, "a_");
  write_raw_pair(dir, 2, "b_");
  REQUIRE(run({"preprocess", "--source", path(dir, "a_src.fpsb"), "--target", path(dir, "a_tgt.fpsb"),
               "--out-dir", path(dir, "a")})
              .code == 0);
  REQUIRE(run({"preprocess", "--source", path(dir, "b_src.fpsb"), "--target", path(dir, "b_tgt.fpsb"),
               "--out-dir", path(dir, "b")})
              .code == 0);
  const std::string fa = load(dir / "a" / "stats.json")["fingerprint"];
  const std::string fb = load(dir / "b" / "stats.json")["fingerprint"];
  REQUIRE(fa != fb);
  const Result r = run({"adapt", "--source", path(dir, "a/source.fpsb"), "--target", path(dir, "b/target.fpsb"),
                        "--steps", "10", "--out-dir", path(dir, "out")});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find(fa) != std::string::npos);
  CHECK(r.err.find(fb) != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "out" / "head.json"));
}

TEST_CASE("missing input files are data errors") {
  TempDir dir("cli_missing");
  const Result r = run({"eval", "--head", path(dir, "nope.json"), "--data", path(dir, "nope.fpsb")});
  CHECK(r.code == cli::kExitData);
}

TEST_CASE("explicit flags override the config file, which overrides defaults") {
  TempDir dir("cli_config");
  write_raw_pair(dir, 7, "");
  REQUIRE(run({"preprocess", "--source", path(dir, "src.fpsb"), "--target", path(dir, "tgt.fpsb"), "--out-dir",
               path(dir, "prep")})
              .code == 0);
  {
    std::ofstream c(dir / "cfg.json");
    c << R"({"loss": {"alpha": 0.3, "lambda": 0.5}, "train": {"total_steps": 60, "warmup_steps": 6}, "seed": 9})";
  }
  const Result r = run({"adapt", "--source", path(dir, "prep/source.fpsb"), "--target", path(dir, "prep/target.fpsb"),
                        "--config", path(dir, "cfg.json"), "--alpha", "0.7", "--out-dir", path(dir, "out")});
  REQUIRE(r.code == cli::kExitOk);
  const nlohmann::json meta = load(dir / "out" / "run.json");
  CHECK(meta["loss"]["alpha"] == 0.7);
  CHECK(meta["loss"]["lambda"] == 0.5);
  CHECK(meta["loss"]["beta"] == LossConfig{}.beta);
  CHECK(meta["train"]["total_steps"] == 60);
  CHECK(meta["seed"] == 9);
  CHECK(meta["rng_algorithm"] == Rng::kAlgorithm);
  CHECK(meta["tool_version"].is_string());
  CHECK(meta["argv"].size() == 12);
  CHECK(meta["inputs"].size() == 2);

  {
    std::ofstream c(dir / "bad.json");
    c << R"({"loss": {"alpha": 3.0}})";
  }
  CHECK(run({"adapt", "--source", path(dir, "prep/source.fpsb"), "--target", path(dir, "prep/target.fpsb"),
             "--config", path(dir, "bad.json"), "--out-dir", path(dir, "bad")})
            .code == cli::kExitData);
}

TEST_CASE("sweep writes one CSV row per candidate and the selected head") {
  TempDir dir("cli_sweep");
  write_raw_pair(dir, 8, "");
  REQUIRE(run({"preprocess", "--source", path(dir, "src.fpsb"), "--target", path(dir, "tgt.fpsb"), "--out-dir",
               path(dir, "prep")})
              .code == 0);
  const Result r = run({"sweep", "--source", path(dir, "prep/source.fpsb"), "--target", path(dir, "prep/target.fpsb"),
                        "--alphas", "0.25", "0.75", "--steps", "300", "--out-dir", path(dir, "out")});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(r.out.find("selected alpha") != std::string::npos);
  std::ifstream f(dir / "out" / "sweep.csv");
  std::string line;
  int rows = -1;
  while (std::getline(f, line)) rows += !line.empty();
  CHECK(rows == 2);
  CHECK(std::filesystem::exists(dir / "out" / "head.json"));
}

TEST_CASE("landscape and analyze write their CSVs") {
  TempDir dir("cli_diag");
  Result r = run({"landscape", "--theta-steps", "12", "--b-steps", "5", "--out-dir", path(dir, "land")});
  REQUIRE(r.code == cli::kExitOk);
  std::ifstream f(dir / "land" / "landscape.csv");
  std::string line;
  int rows = -1;
  while (std::getline(f, line)) rows += !line.empty();
  CHECK(rows == 60);

  write_raw_pair(dir, 9, "");
  REQUIRE(run({"preprocess", "--source", path(dir, "src.fpsb"), "--target", path(dir, "tgt.fpsb"), "--out-dir",
               path(dir, "prep")})
              .code == 0);
  r = run({"analyze", "--data", path(dir, "prep/target.fpsb"), "--other", path(dir, "prep/source.fpsb"), "--head",
           path(dir, "nohead.json"), "--out-dir", path(dir, "an")});
  CHECK(r.code == cli::kExitData);
  r = run({"analyze", "--data", path(dir, "prep/target.fpsb"), "--other", path(dir, "prep/source.fpsb"), "--out-dir",
           path(dir, "an")});
  REQUIRE(r.code == cli::kExitOk);
  CHECK(std::filesystem::exists(dir / "an" / "distance.csv"));
  CHECK(std::filesystem::exists(dir / "an" / "distance_cross.csv"));
  CHECK(std::filesystem::exists(dir / "an" / "run.json"));
}
