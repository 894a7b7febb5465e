#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pdml/config.hpp"
#include "pdml/run_io.hpp"

using namespace pdml;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("pdml_io_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

}  // namespace

TEST_CASE("config defaults validate and round-trip exactly") {
  RunConfig cfg;
  cfg.validate();
  std::string once = serialize_config(cfg);
  RunConfig back = parse_config(once);
  std::string twice = serialize_config(back);
  CHECK(once == twice);
  CHECK(back.weighting.alpha == cfg.weighting.alpha);
  CHECK(back.model.learning_rate == cfg.model.learning_rate);
  CHECK(back.rollout.schedule == cfg.rollout.schedule);
}

TEST_CASE("config parses sections, comments, and typed values") {
  std::string text = R"(
# experiment
[run]
env = "pointmass"
total_env_steps = 12000
warmup_steps = 600   # inline comment
name = demo

[weighting]
mode = "exp_decay"
decay_rate = 0.75

[model]
hidden = [16, 8]

[rollout]
schedule = [1, 15, 20, 100]
)";
  RunConfig cfg = parse_config(text);
  CHECK(cfg.run.env == "pointmass");
  CHECK(cfg.run.total_env_steps == 12000);
  CHECK(cfg.run.warmup_steps == 600);
  CHECK(cfg.run.name == "demo");  // bare strings allowed
  CHECK(cfg.weighting.mode == "exp_decay");
  CHECK(cfg.weighting.decay_rate == 0.75);
  CHECK(cfg.model.hidden == std::vector<int>{16, 8});
  CHECK(cfg.rollout.schedule == std::vector<int>{1, 15, 20, 100});
  // untouched keys keep defaults
  CHECK(cfg.sac.gamma == 0.99);

  std::string canon = serialize_config(cfg);
  CHECK(serialize_config(parse_config(canon)) == canon);
}

TEST_CASE("config rejects unknown keys and malformed lines") {
  CHECK_THROWS_WITH(parse_config("[run]\nenv = pendulum\ntypo_key = 3\n"),
                    Catch::Matchers::ContainsSubstring("typo_key") &&
                        Catch::Matchers::ContainsSubstring("line 3"));
  CHECK_THROWS_WITH(parse_config("[nosuch]\nx = 1\n"),
                    Catch::Matchers::ContainsSubstring("unknown section"));
  CHECK_THROWS_WITH(parse_config("env = pendulum\n"),
                    Catch::Matchers::ContainsSubstring("outside any"));
  CHECK_THROWS_WITH(parse_config("[run]\nenv pendulum\n"),
                    Catch::Matchers::ContainsSubstring("expected key = value"));
  CHECK_THROWS_WITH(parse_config("[run]\ntotal_env_steps = soon\n"),
                    Catch::Matchers::ContainsSubstring("expected an integer"));
  CHECK_THROWS_WITH(parse_config("[model]\nhidden = 16\n"),
                    Catch::Matchers::ContainsSubstring("expected a list"));
  CHECK_THROWS_WITH(parse_config("[model]\nhidden = [16, ]\n"),
                    Catch::Matchers::ContainsSubstring("empty list element"));
}

TEST_CASE("config validation rejects out-of-range values") {
  auto broken = [](const std::string& body) {
    return "[run]\nenv = pendulum\n" + body + "\n";
  };
  CHECK_THROWS_AS(parse_config(broken("[weighting]\nalpha = 0.0")),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config(broken("[weighting]\nmode = softmax")),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config(broken("[weighting]\ndecay_rate = 1.5")),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config(broken("[rollout]\nschedule = [15, 1, 20, 100]")),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config(broken("[rollout]\nschedule = [1, 15, 100, 20]")),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config(broken("[rollout]\nschedule = [0]")),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config(broken("[rollout]\nschedule = [1, 15]")),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      parse_config(broken("[run]\nwarmup_steps = 30000\ntotal_env_steps = 30000")),
      std::invalid_argument);
  CHECK_THROWS_AS(parse_config(broken("[model]\nholdout_ratio = 1.0")),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_config(broken("[sac]\nreal_sample_fraction = 1.25")),
                  std::invalid_argument);
}

TEST_CASE("config overrides hit any schema key and reject unknowns") {
  RunConfig cfg;
  apply_override(cfg, "weighting.mode=uniform");
  apply_override(cfg, "run.total_env_steps=12000");
  apply_override(cfg, "sac.hidden=[16, 16]");
  apply_override(cfg, "weighting.alpha=0.5");
  CHECK(cfg.weighting.mode == "uniform");
  CHECK(cfg.run.total_env_steps == 12000);
  CHECK(cfg.sac.hidden == std::vector<int>{16, 16});
  CHECK(cfg.weighting.alpha == 0.5);
  CHECK_THROWS_WITH(apply_override(cfg, "sac.momentum=0.9"),
                    Catch::Matchers::ContainsSubstring("sac.momentum"));
  CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"), std::invalid_argument);
}

TEST_CASE("doubles survive serialization at full precision") {
  RunConfig cfg;
  cfg.weighting.alpha = 0.02 / 0.98;
  cfg.model.learning_rate = 3e-4;
  cfg.sac.tau = 1.0 / 3.0;
  RunConfig back = parse_config(serialize_config(cfg));
  CHECK(back.weighting.alpha == cfg.weighting.alpha);
  CHECK(back.model.learning_rate == cfg.model.learning_rate);
  CHECK(back.sac.tau == cfg.sac.tau);
}

TEST_CASE("shift formula names map to the two estimator variants") {
  CHECK(shift_formula_from_string("pinsker") == ShiftFormula::kPinsker);
  CHECK(shift_formula_from_string("mixed") == ShiftFormula::kMixed);
  CHECK_THROWS_AS(shift_formula_from_string("exact"), std::invalid_argument);
}

TEST_CASE("csv writer enforces a constant column count") {
  TempDir tmp;
  fs::path p = tmp.path / "metrics.csv";
  {
    CsvWriter w(p, {"env_step", "value"});
    w.row({"100", csv_num(1.5)});
    w.row({"200", csv_num(-2.0)});
    CHECK_THROWS_AS(w.row({"300"}), std::invalid_argument);
    w.flush();
  }
  CHECK(slurp(p) == "env_step,value\n100,1.5\n200,-2\n");
}

TEST_CASE("atomic write leaves no temp file and replaces content") {
  TempDir tmp;
  fs::path p = tmp.path / "manifest.json";
  write_file_atomic(p, "first");
  write_file_atomic(p, "second");
  CHECK(slurp(p) == "second");
  CHECK_FALSE(fs::exists(p.string() + ".tmp"));
}

TEST_CASE("run directory layout uses fixed filenames under root/name/seed") {
  TempDir tmp;
  RunPaths paths = RunPaths::create(tmp.path.string(), "demo", 7);
  CHECK(fs::exists(tmp.path / "demo" / "7"));
  CHECK(paths.returns_csv().filename() == "returns.csv");
  CHECK(paths.errors_csv().filename() == "errors.csv");
  CHECK(paths.weights_csv().filename() == "weights.csv");
  CHECK(paths.epochs_csv().filename() == "epochs.csv");
  CHECK(paths.manifest().filename() == "manifest.json");
}

TEST_CASE("manifest snapshot carries config, seed, and environment spec") {
  TempDir tmp;
  RunManifest m;
  m.config_text = serialize_config(RunConfig{});
  m.seed = 42;
  m.started_at = iso8601_utc_now();
  m.env = {"pendulum", 3, 1, {-2.0}, {2.0}, 200};
  m.outputs = {"returns.csv", "errors.csv"};
  fs::path p = tmp.path / "manifest.json";
  m.write(p);
  nlohmann::json j = nlohmann::json::parse(slurp(p));
  CHECK(j["seed"] == 42);
  CHECK(j["status"] == "running");
  CHECK(j["environment"]["name"] == "pendulum");
  CHECK(j["environment"]["state_dim"] == 3);
  CHECK(j["outputs"].size() == 2);
  CHECK(j["code_version"] == kCodeVersion);
  // timestamp shape: 2026-01-02T03:04:05Z
  std::string ts = j["started_at"].get<std::string>();
  REQUIRE(ts.size() == 20);
  CHECK(ts[4] == '-');
  CHECK(ts[10] == 'T');
  CHECK(ts.back() == 'Z');
  // config snapshot parses back to a valid config
  CHECK_NOTHROW(parse_config(j["config"].get<std::string>()));
}

TEST_CASE("output root comes from the environment when set") {
  ::setenv("PDML_OUT_ROOT", "/tmp/pdml_custom_root", 1);
  CHECK(default_out_root() == "/tmp/pdml_custom_root");
  ::unsetenv("PDML_OUT_ROOT");
  CHECK(default_out_root() == "runs");
}
