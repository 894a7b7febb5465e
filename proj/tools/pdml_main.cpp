// Experiment command line: training runs, analytic-bound verification on
// exact tabular problems, and multi-config comparisons.
//
// Exit codes are a stable contract: 0 success, 1 runtime failure,
// 2 usage/configuration error.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "pdml/config.hpp"
#include "pdml/experiment.hpp"
#include "pdml/run_io.hpp"
#include "pdml/tabular.hpp"
#include "pdml/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pdml;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_path, long long seed,
              const std::string& weighting, const std::string& out_root_flag,
              const std::vector<std::string>& overrides) {
  RunConfig cfg;
  try {
    cfg = load_config(config_path);
    for (const std::string& o : overrides) apply_override(cfg, o);
    if (!weighting.empty()) cfg.weighting.mode = weighting;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    TrainResult result = run_training(cfg, seed, resolve_out_root(out_root_flag, cfg));
    std::cout << "run complete: " << result.paths.dir.string()
              << "\n  final mean return: " << result.final_return
              << "\n  final current-policy model error: "
              << result.final_current_error << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------------------
// verify

json mdp_to_json(const TabularMdp& mdp) {
  return json{{"num_states", mdp.num_states},
              {"num_actions", mdp.num_actions},
              {"gamma", mdp.gamma},
              {"r_max", mdp.r_max},
              {"transition", mdp.transition},
              {"reward", mdp.reward},
              {"initial", mdp.initial}};
}

json policy_to_json(const TabularPolicy& p) {
  return json{{"num_states", p.num_states},
              {"num_actions", p.num_actions},
              {"probs", p.probs}};
}

struct VerifyReport {
  long long instances = 0;
  json lemma1_max_violation;        // number when the suite ran
  json theorem1_holds_count;        // number when the suite ran
  json residual_histogram;          // bucket -> count
  json proposition1_margin_min;     // number when the suite ran
  bool passed = true;

  json to_json(const std::string& suite, long long seed) const {
    return json{{"suite", suite},
                {"seed", seed},
                {"instances", instances},
                {"lemma1_max_violation", lemma1_max_violation},
                {"theorem1_holds_count", theorem1_holds_count},
                {"residual_histogram", residual_histogram},
                {"proposition1_margin_min", proposition1_margin_min},
                {"passed", passed}};
  }
};

// Serialized instance for replay when a check fails.
void dump_failure(const fs::path& path, const json& instance) {
  write_file_atomic(path, instance.dump(2) + "\n");
  std::cerr << "offending instance written to " << path.string() << "\n";
}

// Visitation-gap inequality over random perturbed instances.
void verify_lemma1(int n, Rng& rng, VerifyReport& report, const fs::path& fail_path) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    TabularMdp real = random_tabular_mdp(6, 3, 0.95, rng);
    TabularMdp model = perturb_toward_uniform(real, rng.uniform(0.0, 0.1));
    TabularPolicy p1 = random_tabular_policy(real.num_states, real.num_actions, rng);
    TabularPolicy p2 = random_tabular_policy(real.num_states, real.num_actions, rng);
    Lemma1Report rep = check_lemma1(real, model, p1, p2);
    worst = std::max(worst, rep.max_violation);
    if (rep.max_violation > 1e-9) {
      report.passed = false;
      dump_failure(fail_path, json{{"check", "lemma1"},
                                   {"instance", i},
                                   {"max_violation", rep.max_violation},
                                   {"real", mdp_to_json(real)},
                                   {"model", mdp_to_json(model)},
                                   {"policy1", policy_to_json(p1)},
                                   {"policy2", policy_to_json(p2)}});
    }
  }
  report.instances += n;
  report.lemma1_max_violation = worst;
}

// Performance-gap bound: exact-model instances must close to zero, and
// perturbed instances must satisfy the bound whenever the mixture
// occupancy residual is below threshold.
void verify_theorem1(int n, Rng& rng, VerifyReport& report, const fs::path& fail_path) {
  const double kResidualThreshold = 1e-3;
  long long holds = 0;
  std::map<std::string, long long> hist{{"<=1e-6", 0},
                                        {"<=1e-4", 0},
                                        {"<=1e-3", 0},
                                        {"<=1e-2", 0},
                                        {">1e-2", 0}};
  for (int i = 0; i < n; ++i) {
    TabularMdp real = random_tabular_mdp(6, 3, 0.95, rng);
    TabularPolicy current =
        random_tabular_policy(real.num_states, real.num_actions, rng);
    int k = 1 + rng.uniform_int(5);
    std::vector<TabularPolicy> mixture;
    for (int j = 0; j < k; ++j)
      mixture.push_back(random_tabular_policy(real.num_states, real.num_actions, rng));
    std::vector<double> weights = dirichlet_row(k, rng);
    double eps = rng.uniform(0.0, 0.05);
    TabularMdp model = perturb_toward_uniform(real, eps);

    json mixture_json = json::array();
    for (const TabularPolicy& p : mixture) mixture_json.push_back(policy_to_json(p));
    json instance{{"check", "theorem1"},
                  {"instance", i},
                  {"eps", eps},
                  {"real", mdp_to_json(real)},
                  {"current", policy_to_json(current)},
                  {"mixture", mixture_json},
                  {"weights", weights}};

    try {
      // exact model: the gap and the model-error terms vanish
      BoundReport exact = check_theorem1(real, real, current, mixture, weights,
                                         kResidualThreshold);
      if (std::fabs(exact.lhs) > 1e-9 || !exact.holds) {
        report.passed = false;
        instance["failure"] = "exact-model instance did not close";
        instance["lhs"] = exact.lhs;
        dump_failure(fail_path, instance);
      }
      BoundReport rep =
          check_theorem1(real, model, current, mixture, weights, kResidualThreshold);
      if (rep.holds) ++holds;
      double r = rep.assumption_residual;
      if (r <= 1e-6) ++hist["<=1e-6"];
      else if (r <= 1e-4) ++hist["<=1e-4"];
      else if (r <= 1e-3) ++hist["<=1e-3"];
      else if (r <= 1e-2) ++hist["<=1e-2"];
      else ++hist[">1e-2"];
    } catch (const std::exception& e) {
      // check_theorem1 throws when an asserted (low-residual) instance
      // violates the bound
      report.passed = false;
      instance["failure"] = e.what();
      dump_failure(fail_path, instance);
    }
  }
  report.instances += n;
  report.theorem1_holds_count = holds;
  report.residual_histogram = hist;
}

// Weighting proposition over random monotone instances.
void verify_proposition1(int n, Rng& rng, VerifyReport& report,
                         const fs::path& fail_path) {
  double margin_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    int k = 1 + rng.uniform_int(20);
    std::vector<double> xi_rho(k), xi_pi(k);
    for (int j = 0; j < k; ++j) {
      xi_rho[j] = rng.uniform(0.0, 2.0);
      xi_pi[j] = rng.uniform(0.0, 2.0);
    }
    std::sort(xi_rho.begin(), xi_rho.end(), std::greater<double>());
    std::sort(xi_pi.begin(), xi_pi.end(), std::greater<double>());
    // inverse-shift weights off the dominant component: non-decreasing
    // exactly when the shifts are non-increasing
    std::vector<double> w(k);
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      w[j] = 1.0 / std::max(xi_rho[j] + xi_pi[j], 1e-6);
      total += w[j];
    }
    for (double& x : w) x /= total;
    double gamma = rng.uniform(0.5, 0.99);
    int vol_s = 2 + rng.uniform_int(9);
    PropositionReport rep = check_proposition1(xi_rho, xi_pi, w, gamma, vol_s, 1.0);
    margin_min = std::min(margin_min, rep.margin);
    if (!rep.holds || rep.margin < -1e-12) {
      report.passed = false;
      dump_failure(fail_path, json{{"check", "proposition1"},
                                   {"instance", i},
                                   {"xi_rho", xi_rho},
                                   {"xi_pi", xi_pi},
                                   {"weights", w},
                                   {"gamma", gamma},
                                   {"vol_s", vol_s},
                                   {"margin", rep.margin}});
    }
  }
  report.instances += n;
  report.proposition1_margin_min = margin_min;
}

int cmd_verify(const std::string& suite, int n, long long seed,
               const std::string& out_path) {
  if (suite != "lemma1" && suite != "theorem1" && suite != "proposition1" &&
      suite != "all") {
    std::cerr << "unknown suite '" << suite
              << "' (expected lemma1, theorem1, proposition1, or all)\n";
    return kExitUsage;
  }
  try {
    Rng rng(static_cast<std::uint64_t>(seed));
    VerifyReport report;
    fs::path out(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    fs::path fail_path = out.parent_path() / "verify_failure.json";
    if (suite == "lemma1" || suite == "all")
      verify_lemma1(n, rng, report, fail_path);
    if (suite == "theorem1" || suite == "all")
      verify_theorem1(n, rng, report, fail_path);
    if (suite == "proposition1" || suite == "all")
      verify_proposition1(n, rng, report, fail_path);

    json j = report.to_json(suite, seed);
    write_file_atomic(out, j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return report.passed ? kExitOk : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "verify failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------------------
// compare

double median(std::vector<double> xs) {
  require(!xs.empty(), "median of empty set");
  std::sort(xs.begin(), xs.end());
  std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double iqr(std::vector<double> xs) {
  require(!xs.empty(), "iqr of empty set");
  std::sort(xs.begin(), xs.end());
  auto quantile = [&](double q) {
    double pos = q * (static_cast<double>(xs.size()) - 1.0);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, xs.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
  };
  return quantile(0.75) - quantile(0.25);
}

int cmd_compare(const std::vector<std::string>& config_paths,
                const std::string& metric, const std::vector<long long>& seeds,
                const std::string& out_root_flag, const std::string& out_path) {
  if (config_paths.size() < 2) {
    std::cerr << "compare needs at least two --config files\n";
    return kExitUsage;
  }
  if (metric != "return" && metric != "current_error") {
    std::cerr << "unknown metric '" << metric
              << "' (expected return or current_error)\n";
    return kExitUsage;
  }
  std::vector<RunConfig> configs;
  for (const std::string& path : config_paths) {
    try {
      configs.push_back(load_config(path));
    } catch (const std::exception& e) {
      std::cerr << "config error in " << path << ": " << e.what() << "\n";
      return kExitUsage;
    }
  }

  int failures = 0;
  // per config: final metric value per surviving seed
  std::vector<std::vector<double>> finals(configs.size());
  fs::path out(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  CsvWriter merged(out, {"config", "seed", "env_step", "metric", "value"});
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const RunConfig& cfg = configs[c];
    for (long long seed : seeds) {
      try {
        TrainResult r = run_training(cfg, seed, resolve_out_root(out_root_flag, cfg));
        const auto& curve = metric == "return" ? r.returns : r.current_errors;
        for (const auto& [step, value] : curve)
          merged.row({cfg.run.name, csv_num(seed), csv_num(step), metric,
                      csv_num(value)});
        merged.flush();
        finals[c].push_back(metric == "return" ? r.final_return
                                               : r.final_current_error);
      } catch (const std::exception& e) {
        std::cerr << "run failed (" << cfg.run.name << ", seed " << seed
                  << "): " << e.what() << "\n";
        ++failures;
      }
    }
  }

  long long survivors = 0;
  for (const auto& f : finals) survivors += static_cast<long long>(f.size());
  if (survivors == 0) {
    std::cerr << "all runs failed; no summary\n";
    return kExitRuntime;
  }

  std::cout << "config" << std::string(18, ' ') << "n  median(" << metric
            << ")  iqr\n";
  for (std::size_t c = 0; c < configs.size(); ++c) {
    if (finals[c].empty()) {
      std::cout << configs[c].run.name << "  (all seeds failed)\n";
      continue;
    }
    std::string name = configs[c].run.name;
    name.resize(std::max<std::size_t>(24, name.size()), ' ');
    std::cout << name << finals[c].size() << "  " << median(finals[c]) << "  "
              << iqr(finals[c]) << "\n";
  }
  std::cout << "merged curves: " << out.string() << "\n";
  return failures == 0 ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based RL experiments with policy-mixture weighted dynamics training"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Run one training configuration");
  std::string train_config, weighting, train_out_root;
  long long train_seed = 1;
  std::vector<std::string> overrides;
  train->add_option("--config", train_config, "Config file path")->required();
  train->add_option("--seed", train_seed, "Run seed (default 1)");
  train->add_option("--weighting", weighting,
                    "Override weighting mode: pdml, uniform, exp_decay, td_priority");
  train->add_option("--out-root", train_out_root,
                    "Output root (default: $PDML_OUT_ROOT, then config)");
  train->add_option("--set", overrides,
                    "Config override section.key=value (repeatable)");

  // verify
  auto* verify = app.add_subcommand(
      "verify", "Check the analytic bounds on randomized exact tabular problems");
  std::string suite = "all", verify_out = "verify_report.json";
  int n_instances = 200;
  long long verify_seed = 7;
  verify->add_option("--suite", suite,
                     "lemma1 | theorem1 | proposition1 | all (default all)");
  verify->add_option("-n,--instances", n_instances,
                     "Random instances per suite (default 200)")
      ->check(CLI::PositiveNumber);
  verify->add_option("--seed", verify_seed, "Instance-generator seed (default 7)");
  verify->add_option("--out", verify_out,
                     "JSON report path (default verify_report.json)");

  // compare
  auto* compare = app.add_subcommand(
      "compare", "Train several configs across seeds and summarize a metric");
  std::vector<std::string> compare_configs;
  std::string metric = "return", compare_out_root, compare_out = "compare.csv";
  std::vector<long long> seeds{1, 2, 3};
  compare->add_option("--config", compare_configs, "Config file (repeat >= 2)")
      ->required();
  compare->add_option("--metric", metric, "return | current_error (default return)");
  compare->add_option("--seeds", seeds, "Seed list (default 1 2 3)");
  compare->add_option("--out-root", compare_out_root,
                      "Output root (default: $PDML_OUT_ROOT, then configs)");
  compare->add_option("--out", compare_out,
                      "Merged curves CSV path (default compare.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (train->parsed())
    return cmd_train(train_config, train_seed, weighting, train_out_root, overrides);
  if (verify->parsed()) return cmd_verify(suite, n_instances, verify_seed, verify_out);
  if (compare->parsed())
    return cmd_compare(compare_configs, metric, seeds, compare_out_root, compare_out);
  return kExitUsage;
}
