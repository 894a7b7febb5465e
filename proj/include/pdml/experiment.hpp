#pragma once

// One full training run as a reusable operation: owns the run directory,
// metrics CSVs, checkpoints, and the manifest lifecycle. The command-line
// entry point is a thin wrapper over this; tests drive it directly so the
// byte-for-byte output contract is exercised by the same code everywhere.

#include "pdml/run_io.hpp"
#include "pdml/trainer.hpp"

namespace pdml {

struct TrainResult {
  RunPaths paths;
  double final_return = 0.0;
  double final_current_error = 0.0;
  std::vector<std::pair<long long, double>> returns;         // env_step, mean return
  std::vector<std::pair<long long, double>> current_errors;  // env_step, error
};

// Runs cfg to completion under out_root/<name>/<seed>/. Throws on failure
// after preserving whatever was already written (manifest flipped to
// "failed"); on success every manifest-listed output exists.
inline TrainResult run_training(const RunConfig& cfg, long long seed,
                                const std::string& out_root) {
  namespace fs = std::filesystem;
  RunPaths paths = RunPaths::create(out_root, cfg.run.name, seed);
  fs::create_directories(paths.dir / "checkpoint");

  RunManifest manifest;
  manifest.config_text = serialize_config(cfg);
  manifest.seed = seed;
  manifest.started_at = iso8601_utc_now();
  manifest.outputs = {"config.toml", "returns.csv", "errors.csv",
                      "weights.csv", "epochs.csv",  "compounding.csv"};
  MbpoTrainer trainer(cfg, seed);
  manifest.env = make_env(cfg.run.env)->spec();
  manifest.write(paths.manifest());
  write_file_atomic(paths.config(), manifest.config_text);

  TrainResult result;
  result.paths = std::move(paths);
  try {
    CsvWriter returns_csv(result.paths.returns_csv(), {"env_step", "mean_return"});
    CsvWriter errors_csv(result.paths.errors_csv(),
                         {"env_step", "current_error", "overall_error"});
    CsvWriter weights_csv(result.paths.weights_csv(),
                          {"env_step", "policy_id", "weight", "shift"});
    CsvWriter epochs_csv(
        result.paths.epochs_csv(),
        {"epoch", "env_step", "horizon", "model_transitions", "holdout_loss",
         "grad_steps", "sac_updates", "temperature", "real_size", "model_size",
         "wallclock_s"});

    TrainCallbacks cb;
    cb.on_eval = [&](long long step, double ret) {
      returns_csv.row({csv_num(step), csv_num(ret)});
      returns_csv.flush();
      result.returns.emplace_back(step, ret);
      result.final_return = ret;
    };
    cb.on_weights = [&](long long step, const std::vector<WeightRecord>& recs) {
      for (const WeightRecord& r : recs)
        weights_csv.row({csv_num(step), csv_num(r.policy_id), csv_num(r.weight),
                         csv_num(r.shift)});
      weights_csv.flush();
    };
    cb.on_epoch = [&](const EpochStats& st) {
      errors_csv.row({csv_num(st.env_step), csv_num(st.current_error),
                      csv_num(st.overall_error)});
      errors_csv.flush();
      epochs_csv.row({csv_num(st.epoch), csv_num(st.env_step), csv_num(st.horizon),
                      csv_num(st.model_transitions), csv_num(st.holdout_loss),
                      csv_num(st.grad_steps), csv_num(st.sac_updates),
                      csv_num(st.temperature),
                      csv_num(static_cast<long long>(st.real_size)),
                      csv_num(static_cast<long long>(st.model_size)),
                      csv_num(st.wallclock_s)});
      epochs_csv.flush();
      result.current_errors.emplace_back(st.env_step, st.current_error);
      result.final_current_error = st.current_error;
      if (cfg.run.checkpoint_every_epochs > 0 &&
          st.epoch % cfg.run.checkpoint_every_epochs == 0)
        trainer.save_checkpoint((result.paths.dir / "checkpoint" / "latest").string());
    };

    trainer.run(cb);

    CsvWriter compounding_csv(result.paths.compounding_csv(), {"step", "state_gap"});
    std::vector<double> profile = trainer.compounding_profile(10, 20);
    for (std::size_t h = 0; h < profile.size(); ++h)
      compounding_csv.row({csv_num(static_cast<long long>(h + 1)), csv_num(profile[h])});
    trainer.save_checkpoint(result.paths.checkpoint_prefix().string());
  } catch (...) {
    manifest.finished_at = iso8601_utc_now();
    manifest.status = "failed";
    manifest.write(result.paths.manifest());
    throw;
  }

  manifest.finished_at = iso8601_utc_now();
  manifest.status = "complete";
  manifest.write(result.paths.manifest());
  for (const std::string& f : manifest.outputs)
    require(fs::exists(result.paths.dir / f),
            "run output missing at completion: " + f);
  return result;
}

// Output-root precedence: explicit flag, then the environment default,
// then the config.
inline std::string resolve_out_root(const std::string& flag_value,
                                    const RunConfig& cfg) {
  if (!flag_value.empty()) return flag_value;
  const char* env = std::getenv("PDML_OUT_ROOT");
  if (env != nullptr && *env != '\0') return env;
  return cfg.run.out_root;
}

}  // namespace pdml
