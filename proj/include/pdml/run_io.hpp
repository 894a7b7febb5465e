#pragma once

// Run artifacts: output directory layout, CSV metrics files, and the run
// manifest.
//
// Every run owns <out_root>/<name>/<seed>/ with fixed filenames inside, so
// downstream tooling can locate outputs without parsing anything. CSVs
// carry a header row and a constant column count; doubles are printed at
// %.17g so identical runs produce byte-identical files. The manifest is a
// JSON snapshot of the effective config plus provenance, written
// atomically (temp file + rename) at run start and finalized at run end.
//
// Wall-clock timing lives only in epochs.csv and the manifest; the metrics
// files (returns, errors, weights, compounding) are pure functions of
// config and seed.

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "pdml/common.hpp"
#include "pdml/config.hpp"
#include "pdml/envs.hpp"

namespace pdml {

inline constexpr const char* kCodeVersion = "0.1.0";

inline std::string default_out_root() {
  const char* v = std::getenv("PDML_OUT_ROOT");
  return (v != nullptr && *v != '\0') ? std::string(v) : std::string("runs");
}

inline std::string iso8601_utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string csv_num(double v) { return detail::format_double(v); }
inline std::string csv_num(long long v) { return std::to_string(v); }
inline std::string csv_num(int v) { return std::to_string(v); }

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> columns)
      : path_(path.string()), ncols_(columns.size()) {
    require(ncols_ > 0, "CsvWriter: need at least one column");
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path_);
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << ',';
      out_ << columns[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    require(cells.size() == ncols_,
            "CsvWriter: row width mismatch in " + path_ + " (got " +
                std::to_string(cells.size()) + ", want " + std::to_string(ncols_) + ")");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
    if (!out_) throw std::runtime_error("CsvWriter: write failed for " + path_);
  }

  void flush() { out_.flush(); }

 private:
  std::string path_;
  std::size_t ncols_;
  std::ofstream out_;
};

struct RunPaths {
  std::filesystem::path dir;

  static RunPaths create(const std::string& out_root, const std::string& name,
                         long long seed) {
    RunPaths p;
    p.dir = std::filesystem::path(out_root) / name / std::to_string(seed);
    std::filesystem::create_directories(p.dir);
    return p;
  }

  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path config() const { return dir / "config.toml"; }
  std::filesystem::path returns_csv() const { return dir / "returns.csv"; }
  std::filesystem::path errors_csv() const { return dir / "errors.csv"; }
  std::filesystem::path weights_csv() const { return dir / "weights.csv"; }
  std::filesystem::path epochs_csv() const { return dir / "epochs.csv"; }
  std::filesystem::path compounding_csv() const { return dir / "compounding.csv"; }
  std::filesystem::path checkpoint_prefix() const {
    return dir / "checkpoint" / "final";
  }
};

struct RunManifest {
  std::string config_text;  // effective config, canonical serialization
  long long seed = 0;
  std::string code_version = kCodeVersion;
  std::string started_at, finished_at;  // ISO-8601 UTC; finished empty while running
  std::string status = "running";       // running | complete | failed
  EnvSpec env;
  std::vector<std::string> outputs;  // filenames relative to the run dir

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config_text;
    j["seed"] = seed;
    j["code_version"] = code_version;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["status"] = status;
    j["environment"] = {{"name", env.name},
                        {"state_dim", env.state_dim},
                        {"action_dim", env.action_dim},
                        {"action_low", env.action_low},
                        {"action_high", env.action_high},
                        {"max_episode_steps", env.max_episode_steps}};
    j["outputs"] = outputs;
    return j;
  }

  void write(const std::filesystem::path& path) const {
    write_file_atomic(path, to_json().dump(2) + "\n");
  }
};

}  // namespace pdml
