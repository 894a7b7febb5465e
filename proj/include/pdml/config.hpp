#pragma once

// Declarative run configuration.
//
// The on-disk format is a flat, typed key-value file with one section per
// module ([run], [weighting], [model], [sac], [rollout], [buffer]). Every
// key is declared in the schema below; unknown sections or keys are hard
// parse errors with line numbers, because a silently ignored hyperparameter
// typo is the most expensive failure mode an experiment runner has.
// Parsing then re-serializing the effective config is idempotent.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pdml/common.hpp"
#include "pdml/gaussian.hpp"

namespace pdml {

struct RunConfig {
  struct Run {
    std::string env = "pendulum";
    long long total_env_steps = 30000;
    long long warmup_steps = 5000;
    int steps_per_epoch = 250;  // real steps between model trainings
    int eval_every = 1000;
    int eval_episodes = 10;
    int checkpoint_every_epochs = 0;  // 0: only at run end
    std::string name = "run";
    std::string out_root = "runs";
  } run;

  struct Weighting {
    std::string mode = "pdml";  // pdml | uniform | exp_decay | td_priority
    double alpha = 0.02 / 0.98;
    double decay_rate = 0.98;    // exp_decay only
    double xi_floor = 1e-6;
    std::string shift_formula = "pinsker";  // pinsker | mixed
    int eval_states = 1000;  // buffer states used to estimate policy shifts
                             // (clamped to the buffer size at use)
  } weighting;

  struct Model {
    int ensemble_size = 5;
    std::vector<int> hidden = {64, 64};
    int batch_size = 256;
    int max_grad_steps = 200;
    double learning_rate = 1e-3;
    double holdout_ratio = 0.1;
  } model;

  struct Sac {
    std::vector<int> hidden = {64, 64};
    double learning_rate = 3e-4;
    double gamma = 0.99;
    double tau = 5e-3;
    double initial_temperature = 1.0;
    int updates_per_env_step = 20;
    int batch_size = 256;
    double real_sample_fraction = 0.05;
  } sac;

  struct Rollout {
    int per_epoch = 400;  // initial states rolled out each epoch
    int batch = 400;      // initial states per rollout call (chunk size)
    // either {h} (fixed) or {a, b, x, y} (thresholded linear in the epoch)
    std::vector<int> schedule = {1};
  } rollout;

  struct Buffer {
    long long real_capacity = 1000000;
    long long model_capacity = 1000000;
  } buffer;

  void validate() const {
    require(run.total_env_steps >= 1 && run.warmup_steps >= 0 &&
                run.steps_per_epoch >= 1 && run.eval_every >= 1 &&
                run.eval_episodes >= 1 && run.checkpoint_every_epochs >= 0,
            "config: counts in [run] must be positive");
    require(run.warmup_steps < run.total_env_steps,
            "config: warmup_steps must be below total_env_steps");
    require(!run.name.empty() && !run.out_root.empty(),
            "config: run.name and run.out_root must be set");
    require(weighting.mode == "pdml" || weighting.mode == "uniform" ||
                weighting.mode == "exp_decay" || weighting.mode == "td_priority",
            "config: weighting.mode must be pdml, uniform, exp_decay, or td_priority");
    require(weighting.alpha > 0.0, "config: weighting.alpha must be > 0");
    require(weighting.decay_rate > 0.0 && weighting.decay_rate <= 1.0,
            "config: weighting.decay_rate must be in (0, 1]");
    require(weighting.xi_floor > 0.0, "config: weighting.xi_floor must be > 0");
    require(weighting.shift_formula == "pinsker" ||
                weighting.shift_formula == "mixed",
            "config: weighting.shift_formula must be pinsker or mixed");
    require(weighting.eval_states >= 1, "config: weighting.eval_states must be >= 1");
    require(model.ensemble_size >= 1 && model.batch_size >= 1 &&
                model.max_grad_steps >= 0 && model.learning_rate > 0.0,
            "config: bad [model] values");
    require(model.holdout_ratio > 0.0 && model.holdout_ratio < 1.0,
            "config: model.holdout_ratio must be in (0, 1)");
    for (int h : model.hidden) require(h >= 1, "config: model.hidden entries must be >= 1");
    require(sac.learning_rate >= 0.0 && sac.gamma > 0.0 && sac.gamma < 1.0 &&
                sac.tau > 0.0 && sac.tau <= 1.0 && sac.initial_temperature > 0.0 &&
                sac.updates_per_env_step >= 1 && sac.batch_size >= 1,
            "config: bad [sac] values");
    require(sac.real_sample_fraction >= 0.0 && sac.real_sample_fraction <= 1.0,
            "config: sac.real_sample_fraction must be in [0, 1]");
    for (int h : sac.hidden) require(h >= 1, "config: sac.hidden entries must be >= 1");
    require(rollout.per_epoch >= 0, "config: rollout.per_epoch must be >= 0");
    require(rollout.batch >= 1, "config: rollout.batch must be >= 1");
    if (rollout.schedule.size() == 1) {
      require(rollout.schedule[0] >= 1, "config: fixed rollout horizon must be >= 1");
    } else {
      require(rollout.schedule.size() == 4,
              "config: rollout.schedule needs 1 (fixed) or 4 (a, b, x, y) entries");
      require(rollout.schedule[0] < rollout.schedule[1],
              "config: rollout.schedule requires a < b");
      require(rollout.schedule[2] <= rollout.schedule[3],
              "config: rollout.schedule requires x <= y");
      require(rollout.schedule[2] >= 1, "config: rollout horizons must be >= 1");
    }
    require(buffer.real_capacity >= 1 && buffer.model_capacity >= 1,
            "config: buffer capacities must be >= 1");
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct ConfigField {
  enum Kind { kInt, kLong, kDouble, kString, kIntList } kind;
  void* target;
};

inline std::map<std::string, ConfigField> config_schema(RunConfig& c) {
  using F = ConfigField;
  return {
      {"run.env", {F::kString, &c.run.env}},
      {"run.total_env_steps", {F::kLong, &c.run.total_env_steps}},
      {"run.warmup_steps", {F::kLong, &c.run.warmup_steps}},
      {"run.steps_per_epoch", {F::kInt, &c.run.steps_per_epoch}},
      {"run.eval_every", {F::kInt, &c.run.eval_every}},
      {"run.eval_episodes", {F::kInt, &c.run.eval_episodes}},
      {"run.checkpoint_every_epochs", {F::kInt, &c.run.checkpoint_every_epochs}},
      {"run.name", {F::kString, &c.run.name}},
      {"run.out_root", {F::kString, &c.run.out_root}},
      {"weighting.mode", {F::kString, &c.weighting.mode}},
      {"weighting.alpha", {F::kDouble, &c.weighting.alpha}},
      {"weighting.decay_rate", {F::kDouble, &c.weighting.decay_rate}},
      {"weighting.xi_floor", {F::kDouble, &c.weighting.xi_floor}},
      {"weighting.shift_formula", {F::kString, &c.weighting.shift_formula}},
      {"weighting.eval_states", {F::kInt, &c.weighting.eval_states}},
      {"model.ensemble_size", {F::kInt, &c.model.ensemble_size}},
      {"model.hidden", {F::kIntList, &c.model.hidden}},
      {"model.batch_size", {F::kInt, &c.model.batch_size}},
      {"model.max_grad_steps", {F::kInt, &c.model.max_grad_steps}},
      {"model.learning_rate", {F::kDouble, &c.model.learning_rate}},
      {"model.holdout_ratio", {F::kDouble, &c.model.holdout_ratio}},
      {"sac.hidden", {F::kIntList, &c.sac.hidden}},
      {"sac.learning_rate", {F::kDouble, &c.sac.learning_rate}},
      {"sac.gamma", {F::kDouble, &c.sac.gamma}},
      {"sac.tau", {F::kDouble, &c.sac.tau}},
      {"sac.initial_temperature", {F::kDouble, &c.sac.initial_temperature}},
      {"sac.updates_per_env_step", {F::kInt, &c.sac.updates_per_env_step}},
      {"sac.batch_size", {F::kInt, &c.sac.batch_size}},
      {"sac.real_sample_fraction", {F::kDouble, &c.sac.real_sample_fraction}},
      {"rollout.per_epoch", {F::kInt, &c.rollout.per_epoch}},
      {"rollout.batch", {F::kInt, &c.rollout.batch}},
      {"rollout.schedule", {F::kIntList, &c.rollout.schedule}},
      {"buffer.real_capacity", {F::kLong, &c.buffer.real_capacity}},
      {"buffer.model_capacity", {F::kLong, &c.buffer.model_capacity}},
  };
}

inline void assign_config_value(const ConfigField& field, const std::string& key,
                                std::string value) {
  value = trim(value);
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("config: key '" + key + "': " + why + " (got '" +
                                value + "')");
  };
  switch (field.kind) {
    case ConfigField::kInt:
    case ConfigField::kLong: {
      long long v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size())
        fail("expected an integer");
      if (field.kind == ConfigField::kInt)
        *static_cast<int*>(field.target) = static_cast<int>(v);
      else
        *static_cast<long long*>(field.target) = v;
      break;
    }
    case ConfigField::kDouble: {
      try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) fail("expected a number");
        *static_cast<double*>(field.target) = v;
      } catch (const std::exception&) {
        fail("expected a number");
      }
      break;
    }
    case ConfigField::kString: {
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
        value = value.substr(1, value.size() - 2);
      if (value.empty()) fail("expected a non-empty string");
      *static_cast<std::string*>(field.target) = value;
      break;
    }
    case ConfigField::kIntList: {
      if (value.size() < 2 || value.front() != '[' || value.back() != ']')
        fail("expected a list like [1, 2]");
      std::string body = value.substr(1, value.size() - 2);
      std::vector<int> out;
      std::stringstream ss(body);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) fail("empty list element");
        int v = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || p != item.data() + item.size())
          fail("list elements must be integers");
        out.push_back(v);
      }
      if (out.empty()) fail("expected a non-empty list");
      *static_cast<std::vector<int>*>(field.target) = out;
      break;
    }
  }
}

}  // namespace detail

// Parse config text. Starts from defaults; every assignment must name a
// schema key. Unknown sections/keys and malformed values throw with the
// offending line.
inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  auto schema = detail::config_schema(cfg);
  std::stringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                    ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& [key, field] : schema)
        if (key.rfind(section + ".", 0) == 0) known = true;
      if (!known)
        throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                    ": unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    if (section.empty())
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": key outside any [section]");
    std::string full = section + "." + key;
    auto it = schema.find(full);
    if (it == schema.end())
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  ": unknown key '" + full + "'");
    detail::assign_config_value(it->second, full, line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Apply a "section.key=value" override on top of a parsed config.
inline void apply_override(RunConfig& cfg, const std::string& spec) {
  std::size_t eq = spec.find('=');
  require(eq != std::string::npos && eq > 0,
          "override must look like section.key=value, got '" + spec + "'");
  std::string key = detail::trim(spec.substr(0, eq));
  auto schema = detail::config_schema(cfg);
  auto it = schema.find(key);
  if (it == schema.end())
    throw std::invalid_argument("override: unknown key '" + key + "'");
  detail::assign_config_value(it->second, key, spec.substr(eq + 1));
}

// Canonical serialization: every key in schema order, doubles at full
// precision, so parse(serialize(cfg)) reproduces cfg exactly.
inline std::string serialize_config(const RunConfig& cfg) {
  RunConfig& c = const_cast<RunConfig&>(cfg);
  auto schema = detail::config_schema(c);
  std::string out;
  std::string section;
  for (const auto& [key, field] : schema) {  // std::map: sorted, stable
    std::string sec = key.substr(0, key.find('.'));
    std::string name = key.substr(key.find('.') + 1);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name + " = ";
    switch (field.kind) {
      case detail::ConfigField::kInt:
        out += std::to_string(*static_cast<const int*>(field.target));
        break;
      case detail::ConfigField::kLong:
        out += std::to_string(*static_cast<const long long*>(field.target));
        break;
      case detail::ConfigField::kDouble:
        out += detail::format_double(*static_cast<const double*>(field.target));
        break;
      case detail::ConfigField::kString:
        out += "\"" + *static_cast<const std::string*>(field.target) + "\"";
        break;
      case detail::ConfigField::kIntList: {
        const auto& v = *static_cast<const std::vector<int>*>(field.target);
        out += "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
          if (i) out += ", ";
          out += std::to_string(v[i]);
        }
        out += "]";
        break;
      }
    }
    out += "\n";
  }
  return out;
}

inline ShiftFormula shift_formula_from_string(const std::string& s) {
  if (s == "pinsker") return ShiftFormula::kPinsker;
  if (s == "mixed") return ShiftFormula::kMixed;
  throw std::invalid_argument("unknown shift formula '" + s + "'");
}

}  // namespace pdml
