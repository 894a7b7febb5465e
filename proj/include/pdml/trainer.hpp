#pragma once

// Model-based training loop with policy-mixture weighting.
//
// One epoch: collect real steps with the frozen current policy, snapshot
// that policy into the mixture, recompute mixture weights (inverse-shift,
// uniform, exponential-decay, or TD-priority), train the dynamics ensemble
// on mixture-weighted batches, roll the model out from mixture-weighted
// start states into the model buffer, then run the batched actor-critic
// updates on mixed model/real batches.
//
// Determinism contract: with a fixed seed and serial execution, every
// metric emitted through the callbacks is a pure function of (config,
// seed). Policy evaluation and error probes draw from rngs derived from
// (seed, env_step) or (seed, epoch), so they cannot shift the main stream.

#include <chrono>

#include "pdml/config.hpp"
#include "pdml/dynamics_model.hpp"
#include "pdml/mixture.hpp"
#include "pdml/sac.hpp"

namespace pdml {

// Thresholded-linear rollout horizon. A 1-element schedule {h} is a fixed
// horizon; {a, b, x, y} interpolates from x at epoch a to y at epoch b,
// clamped outside, truncated to an integer, never below 1.
inline int rollout_horizon(int epoch, const std::vector<int>& schedule) {
  require(epoch >= 1, "rollout_horizon: epochs are 1-based");
  if (schedule.size() == 1) {
    require(schedule[0] >= 1, "rollout_horizon: fixed horizon must be >= 1");
    return schedule[0];
  }
  require(schedule.size() == 4, "rollout_horizon: schedule must be {h} or {a, b, x, y}");
  double a = schedule[0], b = schedule[1], x = schedule[2], y = schedule[3];
  require(a < b, "rollout_horizon: schedule requires a < b");
  require(x <= y, "rollout_horizon: schedule requires x <= y");
  double h = x + (static_cast<double>(epoch) - a) / (b - a) * (y - x);
  h = std::min(std::max(h, x), y);
  return std::max(1, static_cast<int>(std::floor(h)));
}

// Mean undiscounted return of the deterministic policy over n episodes.
inline double evaluate_policy(const SacAgent& agent, Env& env, int n_episodes,
                              Rng& rng) {
  require(n_episodes >= 1, "evaluate_policy: need >= 1 episode");
  double total = 0.0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    std::vector<double> s = env.reset(rng);
    while (true) {
      std::vector<double> a = agent.act(s, /*deterministic=*/true, rng);
      StepResult r = env.step(a);
      total += r.reward;
      if (r.done) break;
      s = std::move(r.observation);
    }
  }
  return total / static_cast<double>(n_episodes);
}

// Per-segment mean absolute one-step temporal-difference error, floored
// and normalized: segments the critics find surprising get more
// model-training mass. Each segment is probed with at most
// max_per_segment sampled transitions.
inline std::map<int, double> td_priority_weights(const ReplayBuffer& buffer,
                                                 const SacAgent& agent, Rng& rng,
                                                 int max_per_segment = 256,
                                                 double floor = 1e-6) {
  require(max_per_segment >= 1, "td_priority_weights: max_per_segment must be >= 1");
  require(floor > 0.0, "td_priority_weights: floor must be positive");
  std::map<int, std::size_t> sizes = buffer.segment_sizes();
  require(!sizes.empty(), "td_priority_weights: buffer is empty");
  std::map<int, double> out;
  double total = 0.0;
  std::vector<double> qin;
  for (const auto& [id, n] : sizes) {
    int take = static_cast<int>(std::min<std::size_t>(max_per_segment, n));
    std::vector<Transition> batch =
        buffer.sample_weighted({{id, 1.0}}, take, rng);
    std::vector<double> y = agent.compute_targets(batch, rng);
    double acc = 0.0;
    for (int i = 0; i < take; ++i) {
      qin.assign(batch[i].state.begin(), batch[i].state.end());
      qin.insert(qin.end(), batch[i].action.begin(), batch[i].action.end());
      double q = std::min(agent.critic(0).forward(qin)[0],
                          agent.critic(1).forward(qin)[0]);
      acc += std::fabs(y[i] - q);
    }
    double w = std::max(acc / static_cast<double>(take), floor);
    out[id] = w;
    total += w;
  }
  for (auto& [id, w] : out) w /= total;
  return out;
}

struct EpochStats {
  int epoch = 0;
  long long env_step = 0;
  int horizon = 0;
  long long model_transitions = 0;  // pushed into the model buffer this epoch
  double holdout_loss = 0.0;        // ensemble mean, final holdout NLL
  int grad_steps = 0;               // summed over members
  double current_error = 0.0;       // fresh on-policy one-step model error
  double overall_error = 0.0;       // one-step error over stored history
  int sac_updates = 0;
  double temperature = 0.0;
  std::size_t real_size = 0, model_size = 0;
  double wallclock_s = 0.0;  // informational; never byte-compared
};

struct WeightRecord {
  int policy_id = 0;
  double weight = 0.0;
  double shift = 0.0;  // estimated policy shift; 0 where not applicable
};

struct TrainCallbacks {
  std::function<void(long long, double)> on_eval;  // env_step, mean return
  std::function<void(const EpochStats&)> on_epoch;
  std::function<void(long long, const std::vector<WeightRecord>&)> on_weights;
};

class MbpoTrainer {
 public:
  MbpoTrainer(const RunConfig& cfg, long long seed)
      : cfg_(cfg),
        seed_(seed),
        rng_(static_cast<std::uint64_t>(seed)),
        env_(make_env(cfg.run.env)),
        eval_env_(make_env(cfg.run.env)),
        probe_env_(make_env(cfg.run.env)),
        real_(env_->spec().state_dim, env_->spec().action_dim,
              static_cast<std::size_t>(cfg.buffer.real_capacity)),
        model_buf_(env_->spec().state_dim, env_->spec().action_dim,
                   static_cast<std::size_t>(cfg.buffer.model_capacity)),
        model_(env_->spec().state_dim, env_->spec().action_dim, cfg.model.hidden,
               cfg.model.ensemble_size, rng_),
        agent_(env_->spec(), sac_config(cfg), rng_) {
    cfg_.validate();
    mixture_.alpha = cfg.weighting.alpha;
    mixture_.xi_floor = cfg.weighting.xi_floor;
    mixture_.shift_formula = shift_formula_from_string(cfg.weighting.shift_formula);
    // Warm-up data is collected by uniform random actions, which have no
    // network policy to snapshot. A constant box-centered Gaussian with
    // halfwidth-sized std stands in for it as mixture entry 0.
    const EnvSpec& spec = env_->spec();
    std::vector<double> mean(spec.action_dim), var(spec.action_dim);
    for (int d = 0; d < spec.action_dim; ++d) {
      mean[d] = 0.5 * (spec.action_high[d] + spec.action_low[d]);
      double hw = 0.5 * (spec.action_high[d] - spec.action_low[d]);
      var[d] = hw * hw;
    }
    PolicySnapshot warm;
    warm.id = 0;
    warm.created_at_env_step = 0;
    warm.policy = GaussianPolicy::make_constant(std::move(mean), std::move(var));
    mixture_.append(std::move(warm));
  }

  static SacConfig sac_config(const RunConfig& cfg) {
    SacConfig sc;
    sc.hidden_sizes = cfg.sac.hidden;
    sc.learning_rate = cfg.sac.learning_rate;
    sc.gamma = cfg.sac.gamma;
    sc.tau = cfg.sac.tau;
    sc.initial_temperature = cfg.sac.initial_temperature;
    return sc;
  }

  long long env_step() const { return env_step_; }
  int epoch() const { return epoch_; }
  const ReplayBuffer& real_buffer() const { return real_; }
  const ReplayBuffer& model_buffer() const { return model_buf_; }
  const PolicyMixture& mixture() const { return mixture_; }
  const SacAgent& agent() const { return agent_; }
  const EnsembleDynamicsModel& model() const { return model_; }
  const std::map<int, double>& sampling_weights() const { return sampling_weights_; }

  // Uniform-random-action prologue; transitions are tagged policy id 0 to
  // match the stand-in mixture entry.
  void warmup(const TrainCallbacks& cb = {}) {
    current_policy_id_ = 0;
    long long until = std::min(cfg_.run.warmup_steps, cfg_.run.total_env_steps);
    while (env_step_ < until) collect_step(/*random_action=*/true, cb);
  }

  EpochStats run_epoch(const TrainCallbacks& cb = {}) {
    require(env_step_ >= cfg_.run.warmup_steps,
            "run_epoch: warmup() has not finished");
    require(env_step_ < cfg_.run.total_env_steps, "run_epoch: run is complete");
    auto t0 = std::chrono::steady_clock::now();
    EpochStats st;
    st.epoch = ++epoch_;

    // 1. Real interaction with the frozen current policy. The id is
    //    assigned before the snapshot exists; append() below makes it real.
    current_policy_id_ = mixture_.size();
    for (int i = 0; i < cfg_.run.steps_per_epoch &&
                    env_step_ < cfg_.run.total_env_steps; ++i)
      collect_step(/*random_action=*/false, cb);

    // 2. Snapshot the data-collecting policy.
    mixture_.append(agent_.snapshot_policy(current_policy_id_, env_step_));

    // 3. Mixture weight adjustment per configured mode.
    sampling_weights_ = compute_sampling_weights();
    if (cb.on_weights) cb.on_weights(env_step_, weight_records());

    // 4. Dynamics ensemble training on mixture-weighted batches.
    ModelTrainConfig mc;
    mc.batch_size = cfg_.model.batch_size;
    mc.max_grad_steps = cfg_.model.max_grad_steps;
    mc.learning_rate = cfg_.model.learning_rate;
    mc.holdout_ratio = cfg_.model.holdout_ratio;
    ModelTrainReport rep = model_.train(real_, sampling_weights_, mc, rng_);
    for (double h : rep.holdout_losses) st.holdout_loss += h;
    st.holdout_loss /= static_cast<double>(rep.holdout_losses.size());
    for (int g : rep.grad_steps) st.grad_steps += g;

    // 5. Branched model rollouts from mixture-weighted start states.
    st.horizon = rollout_horizon(epoch_, cfg_.rollout.schedule);
    auto policy = [this](std::span<const double> s, Rng& r) {
      return agent_.act(s, /*deterministic=*/false, r);
    };
    std::function<bool(std::span<const double>)> is_term =
        [this](std::span<const double> s) { return env_->is_terminal(s); };
    for (int done = 0; done < cfg_.rollout.per_epoch;) {
      int chunk = std::min(cfg_.rollout.batch, cfg_.rollout.per_epoch - done);
      std::vector<std::vector<double>> starts =
          real_.sample_initial_states(sampling_weights_, chunk, rng_);
      RolloutBatch batch = rollout(model_, policy, starts, st.horizon,
                                   current_policy_id_, is_term, rng_);
      for (std::vector<Transition>& traj : batch.trajectories)
        for (Transition& t : traj) {
          model_buf_.push(std::move(t));
          ++st.model_transitions;
        }
      done += chunk;
    }

    // 6. Batched actor-critic updates on mixed model/real batches.
    st.sac_updates = cfg_.run.steps_per_epoch * cfg_.sac.updates_per_env_step;
    for (int u = 0; u < st.sac_updates; ++u)
      last_sac_ = agent_.update(sample_sac_batch(), rng_);

    st.env_step = env_step_;
    st.temperature = agent_.temperature();
    st.real_size = real_.size();
    st.model_size = model_buf_.size();
    st.current_error = probe_current_error();
    st.overall_error = probe_overall_error();
    st.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cb.on_epoch) cb.on_epoch(st);
    return st;
  }

  void run(const TrainCallbacks& cb = {}) {
    warmup(cb);
    while (env_step_ < cfg_.run.total_env_steps) run_epoch(cb);
  }

  void save_checkpoint(const std::string& prefix) const {
    model_.save(prefix + "_model");
    agent_.save(prefix + "_agent");
    real_.save(prefix + "_real_buffer.bin");
  }

  const SacLossReport& last_sac_report() const { return last_sac_; }

  // Model-vs-reality state divergence over a short shared-noise rollout,
  // for the end-of-run divergence profile.
  std::vector<double> compounding_profile(int horizon, int n_trajectories) {
    Rng probe_rng(derive_seed(0xC0FFEEULL, epoch_));
    auto noisy = [this](std::span<const double> s, std::span<const double> eps) {
      return agent_.act_with_noise(s, eps);
    };
    return compounding_error(model_, *probe_env_, noisy, horizon, n_trajectories,
                             probe_rng);
  }

 private:
  // splitmix64 finalizer over (seed, salt, tag): probe rngs must never
  // perturb the main stream and must not collide across uses.
  std::uint64_t derive_seed(std::uint64_t salt, std::uint64_t tag) const {
    std::uint64_t z = static_cast<std::uint64_t>(seed_) + 0x9e3779b97f4a7c15ULL * (salt + 1) +
                      0xbf58476d1ce4e5b9ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  void collect_step(bool random_action, const TrainCallbacks& cb) {
    if (obs_.empty()) obs_ = env_->reset(rng_);
    const EnvSpec& spec = env_->spec();
    std::vector<double> a(spec.action_dim);
    if (random_action) {
      for (int d = 0; d < spec.action_dim; ++d)
        a[d] = rng_.uniform(spec.action_low[d], spec.action_high[d]);
    } else {
      a = agent_.act(obs_, /*deterministic=*/false, rng_);
    }
    StepResult r = env_->step(a);
    Transition t;
    t.state = obs_;
    t.action = std::move(a);
    t.reward = r.reward;
    t.next_state = r.observation;
    // Bootstrap cutoff only on physical termination; a time-limit reset is
    // not a zero-value state.
    t.done = r.terminal;
    t.policy_id = current_policy_id_;
    real_.push(std::move(t));
    ++env_step_;
    obs_ = r.done ? env_->reset(rng_) : std::move(r.observation);
    if (env_step_ % cfg_.run.eval_every == 0 && cb.on_eval) {
      Rng eval_rng(derive_seed(0xEAA1ULL, static_cast<std::uint64_t>(env_step_)));
      cb.on_eval(env_step_,
                 evaluate_policy(agent_, *eval_env_, cfg_.run.eval_episodes, eval_rng));
    }
  }

  std::map<int, double> compute_sampling_weights() {
    const std::string& mode = cfg_.weighting.mode;
    std::map<int, double> w;
    if (mode == "uniform") {
      w = real_.uniform_weights();
    } else if (mode == "pdml") {
      int n_states = static_cast<int>(
          std::min<std::size_t>(cfg_.weighting.eval_states, real_.size()));
      std::vector<std::vector<double>> eval_states =
          real_.sample_initial_states(real_.uniform_weights(), n_states, rng_);
      adjust_mixture(mixture_, eval_states);
      for (int i = 0; i < mixture_.size(); ++i)
        w[mixture_.snapshots[i].id] = mixture_.weights[i];
    } else if (mode == "exp_decay") {
      std::vector<double> v = exponential_decay_weights(
          mixture_.size(), cfg_.weighting.decay_rate, cfg_.weighting.alpha);
      for (int i = 0; i < mixture_.size(); ++i) w[mixture_.snapshots[i].id] = v[i];
    } else if (mode == "td_priority") {
      w = td_priority_weights(real_, agent_, rng_);
    } else {
      throw std::invalid_argument("unknown weighting mode '" + mode + "'");
    }
    // Mirror into the mixture for introspection in the non-adaptive modes.
    if (mode != "pdml") {
      for (int i = 0; i < mixture_.size(); ++i) {
        auto it = w.find(mixture_.snapshots[i].id);
        mixture_.weights[i] = it == w.end() ? 0.0 : it->second;
      }
    }
    return w;
  }

  std::vector<WeightRecord> weight_records() const {
    std::vector<WeightRecord> out;
    for (int i = 0; i < mixture_.size(); ++i) {
      WeightRecord rec;
      rec.policy_id = mixture_.snapshots[i].id;
      auto it = sampling_weights_.find(rec.policy_id);
      rec.weight = it == sampling_weights_.end() ? 0.0 : it->second;
      rec.shift = mixture_.shift_cache[i];
      out.push_back(rec);
    }
    return out;
  }

  std::vector<Transition> sample_sac_batch() {
    int batch = cfg_.sac.batch_size;
    if (model_buf_.size() == 0)
      return real_.sample_weighted(real_.uniform_weights(), batch, rng_);
    int n_real = static_cast<int>(
        std::llround(cfg_.sac.real_sample_fraction * batch));
    n_real = clamp(n_real, 0, batch);
    std::vector<Transition> out;
    if (n_real > 0) out = real_.sample_weighted(real_.uniform_weights(), n_real, rng_);
    if (batch - n_real > 0) {
      std::vector<Transition> mb = model_buf_.sample_weighted(
          model_buf_.uniform_weights(), batch - n_real, rng_);
      out.insert(out.end(), std::make_move_iterator(mb.begin()),
                 std::make_move_iterator(mb.end()));
    }
    return out;
  }

  double probe_current_error() {
    Rng probe_rng(derive_seed(0xCE11ULL, static_cast<std::uint64_t>(epoch_)));
    auto policy = [this](std::span<const double> s, Rng& r) {
      return agent_.act(s, /*deterministic=*/false, r);
    };
    // 1000 fresh on-policy samples, matching the documented default of
    // current_error; anything smaller leaves probe noise on the order of
    // the error differences this metric exists to resolve.
    return current_error(model_, *probe_env_, policy, 1000, probe_rng);
  }

  double probe_overall_error() {
    Rng probe_rng(derive_seed(0x0A11ULL, static_cast<std::uint64_t>(epoch_)));
    int n = static_cast<int>(std::min<std::size_t>(1000, real_.size()));
    std::vector<Transition> sample =
        real_.sample_weighted(real_.uniform_weights(), n, probe_rng);
    return overall_error(model_, sample);
  }

  RunConfig cfg_;
  long long seed_;
  Rng rng_;
  std::unique_ptr<Env> env_, eval_env_, probe_env_;
  ReplayBuffer real_, model_buf_;
  EnsembleDynamicsModel model_;
  SacAgent agent_;
  PolicyMixture mixture_;
  std::map<int, double> sampling_weights_;
  SacLossReport last_sac_;
  std::vector<double> obs_;
  long long env_step_ = 0;
  int epoch_ = 0;
  int current_policy_id_ = 0;
};

}  // namespace pdml
