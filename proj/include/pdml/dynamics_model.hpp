#pragma once

// Probabilistic ensemble dynamics model.
//
// Each member maps a standardized (state, action) input to a diagonal
// Gaussian over (state delta, reward). Training minimizes Gaussian
// negative log likelihood on mixture-weighted batches; prediction picks
// a uniformly random member per call and samples its Gaussian. The three
// error metrics quantify how the model tracks the real environment for
// the current policy, across all history, and along whole rollouts.

#include <functional>

#include "pdml/envs.hpp"
#include "pdml/mlp.hpp"
#include "pdml/normalizer.hpp"
#include "pdml/replay_buffer.hpp"

namespace pdml {

struct ModelTrainConfig {
  int batch_size = 256;
  int max_grad_steps = 200;   // per member, per training call
  double learning_rate = 3e-4;
  double holdout_ratio = 0.1;
  int holdout_max = 1024;
  int holdout_every = 10;     // gradient steps between holdout evaluations
  int holdout_patience = 5;   // evaluations without improvement before stop
};

struct ModelTrainReport {
  std::vector<double> holdout_losses;  // per member, final mean NLL
  std::vector<int> grad_steps;         // per member, steps actually taken
};

class EnsembleDynamicsModel {
 public:
  EnsembleDynamicsModel() = default;

  EnsembleDynamicsModel(int state_dim, int action_dim,
                        const std::vector<int>& hidden, int ensemble_size,
                        Rng& rng)
      : state_dim_(state_dim),
        action_dim_(action_dim),
        normalizer_(state_dim + action_dim) {
    require(ensemble_size >= 1, "EnsembleDynamicsModel: ensemble size must be >= 1");
    std::vector<int> sizes;
    sizes.push_back(state_dim + action_dim);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(2 * (state_dim + 1));  // mean and raw log-variance of (delta, r)
    for (int b = 0; b < ensemble_size; ++b) {
      members_.emplace_back(sizes);
      members_.back().init(rng);
      adam_.emplace_back(members_.back().param_count());
    }
  }

  int ensemble_size() const { return static_cast<int>(members_.size()); }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  int target_dim() const { return state_dim_ + 1; }
  const Mlp& member(int b) const { return members_.at(b); }
  Mlp& member(int b) { return members_.at(b); }
  const Normalizer& normalizer() const { return normalizer_; }
  Normalizer& normalizer() { return normalizer_; }

  double logvar_from_raw(double raw) const {
    return lv_lo_ + (lv_hi_ - lv_lo_) * sigmoid(raw);
  }

  // Gaussian negative log likelihood of a batch under one member, summed
  // over samples: (mu - y)' Sigma^-1 (mu - y) + log det Sigma with target
  // y = (s' - s, r). If `grad` is non-null it receives d(loss)/d(params).
  double model_loss(int member_index, const std::vector<Transition>& batch,
                    std::vector<double>* grad = nullptr) const {
    require(!batch.empty(), "model_loss: empty batch");
    const Mlp& net = members_.at(member_index);
    int n = static_cast<int>(batch.size());
    int in_dim = state_dim_ + action_dim_;
    int td = target_dim();
    std::vector<double> inputs(static_cast<std::size_t>(n) * in_dim);
    std::vector<double> targets(static_cast<std::size_t>(n) * td);
    for (int i = 0; i < n; ++i) {
      const Transition& t = batch[i];
      std::vector<double> raw(in_dim);
      std::copy(t.state.begin(), t.state.end(), raw.begin());
      std::copy(t.action.begin(), t.action.end(), raw.begin() + state_dim_);
      normalizer_.normalize(raw, {inputs.data() + static_cast<std::size_t>(i) * in_dim,
                                  static_cast<std::size_t>(in_dim)});
      double* y = targets.data() + static_cast<std::size_t>(i) * td;
      for (int d = 0; d < state_dim_; ++d) y[d] = t.next_state[d] - t.state[d];
      y[state_dim_] = t.reward;
    }
    Mlp::Workspace ws;
    net.forward_batch(inputs.data(), n, ws);
    double loss = 0.0;
    std::vector<double> dy(static_cast<std::size_t>(n) * 2 * td, 0.0);
    for (int i = 0; i < n; ++i) {
      const double* out = ws.output.data() + static_cast<std::size_t>(i) * 2 * td;
      const double* y = targets.data() + static_cast<std::size_t>(i) * td;
      double* dyi = dy.data() + static_cast<std::size_t>(i) * 2 * td;
      for (int d = 0; d < td; ++d) {
        double mu = out[d];
        double raw = out[td + d];
        if (!std::isfinite(mu) || !std::isfinite(raw))
          throw std::runtime_error("model_loss: non-finite prediction at batch index " +
                                   std::to_string(i));
        double s = sigmoid(raw);
        double logvar = lv_lo_ + (lv_hi_ - lv_lo_) * s;
        double inv_var = std::exp(-logvar);
        double diff = mu - y[d];
        loss += diff * diff * inv_var + logvar;
        if (grad) {
          double dl_dmu = 2.0 * diff * inv_var;
          double dl_dlogvar = 1.0 - diff * diff * inv_var;
          dyi[d] = dl_dmu;
          dyi[td + d] = dl_dlogvar * (lv_hi_ - lv_lo_) * s * (1.0 - s);
        }
      }
    }
    if (grad) {
      grad->assign(net.param_count(), 0.0);
      net.backward_batch(inputs.data(), n, dy.data(), ws, *grad);
    }
    return loss;
  }

  // Each member draws its own weighted batches; early stopping on a
  // weighted holdout batch evaluated every few steps.
  ModelTrainReport train(const ReplayBuffer& buffer,
                         const std::map<int, double>& weights,
                         const ModelTrainConfig& cfg, Rng& rng) {
    require(buffer.size() > 0, "train: empty buffer");
    refresh_normalizer(buffer);
    int holdout_n = static_cast<int>(
        std::min<double>(cfg.holdout_max,
                         std::max(1.0, std::floor(cfg.holdout_ratio *
                                                  static_cast<double>(buffer.size())))));
    std::vector<Transition> holdout = buffer.sample_weighted(weights, holdout_n, rng);
    ModelTrainReport report;
    report.holdout_losses.resize(ensemble_size());
    report.grad_steps.resize(ensemble_size());
    std::vector<double> grad;
    for (int b = 0; b < ensemble_size(); ++b) {
      adam_[b].lr = cfg.learning_rate;
      double best = model_loss(b, holdout) / holdout_n;
      int since_improve = 0;
      int taken = 0;
      for (int step = 0; step < cfg.max_grad_steps; ++step) {
        std::vector<Transition> batch =
            buffer.sample_weighted(weights, cfg.batch_size, rng);
        model_loss(b, batch, &grad);
        // Train on the mean so the step size is batch-size invariant.
        for (double& g : grad) g /= static_cast<double>(batch.size());
        adam_[b].step(members_[b].params, grad);
        ++taken;
        if ((step + 1) % cfg.holdout_every == 0) {
          double h = model_loss(b, holdout) / holdout_n;
          if (h < best - 1e-3 * std::fabs(best)) {
            best = h;
            since_improve = 0;
          } else if (++since_improve >= cfg.holdout_patience) {
            break;
          }
        }
      }
      report.holdout_losses[b] = model_loss(b, holdout) / holdout_n;
      report.grad_steps[b] = taken;
    }
    return report;
  }

  // One stochastic prediction: uniform member, then a Gaussian sample.
  // Returns (next_state, reward).
  std::pair<std::vector<double>, double> predict(std::span<const double> state,
                                                 std::span<const double> action,
                                                 Rng& rng) const {
    int b = rng.uniform_int(ensemble_size());
    std::vector<double> out = member_forward(b, state, action);
    int td = target_dim();
    std::vector<double> next(state.begin(), state.end());
    double reward = 0.0;
    for (int d = 0; d < td; ++d) {
      double sigma = std::exp(0.5 * logvar_from_raw(out[td + d]));
      double v = out[d] + sigma * rng.normal();
      if (!std::isfinite(v))
        throw std::runtime_error("predict: non-finite sample at dim " + std::to_string(d));
      if (d < state_dim_)
        next[d] += v;
      else
        reward = v;
    }
    return {std::move(next), reward};
  }

  // Member-averaged mean prediction, the deterministic counterpart used
  // by the error metrics.
  std::pair<std::vector<double>, double> predict_mean(
      std::span<const double> state, std::span<const double> action) const {
    int td = target_dim();
    std::vector<double> acc(td, 0.0);
    for (int b = 0; b < ensemble_size(); ++b) {
      std::vector<double> out = member_forward(b, state, action);
      for (int d = 0; d < td; ++d) acc[d] += out[d];
    }
    std::vector<double> next(state.begin(), state.end());
    for (int d = 0; d < state_dim_; ++d)
      next[d] += acc[d] / ensemble_size();
    return {std::move(next), acc[state_dim_] / ensemble_size()};
  }

  void save(const std::string& prefix) const {
    for (int b = 0; b < ensemble_size(); ++b)
      save_mlp(members_[b], prefix + "_member" + std::to_string(b) + ".bin");
    normalizer_.save(prefix + "_normalizer.json");
  }

  // Exact input statistics over everything currently stored. A full pass
  // is cheap at these sizes and, unlike subsampling, order-independent.
  void refresh_normalizer(const ReplayBuffer& buffer) {
    std::vector<std::vector<double>> rows;
    rows.reserve(buffer.size());
    buffer.visit_all([&](const Transition& t) {
      std::vector<double> row(state_dim_ + action_dim_);
      std::copy(t.state.begin(), t.state.end(), row.begin());
      std::copy(t.action.begin(), t.action.end(), row.begin() + state_dim_);
      rows.push_back(std::move(row));
    });
    normalizer_.fit(rows);
  }

 private:
  std::vector<double> member_forward(int b, std::span<const double> state,
                                     std::span<const double> action) const {
    int in_dim = state_dim_ + action_dim_;
    std::vector<double> raw(in_dim), norm(in_dim);
    std::copy(state.begin(), state.end(), raw.begin());
    std::copy(action.begin(), action.end(), raw.begin() + state_dim_);
    normalizer_.normalize(raw, norm);
    return members_.at(b).forward(norm);
  }

  int state_dim_ = 0, action_dim_ = 0;
  double lv_lo_ = std::log(1e-6), lv_hi_ = std::log(1e2);
  std::vector<Mlp> members_;
  std::vector<AdamState> adam_;
  Normalizer normalizer_;
};

struct RolloutBatch {
  std::vector<std::vector<Transition>> trajectories;
  int horizon = 0;
};

// h-step model rollouts from the given starts, truncated where the
// termination predicate fires on a predicted state. `policy` is
// (state, rng) -> action; every transition is tagged with `policy_id`.
template <typename PolicyFn>
RolloutBatch rollout(const EnsembleDynamicsModel& model, PolicyFn&& policy,
                     const std::vector<std::vector<double>>& initial_states,
                     int horizon, int policy_id,
                     const std::function<bool(std::span<const double>)>& is_terminal,
                     Rng& rng) {
  require(horizon >= 1, "rollout: horizon must be >= 1");
  RolloutBatch batch;
  batch.horizon = horizon;
  batch.trajectories.reserve(initial_states.size());
  for (const std::vector<double>& s0 : initial_states) {
    std::vector<Transition> traj;
    std::vector<double> s = s0;
    for (int h = 0; h < horizon; ++h) {
      Transition t;
      t.state = s;
      t.action = policy(std::span<const double>(s), rng);
      auto [next, reward] = model.predict(t.state, t.action, rng);
      t.next_state = std::move(next);
      t.reward = reward;
      t.done = is_terminal && is_terminal(t.next_state);
      t.policy_id = policy_id;
      s = t.next_state;
      bool stop = t.done;
      traj.push_back(std::move(t));
      if (stop) break;
    }
    batch.trajectories.push_back(std::move(traj));
  }
  return batch;
}

enum class ErrorMetric { kMeanL2, kMeanSquaredL2 };

inline double next_state_error(const EnsembleDynamicsModel& model,
                               const Transition& t, ErrorMetric metric) {
  auto [pred, reward] = model.predict_mean(t.state, t.action);
  (void)reward;
  double sq = 0.0;
  for (std::size_t d = 0; d < pred.size(); ++d) {
    double diff = pred[d] - t.next_state[d];
    sq += diff * diff;
  }
  return metric == ErrorMetric::kMeanL2 ? std::sqrt(sq) : sq;
}

// Model error against fresh on-policy experience: run the current policy
// in the real environment for n transitions and compare the ensemble-mean
// next-state prediction with what actually happened.
template <typename PolicyFn>
double current_error(const EnsembleDynamicsModel& model, Env& env,
                     PolicyFn&& policy, int n, Rng& rng,
                     ErrorMetric metric = ErrorMetric::kMeanL2) {
  require(n >= 1, "current_error: n must be >= 1");
  double acc = 0.0;
  std::vector<double> s = env.reset(rng);
  for (int i = 0; i < n; ++i) {
    std::vector<double> a = policy(std::span<const double>(s), rng);
    StepResult r = env.step(a);
    Transition t;
    t.state = std::move(s);
    t.action = std::move(a);
    t.next_state = r.observation;
    acc += next_state_error(model, t, metric);
    s = r.done ? env.reset(rng) : std::move(r.observation);
  }
  return acc / n;
}

// Same error over a stored held-out dataset spanning policy history.
inline double overall_error(const EnsembleDynamicsModel& model,
                            const std::vector<Transition>& eval_dataset,
                            ErrorMetric metric = ErrorMetric::kMeanL2) {
  require(!eval_dataset.empty(), "overall_error: empty dataset");
  double acc = 0.0;
  for (const Transition& t : eval_dataset) acc += next_state_error(model, t, metric);
  return acc / static_cast<double>(eval_dataset.size());
}

// Divergence between a model rollout and a real rollout from the same
// starts, driven by the same policy fed identical per-step action noise.
// Entry h-1 is the mean L2 state gap at step h over the trajectories still
// alive there; trailing steps nothing reached are dropped.
//
// `policy` here is (state, noise) -> action with `noise` one standard
// normal draw per action dimension.
template <typename NoisyPolicyFn>
std::vector<double> compounding_error(const EnsembleDynamicsModel& model,
                                      Env& env, NoisyPolicyFn&& policy,
                                      int horizon, int n_trajectories, Rng& rng) {
  require(horizon >= 1 && n_trajectories >= 1, "compounding_error: bad arguments");
  int adim = env.spec().action_dim;
  std::vector<double> acc(horizon, 0.0);
  std::vector<int> count(horizon, 0);
  std::vector<double> eps(adim);
  for (int j = 0; j < n_trajectories; ++j) {
    std::vector<double> s_real = env.reset(rng);
    std::vector<double> s_model = s_real;
    for (int h = 0; h < horizon; ++h) {
      for (int d = 0; d < adim; ++d) eps[d] = rng.normal();
      std::vector<double> a_real = policy(std::span<const double>(s_real), eps);
      std::vector<double> a_model = policy(std::span<const double>(s_model), eps);
      StepResult r = env.step(a_real);
      auto [next_model, reward] = model.predict(s_model, a_model, rng);
      (void)reward;
      s_real = r.observation;
      s_model = std::move(next_model);
      double sq = 0.0;
      for (int d = 0; d < env.spec().state_dim; ++d) {
        double diff = s_model[d] - s_real[d];
        sq += diff * diff;
      }
      acc[h] += std::sqrt(sq);
      count[h] += 1;
      if (r.done || env.is_terminal(s_model)) break;
    }
  }
  std::vector<double> out;
  for (int h = 0; h < horizon; ++h) {
    if (count[h] == 0) break;
    out.push_back(acc[h] / count[h]);
  }
  return out;
}

}  // namespace pdml
