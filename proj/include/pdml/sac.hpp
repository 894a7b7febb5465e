#pragma once

// Soft actor-critic on hand-rolled networks.
//
// The actor outputs a pre-squash diagonal Gaussian; actions reach the
// environment through a + = center + halfwidth * tanh(u) map, with the
// matching log-density correction. Losses are decomposed into
// compute_targets / critic_loss_grad / actor_loss_grad so each gradient
// path can be checked against finite differences in isolation; update()
// just chains them and applies Adam.

#include <array>
#include <optional>

#include "pdml/envs.hpp"
#include "pdml/policy.hpp"
#include "pdml/replay_buffer.hpp"

namespace pdml {

struct SacConfig {
  std::vector<int> hidden_sizes{256, 256};
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double tau = 5e-3;
  double initial_temperature = 1.0;
  bool target_entropy_auto = true;  // -action_dim when true
  double target_entropy = 0.0;
};

struct SacLossReport {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double temperature = 0.0;
  double mean_log_prob = 0.0;
};

class SacAgent {
 public:
  SacAgent(const EnvSpec& spec, const SacConfig& cfg, Rng& rng)
      : cfg_(cfg),
        state_dim_(spec.state_dim),
        action_dim_(spec.action_dim),
        log_alpha_(std::log(cfg.initial_temperature)),
        alpha_opt_(1, cfg.learning_rate) {
    actor_ = GaussianPolicy::make_network(cfg.hidden_sizes, state_dim_,
                                          action_dim_, rng);
    std::vector<int> qsizes;
    qsizes.push_back(state_dim_ + action_dim_);
    for (int h : cfg.hidden_sizes) qsizes.push_back(h);
    qsizes.push_back(1);
    for (int c = 0; c < 2; ++c) {
      critics_[c] = Mlp(qsizes);
      critics_[c].init(rng);
      targets_[c] = critics_[c];
      critic_opt_[c].emplace(critics_[c].param_count(), cfg.learning_rate);
    }
    actor_opt_.emplace(actor_.net.param_count(), cfg.learning_rate);
    center_.resize(action_dim_);
    halfwidth_.resize(action_dim_);
    for (int d = 0; d < action_dim_; ++d) {
      center_[d] = 0.5 * (spec.action_high[d] + spec.action_low[d]);
      halfwidth_[d] = 0.5 * (spec.action_high[d] - spec.action_low[d]);
      require(halfwidth_[d] > 0.0, "SacAgent: empty action box");
    }
    target_entropy_ = cfg.target_entropy_auto
                          ? -static_cast<double>(action_dim_)
                          : cfg.target_entropy;
  }

  const GaussianPolicy& actor() const { return actor_; }
  GaussianPolicy& actor() { return actor_; }
  double temperature() const { return std::exp(log_alpha_); }
  const Mlp& critic(int i) const { return critics_.at(i); }
  Mlp& critic(int i) { return critics_.at(i); }
  const Mlp& target(int i) const { return targets_.at(i); }

  std::vector<double> act(std::span<const double> state, bool deterministic,
                          Rng& rng) const {
    DiagonalGaussian g = actor_.distribution(state);
    std::vector<double> a(action_dim_);
    for (int d = 0; d < action_dim_; ++d) {
      double u = g.mean[d];
      if (!deterministic) u += std::sqrt(g.var[d]) * rng.normal();
      a[d] = center_[d] + halfwidth_[d] * std::tanh(u);
    }
    return a;
  }

  // Same sample with caller-supplied standard-normal noise, one entry per
  // action dimension. Lets two rollouts share their stochasticity.
  std::vector<double> act_with_noise(std::span<const double> state,
                                     std::span<const double> eps) const {
    DiagonalGaussian g = actor_.distribution(state);
    std::vector<double> a(action_dim_);
    for (int d = 0; d < action_dim_; ++d) {
      double u = g.mean[d] + std::sqrt(g.var[d]) * eps[d];
      a[d] = center_[d] + halfwidth_[d] * std::tanh(u);
    }
    return a;
  }

  PolicySnapshot snapshot_policy(int id, long long env_step) const {
    PolicySnapshot snap;
    snap.id = id;
    snap.created_at_env_step = env_step;
    snap.policy = actor_;
    return snap;
  }

  // Soft Bellman targets y = r + gamma (1 - done) (min_i Qt_i(s', a') -
  // alpha log pi(a'|s')) with a' reparameterized from the current actor.
  std::vector<double> compute_targets(const std::vector<Transition>& batch,
                                      Rng& rng) const {
    int n = static_cast<int>(batch.size());
    double alpha = temperature();
    std::vector<double> y(n);
    std::vector<double> eps(action_dim_);
    std::vector<double> qin(state_dim_ + action_dim_);
    for (int i = 0; i < n; ++i) {
      const Transition& t = batch[i];
      double target = 0.0;
      if (!t.done) {
        for (int d = 0; d < action_dim_; ++d) eps[d] = rng.normal();
        double logp = 0.0;
        std::copy(t.next_state.begin(), t.next_state.end(), qin.begin());
        sample_action(t.next_state, eps, {qin.data() + state_dim_,
                                          static_cast<std::size_t>(action_dim_)},
                      &logp);
        double q1 = targets_[0].forward(qin)[0];
        double q2 = targets_[1].forward(qin)[0];
        target = std::min(q1, q2) - alpha * logp;
      }
      y[i] = t.reward + cfg_.gamma * target;
    }
    return y;
  }

  // Mean squared Bellman error of one critic against fixed targets.
  double critic_loss_grad(int which, const std::vector<Transition>& batch,
                          const std::vector<double>& y,
                          std::vector<double>* grad) const {
    int n = static_cast<int>(batch.size());
    require(static_cast<int>(y.size()) == n, "critic_loss_grad: target size mismatch");
    int in_dim = state_dim_ + action_dim_;
    std::vector<double> inputs(static_cast<std::size_t>(n) * in_dim);
    for (int i = 0; i < n; ++i) {
      double* row = inputs.data() + static_cast<std::size_t>(i) * in_dim;
      std::copy(batch[i].state.begin(), batch[i].state.end(), row);
      std::copy(batch[i].action.begin(), batch[i].action.end(), row + state_dim_);
    }
    const Mlp& net = critics_.at(which);
    Mlp::Workspace ws;
    net.forward_batch(inputs.data(), n, ws);
    double loss = 0.0;
    std::vector<double> dy(n);
    for (int i = 0; i < n; ++i) {
      double diff = ws.output[i] - y[i];
      loss += diff * diff;
      dy[i] = 2.0 * diff / n;
    }
    loss /= n;
    if (grad) {
      grad->assign(net.param_count(), 0.0);
      net.backward_batch(inputs.data(), n, dy.data(), ws, *grad);
    }
    return loss;
  }

  // Reparameterized actor objective mean(alpha log pi(a|s) - min_i Q_i(s, a))
  // under frozen critics, with caller-supplied noise (n x action_dim) so
  // the loss is a deterministic function of the actor parameters.
  double actor_loss_grad(const std::vector<Transition>& batch,
                         const std::vector<double>& eps,
                         std::vector<double>* grad,
                         double* mean_log_prob = nullptr) const {
    int n = static_cast<int>(batch.size());
    require(static_cast<int>(eps.size()) == n * action_dim_,
            "actor_loss_grad: noise size mismatch");
    double alpha = temperature();
    int qin_dim = state_dim_ + action_dim_;
    std::vector<double> states(static_cast<std::size_t>(n) * state_dim_);
    for (int i = 0; i < n; ++i)
      std::copy(batch[i].state.begin(), batch[i].state.end(),
                states.data() + static_cast<std::size_t>(i) * state_dim_);
    Mlp::Workspace actor_ws;
    actor_.net.forward_batch(states.data(), n, actor_ws);

    // Per-sample squash pipeline, keeping everything needed for the chain
    // rule: u = mu + sigma eps, t = tanh(u), a = c + w t.
    std::vector<double> qin(static_cast<std::size_t>(n) * qin_dim);
    std::vector<double> tanh_u(static_cast<std::size_t>(n) * action_dim_);
    std::vector<double> sig(static_cast<std::size_t>(n) * action_dim_);
    std::vector<double> srawsig(static_cast<std::size_t>(n) * action_dim_);
    std::vector<double> logp(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const double* out = actor_ws.output.data() +
                          static_cast<std::size_t>(i) * 2 * action_dim_;
      double* row = qin.data() + static_cast<std::size_t>(i) * qin_dim;
      std::copy(batch[i].state.begin(), batch[i].state.end(), row);
      for (int d = 0; d < action_dim_; ++d) {
        std::size_t k = static_cast<std::size_t>(i) * action_dim_ + d;
        double raw = out[action_dim_ + d];
        double s = sigmoid(raw);
        double logvar = actor_.lv_lo + (actor_.lv_hi - actor_.lv_lo) * s;
        double sigma = std::exp(0.5 * logvar);
        double e = eps[k];
        double u = out[d] + sigma * e;
        double t = std::tanh(u);
        tanh_u[k] = t;
        sig[k] = sigma;
        srawsig[k] = s;
        row[state_dim_ + d] = center_[d] + halfwidth_[d] * t;
        double one_m_t2 = std::max(1.0 - t * t, 1e-30);
        logp[i] += -0.5 * e * e - 0.5 * std::log(2.0 * M_PI) - 0.5 * logvar -
                   std::log(halfwidth_[d] * one_m_t2);
      }
    }

    Mlp::Workspace q_ws[2];
    critics_[0].forward_batch(qin.data(), n, q_ws[0]);
    critics_[1].forward_batch(qin.data(), n, q_ws[1]);
    double loss = 0.0;
    double logp_sum = 0.0;
    std::vector<double> dq(static_cast<std::size_t>(n) * 2, 0.0);  // per critic
    for (int i = 0; i < n; ++i) {
      int which = q_ws[0].output[i] <= q_ws[1].output[i] ? 0 : 1;
      loss += alpha * logp[i] - q_ws[which].output[i];
      logp_sum += logp[i];
      dq[static_cast<std::size_t>(which) * n + i] = -1.0 / n;
    }
    loss /= n;
    if (mean_log_prob) *mean_log_prob = logp_sum / n;
    if (!grad) return loss;

    // dLoss/dAction via whichever critic held the row minimum.
    std::vector<double> da(static_cast<std::size_t>(n) * action_dim_, 0.0);
    std::vector<double> dqin(static_cast<std::size_t>(n) * qin_dim);
    std::vector<double> critic_grad_scratch(critics_[0].param_count());
    for (int c = 0; c < 2; ++c) {
      bool any = false;
      for (int i = 0; i < n; ++i)
        if (dq[static_cast<std::size_t>(c) * n + i] != 0.0) any = true;
      if (!any) continue;
      critic_grad_scratch.assign(critics_[c].param_count(), 0.0);
      critics_[c].backward_batch(qin.data(), n, dq.data() + static_cast<std::size_t>(c) * n,
                                 q_ws[c], critic_grad_scratch, dqin.data());
      for (int i = 0; i < n; ++i)
        for (int d = 0; d < action_dim_; ++d)
          da[static_cast<std::size_t>(i) * action_dim_ + d] +=
              dqin[static_cast<std::size_t>(i) * qin_dim + state_dim_ + d];
    }

    // Chain through the squash into actor-head gradients.
    std::vector<double> dout(static_cast<std::size_t>(n) * 2 * action_dim_);
    for (int i = 0; i < n; ++i) {
      double* drow = dout.data() + static_cast<std::size_t>(i) * 2 * action_dim_;
      for (int d = 0; d < action_dim_; ++d) {
        std::size_t k = static_cast<std::size_t>(i) * action_dim_ + d;
        double t = tanh_u[k];
        double one_m_t2 = 1.0 - t * t;
        double du = da[k] * halfwidth_[d] * one_m_t2 + (alpha / n) * 2.0 * t;
        double dlogvar = du * 0.5 * sig[k] * eps[k] - 0.5 * alpha / n;
        double s = srawsig[k];
        drow[d] = du;
        drow[action_dim_ + d] = dlogvar * (actor_.lv_hi - actor_.lv_lo) * s * (1.0 - s);
      }
    }
    grad->assign(actor_.net.param_count(), 0.0);
    actor_.net.backward_batch(states.data(), n, dout.data(), actor_ws, *grad);
    return loss;
  }

  SacLossReport update(const std::vector<Transition>& batch, Rng& rng) {
    require(!batch.empty(), "SacAgent::update: empty batch");
    SacLossReport report;
    int n = static_cast<int>(batch.size());

    std::vector<double> y = compute_targets(batch, rng);
    std::vector<double> grad;
    for (int c = 0; c < 2; ++c) {
      double loss = critic_loss_grad(c, batch, y, &grad);
      critic_opt_[c]->step(critics_[c].params, grad);
      report.critic_loss += 0.5 * loss;
    }

    std::vector<double> eps(static_cast<std::size_t>(n) * action_dim_);
    for (double& e : eps) e = rng.normal();
    report.actor_loss = actor_loss_grad(batch, eps, &grad, &report.mean_log_prob);
    actor_opt_->step(actor_.net.params, grad);

    // Dual ascent on the temperature toward the entropy target.
    double alpha = temperature();
    report.alpha_loss = -alpha * (report.mean_log_prob + target_entropy_);
    std::vector<double> la{log_alpha_};
    std::vector<double> lg{-alpha * (report.mean_log_prob + target_entropy_)};
    alpha_opt_.step(la, lg);
    log_alpha_ = la[0];
    report.temperature = temperature();

    soft_update_targets();
    return report;
  }

  void soft_update_targets() {
    for (int c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < critics_[c].params.size(); ++i)
        targets_[c].params[i] = (1.0 - cfg_.tau) * targets_[c].params[i] +
                                cfg_.tau * critics_[c].params[i];
  }

  void save(const std::string& prefix) const {
    save_mlp(actor_.net, prefix + "_actor.bin");
    for (int c = 0; c < 2; ++c) {
      save_mlp(critics_[c], prefix + "_critic" + std::to_string(c) + ".bin");
      save_mlp(targets_[c], prefix + "_target" + std::to_string(c) + ".bin");
    }
  }

  double target_entropy() const { return target_entropy_; }

 private:
  // Squashed sample + log-density at it, from supplied noise.
  void sample_action(std::span<const double> state, std::span<const double> eps,
                     std::span<double> action_out, double* logp) const {
    DiagonalGaussian g = actor_.distribution(state);
    double acc = 0.0;
    for (int d = 0; d < action_dim_; ++d) {
      double sigma = std::sqrt(g.var[d]);
      double u = g.mean[d] + sigma * eps[d];
      double t = std::tanh(u);
      action_out[d] = center_[d] + halfwidth_[d] * t;
      double one_m_t2 = std::max(1.0 - t * t, 1e-30);
      acc += -0.5 * eps[d] * eps[d] - 0.5 * std::log(2.0 * M_PI) -
             std::log(sigma) - std::log(halfwidth_[d] * one_m_t2);
    }
    if (logp) *logp = acc;
  }

  SacConfig cfg_;
  int state_dim_, action_dim_;
  GaussianPolicy actor_;
  std::array<Mlp, 2> critics_, targets_;
  std::optional<AdamState> actor_opt_;
  std::array<std::optional<AdamState>, 2> critic_opt_;
  double log_alpha_;
  AdamState alpha_opt_;
  double target_entropy_ = -1.0;
  std::vector<double> center_, halfwidth_;
};

}  // namespace pdml
