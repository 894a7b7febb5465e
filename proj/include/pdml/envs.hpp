#pragma once

// Native continuous-control environments with exactly known dynamics.
//
// Each environment stores its observation vector as the whole internal
// state, and step() is literally a call to the exported pure transition
// function on that vector. That function doubles as the ground-truth
// dynamics oracle for model-error metrics, so agreement between the two
// is by construction, not by test.
//
// Physics constants are fixed here and documented in docs/environments.md.

#include <memory>

#include "pdml/common.hpp"

namespace pdml {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<double> action_low, action_high;
  int max_episode_steps = 0;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool terminal = false;  // physical termination predicate
  bool done = false;      // terminal or episode step limit
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;

  virtual std::vector<double> reset(Rng& rng) = 0;

  StepResult step(std::span<const double> action) {
    require(!obs_.empty(), spec().name + ": step() before reset()");
    check_finite(action, spec().name + " action");
    std::vector<double> clamped(action.begin(), action.end());
    for (int d = 0; d < spec().action_dim; ++d)
      clamped[d] = clamp(clamped[d], spec().action_low[d], spec().action_high[d]);
    StepResult r = transition(obs_, clamped);
    obs_ = r.observation;
    ++steps_;
    r.done = r.terminal || steps_ >= spec().max_episode_steps;
    return r;
  }

  // Pure dynamics: (observation, action) -> next observation, reward,
  // physical termination. No episode bookkeeping, no randomness.
  virtual StepResult transition(std::span<const double> obs,
                                std::span<const double> action) const = 0;

  virtual bool is_terminal(std::span<const double> obs) const = 0;

  const std::vector<double>& observation() const { return obs_; }
  int episode_steps() const { return steps_; }

 protected:
  std::vector<double> obs_;
  int steps_ = 0;
};

// Classic torque-limited pendulum swing-up. Observation (cos t, sin t, td),
// cost on the pre-step state, semi-implicit Euler, angular velocity
// clamped to +-8, never terminates.
class PendulumEnv final : public Env {
 public:
  PendulumEnv() {
    spec_ = {"pendulum", 3, 1, {-2.0}, {2.0}, 200};
  }
  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(Rng& rng) override {
    double th = rng.uniform(-M_PI, M_PI);
    double thdot = rng.uniform(-1.0, 1.0);
    obs_ = {std::cos(th), std::sin(th), thdot};
    steps_ = 0;
    return obs_;
  }

  StepResult transition(std::span<const double> obs,
                        std::span<const double> action) const override {
    constexpr double kGravity = 10.0, kMass = 1.0, kLength = 1.0, kDt = 0.05;
    double th = std::atan2(obs[1], obs[0]);
    double thdot = obs[2];
    double u = clamp(action[0], -2.0, 2.0);
    double cost = th * th + 0.1 * thdot * thdot + 0.001 * u * u;
    double newthdot =
        thdot + (3.0 * kGravity / (2.0 * kLength) * std::sin(th) +
                 3.0 / (kMass * kLength * kLength) * u) * kDt;
    newthdot = clamp(newthdot, -8.0, 8.0);
    double newth = th + newthdot * kDt;
    StepResult r;
    r.observation = {std::cos(newth), std::sin(newth), newthdot};
    r.reward = -cost;
    r.terminal = false;
    return r;
  }

  bool is_terminal(std::span<const double>) const override { return false; }

 private:
  EnvSpec spec_;
};

// Damped double integrator on the unit square chasing a fixed goal.
// Observation (px, py, vx, vy); hitting a wall zeroes that velocity
// component; terminates inside a small goal radius.
class PointMassEnv final : public Env {
 public:
  PointMassEnv() {
    spec_ = {"pointmass", 4, 2, {-1.0, -1.0}, {1.0, 1.0}, 150};
  }
  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(Rng& rng) override {
    obs_ = {rng.uniform01(), rng.uniform01(), 0.0, 0.0};
    steps_ = 0;
    return obs_;
  }

  StepResult transition(std::span<const double> obs,
                        std::span<const double> action) const override {
    constexpr double kDt = 0.1, kDamping = 0.95, kVmax = 0.5;
    double ax = clamp(action[0], -1.0, 1.0);
    double ay = clamp(action[1], -1.0, 1.0);
    double vx = clamp(kDamping * obs[2] + ax * kDt, -kVmax, kVmax);
    double vy = clamp(kDamping * obs[3] + ay * kDt, -kVmax, kVmax);
    double px = obs[0] + vx * kDt;
    double py = obs[1] + vy * kDt;
    if (px < 0.0 || px > 1.0) { px = clamp(px, 0.0, 1.0); vx = 0.0; }
    if (py < 0.0 || py > 1.0) { py = clamp(py, 0.0, 1.0); vy = 0.0; }
    StepResult r;
    r.observation = {px, py, vx, vy};
    double dist = std::hypot(px - kGoalX, py - kGoalY);
    r.reward = -dist - 0.001 * (ax * ax + ay * ay);
    r.terminal = dist < kGoalRadius;
    return r;
  }

  bool is_terminal(std::span<const double> obs) const override {
    return std::hypot(obs[0] - kGoalX, obs[1] - kGoalY) < kGoalRadius;
  }

 private:
  static constexpr double kGoalX = 0.75, kGoalY = 0.75, kGoalRadius = 0.05;
  EnvSpec spec_;
};

// Continuous mountain car with the usual constants: weak engine, goal at
// the right hilltop, quadratic action cost plus a terminal bonus.
class MountainCarEnv final : public Env {
 public:
  MountainCarEnv() {
    spec_ = {"mountaincar", 2, 1, {-1.0}, {1.0}, 300};
  }
  const EnvSpec& spec() const override { return spec_; }

  std::vector<double> reset(Rng& rng) override {
    obs_ = {rng.uniform(-0.6, -0.4), 0.0};
    steps_ = 0;
    return obs_;
  }

  StepResult transition(std::span<const double> obs,
                        std::span<const double> action) const override {
    constexpr double kPower = 0.0015, kGoalPos = 0.45;
    double a = clamp(action[0], -1.0, 1.0);
    double vel = obs[1] + a * kPower - 0.0025 * std::cos(3.0 * obs[0]);
    vel = clamp(vel, -0.07, 0.07);
    double pos = obs[0] + vel;
    if (pos < -1.2) { pos = -1.2; vel = 0.0; }
    if (pos > 0.6) pos = 0.6;
    StepResult r;
    r.observation = {pos, vel};
    r.terminal = pos >= kGoalPos;
    r.reward = -0.1 * a * a + (r.terminal ? 100.0 : 0.0);
    return r;
  }

  bool is_terminal(std::span<const double> obs) const override {
    return obs[0] >= 0.45;
  }

 private:
  EnvSpec spec_;
};

inline std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "pendulum") return std::make_unique<PendulumEnv>();
  if (name == "pointmass") return std::make_unique<PointMassEnv>();
  if (name == "mountaincar") return std::make_unique<MountainCarEnv>();
  throw std::invalid_argument("make_env: unknown environment '" + name + "'");
}

}  // namespace pdml
