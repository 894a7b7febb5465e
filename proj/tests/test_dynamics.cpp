#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>

#include "oracles.hpp"
#include "pdml/dynamics_model.hpp"

using namespace pdml;

namespace {

// Fill a buffer with transitions from s' = A s + B a, reward = c . s.
void fill_linear(ReplayBuffer& buf, int n, int policy_id, Rng& rng,
                 double flip = 1.0) {
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.state = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    t.action = {rng.uniform(-1.0, 1.0)};
    t.next_state = {flip * (0.9 * t.state[0] + 0.2 * t.action[0]),
                    flip * (0.8 * t.state[1] - 0.1 * t.action[0])};
    t.reward = flip * (t.state[0] + 0.5 * t.state[1]);
    t.policy_id = policy_id;
    buf.push(t);
  }
}

std::vector<Transition> linear_dataset(int n, Rng& rng, double flip = 1.0) {
  ReplayBuffer tmp(2, 1, static_cast<std::size_t>(n));
  fill_linear(tmp, n, 0, rng, flip);
  std::vector<Transition> out;
  tmp.visit_all([&](const Transition& t) { out.push_back(t); });
  return out;
}

// Zero every weight and pin each member's output biases: mean head =
// `mean`, raw log-variance head = `rawlv`.
void pin_constant_output(EnsembleDynamicsModel& model,
                         const std::vector<double>& mean, double rawlv) {
  int td = model.target_dim();
  for (int b = 0; b < model.ensemble_size(); ++b) {
    Mlp& net = model.member(b);
    std::fill(net.params.begin(), net.params.end(), 0.0);
    // biases of the last layer live at the tail of the parameter vector
    std::size_t tail = net.param_count() - 2 * td;
    for (int d = 0; d < td; ++d) {
      net.params[tail + d] = mean[d];
      net.params[tail + td + d] = rawlv;
    }
  }
}

}  // namespace

TEST_CASE("Normalizer round-trips and matches hand statistics") {
  Normalizer norm;
  std::vector<std::vector<double>> rows{{1.0, 10.0}, {3.0, 10.0}, {5.0, 10.0}};
  norm.fit(rows);
  REQUIRE_THAT(norm.mean[0], Catch::Matchers::WithinAbs(3.0, 1e-14));
  REQUIRE_THAT(norm.std[0],
               Catch::Matchers::WithinAbs(std::sqrt(8.0 / 3.0), 1e-12));
  REQUIRE(norm.std[1] == 1e-8);  // constant column hits the floor

  std::vector<double> x{4.2, 10.0}, z(2), back(2);
  norm.normalize(x, z);
  norm.denormalize(z, back);
  REQUIRE_THAT(back[0], Catch::Matchers::WithinAbs(x[0], 1e-12));
  REQUIRE_THAT(back[1], Catch::Matchers::WithinAbs(x[1], 1e-12));
}

TEST_CASE("Model loss worked examples") {
  Rng rng(1);
  EnsembleDynamicsModel model(2, 1, {4}, 1, rng);

  // raw logvar ln 3 puts the smoothly clamped log-variance at 0, i.e.
  // unit variances
  double rawlv_unit = std::log(3.0);

  // perfect mean prediction, unit variances: loss is the log-det term only,
  // which vanishes for the identity covariance
  pin_constant_output(model, {0.25, -0.5, 2.0}, rawlv_unit);
  Transition t;
  t.state = {0.3, -0.7};
  t.action = {0.1};
  t.next_state = {0.3 + 0.25, -0.7 - 0.5};
  t.reward = 2.0;
  REQUIRE_THAT(model.model_loss(0, {t}), Catch::Matchers::WithinAbs(0.0, 1e-12));

  // prediction off by 2 in one target dimension at unit variance adds 4
  Transition off = t;
  off.next_state[0] -= 2.0;
  REQUIRE_THAT(model.model_loss(0, {off}), Catch::Matchers::WithinAbs(4.0, 1e-12));

  // the loss is a sum: batch order cannot matter
  Rng rng2(2);
  auto batch = linear_dataset(16, rng2);
  double a = model.model_loss(0, batch);
  std::reverse(batch.begin(), batch.end());
  REQUIRE_THAT(model.model_loss(0, batch), Catch::Matchers::WithinAbs(a, 1e-9));

  REQUIRE_THROWS_AS(model.model_loss(0, {}), std::invalid_argument);
}

TEST_CASE("Model loss gradient matches finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    EnsembleDynamicsModel model(2, 1, {5}, 1, rng);
    auto batch = linear_dataset(3, rng);
    std::vector<double> grad;
    model.model_loss(0, batch, &grad);
    auto loss = [&]() { return model.model_loss(0, batch); };
    REQUIRE(oracles::max_grad_rel_err(loss, model.member(0).params, grad) < 1e-4);
  }
}

TEST_CASE("One small exact gradient step strictly decreases the loss") {
  Rng rng(13);
  EnsembleDynamicsModel model(2, 1, {8}, 1, rng);
  auto batch = linear_dataset(32, rng);
  std::vector<double> grad;
  double before = model.model_loss(0, batch, &grad);
  for (std::size_t i = 0; i < grad.size(); ++i)
    model.member(0).params[i] -= 1e-6 * grad[i];
  REQUIRE(model.model_loss(0, batch) < before);
}

TEST_CASE("Training fits linear dynamics") {
  Rng rng(21);
  ReplayBuffer buf(2, 1, 4000);
  fill_linear(buf, 2000, 0, rng);
  EnsembleDynamicsModel model(2, 1, {32, 32}, 3, rng);

  Rng eval_rng(22);
  auto eval = linear_dataset(500, eval_rng);
  double before = overall_error(model, eval, ErrorMetric::kMeanSquaredL2);

  ModelTrainConfig cfg;
  cfg.batch_size = 128;
  cfg.max_grad_steps = 400;
  cfg.learning_rate = 1e-3;
  auto report = model.train(buf, buf.uniform_weights(), cfg, rng);
  REQUIRE(report.holdout_losses.size() == 3);
  REQUIRE(report.grad_steps.size() == 3);

  double after = overall_error(model, eval, ErrorMetric::kMeanSquaredL2);
  REQUIRE(after * 10.0 <= before);
}

TEST_CASE("Zero gradient steps leave the model untouched") {
  Rng rng(31);
  ReplayBuffer buf(2, 1, 100);
  fill_linear(buf, 50, 0, rng);
  EnsembleDynamicsModel model(2, 1, {8}, 2, rng);
  std::vector<double> before = model.member(0).params;
  ModelTrainConfig cfg;
  cfg.max_grad_steps = 0;
  model.train(buf, buf.uniform_weights(), cfg, rng);
  REQUIRE(model.member(0).params == before);
}

TEST_CASE("Weight concentration trains only the selected segment") {
  Rng rng(41);
  ReplayBuffer buf(2, 1, 4000);
  fill_linear(buf, 1500, 0, rng, 1.0);
  fill_linear(buf, 1500, 1, rng, -1.0);  // sign-flipped dynamics

  EnsembleDynamicsModel model(2, 1, {32, 32}, 2, rng);
  ModelTrainConfig cfg;
  cfg.batch_size = 128;
  cfg.max_grad_steps = 400;
  cfg.learning_rate = 1e-3;
  model.train(buf, {{0, 1.0}, {1, 0.0}}, cfg, rng);

  Rng eval_rng(42);
  auto eval_a = linear_dataset(400, eval_rng, 1.0);
  auto eval_b = linear_dataset(400, eval_rng, -1.0);
  double err_a = overall_error(model, eval_a);
  double err_b = overall_error(model, eval_b);
  REQUIRE(err_a * 5.0 < err_b);
}

TEST_CASE("Prediction with a floored variance is mean-dominated") {
  Rng rng(51);
  EnsembleDynamicsModel model(2, 1, {4}, 1, rng);
  pin_constant_output(model, {0.5, -0.25, 1.5}, -40.0);  // variance at the floor
  std::vector<double> s{1.0, 2.0}, a{0.0};
  auto [next, reward] = model.predict(s, a, rng);
  REQUIRE_THAT(next[0], Catch::Matchers::WithinAbs(1.5, 1e-2));
  REQUIRE_THAT(next[1], Catch::Matchers::WithinAbs(1.75, 1e-2));
  REQUIRE_THAT(reward, Catch::Matchers::WithinAbs(1.5, 1e-2));

  auto [mnext, mreward] = model.predict_mean(s, a);
  REQUIRE_THAT(mnext[0], Catch::Matchers::WithinAbs(1.5, 1e-14));
  REQUIRE_THAT(mreward, Catch::Matchers::WithinAbs(1.5, 1e-14));
}

TEST_CASE("Prediction statistics match the member mixture") {
  Rng rng(61);
  EnsembleDynamicsModel model(1, 1, {4}, 2, rng);
  // two members with distinct constant means, moderate variance
  int td = model.target_dim();
  double rawlv_unit = std::log(3.0);
  for (int b = 0; b < 2; ++b) {
    Mlp& net = model.member(b);
    std::fill(net.params.begin(), net.params.end(), 0.0);
    std::size_t tail = net.param_count() - 2 * td;
    net.params[tail + 0] = b == 0 ? 1.0 : 3.0;       // delta mean
    net.params[tail + td + 0] = rawlv_unit;          // delta var 1
    net.params[tail + 1] = 0.0;                      // reward mean
    net.params[tail + td + 1] = rawlv_unit;
  }
  std::vector<double> s{0.0}, a{0.0};
  int n = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    auto [next, reward] = model.predict(s, a, rng);
    sum += next[0];
    sumsq += next[0] * next[0];
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  // mixture of N(1,1) and N(3,1) at equal weight: mean 2, var 1 + 1 = 2
  REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(2.0, 3.0 * std::sqrt(2.0 / n)));
  REQUIRE_THAT(var, Catch::Matchers::WithinAbs(2.0, 0.15));
}

TEST_CASE("Rollouts count transitions and honor termination") {
  Rng rng(71);
  EnsembleDynamicsModel model(2, 1, {4}, 2, rng);
  pin_constant_output(model, {0.1, 0.1, 0.0}, std::log(3.0));
  auto policy = [](std::span<const double>, Rng&) {
    return std::vector<double>{0.25};
  };
  std::vector<std::vector<double>> starts(20, std::vector<double>{0.0, 0.0});

  auto one = rollout(model, policy, starts, 1, 9, nullptr, rng);
  std::size_t total = 0;
  for (const auto& traj : one.trajectories) {
    REQUIRE(traj.size() == 1);
    total += traj.size();
    for (const Transition& t : traj) REQUIRE(t.policy_id == 9);
  }
  REQUIRE(total == 20);

  auto five = rollout(model, policy, starts, 5, 9, nullptr, rng);
  total = 0;
  for (const auto& traj : five.trajectories) total += traj.size();
  REQUIRE(total == 100);

  auto always_done = [](std::span<const double>) { return true; };
  auto cut = rollout(model, policy, starts, 5, 9, always_done, rng);
  for (const auto& traj : cut.trajectories) {
    REQUIRE(traj.size() == 1);
    REQUIRE(traj[0].done);
  }
}

TEST_CASE("Rollouts are reproducible under a fixed seed") {
  Rng init(81);
  EnsembleDynamicsModel model(2, 1, {8}, 3, init);
  auto policy = [](std::span<const double> s, Rng& r) {
    return std::vector<double>{0.1 * s[0] + 0.01 * r.normal()};
  };
  std::vector<std::vector<double>> starts(5, std::vector<double>{0.5, -0.5});
  Rng r1(99), r2(99);
  auto b1 = rollout(model, policy, starts, 4, 0, nullptr, r1);
  auto b2 = rollout(model, policy, starts, 4, 0, nullptr, r2);
  for (std::size_t i = 0; i < b1.trajectories.size(); ++i)
    for (std::size_t j = 0; j < b1.trajectories[i].size(); ++j) {
      REQUIRE(b1.trajectories[i][j].next_state ==
              b2.trajectories[i][j].next_state);
      REQUIRE(b1.trajectories[i][j].reward == b2.trajectories[i][j].reward);
    }
}

TEST_CASE("overall_error is zero for an exactly representable dataset") {
  Rng rng(91);
  EnsembleDynamicsModel model(2, 1, {4}, 3, rng);
  pin_constant_output(model, {0.5, -1.0, 0.0}, 0.0);
  std::vector<Transition> dataset;
  for (int i = 0; i < 50; ++i) {
    Transition t;
    t.state = {rng.normal(), rng.normal()};
    t.action = {rng.normal()};
    t.next_state = {t.state[0] + 0.5, t.state[1] - 1.0};
    dataset.push_back(t);
  }
  REQUIRE_THAT(overall_error(model, dataset), Catch::Matchers::WithinAbs(0.0, 1e-12));
  REQUIRE_THROWS_AS(overall_error(model, {}), std::invalid_argument);
}

TEST_CASE("current_error equals mean step size under an identity model") {
  // Zero-parameter members predict delta 0, so the model error is exactly
  // the mean distance the environment actually moved.
  Rng rng(101);
  EnsembleDynamicsModel model(3, 1, {4}, 2, rng);
  for (int b = 0; b < 2; ++b)
    std::fill(model.member(b).params.begin(), model.member(b).params.end(), 0.0);

  auto env = make_env("pendulum");
  auto policy = [](std::span<const double>, Rng&) {
    return std::vector<double>{1.0};
  };
  Rng run_rng(555);
  double err = current_error(model, *env, policy, 200, run_rng);

  // replay the identical collection by hand
  auto env2 = make_env("pendulum");
  Rng replay(555);
  std::vector<double> s = env2->reset(replay);
  double acc = 0.0;
  for (int i = 0; i < 200; ++i) {
    StepResult r = env2->step(std::vector<double>{1.0});
    double sq = 0.0;
    for (int d = 0; d < 3; ++d) {
      double diff = r.observation[d] - s[d];
      sq += diff * diff;
    }
    acc += std::sqrt(sq);
    s = r.done ? env2->reset(replay) : r.observation;
  }
  REQUIRE_THAT(err, Catch::Matchers::WithinAbs(acc / 200.0, 1e-12));
}

TEST_CASE("compounding_error tracks a frozen model against the real env") {
  Rng rng(111);
  EnsembleDynamicsModel model(3, 1, {4}, 1, rng);
  // identity model with variance at the floor: the model state stays at
  // the start while the pendulum swings
  for (int b = 0; b < 1; ++b) {
    Mlp& net = model.member(b);
    std::fill(net.params.begin(), net.params.end(), 0.0);
    std::size_t tail = net.param_count() - 2 * model.target_dim();
    for (int d = 0; d < model.target_dim(); ++d)
      net.params[tail + model.target_dim() + d] = -40.0;
  }
  auto env = make_env("pendulum");
  auto policy = [](std::span<const double>, std::span<const double>) {
    return std::vector<double>{2.0};
  };
  Rng mrng(777);
  auto errs = compounding_error(model, *env, policy, 5, 20, mrng);
  REQUIRE(errs.size() == 5);
  for (double e : errs) {
    REQUIRE(std::isfinite(e));
    REQUIRE(e >= 0.0);
  }

  // One-trajectory replay: the model state barely moves, so the per-step
  // gap is the distance the real pendulum has traveled from its start.
  auto env3 = make_env("pendulum");
  Rng single(778);
  auto errs1 = compounding_error(model, *env3, policy, 5, 1, single);

  auto env2 = make_env("pendulum");
  Rng replay(778);
  std::vector<double> start = env2->reset(replay);
  for (int h = 0; h < 5; ++h) {
    StepResult r = env2->step(std::vector<double>{2.0});
    double sq = 0.0;
    for (int d = 0; d < 3; ++d) {
      double diff = r.observation[d] - start[d];
      sq += diff * diff;
    }
    REQUIRE_THAT(errs1[h], Catch::Matchers::WithinAbs(std::sqrt(sq), 0.02));
  }
}

TEST_CASE("Ensemble checkpoints write one payload per member") {
  Rng rng(121);
  EnsembleDynamicsModel model(2, 1, {4}, 2, rng);
  model.save("ensemble_ckpt");
  Mlp m0 = load_mlp("ensemble_ckpt_member0.bin");
  Mlp m1 = load_mlp("ensemble_ckpt_member1.bin");
  REQUIRE(m0.params == model.member(0).params);
  REQUIRE(m1.params == model.member(1).params);
  Normalizer norm = Normalizer::load("ensemble_ckpt_normalizer.json");
  REQUIRE(norm.mean == model.normalizer().mean);
  std::remove("ensemble_ckpt_member0.bin");
  std::remove("ensemble_ckpt_member1.bin");
  std::remove("ensemble_ckpt_normalizer.json");
}
