#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "pdml/common.hpp"
#include "pdml/mlp.hpp"

using namespace pdml;

TEST_CASE("Rng is deterministic and well-ranged") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(a.next_u64() == b.next_u64());
  }
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    int k = r.uniform_int(13);
    REQUIRE(k >= 0);
    REQUIRE(k < 13);
  }
  REQUIRE_THROWS_AS(r.uniform_int(0), std::invalid_argument);
}

TEST_CASE("Rng normal has standard moments") {
  Rng r(123);
  int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    sum += z;
    sumsq += z * z;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  REQUIRE(std::fabs(mean) < 0.02);
  REQUIRE(std::fabs(var - 1.0) < 0.03);
}

TEST_CASE("Rng fork gives a reproducible child stream") {
  Rng a(9), b(9);
  Rng ca = a.fork(), cb = b.fork();
  REQUIRE(ca.next_u64() == cb.next_u64());
  REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("Mlp parameter count and layout") {
  Mlp net({3, 5, 2});
  REQUIRE(net.param_count() == (3 + 1) * 5 + (5 + 1) * 2);
  REQUIRE(net.input_dim() == 3);
  REQUIRE(net.output_dim() == 2);
  REQUIRE_THROWS_AS(Mlp({4}), std::invalid_argument);
  REQUIRE_THROWS_AS(Mlp({4, 0, 2}), std::invalid_argument);
}

TEST_CASE("Mlp zero weights give zero output") {
  Mlp net({4, 6, 3});
  std::vector<double> x{1.0, -2.0, 0.5, 3.0};
  std::vector<double> y = net.forward(x);
  for (double v : y) REQUIRE(v == 0.0);
}

TEST_CASE("Mlp single affine layer passes identity through") {
  Mlp net({2, 2});
  net.params = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};  // W = I, b = 0
  std::vector<double> y = net.forward(std::vector<double>{3.5, -1.25});
  REQUIRE(y[0] == 3.5);
  REQUIRE(y[1] == -1.25);
}

TEST_CASE("Mlp forward matches a hand-computed composition") {
  // 2-3-1 net: hidden pre-activations (-0.9, 4.3, -0.7), ReLU keeps only
  // the middle unit, output = -0.5 * 4.3 + 0.25 = -1.9.
  Mlp net({2, 3, 1});
  net.params = {1.0, -1.0, 0.5, 2.0,  -1.0, 0.0,   // W1 rows
                0.1, -0.2, 0.3,                    // b1
                2.0, -0.5, 1.0,                    // W2
                0.25};                             // b2
  std::vector<double> y = net.forward(std::vector<double>{1.0, 2.0});
  REQUIRE_THAT(y[0], Catch::Matchers::WithinAbs(-1.9, 1e-12));
}

TEST_CASE("Mlp init respects fan-in scale and zero biases") {
  Rng rng(5);
  Mlp net({100, 50, 10});
  net.init(rng);
  // biases sit at the tail of each layer block
  std::vector<double> y = net.forward(std::vector<double>(100, 0.0));
  for (double v : y) REQUIRE(v == 0.0);  // zero input, zero biases
  double maxabs = 0.0;
  for (double p : net.params) maxabs = std::max(maxabs, std::fabs(p));
  REQUIRE(maxabs <= 2.0 / std::sqrt(50.0));  // truncation at 2 sigma, fan-in >= 50
}

TEST_CASE("Mlp gradients match finite differences") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    int in = 2 + rng.uniform_int(3);
    int hidden = 3 + rng.uniform_int(4);
    int out = 1 + rng.uniform_int(3);
    int n = 1 + rng.uniform_int(4);
    Mlp net({in, hidden, out});
    net.init(rng);
    // nudge inputs off ReLU kinks deterministically
    std::vector<double> x(static_cast<std::size_t>(n) * in);
    for (double& v : x) v = rng.normal();
    std::vector<double> target(static_cast<std::size_t>(n) * out);
    for (double& v : target) v = rng.normal();

    auto loss_value = [&]() {
      Mlp::Workspace ws;
      net.forward_batch(x.data(), n, ws);
      double acc = 0.0;
      for (std::size_t i = 0; i < target.size(); ++i) {
        double d = ws.output[i] - target[i];
        acc += 0.5 * d * d;
      }
      return acc;
    };

    Mlp::Workspace ws;
    net.forward_batch(x.data(), n, ws);
    std::vector<double> dy(target.size());
    for (std::size_t i = 0; i < target.size(); ++i)
      dy[i] = ws.output[i] - target[i];
    std::vector<double> grad(net.param_count(), 0.0);
    std::vector<double> dx(x.size());
    net.backward_batch(x.data(), n, dy.data(), ws, grad, dx.data());

    REQUIRE(oracles::max_grad_rel_err(loss_value, net.params, grad) < 1e-4);

    // input gradient against finite differences as well
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double fd = oracles::central_diff(loss_value, x, i);
      if (std::fabs(fd) < 1e-7 && std::fabs(dx[i]) < 1e-7) continue;
      worst = std::max(worst, oracles::rel_err(fd, dx[i]));
    }
    REQUIRE(worst < 1e-4);
  }
}

TEST_CASE("Adam first step matches the hand formula") {
  Mlp net({1, 1});
  net.params = {0.5, -0.25};
  AdamState opt(2, 1e-3);
  std::vector<double> g{0.2, -4.0};
  std::vector<double> before = net.params;
  opt.step(net.params, g);
  REQUIRE(opt.t == 1);
  for (int i = 0; i < 2; ++i) {
    double mhat = g[i];          // bias-corrected first moment after one step
    double vhat = g[i] * g[i];   // bias-corrected second moment
    double expect = before[i] - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
    REQUIRE_THAT(net.params[i], Catch::Matchers::WithinAbs(expect, 1e-15));
  }
}

TEST_CASE("Adam with zero gradient leaves parameters alone") {
  AdamState opt(3, 1e-2);
  std::vector<double> p{1.0, 2.0, 3.0}, g{0.0, 0.0, 0.0};
  std::vector<double> before = p;
  opt.step(p, g);
  REQUIRE(opt.t == 1);
  REQUIRE(p == before);
}

TEST_CASE("Adam drifts monotonically under a constant gradient") {
  AdamState opt(1, 1e-3);
  std::vector<double> p{0.0}, g{1.5};
  double prev = p[0];
  for (int i = 0; i < 50; ++i) {
    opt.step(p, g);
    REQUIRE(p[0] < prev);
    prev = p[0];
  }
}

TEST_CASE("Mlp checkpoint round-trips exactly") {
  Rng rng(77);
  Mlp net({4, 8, 3});
  net.init(rng);
  std::string path = "mlp_roundtrip.bin";
  save_mlp(net, path);
  Mlp back = load_mlp(path);
  REQUIRE(back.layer_sizes() == net.layer_sizes());
  REQUIRE(back.params == net.params);
  std::remove(path.c_str());
}

TEST_CASE("Mlp checkpoint loader rejects a truncated payload") {
  Rng rng(78);
  Mlp net({4, 8, 3});
  net.init(rng);
  std::string path = "mlp_truncated.bin";
  save_mlp(net, path);
  // chop the last 16 bytes off
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() - 16));
  }
  REQUIRE_THROWS_AS(load_mlp(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("Identical seeds give bitwise-identical training trajectories") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Mlp net({3, 8, 2});
    net.init(rng);
    AdamState opt(net.param_count(), 1e-3);
    std::vector<double> grad(net.param_count());
    for (int step = 0; step < 25; ++step) {
      std::vector<double> x(6);
      for (double& v : x) v = rng.normal();
      Mlp::Workspace ws;
      net.forward_batch(x.data(), 2, ws);
      std::vector<double> dy(4);
      for (int i = 0; i < 4; ++i) dy[i] = ws.output[i];
      std::fill(grad.begin(), grad.end(), 0.0);
      net.backward_batch(x.data(), 2, dy.data(), ws, grad);
      opt.step(net.params, grad);
    }
    return net.params;
  };
  REQUIRE(run(99) == run(99));
}
