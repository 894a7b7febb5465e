#pragma once

// Minimal dense-network core used by the dynamics ensemble and the agent.
// Parameters live in one flat vector (per layer: weights row-major, then
// biases) so optimizers, checkpoints, and finite-difference checks can
// treat a network as a plain array of doubles. Hidden layers are ReLU,
// the output layer is linear; anything fancier (squashing, variance
// heads) is composed on top by the callers.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "pdml/common.hpp"

namespace pdml {

class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<int> layer_sizes)
      : sizes_(std::move(layer_sizes)) {
    require(sizes_.size() >= 2, "Mlp: need at least input and output sizes");
    for (int s : sizes_) require(s > 0, "Mlp: layer sizes must be positive");
    w_off_.resize(n_layers());
    b_off_.resize(n_layers());
    std::size_t off = 0;
    for (int l = 0; l < n_layers(); ++l) {
      w_off_[l] = off;
      off += static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l];
      b_off_[l] = off;
      off += sizes_[l + 1];
    }
    params.assign(off, 0.0);
  }

  int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  std::size_t param_count() const { return params.size(); }

  // Truncated-normal weights scaled by 1/sqrt(fan_in), zero biases.
  void init(Rng& rng) {
    for (int l = 0; l < n_layers(); ++l) {
      int fan_in = sizes_[l];
      double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      double* w = params.data() + w_off_[l];
      std::size_t n = static_cast<std::size_t>(sizes_[l + 1]) * fan_in;
      for (std::size_t i = 0; i < n; ++i) {
        double z;
        do {
          z = rng.normal();
        } while (std::fabs(z) > 2.0);
        w[i] = scale * z;
      }
      std::memset(params.data() + b_off_[l], 0,
                  sizeof(double) * static_cast<std::size_t>(sizes_[l + 1]));
    }
  }

  // Per-layer activations kept around for the backward pass. One workspace
  // can be reused across calls; buffers grow as needed and never shrink.
  struct Workspace {
    std::vector<std::vector<double>> hidden;  // post-ReLU, one per hidden layer
    std::vector<double> output;
    std::vector<double> delta_a, delta_b;  // scratch for backprop
    int batch = 0;
  };

  void forward_batch(const double* x, int n, Workspace& ws) const {
    ws.batch = n;
    ws.hidden.resize(n_layers() - 1);
    const double* cur = x;
    int cur_dim = sizes_[0];
    for (int l = 0; l < n_layers(); ++l) {
      int out_dim = sizes_[l + 1];
      bool last = (l == n_layers() - 1);
      std::vector<double>& dest = last ? ws.output : ws.hidden[l];
      dest.resize(static_cast<std::size_t>(n) * out_dim);
      const double* w = params.data() + w_off_[l];
      const double* b = params.data() + b_off_[l];
      for (int i = 0; i < n; ++i) {
        const double* xi = cur + static_cast<std::size_t>(i) * cur_dim;
        double* yi = dest.data() + static_cast<std::size_t>(i) * out_dim;
        for (int o = 0; o < out_dim; ++o) {
          const double* wo = w + static_cast<std::size_t>(o) * cur_dim;
          double acc = b[o];
          for (int j = 0; j < cur_dim; ++j) acc += wo[j] * xi[j];
          yi[o] = last ? acc : (acc > 0.0 ? acc : 0.0);
        }
      }
      cur = dest.data();
      cur_dim = out_dim;
    }
  }

  std::vector<double> forward(std::span<const double> x) const {
    require(static_cast<int>(x.size()) == input_dim(), "Mlp::forward: bad input size");
    Workspace ws;
    forward_batch(x.data(), 1, ws);
    return ws.output;
  }

  // Backward pass for the batch most recently run through `ws`. `dy` is
  // dLoss/dOutput (n x output_dim). Parameter gradients are accumulated
  // into `grad` (callers zero it when starting a fresh loss); if `dx` is
  // non-null, dLoss/dInput (n x input_dim) is written there.
  void backward_batch(const double* x, int n, const double* dy, Workspace& ws,
                      std::vector<double>& grad, double* dx = nullptr) const {
    require(ws.batch == n, "Mlp::backward_batch: workspace batch mismatch");
    require(grad.size() == params.size(), "Mlp::backward_batch: bad grad size");
    std::vector<double>& cur = ws.delta_a;
    std::vector<double>& next = ws.delta_b;
    cur.assign(dy, dy + static_cast<std::size_t>(n) * output_dim());
    for (int l = n_layers() - 1; l >= 0; --l) {
      int in_dim = sizes_[l];
      int out_dim = sizes_[l + 1];
      const double* in_act =
          (l == 0) ? x : ws.hidden[l - 1].data();
      double* gw = grad.data() + w_off_[l];
      double* gb = grad.data() + b_off_[l];
      for (int i = 0; i < n; ++i) {
        const double* di = cur.data() + static_cast<std::size_t>(i) * out_dim;
        const double* ai = in_act + static_cast<std::size_t>(i) * in_dim;
        for (int o = 0; o < out_dim; ++o) {
          double d = di[o];
          if (d == 0.0) continue;
          double* gwo = gw + static_cast<std::size_t>(o) * in_dim;
          for (int j = 0; j < in_dim; ++j) gwo[j] += d * ai[j];
          gb[o] += d;
        }
      }
      bool need_input_grad = (l > 0) || (dx != nullptr);
      if (!need_input_grad) break;
      next.assign(static_cast<std::size_t>(n) * in_dim, 0.0);
      const double* w = params.data() + w_off_[l];
      for (int i = 0; i < n; ++i) {
        const double* di = cur.data() + static_cast<std::size_t>(i) * out_dim;
        double* pi = next.data() + static_cast<std::size_t>(i) * in_dim;
        for (int o = 0; o < out_dim; ++o) {
          double d = di[o];
          if (d == 0.0) continue;
          const double* wo = w + static_cast<std::size_t>(o) * in_dim;
          for (int j = 0; j < in_dim; ++j) pi[j] += d * wo[j];
        }
        if (l > 0) {
          // ReLU derivative: the stored activation is already rectified,
          // so a zero activation means the unit was off.
          const double* ai = in_act + static_cast<std::size_t>(i) * in_dim;
          for (int j = 0; j < in_dim; ++j) {
            if (ai[j] <= 0.0) pi[j] = 0.0;
          }
        }
      }
      if (l == 0 && dx != nullptr) {
        std::memcpy(dx, next.data(),
                    sizeof(double) * static_cast<std::size_t>(n) * in_dim);
      }
      std::swap(cur, next);
    }
  }

  std::vector<double> params;

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> w_off_, b_off_;
};

// Adam with the standard bias correction. One state per parameter vector.
struct AdamState {
  explicit AdamState(std::size_t n, double lr_ = 3e-4)
      : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<double> m, v;

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    require(params.size() == m.size() && grad.size() == m.size(),
            "AdamState::step: size mismatch");
    ++t;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      double g = grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

// ---- checkpointing ----------------------------------------------------
//
// Layout: u32 header length, JSON header {"version":1,"layer_sizes":[...]},
// then the parameter block as raw little-endian float64. Loading validates
// the version and that the payload length matches the declared shape.

inline void save_mlp(const Mlp& net, const std::string& path) {
  nlohmann::json header;
  header["version"] = 1;
  header["layer_sizes"] = net.layer_sizes();
  std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_mlp: cannot open " + path);
  std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(reinterpret_cast<const char*>(net.params.data()),
            static_cast<std::streamsize>(net.params.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_mlp: write failed for " + path);
}

inline Mlp load_mlp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_mlp: cannot open " + path);
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1u << 20))
    throw std::runtime_error("load_mlp: corrupt header length in " + path);
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (!in) throw std::runtime_error("load_mlp: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(htext, nullptr, false);
  if (header.is_discarded() || !header.contains("version") ||
      !header.contains("layer_sizes"))
    throw std::runtime_error("load_mlp: malformed header in " + path);
  if (header["version"].get<int>() != 1)
    throw std::runtime_error("load_mlp: unsupported version in " + path);
  Mlp net(header["layer_sizes"].get<std::vector<int>>());
  in.read(reinterpret_cast<char*>(net.params.data()),
          static_cast<std::streamsize>(net.params.size() * sizeof(double)));
  if (in.gcount() !=
      static_cast<std::streamsize>(net.params.size() * sizeof(double)))
    throw std::runtime_error("load_mlp: payload does not match declared shape in " + path);
  return net;
}

}  // namespace pdml
