#pragma once

// Per-dimension standardization of model inputs. Statistics are refit
// from the full training buffer before each model-training call rather
// than streamed, which costs one cheap pass and keeps runs deterministic
// regardless of sampling order.

#include <fstream>
#include <json.hpp>

#include "pdml/common.hpp"

namespace pdml {

struct Normalizer {
  std::vector<double> mean, std;

  explicit Normalizer(int dim = 0)
      : mean(dim, 0.0), std(dim, 1.0) {}

  int dim() const { return static_cast<int>(mean.size()); }

  template <typename Rows>
  void fit(const Rows& rows) {
    require(!rows.empty(), "Normalizer::fit: no data");
    int d = static_cast<int>(rows.front().size());
    mean.assign(d, 0.0);
    std.assign(d, 0.0);
    for (const auto& row : rows)
      for (int j = 0; j < d; ++j) mean[j] += row[j];
    double n = static_cast<double>(rows.size());
    for (int j = 0; j < d; ++j) mean[j] /= n;
    for (const auto& row : rows)
      for (int j = 0; j < d; ++j) {
        double c = row[j] - mean[j];
        std[j] += c * c;
      }
    for (int j = 0; j < d; ++j)
      std[j] = std::max(std::sqrt(std[j] / n), 1e-8);
  }

  void normalize(std::span<const double> x, std::span<double> out) const {
    for (int j = 0; j < dim(); ++j) out[j] = (x[j] - mean[j]) / std[j];
  }

  void denormalize(std::span<const double> x, std::span<double> out) const {
    for (int j = 0; j < dim(); ++j) out[j] = x[j] * std[j] + mean[j];
  }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["mean"] = mean;
    j["std"] = std;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("Normalizer::save: cannot open " + path);
    out << j.dump(2) << "\n";
  }

  static Normalizer load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("Normalizer::load: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("mean") || !j.contains("std"))
      throw std::runtime_error("Normalizer::load: malformed file " + path);
    Normalizer n;
    n.mean = j["mean"].get<std::vector<double>>();
    n.std = j["std"].get<std::vector<double>>();
    require(n.mean.size() == n.std.size(), "Normalizer::load: size mismatch");
    return n;
  }
};

}  // namespace pdml
