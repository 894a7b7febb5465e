#pragma once

// Replay storage segmented by the policy that generated each transition.
//
// Capacity behaves like one global ring buffer (oldest transition evicted
// first regardless of segment) while the per-policy segments make
// mixture-weighted sampling cheap: draw a policy id from the weight
// vector, then a transition uniformly inside that segment.

#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <json.hpp>

#include "pdml/common.hpp"

namespace pdml {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;
  int policy_id = 0;
};

class ReplayBuffer {
 public:
  ReplayBuffer(int state_dim, int action_dim, std::size_t capacity)
      : state_dim_(state_dim), action_dim_(action_dim), capacity_(capacity) {
    require(state_dim > 0 && action_dim > 0, "ReplayBuffer: bad dimensions");
    require(capacity > 0, "ReplayBuffer: capacity must be positive");
  }

  // Movable so factory functions can return by value; the mutex itself is
  // never moved, a fresh one guards the new location.
  ReplayBuffer(ReplayBuffer&& other) noexcept
      : state_dim_(other.state_dim_),
        action_dim_(other.action_dim_),
        capacity_(other.capacity_),
        total_(other.total_),
        next_seq_(other.next_seq_),
        segments_(std::move(other.segments_)),
        seqs_(std::move(other.seqs_)),
        order_(std::move(other.order_)) {}
  ReplayBuffer(const ReplayBuffer&) = delete;
  ReplayBuffer& operator=(const ReplayBuffer&) = delete;

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t capacity() const { return capacity_; }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return total_;
  }

  std::map<int, std::size_t> segment_sizes() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::map<int, std::size_t> out;
    for (const auto& [id, seg] : segments_) out[id] = seg.size();
    return out;
  }

  void push(Transition t) {
    if (static_cast<int>(t.state.size()) != state_dim_ ||
        static_cast<int>(t.next_state.size()) != state_dim_ ||
        static_cast<int>(t.action.size()) != action_dim_) {
      throw std::invalid_argument(
          "ReplayBuffer::push: dimension mismatch (state " +
          std::to_string(t.state.size()) + "/" + std::to_string(state_dim_) +
          ", action " + std::to_string(t.action.size()) + "/" +
          std::to_string(action_dim_) + ")");
    }
    std::lock_guard<std::mutex> lock(mu_);
    if (total_ == capacity_) evict_oldest();
    int id = t.policy_id;
    segments_[id].push_back(std::move(t));
    seqs_[id].push_back(next_seq_);
    order_.push_back(id);
    ++next_seq_;
    ++total_;
  }

  // Two-stage mixture sampling, with replacement. Weights are restricted
  // to policy ids still present (evicted segments lose their mass through
  // renormalization) and must leave positive total mass.
  std::vector<Transition> sample_weighted(const std::map<int, double>& weights,
                                          int batch_size, Rng& rng) const {
    require(batch_size >= 1, "sample_weighted: batch_size must be >= 1");
    std::lock_guard<std::mutex> lock(mu_);
    require(total_ > 0, "sample_weighted: buffer is empty");
    std::vector<const std::deque<Transition>*> segs;
    std::vector<double> cdf;
    double total_w = 0.0;
    for (const auto& [id, w] : weights) {
      require(w >= 0.0 && std::isfinite(w), "sample_weighted: bad weight");
      auto it = segments_.find(id);
      if (it == segments_.end() || w <= 0.0) continue;
      total_w += w;
      segs.push_back(&it->second);
      cdf.push_back(total_w);
    }
    if (segs.empty() || total_w <= 0.0)
      throw std::runtime_error("sample_weighted: no positive weight on stored segments");
    std::vector<Transition> out;
    out.reserve(batch_size);
    for (int b = 0; b < batch_size; ++b) {
      double u = rng.uniform01() * total_w;
      std::size_t k = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
      if (k >= segs.size()) k = segs.size() - 1;
      const std::deque<Transition>& seg = *segs[k];
      out.push_back(seg[rng.uniform_int(static_cast<int>(seg.size()))]);
    }
    return out;
  }

  std::vector<std::vector<double>> sample_initial_states(
      const std::map<int, double>& weights, int count, Rng& rng) const {
    std::vector<Transition> batch = sample_weighted(weights, count, rng);
    std::vector<std::vector<double>> out;
    out.reserve(batch.size());
    for (Transition& t : batch) out.push_back(std::move(t.state));
    return out;
  }

  // Walk every stored transition (segment id order, oldest first within a
  // segment). Used for exact statistics over the full buffer.
  void visit_all(const std::function<void(const Transition&)>& fn) const {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [id, seg] : segments_)
      for (const Transition& t : seg) fn(t);
  }

  // Weights proportional to segment sizes: transition-level sampling then
  // reduces to uniform over everything stored.
  std::map<int, double> uniform_weights() const {
    std::lock_guard<std::mutex> lock(mu_);
    require(total_ > 0, "uniform_weights: buffer is empty");
    std::map<int, double> out;
    for (const auto& [id, seg] : segments_)
      out[id] = static_cast<double>(seg.size()) / static_cast<double>(total_);
    return out;
  }

  // Checkpoint layout: u32 header length, JSON header {version, state_dim,
  // action_dim, capacity, counts_per_policy}, then per segment its policy
  // id (i32) and count (u64) followed by the records. Each record carries
  // its global insertion sequence number so FIFO eviction order survives a
  // round trip.
  void save(const std::string& path) const {
    std::lock_guard<std::mutex> lock(mu_);
    nlohmann::json header;
    header["version"] = 1;
    header["state_dim"] = state_dim_;
    header["action_dim"] = action_dim_;
    header["capacity"] = capacity_;
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [id, seg] : segments_) counts[std::to_string(id)] = seg.size();
    header["counts_per_policy"] = counts;
    std::string htext = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("ReplayBuffer::save: cannot open " + path);
    std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    auto put_f64 = [&](const std::vector<double>& xs) {
      out.write(reinterpret_cast<const char*>(xs.data()),
                static_cast<std::streamsize>(xs.size() * sizeof(double)));
    };
    for (const auto& [id, seg] : segments_) {
      std::int32_t sid = id;
      std::uint64_t n = seg.size();
      out.write(reinterpret_cast<const char*>(&sid), sizeof(sid));
      out.write(reinterpret_cast<const char*>(&n), sizeof(n));
      const std::deque<std::uint64_t>& sq = seqs_.at(id);
      for (std::size_t i = 0; i < seg.size(); ++i) {
        std::uint64_t seq = sq[i];
        out.write(reinterpret_cast<const char*>(&seq), sizeof(seq));
        put_f64(seg[i].state);
        put_f64(seg[i].action);
        out.write(reinterpret_cast<const char*>(&seg[i].reward), sizeof(double));
        put_f64(seg[i].next_state);
        std::uint8_t done = seg[i].done ? 1 : 0;
        out.write(reinterpret_cast<const char*>(&done), sizeof(done));
      }
    }
    if (!out) throw std::runtime_error("ReplayBuffer::save: write failed for " + path);
  }

  static ReplayBuffer load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ReplayBuffer::load: cannot open " + path);
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || hlen == 0 || hlen > (1u << 24))
      throw std::runtime_error("ReplayBuffer::load: corrupt header length");
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    nlohmann::json header = nlohmann::json::parse(htext, nullptr, false);
    if (header.is_discarded() || header.value("version", 0) != 1)
      throw std::runtime_error("ReplayBuffer::load: malformed header in " + path);
    ReplayBuffer buf(header["state_dim"].get<int>(),
                     header["action_dim"].get<int>(),
                     header["capacity"].get<std::size_t>());
    // (seq, id) pairs collected to rebuild global insertion order.
    std::vector<std::pair<std::uint64_t, int>> order;
    auto get_f64 = [&](std::vector<double>& xs, int n) {
      xs.resize(n);
      in.read(reinterpret_cast<char*>(xs.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    };
    for (std::size_t s = 0; s < header["counts_per_policy"].size(); ++s) {
      std::int32_t sid = 0;
      std::uint64_t n = 0;
      in.read(reinterpret_cast<char*>(&sid), sizeof(sid));
      in.read(reinterpret_cast<char*>(&n), sizeof(n));
      if (!in) throw std::runtime_error("ReplayBuffer::load: truncated segment header");
      for (std::uint64_t i = 0; i < n; ++i) {
        std::uint64_t seq = 0;
        in.read(reinterpret_cast<char*>(&seq), sizeof(seq));
        Transition t;
        t.policy_id = sid;
        get_f64(t.state, buf.state_dim_);
        get_f64(t.action, buf.action_dim_);
        in.read(reinterpret_cast<char*>(&t.reward), sizeof(double));
        get_f64(t.next_state, buf.state_dim_);
        std::uint8_t done = 0;
        in.read(reinterpret_cast<char*>(&done), sizeof(done));
        if (!in) throw std::runtime_error("ReplayBuffer::load: truncated record");
        t.done = done != 0;
        buf.segments_[sid].push_back(std::move(t));
        buf.seqs_[sid].push_back(seq);
        order.emplace_back(seq, sid);
        ++buf.total_;
        buf.next_seq_ = std::max(buf.next_seq_, seq + 1);
      }
    }
    std::sort(order.begin(), order.end());
    for (const auto& [seq, id] : order) buf.order_.push_back(id);
    // Within each segment, records were written oldest first; verify the
    // declared counts matched what the stream actually held.
    const nlohmann::json& counts = header["counts_per_policy"];
    for (const auto& [key, val] : counts.items()) {
      int id = std::stoi(key);
      std::size_t expect = val.get<std::size_t>();
      auto it = buf.segments_.find(id);
      if (it == buf.segments_.end() || it->second.size() != expect)
        throw std::runtime_error("ReplayBuffer::load: segment count mismatch for id " + key);
    }
    return buf;
  }

 private:
  void evict_oldest() {
    int id = order_.front();
    order_.pop_front();
    auto it = segments_.find(id);
    it->second.pop_front();
    seqs_[id].pop_front();
    if (it->second.empty()) {
      segments_.erase(it);
      seqs_.erase(id);
    }
    --total_;
  }

  int state_dim_, action_dim_;
  std::size_t capacity_;
  std::size_t total_ = 0;
  std::uint64_t next_seq_ = 0;
  std::map<int, std::deque<Transition>> segments_;
  std::map<int, std::deque<std::uint64_t>> seqs_;
  std::deque<int> order_;
  mutable std::mutex mu_;
};

}  // namespace pdml
