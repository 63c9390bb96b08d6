#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "obac/numerics.hpp"
#include "obac/rng.hpp"

namespace obac {

struct Transition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool terminated = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Column-per-sample view of a sampled mini-batch.
struct Batch {
  Matrix states;       // state_dim x B
  Matrix actions;      // action_dim x B
  Vector rewards;      // B
  Matrix next_states;  // state_dim x B
  Vector terminated;   // B, 1.0 where the episode ended intrinsically
  std::vector<std::size_t> indices;  // logical positions (0 = oldest)

  int size() const { return static_cast<int>(rewards.size()); }
};

/// FIFO ring store of transitions with uniform sampling with replacement.
class ReplayBuffer {
 public:
  static constexpr std::size_t kDefaultCapacity = 1'000'000;

  ReplayBuffer(int state_dim, int action_dim, std::size_t capacity = kDefaultCapacity, std::uint64_t seed = 0);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  /// Total pushes since construction, including evicted entries.
  std::uint64_t total_pushed() const { return pushed_; }

  void push(const Transition& t);
  /// `i` is the logical index, 0 = oldest resident transition.
  Transition at(std::size_t i) const;

  /// Uses the buffer's own sampling stream.
  Batch sample_batch(int batch_size);
  /// Pure variant: the same seed always yields the same batch.
  Batch sample_batch(int batch_size, std::uint64_t seed) const;
  Batch sample_batch_with(int batch_size, Rng& rng) const;
  Batch gather(const std::vector<std::size_t>& logical_indices) const;

  Rng& sampling_rng() { return rng_; }

  /// Snapshot file: magic, version, dims, capacity, count, pushes, then
  /// records oldest-first as little-endian doubles.
  void save(const std::string& path) const;
  static ReplayBuffer load(const std::string& path);

  void serialize(BinaryWriter& w) const;
  static ReplayBuffer deserialize(BinaryReader& r);

  friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b);

 private:
  std::size_t physical(std::size_t logical) const;
  std::size_t record_width() const { return 2 * static_cast<std::size_t>(state_dim_) + action_dim_ + 2; }

  int state_dim_;
  int action_dim_;
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;  // next physical slot to write
  std::uint64_t pushed_ = 0;
  // Flat records: state, action, reward, next_state, terminated.
  std::vector<double> data_;
  Rng rng_;
};

}  // namespace obac
