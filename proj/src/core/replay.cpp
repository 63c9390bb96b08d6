#include "obac/replay.hpp"

#include <cmath>

#include "obac/errors.hpp"
#include "obac/serialization.hpp"

namespace obac {

namespace {
constexpr char kMagic[8] = {'O', 'B', 'A', 'C', 'R', 'P', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

ReplayBuffer::ReplayBuffer(int state_dim, int action_dim, std::size_t capacity, std::uint64_t seed)
    : state_dim_(state_dim), action_dim_(action_dim), capacity_(capacity), rng_(seed) {
  if (state_dim <= 0 || action_dim <= 0) throw DimensionError("replay buffer dims must be positive");
  if (capacity == 0) throw ConfigError("replay buffer capacity must be >= 1");
}

std::size_t ReplayBuffer::physical(std::size_t logical) const {
  // Before the first wrap the oldest record sits at slot 0.
  const std::size_t oldest = size_ < capacity_ ? 0 : head_;
  return (oldest + logical) % capacity_;
}

void ReplayBuffer::push(const Transition& t) {
  if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_)
    throw DimensionError("transition dims do not match buffer (state " + std::to_string(state_dim_) + ", action " +
                         std::to_string(action_dim_) + ")");
  if (!t.state.allFinite() || !t.next_state.allFinite() || !t.action.allFinite() || !std::isfinite(t.reward))
    throw NumericError("transition contains non-finite entries");
  const std::size_t w = record_width();
  if (size_ < capacity_ && data_.size() < (head_ + 1) * w) data_.resize((head_ + 1) * w);
  double* rec = data_.data() + head_ * w;
  std::copy(t.state.data(), t.state.data() + state_dim_, rec);
  rec += state_dim_;
  std::copy(t.action.data(), t.action.data() + action_dim_, rec);
  rec += action_dim_;
  *rec++ = t.reward;
  std::copy(t.next_state.data(), t.next_state.data() + state_dim_, rec);
  rec += state_dim_;
  *rec = t.terminated ? 1.0 : 0.0;
  head_ = (head_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
  ++pushed_;
}

Transition ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw StateError("replay index out of range");
  const double* rec = data_.data() + physical(i) * record_width();
  Transition t;
  t.state = Eigen::Map<const Vector>(rec, state_dim_);
  rec += state_dim_;
  t.action = Eigen::Map<const Vector>(rec, action_dim_);
  rec += action_dim_;
  t.reward = *rec++;
  t.next_state = Eigen::Map<const Vector>(rec, state_dim_);
  rec += state_dim_;
  t.terminated = *rec != 0.0;
  return t;
}

Batch ReplayBuffer::gather(const std::vector<std::size_t>& idx) const {
  const int n = static_cast<int>(idx.size());
  Batch b;
  b.states.resize(state_dim_, n);
  b.actions.resize(action_dim_, n);
  b.rewards.resize(n);
  b.next_states.resize(state_dim_, n);
  b.terminated.resize(n);
  b.indices = idx;
  const std::size_t w = record_width();
  for (int j = 0; j < n; ++j) {
    if (idx[j] >= size_) throw StateError("replay index out of range");
    const double* rec = data_.data() + physical(idx[j]) * w;
    b.states.col(j) = Eigen::Map<const Vector>(rec, state_dim_);
    rec += state_dim_;
    b.actions.col(j) = Eigen::Map<const Vector>(rec, action_dim_);
    rec += action_dim_;
    b.rewards[j] = *rec++;
    b.next_states.col(j) = Eigen::Map<const Vector>(rec, state_dim_);
    rec += state_dim_;
    b.terminated[j] = *rec;
  }
  return b;
}

Batch ReplayBuffer::sample_batch_with(int batch_size, Rng& rng) const {
  if (size_ == 0) throw StateError("cannot sample from an empty replay buffer");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
  for (auto& i : idx) i = rng.index(size_);
  return gather(idx);
}

Batch ReplayBuffer::sample_batch(int batch_size) { return sample_batch_with(batch_size, rng_); }

Batch ReplayBuffer::sample_batch(int batch_size, std::uint64_t seed) const {
  Rng rng(seed);
  return sample_batch_with(batch_size, rng);
}

void ReplayBuffer::serialize(BinaryWriter& w) const {
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(state_dim_));
  w.u32(static_cast<std::uint32_t>(action_dim_));
  w.u64(capacity_);
  w.u64(size_);
  w.u64(pushed_);
  w.str(rng_.state());
  const std::size_t rw = record_width();
  for (std::size_t i = 0; i < size_; ++i) w.f64s(data_.data() + physical(i) * rw, rw);
}

ReplayBuffer ReplayBuffer::deserialize(BinaryReader& r) {
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::string_view(magic, 8) != std::string_view(kMagic, 8)) throw FormatError("not a replay buffer snapshot");
  const auto version = r.u32();
  if (version != kVersion) throw FormatError("unsupported replay buffer version " + std::to_string(version));
  const int sd = static_cast<int>(r.u32());
  const int ad = static_cast<int>(r.u32());
  const auto cap = r.u64();
  const auto n = r.u64();
  const auto pushed = r.u64();
  if (sd <= 0 || ad <= 0 || cap == 0 || n > cap || pushed < n) throw FormatError("inconsistent replay buffer header");
  ReplayBuffer buf(sd, ad, cap);
  buf.rng_.restore(r.str());
  const std::size_t rw = buf.record_width();
  if (n > r.remaining() / (rw * sizeof(double))) throw FormatError("replay buffer snapshot is truncated");
  buf.data_.resize(n * rw);
  r.f64s(buf.data_.data(), n * rw);
  // Records are stored oldest-first, so the reloaded ring starts unwrapped.
  buf.size_ = n;
  buf.head_ = n % cap;
  buf.pushed_ = pushed;
  return buf;
}

void ReplayBuffer::save(const std::string& path) const {
  BinaryWriter w;
  serialize(w);
  w.write_file(path);
}

ReplayBuffer ReplayBuffer::load(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  auto buf = deserialize(r);
  r.expect_end();
  return buf;
}

bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
  if (a.state_dim_ != b.state_dim_ || a.action_dim_ != b.action_dim_ || a.capacity_ != b.capacity_ ||
      a.size_ != b.size_ || a.pushed_ != b.pushed_)
    return false;
  const std::size_t rw = a.record_width();
  for (std::size_t i = 0; i < a.size_; ++i) {
    const double* pa = a.data_.data() + a.physical(i) * rw;
    const double* pb = b.data_.data() + b.physical(i) * rw;
    if (!std::equal(pa, pa + rw, pb)) return false;
  }
  return true;
}

}  // namespace obac
