#pragma once

#include <algorithm>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "nodelearn/context.hpp"
#include "nodelearn/model.hpp"
#include "nodelearn/network.hpp"
#include "nodelearn/resources.hpp"
#include "nodelearn/types.hpp"

namespace nodelearn {

struct ReplayEntry {
  Sample sample;
  bool synthetic = false;  // received prototype rather than an own observation
};

// Bounded FIFO of replay samples. When full, the oldest synthetic entry is
// evicted first; only when none remain does the oldest real entry go.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::deque<ReplayEntry>& entries() const noexcept { return entries_; }
  std::size_t synthetic_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.synthetic;
    return n;
  }

  // Returns the evicted entry, if any.
  std::optional<ReplayEntry> push(Sample s, bool synthetic) {
    if (capacity_ == 0) return ReplayEntry{std::move(s), synthetic};
    std::optional<ReplayEntry> evicted;
    if (entries_.size() >= capacity_) {
      auto it = std::find_if(entries_.begin(), entries_.end(),
                             [](const ReplayEntry& e) { return e.synthetic; });
      if (it == entries_.end()) it = entries_.begin();
      evicted = std::move(*it);
      entries_.erase(it);
    }
    entries_.push_back({std::move(s), synthetic});
    return evicted;
  }

  std::uint64_t bytes() const {
    std::uint64_t b = 0;
    for (const auto& e : entries_) b += sample_bytes(e.sample);
    return b;
  }

  void restore(std::size_t capacity, std::deque<ReplayEntry> entries) {
    capacity_ = capacity;
    entries_ = std::move(entries);
  }

 private:
  std::size_t capacity_ = 0;
  std::deque<ReplayEntry> entries_;
};

enum class AdversaryKind { none, constant_garbage };

struct NodeState {
  NodeId id = 0;
  ModelParams params;
  ContextVector context;
  Battery battery;
  ReplayBuffer replay;
  CapacityProfile capacity;
  std::string radio = "wifi";
  std::vector<Sample> validation;  // held-out slice for merge utility
  std::uint64_t updates = 0;
  std::uint64_t skipped_updates = 0;
  std::uint64_t samples_seen = 0;
  std::uint64_t round_samples = 0;  // samples used since the last aggregation
  bool alive = true;
  bool asleep = false;
  AdversaryKind adversary = AdversaryKind::none;
  double adversary_scale = 0.0;

  std::uint64_t resident_bytes() const {
    return 8 * params.values.size() + replay.bytes();
  }
};

enum class SkipReason { none, zero_gate, insufficient_energy, empty_batch };

inline const char* to_string(SkipReason r) {
  switch (r) {
    case SkipReason::none: return "none";
    case SkipReason::zero_gate: return "zero-gate";
    case SkipReason::insufficient_energy: return "insufficient-energy";
    case SkipReason::empty_batch: return "empty-batch";
  }
  return "?";
}

struct StepOutcome {
  bool stepped = false;
  SkipReason reason = SkipReason::none;
  double omega = 0.0;
  double energy = 0.0;  // joules debited
};

struct StepPolicy {
  double step_energy = 1e-3;  // joules per local step
  bool context_gate = true;   // false: omega = 1 whenever the node has energy
};

// Context-gated SGD: theta <- theta - eta * omega(c) * grad. Skips (and
// reports why) when omega is zero or the battery cannot pay for the step.
inline StepOutcome local_step(NodeState& s, Batch batch, const TrainingConfig& cfg,
                              const StepPolicy& policy) {
  StepOutcome out;
  if (batch.empty()) {
    out.reason = SkipReason::empty_batch;
    ++s.skipped_updates;
    return out;
  }
  out.omega = policy.context_gate ? gate(s.context)
                                  : (s.context.energy_fraction > 0.0 ? 1.0 : 0.0);
  if (out.omega <= 0.0) {
    out.reason = SkipReason::zero_gate;
    ++s.skipped_updates;
    return out;
  }
  if (!s.battery.can_afford(policy.step_energy)) {
    out.reason = SkipReason::insufficient_energy;
    ++s.skipped_updates;
    return out;
  }
  const Gradient g = grad(s.params, batch, cfg.l2_penalty);
  apply_gradient(s.params, g, cfg.learning_rate * out.omega);
  ++s.params.version;
  s.battery.debit(policy.step_energy);
  out.energy = policy.step_energy;
  out.stepped = true;
  ++s.updates;
  s.samples_seen += batch.size();
  s.round_samples += batch.size();
  return out;
}

}  // namespace nodelearn
