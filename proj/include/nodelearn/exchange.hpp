#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "nodelearn/coalition.hpp"
#include "nodelearn/errors.hpp"
#include "nodelearn/model.hpp"
#include "nodelearn/node.hpp"

namespace nodelearn {

enum class PacketKind { full_params, trunk_only, prototypes, probe_logits, confidence };

inline const char* to_string(PacketKind k) {
  switch (k) {
    case PacketKind::full_params: return "full-params";
    case PacketKind::trunk_only: return "trunk-only";
    case PacketKind::prototypes: return "prototypes";
    case PacketKind::probe_logits: return "probe-logits";
    case PacketKind::confidence: return "confidence";
  }
  return "?";
}

inline PacketKind parse_packet_kind(const std::string& s) {
  if (s == "full-params") return PacketKind::full_params;
  if (s == "trunk-only") return PacketKind::trunk_only;
  if (s == "prototypes") return PacketKind::prototypes;
  if (s == "probe-logits") return PacketKind::probe_logits;
  if (s == "confidence") return PacketKind::confidence;
  throw ConfigError("unknown packet kind '" + s + "'");
}

// Compact copy of the sender's context carried in every packet.
struct ContextSummary {
  double energy_fraction = 1.0;
  double connectivity = 0.5;
  double salience = 1.0;
  std::uint32_t degree = 0;  // sender's contact count this tick
};

constexpr std::uint64_t kPacketHeaderBytes = 32;
constexpr std::uint64_t kBytesPerReal = 8;

inline std::uint64_t packet_byte_size(std::size_t reals) {
  return kBytesPerReal * reals + kPacketHeaderBytes;
}

struct KnowledgePacket {
  PacketKind kind = PacketKind::full_params;
  std::vector<double> payload;
  NodeId source = 0;
  std::uint64_t source_version = 0;
  std::uint64_t byte_size = kPacketHeaderBytes;
  ContextSummary context;
  ModelShape shape;               // sender's model shape
  std::uint64_t probe_hash = 0;   // probe-logits / confidence only
};

// Shared labelled reference batch, identical on every node for a run.
struct ProbeSet {
  std::vector<Sample> samples;
  std::uint64_t hash = 0;
};

inline std::uint64_t hash_samples(std::span<const Sample> samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : samples) {
    const std::uint64_t y = s.y;
    mix(&y, sizeof y);
    for (double v : s.x) mix(&v, sizeof v);
  }
  return h;
}

inline ProbeSet make_probe_set(std::vector<Sample> samples) {
  ProbeSet p;
  p.hash = hash_samples(samples);
  p.samples = std::move(samples);
  return p;
}

inline std::vector<double> probe_logits(const ModelParams& p, const ProbeSet& probe) {
  std::vector<double> out;
  out.reserve(probe.samples.size() * p.shape.classes);
  for (const auto& s : probe.samples) {
    auto z = logits(p, s.x);
    out.insert(out.end(), z.begin(), z.end());
  }
  return out;
}

// Build the packet form of `kind` from the node's current state.
//   full-params:  every parameter
//   trunk-only:   trunk matrix (MLP mode only)
//   prototypes:   per class [count, mean feature vector] over real replay entries
//   probe-logits: logits on the shared probe set, row-major (probe x classes)
//   confidence:   per class mean max-probability over probe rows of that class
inline KnowledgePacket encode_packet(const NodeState& s, PacketKind kind, const ProbeSet& probe,
                                     std::uint32_t degree = 0) {
  KnowledgePacket pk;
  pk.kind = kind;
  pk.source = s.id;
  pk.source_version = s.params.version;
  pk.shape = s.params.shape;
  pk.context = {s.context.energy_fraction, s.context.connectivity, s.context.salience, degree};
  const ModelShape& sh = s.params.shape;
  switch (kind) {
    case PacketKind::full_params:
      pk.payload = s.params.values;
      break;
    case PacketKind::trunk_only: {
      if (!sh.has_trunk()) throw ConfigError("trunk-only packets need one-hidden-layer mode");
      auto t = s.params.trunk();
      pk.payload.assign(t.begin(), t.end());
      break;
    }
    case PacketKind::prototypes: {
      std::vector<double> sums(sh.classes * sh.features, 0.0), counts(sh.classes, 0.0);
      for (const auto& e : s.replay.entries()) {
        if (e.synthetic) continue;
        counts[e.sample.y] += 1.0;
        for (std::size_t f = 0; f < sh.features; ++f)
          sums[e.sample.y * sh.features + f] += e.sample.x[f];
      }
      bool any = false;
      for (double c : counts) any = any || c > 0.0;
      if (!any) throw UsageError("prototypes unavailable: replay buffer holds no observations");
      pk.payload.reserve(sh.classes * (sh.features + 1));
      for (std::size_t c = 0; c < sh.classes; ++c) {
        pk.payload.push_back(counts[c]);
        for (std::size_t f = 0; f < sh.features; ++f)
          pk.payload.push_back(counts[c] > 0.0 ? sums[c * sh.features + f] / counts[c] : 0.0);
      }
      break;
    }
    case PacketKind::probe_logits:
      pk.payload = probe_logits(s.params, probe);
      pk.probe_hash = probe.hash;
      break;
    case PacketKind::confidence: {
      std::vector<double> sum(sh.classes, 0.0), n(sh.classes, 0.0);
      for (const auto& smp : probe.samples) {
        auto p = predict_proba(s.params, smp.x);
        sum[smp.y] += *std::max_element(p.begin(), p.end());
        n[smp.y] += 1.0;
      }
      for (std::size_t c = 0; c < sh.classes; ++c)
        pk.payload.push_back(n[c] > 0.0 ? sum[c] / n[c] : 0.0);
      pk.probe_hash = probe.hash;
      break;
    }
  }
  pk.byte_size = packet_byte_size(pk.payload.size());
  return pk;
}

// ---------------------------------------------------------------------------
// Merge policies and weights

enum class MergeKind { average, distill, trunk, prototype, none };
enum class WeightRule { uniform, metropolis, trust_context };

inline const char* to_string(MergeKind k) {
  switch (k) {
    case MergeKind::average: return "average";
    case MergeKind::distill: return "distill";
    case MergeKind::trunk: return "trunk";
    case MergeKind::prototype: return "prototype";
    case MergeKind::none: return "none";
  }
  return "?";
}
inline const char* to_string(WeightRule r) {
  switch (r) {
    case WeightRule::uniform: return "uniform";
    case WeightRule::metropolis: return "metropolis";
    case WeightRule::trust_context: return "trust-context";
  }
  return "?";
}
inline MergeKind parse_merge_kind(const std::string& s) {
  if (s == "average") return MergeKind::average;
  if (s == "distill") return MergeKind::distill;
  if (s == "trunk") return MergeKind::trunk;
  if (s == "prototype") return MergeKind::prototype;
  if (s == "none") return MergeKind::none;
  throw ConfigError("unknown merge policy '" + s + "'");
}
inline WeightRule parse_weight_rule(const std::string& s) {
  if (s == "uniform") return WeightRule::uniform;
  if (s == "metropolis") return WeightRule::metropolis;
  if (s == "trust-context") return WeightRule::trust_context;
  throw ConfigError("unknown weight rule '" + s + "'");
}

struct MergePolicy {
  MergeKind kind = MergeKind::average;
  WeightRule weights = WeightRule::trust_context;
  std::size_t distill_steps = 5;
  double distill_rate = 0.1;
  std::size_t prototype_replicas = 4;

  PacketKind packet_kind() const {
    switch (kind) {
      case MergeKind::average: return PacketKind::full_params;
      case MergeKind::distill: return PacketKind::probe_logits;
      case MergeKind::trunk: return PacketKind::trunk_only;
      case MergeKind::prototype: return PacketKind::prototypes;
      case MergeKind::none: return PacketKind::confidence;
    }
    return PacketKind::full_params;
  }
};

// Index 0 is the node itself; index k+1 belongs to packets[k].
struct WeightVector {
  std::vector<double> w;
  bool fallback = false;  // all peer scores were zero; self-weight forced to 1
};

// uniform:       1/(n+1) each
// metropolis:    w_j = 1/(1 + max(deg_i, deg_j)), self absorbs the remainder
// trust-context: w_j ~ trust(i,j) * connectivity_j, self = max(0.5, 1 - sum),
//                then normalised; all-zero scores fall back to self-weight 1
inline WeightVector compute_weights(NodeId self, std::uint32_t self_degree,
                                    std::span<const KnowledgePacket> packets,
                                    const MergePolicy& policy, const TrustGraph& trust) {
  WeightVector out;
  const std::size_t n = packets.size();
  out.w.assign(n + 1, 0.0);
  if (n == 0) {
    out.w[0] = 1.0;
    return out;
  }
  switch (policy.weights) {
    case WeightRule::uniform:
      std::fill(out.w.begin(), out.w.end(), 1.0 / static_cast<double>(n + 1));
      break;
    case WeightRule::metropolis: {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double d = std::max<double>(self_degree, packets[k].context.degree);
        out.w[k + 1] = 1.0 / (1.0 + d);
        sum += out.w[k + 1];
      }
      if (sum > 1.0)
        for (std::size_t k = 1; k <= n; ++k) out.w[k] /= sum;
      sum = 0.0;
      for (std::size_t k = 1; k <= n; ++k) sum += out.w[k];
      out.w[0] = std::max(0.0, 1.0 - sum);
      break;
    }
    case WeightRule::trust_context: {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double conn = std::clamp(packets[k].context.connectivity, 0.0, 1.0);
        out.w[k + 1] = trust.trust(self, packets[k].source) * conn;
        sum += out.w[k + 1];
      }
      if (sum <= 0.0) {
        std::fill(out.w.begin(), out.w.end(), 0.0);
        out.w[0] = 1.0;
        out.fallback = true;
        return out;
      }
      out.w[0] = std::max(0.5, 1.0 - sum);
      const double total = out.w[0] + sum;
      for (double& v : out.w) v /= total;
      break;
    }
  }
  return out;
}

struct MergeOutcome {
  bool merged = false;               // parameters or replay buffer changed
  std::vector<NodeId> accepted;
  std::vector<NodeId> rejected;
  std::vector<std::string> reasons;  // one per rejected packet
  std::uint64_t bytes = 0;           // sum of accepted packets' byte sizes
};

namespace detail {

// Accepted packet indices plus their weights renormalised together with self.
struct Admitted {
  std::vector<std::size_t> index;
  std::vector<double> weight;  // aligned with index
  double self_weight = 1.0;
};

template <class Check>
Admitted admit(std::span<const KnowledgePacket> packets, const WeightVector& weights,
               MergeOutcome& out, Check&& check) {
  if (weights.w.size() != packets.size() + 1)
    throw UsageError("weight vector must have one entry per packet plus self");
  Admitted a;
  double total = weights.w[0];
  for (std::size_t k = 0; k < packets.size(); ++k) {
    std::string why = check(packets[k]);
    if (!why.empty()) {
      out.rejected.push_back(packets[k].source);
      out.reasons.push_back(std::move(why));
      continue;
    }
    out.accepted.push_back(packets[k].source);
    out.bytes += packets[k].byte_size;
    a.index.push_back(k);
    a.weight.push_back(weights.w[k + 1]);
    total += weights.w[k + 1];
  }
  if (total > 0.0) {
    a.self_weight = weights.w[0] / total;
    for (double& w : a.weight) w /= total;
  }
  return a;
}

inline bool any_positive(const std::vector<double>& w) {
  return std::any_of(w.begin(), w.end(), [](double v) { return v > 0.0; });
}

// x <- x + sum_k w_k (y_k - x); zero-weight terms are skipped so a self-weight
// of one leaves x bitwise unchanged.
inline void blend(std::span<double> x, const std::vector<std::span<const double>>& ys,
                  const std::vector<double>& ws) {
  std::vector<double> base(x.begin(), x.end());
  for (std::size_t k = 0; k < ys.size(); ++k) {
    if (ws[k] == 0.0) continue;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += ws[k] * (ys[k][i] - base[i]);
  }
}

}  // namespace detail

// theta <- w_self theta + sum_j w_j theta_j over accepted full-params packets.
inline MergeOutcome merge_average(NodeState& s, std::span<const KnowledgePacket> packets,
                                  const WeightVector& weights) {
  MergeOutcome out;
  auto a = detail::admit(packets, weights, out, [&](const KnowledgePacket& p) -> std::string {
    if (p.kind != PacketKind::full_params) return std::string("expected full-params, got ") + to_string(p.kind);
    if (!(p.shape == s.params.shape) || p.payload.size() != s.params.values.size())
      return "dimension mismatch";
    if (!all_finite(p.payload)) return "non-finite payload";
    return {};
  });
  if (!detail::any_positive(a.weight)) return out;
  std::vector<std::span<const double>> ys;
  for (std::size_t k : a.index) ys.emplace_back(packets[k].payload);
  detail::blend(s.params.values, ys, a.weight);
  ++s.params.version;
  out.merged = true;
  return out;
}

// Average only the trunk; the head and bias stay private.
inline MergeOutcome merge_trunk(NodeState& s, std::span<const KnowledgePacket> packets,
                                const WeightVector& weights) {
  if (!s.params.shape.has_trunk()) throw ConfigError("trunk merge needs one-hidden-layer mode");
  MergeOutcome out;
  auto a = detail::admit(packets, weights, out, [&](const KnowledgePacket& p) -> std::string {
    if (p.kind != PacketKind::trunk_only) return std::string("expected trunk-only, got ") + to_string(p.kind);
    if (p.payload.size() != s.params.shape.trunk_size() ||
        p.shape.features != s.params.shape.features || p.shape.hidden != s.params.shape.hidden)
      return "trunk dimension mismatch";
    if (!all_finite(p.payload)) return "non-finite payload";
    return {};
  });
  if (!detail::any_positive(a.weight)) return out;
  std::vector<std::span<const double>> ys;
  for (std::size_t k : a.index) ys.emplace_back(packets[k].payload);
  detail::blend(s.params.trunk(), ys, a.weight);
  ++s.params.version;
  out.merged = true;
  return out;
}

// `distill_steps` full-batch gradient steps on KL(teacher || student) over
// the probe set, where the teacher is the weight-averaged peer softmax.
inline MergeOutcome merge_distill(NodeState& s, std::span<const KnowledgePacket> packets,
                                  const WeightVector& weights, const MergePolicy& policy,
                                  const ProbeSet& probe) {
  MergeOutcome out;
  const std::size_t k = s.params.shape.classes;
  auto a = detail::admit(packets, weights, out, [&](const KnowledgePacket& p) -> std::string {
    if (p.kind != PacketKind::probe_logits) return std::string("expected probe-logits, got ") + to_string(p.kind);
    if (p.probe_hash != probe.hash) return "probe hash mismatch";
    if (p.payload.size() != probe.samples.size() * k) return "probe size mismatch";
    if (!all_finite(p.payload)) return "non-finite payload";
    return {};
  });
  double peer_total = 0.0;
  for (double w : a.weight) peer_total += w;
  if (peer_total <= 0.0 || probe.samples.empty()) return out;

  std::vector<std::vector<double>> targets(probe.samples.size(), std::vector<double>(k, 0.0));
  for (std::size_t m = 0; m < a.index.size(); ++m) {
    const double w = a.weight[m] / peer_total;
    if (w == 0.0) continue;
    const auto& payload = packets[a.index[m]].payload;
    for (std::size_t r = 0; r < probe.samples.size(); ++r) {
      std::vector<double> z(payload.begin() + static_cast<std::ptrdiff_t>(r * k),
                            payload.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
      detail::softmax_inplace(z);
      for (std::size_t c = 0; c < k; ++c) targets[r][c] += w * z[c];
    }
  }
  for (std::size_t step = 0; step < policy.distill_steps; ++step) {
    const Gradient g = soft_grad(s.params, probe.samples, targets, 0.0);
    apply_gradient(s.params, g, policy.distill_rate);
  }
  if (policy.distill_steps > 0) {
    ++s.params.version;
    out.merged = true;
  }
  return out;
}

// Received class prototypes become synthetic replay entries, replicated in
// proportion to the sender's weight: max(1, round(w_j * replicas)) copies.
inline MergeOutcome merge_prototype(NodeState& s, std::span<const KnowledgePacket> packets,
                                    const WeightVector& weights, std::size_t replicas) {
  MergeOutcome out;
  const std::size_t d = s.params.shape.features, k = s.params.shape.classes;
  auto a = detail::admit(packets, weights, out, [&](const KnowledgePacket& p) -> std::string {
    if (p.kind != PacketKind::prototypes) return std::string("expected prototypes, got ") + to_string(p.kind);
    if (p.shape.features != d || p.shape.classes != k || p.payload.size() != k * (d + 1))
      return "prototype dimension mismatch";
    if (!all_finite(p.payload)) return "non-finite payload";
    return {};
  });
  for (std::size_t m = 0; m < a.index.size(); ++m) {
    if (a.weight[m] <= 0.0) continue;
    const auto& payload = packets[a.index[m]].payload;
    const auto copies = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(a.weight[m] * static_cast<double>(replicas))));
    for (std::size_t c = 0; c < k; ++c) {
      const double* row = payload.data() + c * (d + 1);
      if (row[0] <= 0.0) continue;
      Sample proto{std::vector<double>(row + 1, row + 1 + d), c};
      for (std::size_t r = 0; r < copies; ++r) s.replay.push(proto, true);
      out.merged = true;
    }
  }
  return out;
}

// Dispatch on the policy kind; `none` accepts nothing.
inline MergeOutcome merge(NodeState& s, std::span<const KnowledgePacket> packets,
                          const WeightVector& weights, const MergePolicy& policy,
                          const ProbeSet& probe) {
  switch (policy.kind) {
    case MergeKind::average: return merge_average(s, packets, weights);
    case MergeKind::distill: return merge_distill(s, packets, weights, policy, probe);
    case MergeKind::trunk: return merge_trunk(s, packets, weights);
    case MergeKind::prototype: return merge_prototype(s, packets, weights, policy.prototype_replicas);
    case MergeKind::none: break;
  }
  MergeOutcome out;
  for (const auto& p : packets) {
    out.rejected.push_back(p.source);
    out.reasons.push_back("merge policy is none");
  }
  return out;
}

// Cluster-level knowledge as one probe-logits packet: the uniform mean of the
// members' probe logits. Its size does not depend on the member count.
inline KnowledgePacket cluster_summary(std::span<const NodeState* const> members,
                                       const ProbeSet& probe, NodeId coordinator) {
  if (members.empty()) throw UsageError("cluster summary needs at least one member");
  KnowledgePacket pk;
  for (const NodeState* m : members)
    if (m->id == coordinator) pk = encode_packet(*m, PacketKind::probe_logits, probe);
  if (pk.payload.empty()) pk = encode_packet(*members.front(), PacketKind::probe_logits, probe);
  if (members.size() == 1) return pk;
  std::vector<double> mean(pk.payload.size(), 0.0);
  for (const NodeState* m : members) {
    const auto z = probe_logits(m->params, probe);
    if (z.size() != mean.size()) throw ShapeError("cluster members disagree on class count");
    for (std::size_t i = 0; i < z.size(); ++i) mean[i] += z[i];
  }
  for (double& v : mean) v /= static_cast<double>(members.size());
  pk.payload = std::move(mean);
  pk.byte_size = packet_byte_size(pk.payload.size());
  return pk;
}

}  // namespace nodelearn
