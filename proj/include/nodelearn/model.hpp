#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nodelearn/errors.hpp"
#include "nodelearn/rng.hpp"
#include "nodelearn/types.hpp"

namespace nodelearn {

enum class ModelMode { linear_softmax, one_hidden_layer };

struct TrainingConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 8;
  ModelMode mode = ModelMode::linear_softmax;
  std::size_t hidden_dim = 16;
  double l2_penalty = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (mode == ModelMode::one_hidden_layer && hidden_dim < 1)
      throw ConfigError("hidden dim must be at least 1");
    if (!(l2_penalty >= 0.0)) throw ConfigError("l2 penalty must be nonnegative");
  }
};

// Parameter layout. All parameters live in one flat vector:
//   [trunk (features x hidden, row-major) | head (input x classes) | bias (classes)]
// hidden == 0 means linear-softmax mode and an empty trunk.
struct ModelShape {
  std::size_t features = 0;
  std::size_t hidden = 0;
  std::size_t classes = 0;

  bool has_trunk() const noexcept { return hidden > 0; }
  std::size_t input_dim() const noexcept { return hidden > 0 ? hidden : features; }
  std::size_t trunk_size() const noexcept { return features * hidden; }
  std::size_t head_size() const noexcept { return input_dim() * classes; }
  std::size_t total() const noexcept { return trunk_size() + head_size() + classes; }

  std::size_t trunk_offset() const noexcept { return 0; }
  std::size_t head_offset() const noexcept { return trunk_size(); }
  std::size_t bias_offset() const noexcept { return trunk_size() + head_size(); }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

struct ModelParams {
  ModelShape shape;
  std::vector<double> values;
  std::uint64_t version = 0;

  std::span<double> trunk() { return {values.data() + shape.trunk_offset(), shape.trunk_size()}; }
  std::span<double> head() { return {values.data() + shape.head_offset(), shape.head_size()}; }
  std::span<double> bias() { return {values.data() + shape.bias_offset(), shape.classes}; }
  std::span<const double> trunk() const {
    return {values.data() + shape.trunk_offset(), shape.trunk_size()};
  }
  std::span<const double> head() const {
    return {values.data() + shape.head_offset(), shape.head_size()};
  }
  std::span<const double> bias() const {
    return {values.data() + shape.bias_offset(), shape.classes};
  }
};

// Same layout as ModelParams, without a version.
struct Gradient {
  ModelShape shape;
  std::vector<double> values;
};

inline ModelShape make_shape(const TrainingConfig& cfg, std::size_t features, std::size_t classes) {
  if (features < 1) throw ConfigError("feature dim must be at least 1");
  if (classes < 2) throw ConfigError("class count must be at least 2");
  ModelShape s;
  s.features = features;
  s.classes = classes;
  s.hidden = cfg.mode == ModelMode::one_hidden_layer ? cfg.hidden_dim : 0;
  if (cfg.mode == ModelMode::one_hidden_layer && s.hidden == 0)
    throw ConfigError("hidden dim must be at least 1");
  return s;
}

// Weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], bias zero, version 0.
inline ModelParams init_params(Rng& rng, const TrainingConfig& cfg, std::size_t features,
                               std::size_t classes) {
  ModelParams p;
  p.shape = make_shape(cfg, features, classes);
  p.values.assign(p.shape.total(), 0.0);
  const double trunk_scale = 1.0 / std::sqrt(static_cast<double>(features));
  for (double& w : p.trunk()) w = rng.uniform(-trunk_scale, trunk_scale);
  const double head_scale = 1.0 / std::sqrt(static_cast<double>(p.shape.input_dim()));
  for (double& w : p.head()) w = rng.uniform(-head_scale, head_scale);
  return p;
}

inline ModelParams init_params(std::uint64_t seed, const TrainingConfig& cfg, std::size_t features,
                               std::size_t classes) {
  Rng rng(seed, Stream::init);
  return init_params(rng, cfg, features, classes);
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

namespace detail {

inline void check_input(const ModelShape& s, std::span<const double> x) {
  if (x.size() != s.features)
    throw ShapeError("feature vector has " + std::to_string(x.size()) + " entries, model expects " +
                     std::to_string(s.features));
}

// Hidden activations (empty in linear mode) and logits for one input.
inline void forward(const ModelParams& p, std::span<const double> x, std::vector<double>& hidden,
                    std::vector<double>& logits) {
  const ModelShape& s = p.shape;
  std::span<const double> input = x;
  if (s.has_trunk()) {
    hidden.assign(s.hidden, 0.0);
    auto w1 = p.trunk();
    for (std::size_t f = 0; f < s.features; ++f) {
      const double xf = x[f];
      if (xf == 0.0) continue;
      const double* row = w1.data() + f * s.hidden;
      for (std::size_t u = 0; u < s.hidden; ++u) hidden[u] += xf * row[u];
    }
    for (double& h : hidden) h = std::tanh(h);
    input = hidden;
  } else {
    hidden.clear();
  }
  auto b = p.bias();
  logits.assign(b.begin(), b.end());
  auto w2 = p.head();
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double v = input[i];
    const double* row = w2.data() + i * s.classes;
    for (std::size_t c = 0; c < s.classes; ++c) logits[c] += v * row[c];
  }
}

inline void softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

inline double log_sum_exp(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  return m + std::log(sum);
}

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace detail

inline std::vector<double> logits(const ModelParams& p, std::span<const double> x) {
  detail::check_input(p.shape, x);
  std::vector<double> hidden, z;
  detail::forward(p, x, hidden, z);
  return z;
}

inline std::vector<double> predict_proba(const ModelParams& p, std::span<const double> x) {
  auto z = logits(p, x);
  detail::softmax_inplace(z);
  return z;
}

// Argmax of the logits; ties go to the lowest class index.
inline std::size_t predict(const ModelParams& p, std::span<const double> x) {
  auto z = logits(p, x);
  std::size_t best = 0;
  for (std::size_t c = 1; c < z.size(); ++c)
    if (z[c] > z[best]) best = c;
  return best;
}

// Soft-target cross-entropy: mean over rows of -sum_c t_c log p_c, plus
// l2 * ||params||^2. Hard labels are the one-hot special case.
inline double soft_loss(const ModelParams& p, std::span<const Sample> inputs,
                        std::span<const std::vector<double>> targets, double l2) {
  if (inputs.empty()) throw UsageError("loss requires a nonempty batch");
  std::vector<double> hidden, z;
  double total = 0.0;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    detail::check_input(p.shape, inputs[n].x);
    detail::forward(p, inputs[n].x, hidden, z);
    const double lse = detail::log_sum_exp(z);
    for (std::size_t c = 0; c < z.size(); ++c)
      if (targets[n][c] != 0.0) total -= targets[n][c] * (z[c] - lse);
  }
  double out = total / static_cast<double>(inputs.size());
  if (l2 > 0.0) out += l2 * detail::squared_norm(p.values);
  return out;
}

inline double loss(const ModelParams& p, Batch batch, double l2 = 0.0) {
  if (batch.empty()) throw UsageError("loss requires a nonempty batch");
  std::vector<double> hidden, z;
  double total = 0.0;
  for (const Sample& s : batch) {
    detail::check_input(p.shape, s.x);
    if (s.y >= p.shape.classes) throw ShapeError("label out of range");
    detail::forward(p, s.x, hidden, z);
    total += detail::log_sum_exp(z) - z[s.y];
  }
  double out = total / static_cast<double>(batch.size());
  if (l2 > 0.0) out += l2 * detail::squared_norm(p.values);
  return out;
}

namespace detail {

// Backpropagate dlogits (already divided by the batch size) for one input.
inline void accumulate_gradient(const ModelParams& p, std::span<const double> x,
                                const std::vector<double>& hidden,
                                const std::vector<double>& dlogits, Gradient& g) {
  const ModelShape& s = p.shape;
  std::span<const double> input = s.has_trunk() ? std::span<const double>(hidden) : x;
  double* gh = g.values.data() + s.head_offset();
  double* gb = g.values.data() + s.bias_offset();
  for (std::size_t c = 0; c < s.classes; ++c) gb[c] += dlogits[c];
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double v = input[i];
    double* row = gh + i * s.classes;
    for (std::size_t c = 0; c < s.classes; ++c) row[c] += v * dlogits[c];
  }
  if (!s.has_trunk()) return;
  auto w2 = p.head();
  std::vector<double> dpre(s.hidden, 0.0);
  for (std::size_t u = 0; u < s.hidden; ++u) {
    const double* row = w2.data() + u * s.classes;
    double acc = 0.0;
    for (std::size_t c = 0; c < s.classes; ++c) acc += row[c] * dlogits[c];
    dpre[u] = acc * (1.0 - hidden[u] * hidden[u]);
  }
  double* gt = g.values.data() + s.trunk_offset();
  for (std::size_t f = 0; f < s.features; ++f) {
    const double xf = x[f];
    if (xf == 0.0) continue;
    double* row = gt + f * s.hidden;
    for (std::size_t u = 0; u < s.hidden; ++u) row[u] += xf * dpre[u];
  }
}

inline void add_l2(const ModelParams& p, double l2, Gradient& g) {
  if (l2 <= 0.0) return;
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += 2.0 * l2 * p.values[i];
}

}  // namespace detail

inline Gradient soft_grad(const ModelParams& p, std::span<const Sample> inputs,
                          std::span<const std::vector<double>> targets, double l2) {
  if (inputs.empty()) throw UsageError("gradient requires a nonempty batch");
  Gradient g{p.shape, std::vector<double>(p.values.size(), 0.0)};
  const double inv_n = 1.0 / static_cast<double>(inputs.size());
  std::vector<double> hidden, z;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    detail::check_input(p.shape, inputs[n].x);
    detail::forward(p, inputs[n].x, hidden, z);
    detail::softmax_inplace(z);
    for (std::size_t c = 0; c < z.size(); ++c) z[c] = (z[c] - targets[n][c]) * inv_n;
    detail::accumulate_gradient(p, inputs[n].x, hidden, z, g);
  }
  detail::add_l2(p, l2, g);
  return g;
}

// Analytic gradient of loss(p, batch, l2).
inline Gradient grad(const ModelParams& p, Batch batch, double l2 = 0.0) {
  if (batch.empty()) throw UsageError("gradient requires a nonempty batch");
  Gradient g{p.shape, std::vector<double>(p.values.size(), 0.0)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> hidden, z;
  for (const Sample& s : batch) {
    detail::check_input(p.shape, s.x);
    if (s.y >= p.shape.classes) throw ShapeError("label out of range");
    detail::forward(p, s.x, hidden, z);
    detail::softmax_inplace(z);
    z[s.y] -= 1.0;
    for (double& v : z) v *= inv_n;
    detail::accumulate_gradient(p, s.x, hidden, z, g);
  }
  detail::add_l2(p, l2, g);
  return g;
}

// theta <- theta - scale * g. Does not touch the version counter.
inline void apply_gradient(ModelParams& p, const Gradient& g, double scale) {
  if (!(g.shape == p.shape)) throw ShapeError("gradient shape does not match parameters");
  for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] -= scale * g.values[i];
}

// Fraction of argmax-correct predictions (ties to the lowest class index).
inline double evaluate_accuracy(const ModelParams& p, std::span<const Sample> test) {
  if (test.empty()) throw UsageError("accuracy requires a nonempty test set");
  std::vector<double> hidden, z;
  std::size_t correct = 0;
  for (const Sample& s : test) {
    detail::check_input(p.shape, s.x);
    detail::forward(p, s.x, hidden, z);
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c)
      if (z[c] > z[best]) best = c;
    if (best == s.y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Per-class recall; classes absent from `test` report 0.
inline std::vector<double> class_recall(const ModelParams& p, std::span<const Sample> test) {
  std::vector<double> hit(p.shape.classes, 0.0), seen(p.shape.classes, 0.0);
  for (const Sample& s : test) {
    seen[s.y] += 1.0;
    if (predict(p, s.x) == s.y) hit[s.y] += 1.0;
  }
  for (std::size_t c = 0; c < hit.size(); ++c) hit[c] = seen[c] > 0.0 ? hit[c] / seen[c] : 0.0;
  return hit;
}

inline double parameter_distance(const ModelParams& a, const ModelParams& b) {
  if (!(a.shape == b.shape)) throw ShapeError("parameter shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace nodelearn
