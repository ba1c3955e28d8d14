#pragma once

#include <algorithm>
#include <optional>

namespace nodelearn {

// Per-node context c_i(t). `loss_baseline` is the slow running mean that
// salience is measured against; it is negative until the first loss arrives.
struct ContextVector {
  double energy_fraction = 1.0;
  double connectivity = 0.5;
  double salience = 1.0;
  double mobility_speed = 0.0;
  int modality_mask = 0;
  double loss_baseline = -1.0;

  friend bool operator==(const ContextVector&, const ContextVector&) = default;
};

struct ContextParams {
  double decay = 0.9;             // per-tick EWMA decay for connectivity and salience
  double baseline_decay = 0.99;   // slow EWMA for the loss baseline
  double neutral_connectivity = 0.5;
  double neutral_salience = 1.0;
  double max_salience_ratio = 100.0;
};

// What the engine observed about a node during one tick. Absent fields
// make the corresponding EWMA relax toward its neutral value.
struct ContextObservation {
  double energy_delta = 0.0;                 // change in energy fraction
  std::optional<double> contact_success;     // in [0, 1]
  std::optional<double> loss;                // last training loss
  std::optional<double> speed;               // metres per tick
};

inline ContextVector update_context(ContextVector c, const ContextObservation& obs,
                                    const ContextParams& params = {}) {
  const double b = params.decay;
  c.energy_fraction = std::clamp(c.energy_fraction + obs.energy_delta, 0.0, 1.0);

  const double conn = obs.contact_success ? std::clamp(*obs.contact_success, 0.0, 1.0)
                                          : params.neutral_connectivity;
  c.connectivity = b * c.connectivity + (1.0 - b) * conn;

  if (obs.loss) {
    const double l = std::max(0.0, *obs.loss);
    if (c.loss_baseline < 0.0) c.loss_baseline = l;
    double ratio;
    if (c.loss_baseline > 0.0)
      ratio = std::min(l / c.loss_baseline, params.max_salience_ratio);
    else
      ratio = l > 0.0 ? params.max_salience_ratio : params.neutral_salience;
    c.salience = b * c.salience + (1.0 - b) * ratio;
    c.loss_baseline = params.baseline_decay * c.loss_baseline + (1.0 - params.baseline_decay) * l;
  } else {
    c.salience = b * c.salience + (1.0 - b) * params.neutral_salience;
  }

  if (obs.speed) c.mobility_speed = std::max(0.0, *obs.speed);
  return c;
}

// Learning gate omega(c) = energy_fraction * min(1, salience).
inline double gate(const ContextVector& c) {
  return std::clamp(c.energy_fraction, 0.0, 1.0) * std::min(1.0, std::max(0.0, c.salience));
}

}  // namespace nodelearn
