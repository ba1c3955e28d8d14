#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nodelearn/nodelearn.hpp"

namespace nltest {

using namespace nodelearn;

inline std::vector<Sample> random_batch(Rng& rng, std::size_t n, std::size_t d, std::size_t k) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    for (std::size_t f = 0; f < d; ++f) s.x.push_back(rng.normal());
    s.y = rng.below(k);
    out.push_back(s);
  }
  return out;
}

inline TrainingConfig linear_cfg(double lr = 0.1) {
  TrainingConfig c;
  c.learning_rate = lr;
  return c;
}

inline TrainingConfig mlp_cfg(std::size_t hidden = 6, double lr = 0.1) {
  TrainingConfig c;
  c.mode = ModelMode::one_hidden_layer;
  c.hidden_dim = hidden;
  c.learning_rate = lr;
  return c;
}

inline NodeState make_node(NodeId id, ModelParams p, std::size_t replay_cap = 64) {
  NodeState n;
  n.id = id;
  n.params = std::move(p);
  n.replay = ReplayBuffer(replay_cap);
  n.battery = Battery{100.0, 100.0};
  return n;
}

inline KnowledgePacket params_packet(NodeId src, const ModelParams& p, std::uint32_t degree = 0) {
  NodeState n = make_node(src, p);
  return encode_packet(n, PacketKind::full_params, ProbeSet{}, degree);
}

// Fresh scratch directory under the build tree's temp area.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nodelearn-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Small fast scenario used by engine-level tests.
inline json small_scenario(const std::string& regime = "node-learning", std::int64_t ticks = 30) {
  return json{
      {"name", "small"},
      {"seed", 3},
      {"ticks", ticks},
      {"regime", regime},
      {"nodes", {{"count", 5}}},
      {"data", {{"classes", 3}, {"features", 4}, {"separation", 3.0}, {"partition", {{"kind", "dirichlet"}, {"alpha", 0.5}}}}},
      {"mobility", {{"model", "random-waypoint"}, {"width", 60}, {"height", 60}}},
  };
}

inline ScenarioConfig parse(const json& j) { return parse_config_or_throw(j); }

}  // namespace nltest
