#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace nodelearn {

using NodeId = std::uint32_t;
using Tick = std::int64_t;

// One labelled observation: d real features and a class label in [0, k).
struct Sample {
  std::vector<double> x;
  std::size_t y = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Batch = std::span<const Sample>;

}  // namespace nodelearn
