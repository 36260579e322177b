#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fxrnn/graph.hpp"
#include "fxrnn/quant.hpp"

namespace fxrnn {

using GroupArrays = std::map<std::string, std::vector<double>>;

/// Bit-width per weight group and per signal group. Weight and signal groups
/// live in separate namespaces ("L1" names both the recurrent weights and the
/// LSTM signals).
struct GroupBits {
  std::map<std::string, int> weights;
  std::map<std::string, int> signals;

  bool empty() const noexcept { return weights.empty() && signals.empty(); }
  std::size_t size() const noexcept { return weights.size() + signals.size(); }

  /// Every weight and signal group of `graph` at `bits`.
  static GroupBits uniform(const NetworkGraph& graph, int bits);
  static GroupBits uniform(const NetworkGraph& graph, int weight_bits, int signal_bits);

  /// Throws GraphError naming the first group of `graph` that is missing.
  void require_complete(const NetworkGraph& graph) const;
  /// Throws GraphError naming the first key unknown to `graph`.
  void require_known(const NetworkGraph& graph) const;

  friend bool operator==(const GroupBits&, const GroupBits&) = default;
};

/// Full-precision master weights plus the quantization domain attached to
/// them. Quantized inference is a view: weights are never overwritten by
/// their grid values.
struct MasterModel {
  NetworkGraph graph;
  GroupArrays weights;
  std::map<std::string, QuantSpec> weight_specs;
  std::map<std::string, QuantSpec> signal_specs;
  std::uint64_t seed = 0;

  /// Uniform [-0.1, 0.1] initialisation, seeded; groups filled in graph order.
  static MasterModel initialize(NetworkGraph graph, std::uint64_t seed);

  /// Shapes, finiteness and spec/group consistency.
  void validate() const;

  std::size_t weight_count() const { return graph.weight_count(); }
  void clear_specs() {
    weight_specs.clear();
    signal_specs.clear();
  }

  friend bool operator==(const MasterModel&, const MasterModel&) = default;
};

/// Fits an L2-optimal step size to each listed weight group's master weights
/// and attaches it (stored at 32-bit float precision).
void fit_weight_specs(MasterModel& model, const std::map<std::string, int>& bits);

}  // namespace fxrnn
