#include "fxrnn/model.hpp"

#include <cmath>
#include <random>

namespace fxrnn {

GroupBits GroupBits::uniform(const NetworkGraph& graph, int bits) { return uniform(graph, bits, bits); }

GroupBits GroupBits::uniform(const NetworkGraph& graph, int weight_bits, int signal_bits) {
  GroupBits out;
  for (const auto& g : graph.weight_groups()) out.weights[g.name] = weight_bits;
  for (const auto& g : graph.signal_groups()) out.signals[g.name] = signal_bits;
  return out;
}

void GroupBits::require_complete(const NetworkGraph& graph) const {
  for (const auto& g : graph.weight_groups()) {
    if (!weights.contains(g.name)) throw GraphError("allocation is missing weight group '" + g.name + "'");
  }
  for (const auto& g : graph.signal_groups()) {
    if (!signals.contains(g.name)) throw GraphError("allocation is missing signal group '" + g.name + "'");
  }
}

void GroupBits::require_known(const NetworkGraph& graph) const {
  for (const auto& [name, bits] : weights) {
    graph.weight_group(name);
    level_count(bits);
  }
  for (const auto& [name, bits] : signals) {
    graph.signal_group(name);
    level_count(bits);
  }
}

MasterModel MasterModel::initialize(NetworkGraph graph, std::uint64_t seed) {
  graph.validate();
  MasterModel m;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> init(-0.1, 0.1);
  for (const auto& g : graph.weight_groups()) {
    auto& w = m.weights[g.name];
    w.resize(g.count);
    for (double& v : w) v = init(rng);
  }
  m.graph = std::move(graph);
  return m;
}

void MasterModel::validate() const {
  graph.validate();
  const auto groups = graph.weight_groups();
  if (groups.size() != weights.size()) throw GraphError("model weight groups do not match its graph");
  for (const auto& g : groups) {
    const auto it = weights.find(g.name);
    if (it == weights.end()) throw GraphError("model has no weights for group '" + g.name + "'");
    if (it->second.size() != g.count) {
      throw GraphError("group '" + g.name + "' holds " + std::to_string(it->second.size()) +
                       " values, graph expects " + std::to_string(g.count));
    }
    for (double v : it->second) {
      if (!std::isfinite(v)) throw GraphError("group '" + g.name + "' holds a non-finite weight");
    }
  }
  for (const auto& [name, spec] : weight_specs) {
    graph.weight_group(name);
    spec.validate();
    if (spec.kind != QuantKind::weight) throw GraphError("weight spec '" + name + "' has a signal kind");
  }
  for (const auto& [name, spec] : signal_specs) {
    const auto info = graph.signal_group(name);
    spec.validate();
    if (spec.kind != info.kind) {
      throw GraphError("signal spec '" + name + "' kind does not match the graph");
    }
  }
}

void fit_weight_specs(MasterModel& model, const std::map<std::string, int>& bits) {
  for (const auto& [name, b] : bits) {
    const auto it = model.weights.find(name);
    if (it == model.weights.end()) throw GraphError("unknown weight group '" + name + "'");
    QuantSpec spec = optimize_step_size(it->second, b).snapped_to_f32();
    spec.group = name;
    model.weight_specs[name] = spec;
  }
}

}  // namespace fxrnn
