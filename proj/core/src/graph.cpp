#include "fxrnn/graph.hpp"

#include <algorithm>
#include <charconv>
#include <set>

namespace fxrnn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::relu: return "relu";
    case LayerKind::dense: return "dense";
    case LayerKind::lstm: return "lstm";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

std::string to_string(const Shape3& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

LayerSpec conv_layer(std::string name, int maps, int kernel, std::string weight_group) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.name = std::move(name);
  l.out_channels = maps;
  l.kernel = kernel;
  l.stride = 1;
  l.weight_group = std::move(weight_group);
  return l;
}

LayerSpec relu_layer(std::string name, std::string signal_group) {
  LayerSpec l;
  l.kind = LayerKind::relu;
  l.name = std::move(name);
  l.signal_group = std::move(signal_group);
  return l;
}

LayerSpec pool_layer(std::string name, int window, int stride, std::string signal_group) {
  LayerSpec l;
  l.kind = LayerKind::maxpool2d;
  l.name = std::move(name);
  l.window = window;
  l.stride = stride;
  l.signal_group = std::move(signal_group);
  return l;
}

LayerSpec lstm_layer(std::string name, int units, std::string input_weight_group,
                     std::string weight_group, std::string signal_group) {
  LayerSpec l;
  l.kind = LayerKind::lstm;
  l.name = std::move(name);
  l.units = units;
  l.input_weight_group = std::move(input_weight_group);
  l.weight_group = std::move(weight_group);
  l.signal_group = std::move(signal_group);
  return l;
}

LayerSpec dense_layer(std::string name, int units, std::string weight_group) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.name = std::move(name);
  l.units = units;
  l.weight_group = std::move(weight_group);
  return l;
}

LayerSpec softmax_layer(std::string name) {
  LayerSpec l;
  l.kind = LayerKind::softmax;
  l.name = std::move(name);
  return l;
}

namespace {

Shape3 layer_output(const LayerSpec& l, const Shape3& in) {
  switch (l.kind) {
    case LayerKind::conv2d: {
      if (l.kernel < 1 || l.out_channels < 1) throw GraphError("conv layer '" + l.name + "' needs maps and kernel");
      const Shape3 out{l.out_channels, in.height - l.kernel + 1, in.width - l.kernel + 1};
      if (out.height < 1 || out.width < 1) {
        throw GraphError("conv layer '" + l.name + "' kernel larger than input " + to_string(in));
      }
      return out;
    }
    case LayerKind::maxpool2d: {
      if (l.window < 1 || l.stride < 1) throw GraphError("pool layer '" + l.name + "' needs window and stride");
      auto dim = [&](int d) { return d < l.window ? 1 : (d - l.window) / l.stride + 1; };
      return {in.channels, dim(in.height), dim(in.width)};
    }
    case LayerKind::relu:
    case LayerKind::softmax:
      return in;
    case LayerKind::lstm:
    case LayerKind::dense:
      if (l.units < 1) throw GraphError("layer '" + l.name + "' needs a positive unit count");
      return {l.units, 1, 1};
  }
  throw GraphError("unknown layer kind");
}

}  // namespace

std::vector<Shape3> NetworkGraph::input_shapes() const {
  std::vector<Shape3> shapes;
  Shape3 cur = input_shape;
  for (const auto& l : layers) {
    shapes.push_back(cur);
    cur = layer_output(l, cur);
  }
  return shapes;
}

std::vector<Shape3> NetworkGraph::output_shapes() const {
  std::vector<Shape3> shapes;
  Shape3 cur = input_shape;
  for (const auto& l : layers) {
    cur = layer_output(l, cur);
    shapes.push_back(cur);
  }
  return shapes;
}

int NetworkGraph::lstm_index() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::lstm) return static_cast<int>(i);
  }
  return -1;
}

void NetworkGraph::validate() const {
  if (input_shape.channels < 1 || input_shape.height < 1 || input_shape.width < 1) {
    throw GraphError("input shape must be positive");
  }
  const int li = lstm_index();
  if (li < 0) throw GraphError("graph '" + id + "' has no LSTM layer");
  if (layers.size() != static_cast<std::size_t>(li) + 3 || layers[li + 1].kind != LayerKind::dense ||
      layers[li + 2].kind != LayerKind::softmax) {
    throw GraphError("graph '" + id + "' must end with lstm, dense, softmax");
  }
  for (int i = 0; i < li; ++i) {
    const auto k = layers[i].kind;
    if (k != LayerKind::conv2d && k != LayerKind::relu && k != LayerKind::maxpool2d) {
      throw GraphError("layer '" + layers[i].name + "' cannot precede the LSTM");
    }
  }
  if (layers[li + 1].units != output_classes || output_classes < 2) {
    throw GraphError("output layer must have output_classes >= 2 units");
  }
  output_shapes();  // throws on inconsistent shapes

  std::set<std::string> names;
  std::set<std::string> wnames;
  std::set<std::string> snames;
  if (!input_signal_group.empty()) {
    if (input_signal_kind == QuantKind::weight) throw GraphError("input signal kind cannot be 'weight'");
    snames.insert(input_signal_group);
  }
  for (const auto& l : layers) {
    if (l.name.empty() || !names.insert(l.name).second) {
      throw GraphError("layer names must be unique and non-empty ('" + l.name + "')");
    }
    const bool needs_weights = l.kind == LayerKind::conv2d || l.kind == LayerKind::dense ||
                               l.kind == LayerKind::lstm;
    if (needs_weights && l.weight_group.empty()) {
      throw GraphError("layer '" + l.name + "' has no weight group");
    }
    if (!needs_weights && !l.weight_group.empty()) {
      throw GraphError("layer '" + l.name + "' cannot own weights");
    }
    if (l.kind == LayerKind::lstm && l.input_weight_group.empty()) {
      throw GraphError("LSTM layer '" + l.name + "' has no input weight group");
    }
    for (const auto* g : {&l.weight_group, &l.input_weight_group}) {
      if (!g->empty() && !wnames.insert(*g).second) throw GraphError("duplicate weight group '" + *g + "'");
    }
    if (!l.signal_group.empty()) {
      const bool can_signal = l.kind == LayerKind::relu || l.kind == LayerKind::maxpool2d ||
                              l.kind == LayerKind::lstm;
      if (!can_signal) throw GraphError("layer '" + l.name + "' cannot carry a signal group");
      if (!snames.insert(l.signal_group).second) {
        throw GraphError("duplicate signal group '" + l.signal_group + "'");
      }
    }
  }
}

std::vector<WeightGroupInfo> NetworkGraph::weight_groups() const {
  std::vector<WeightGroupInfo> out;
  const auto ins = input_shapes();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const auto idx = static_cast<int>(i);
    const auto in = static_cast<std::size_t>(ins[i].size());
    switch (l.kind) {
      case LayerKind::conv2d: {
        const auto maps = static_cast<std::size_t>(l.out_channels);
        const auto k2 = static_cast<std::size_t>(l.kernel) * static_cast<std::size_t>(l.kernel);
        out.push_back({l.weight_group, WeightRole::conv, idx,
                       maps * static_cast<std::size_t>(ins[i].channels) * k2 + maps});
        break;
      }
      case LayerKind::dense: {
        const auto k = static_cast<std::size_t>(l.units);
        out.push_back({l.weight_group, WeightRole::dense, idx, k * in + k});
        break;
      }
      case LayerKind::lstm: {
        const auto n = static_cast<std::size_t>(l.units);
        out.push_back({l.input_weight_group, WeightRole::lstm_input, idx, 4 * n * in});
        out.push_back({l.weight_group, WeightRole::lstm_recurrent, idx, 4 * n * n + 7 * n});
        break;
      }
      default:
        break;
    }
  }
  return out;
}

std::vector<SignalGroupInfo> NetworkGraph::signal_groups() const {
  std::vector<SignalGroupInfo> out;
  if (!input_signal_group.empty()) out.push_back({input_signal_group, input_signal_kind, -1});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.signal_group.empty()) continue;
    const QuantKind kind =
        l.kind == LayerKind::lstm ? QuantKind::signal_bounded_sym : QuantKind::signal_unbounded;
    out.push_back({l.signal_group, kind, static_cast<int>(i)});
  }
  return out;
}

WeightGroupInfo NetworkGraph::weight_group(std::string_view name) const {
  for (auto& g : weight_groups()) {
    if (g.name == name) return g;
  }
  throw GraphError("unknown weight group '" + std::string(name) + "'");
}

SignalGroupInfo NetworkGraph::signal_group(std::string_view name) const {
  for (auto& g : signal_groups()) {
    if (g.name == name) return g;
  }
  throw GraphError("unknown signal group '" + std::string(name) + "'");
}

bool NetworkGraph::has_weight_group(std::string_view name) const {
  const auto groups = weight_groups();
  return std::any_of(groups.begin(), groups.end(), [&](const auto& g) { return g.name == name; });
}

bool NetworkGraph::has_signal_group(std::string_view name) const {
  const auto groups = signal_groups();
  return std::any_of(groups.begin(), groups.end(), [&](const auto& g) { return g.name == name; });
}

std::size_t NetworkGraph::weight_count() const {
  std::size_t total = 0;
  for (const auto& g : weight_groups()) total += g.count;
  return total;
}

std::int64_t lstm_param_count(std::int64_t units, std::int64_t inputs) {
  if (units < 1 || inputs < 0) throw GraphError("lstm_param_count needs N >= 1 and M >= 0");
  return 4 * units * units + 4 * units * inputs + 7 * units;
}

NetworkGraph make_accel_lstm(int units, int classes) {
  NetworkGraph g;
  g.id = "smartwatch-lstm-" + std::to_string(units);
  g.input_shape = {3, 1, 1};
  g.input_signal_group = "In";
  g.input_signal_kind = QuantKind::signal_unbounded_sym;
  g.layers = {lstm_layer("L1", units, "In-L1", "L1", "L1"), dense_layer("Out", classes, "L1-Out"),
              softmax_layer()};
  g.output_classes = classes;
  g.validate();
  return g;
}

NetworkGraph make_cnn_lstm(Shape3 input, int units, int classes) {
  NetworkGraph g;
  g.id = std::string(kImagePreset);
  g.input_shape = input;
  g.input_signal_group = "In";
  g.input_signal_kind = QuantKind::signal_bounded_unit;
  g.layers = {
      conv_layer("C1", 32, 5, "In-C1"),  relu_layer("C1.relu", "C1"), pool_layer("S1", 2, 2, "S1"),
      conv_layer("C2", 32, 5, "S1-C2"),  relu_layer("C2.relu", "C2"), pool_layer("S2", 2, 2, "S2"),
      conv_layer("C3", 64, 5, "S2-C3"),  relu_layer("C3.relu", "C3"), pool_layer("S3", 2, 2, "S3"),
      lstm_layer("L1", units, "S3-L1", "L1", "L1"),
      dense_layer("Out", classes, "L1-Out"),
      softmax_layer(),
  };
  g.output_classes = classes;
  g.validate();
  return g;
}

NetworkGraph make_preset(std::string_view name) {
  if (name == kImagePreset) return make_cnn_lstm({3, 32, 32});
  constexpr std::string_view prefix = "smartwatch-lstm-";
  if (name.starts_with(prefix)) {
    const auto digits = name.substr(prefix.size());
    int units = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), units);
    if (ec == std::errc{} && ptr == digits.data() + digits.size() && units > 0) {
      return make_accel_lstm(units);
    }
  }
  throw GraphError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  return {std::string(kImagePreset), "smartwatch-lstm-32", "smartwatch-lstm-64",
          std::string(kAccelPreset), "smartwatch-lstm-256"};
}

bool is_image_graph(const NetworkGraph& graph) { return graph.lstm_index() > 0; }

}  // namespace fxrnn
