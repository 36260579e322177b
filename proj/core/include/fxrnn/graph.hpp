#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fxrnn/quant.hpp"

namespace fxrnn {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LayerKind : std::uint8_t { conv2d = 0, maxpool2d = 1, relu = 2, dense = 3, lstm = 4, softmax = 5 };

std::string_view to_string(LayerKind kind);

struct Shape3 {
  int channels = 1;
  int height = 1;
  int width = 1;

  int size() const noexcept { return channels * height * width; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& shape);

/// One entry of the layer stack. Fields not used by a kind stay zero/empty.
///
/// conv2d: out_channels maps, kernel x kernel, stride 1, no padding.
/// maxpool2d: window x window, stride `stride`; a window larger than the
///   input is clipped, so 1x1 maps pass through unchanged.
/// lstm: `units` cells; `input_weight_group` holds the 4N x M input matrix,
///   `weight_group` the 4N x N recurrent matrix, 3N peepholes and 4N biases.
/// dense: `units` outputs.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  int out_channels = 0;
  int kernel = 0;
  int window = 0;
  int stride = 0;
  int units = 0;
  std::string weight_group;
  std::string input_weight_group;
  std::string signal_group;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec conv_layer(std::string name, int maps, int kernel, std::string weight_group);
LayerSpec relu_layer(std::string name, std::string signal_group);
LayerSpec pool_layer(std::string name, int window, int stride, std::string signal_group);
LayerSpec lstm_layer(std::string name, int units, std::string input_weight_group,
                     std::string weight_group, std::string signal_group);
LayerSpec dense_layer(std::string name, int units, std::string weight_group);
LayerSpec softmax_layer(std::string name = "Softmax");

enum class WeightRole : std::uint8_t { conv, dense, lstm_input, lstm_recurrent };

struct WeightGroupInfo {
  std::string name;
  WeightRole role;
  int layer;            // index into NetworkGraph::layers
  std::size_t count;    // element count, biases included
};

struct SignalGroupInfo {
  std::string name;
  QuantKind kind;
  int layer;  // -1 for the input signal
};

/// Layer stack: per-frame layers (conv/relu/pool), one LSTM, a dense
/// output layer and a softmax.
struct NetworkGraph {
  std::string id;
  Shape3 input_shape;
  std::string input_signal_group;
  QuantKind input_signal_kind = QuantKind::signal_bounded_unit;
  std::vector<LayerSpec> layers;
  int output_classes = 0;

  /// Throws GraphError on inconsistent shapes, duplicate group names or a
  /// layer order other than [frame layers] lstm dense softmax.
  void validate() const;

  /// Output shape of every layer (LSTM and dense map to units x 1 x 1).
  std::vector<Shape3> output_shapes() const;
  /// Input shape of every layer.
  std::vector<Shape3> input_shapes() const;

  int lstm_index() const;
  std::vector<WeightGroupInfo> weight_groups() const;
  std::vector<SignalGroupInfo> signal_groups() const;
  WeightGroupInfo weight_group(std::string_view name) const;
  SignalGroupInfo signal_group(std::string_view name) const;
  bool has_weight_group(std::string_view name) const;
  bool has_signal_group(std::string_view name) const;
  std::size_t weight_count() const;

  friend bool operator==(const NetworkGraph&, const NetworkGraph&) = default;
};

/// Parameter count of a peephole LSTM layer with `units` cells fed by
/// `inputs` values: 4N^2 + 4NM + 7N.
std::int64_t lstm_param_count(std::int64_t units, std::int64_t inputs);

inline constexpr std::string_view kImagePreset = "cambridge-cnn-lstm";
inline constexpr std::string_view kAccelPreset = "smartwatch-lstm-128";

/// Named presets: "cambridge-cnn-lstm" and "smartwatch-lstm-<N>" for any N
/// (32, 64, 128 and 256 are the studied sizes).
NetworkGraph make_preset(std::string_view name);
std::vector<std::string> preset_names();

/// Accelerometer LSTM with N cells, 3 inputs and `classes` outputs.
NetworkGraph make_accel_lstm(int units, int classes = 8);
/// Three conv/relu/pool stages, an LSTM and a softmax output.
NetworkGraph make_cnn_lstm(Shape3 input, int units = 128, int classes = 9);

bool is_image_graph(const NetworkGraph& graph);

}  // namespace fxrnn
