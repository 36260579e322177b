#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fxrnn/graph.hpp"
#include "fxrnn/quant.hpp"

// Per-frame and per-step kernels. All tensors are channel-major doubles.
namespace fxrnn::ops {

/// Valid (unpadded) stride-1 cross-correlation. `weights` is
/// maps x in.channels x kernel x kernel; output is maps x (H-k+1) x (W-k+1).
std::vector<double> conv2d_forward(std::span<const double> input, Shape3 in, std::span<const double> weights,
                                   std::span<const double> bias, int maps, int kernel);

/// Accumulates into grad_weights / grad_bias; writes grad_input when it is
/// non-empty (it must be zeroed by the caller).
void conv2d_backward(std::span<const double> input, Shape3 in, std::span<const double> weights, int maps,
                     int kernel, std::span<const double> grad_out, std::span<double> grad_weights,
                     std::span<double> grad_bias, std::span<double> grad_input);

struct PoolResult {
  Shape3 shape;
  std::vector<double> output;
  std::vector<std::uint32_t> argmax;  // flat input index of each output's maximum
};

/// Max pooling; ties keep the first element in row-major order. Trailing
/// rows/columns that do not fill a window are dropped; a dimension smaller
/// than the window yields a single clipped window.
PoolResult maxpool2d_forward(std::span<const double> input, Shape3 in, int window, int stride);
void maxpool2d_backward(std::span<const double> grad_out, std::span<const std::uint32_t> argmax,
                        std::span<double> grad_input);

/// Views into an LSTM's two weight groups. Gate rows are ordered
/// input, forget, cell candidate, output; peepholes are input, forget, output.
struct LstmWeights {
  int units = 0;
  int inputs = 0;
  std::span<const double> input;      // 4N x M
  std::span<const double> recurrent;  // 4N x N
  std::span<const double> peephole;   // 3N
  std::span<const double> bias;       // 4N

  static LstmWeights from_groups(std::span<const double> input_group, std::span<const double> recurrent_group,
                                 int units, int inputs);
};

/// Gradient buffers laid out exactly like the two weight groups.
struct LstmGrads {
  std::span<double> input;
  std::span<double> recurrent;  // recurrent, then peephole, then bias

  std::span<double> recurrent_matrix(int units) const { return recurrent.first(4 * units * units); }
  std::span<double> peephole(int units) const { return recurrent.subspan(4 * units * units, 3 * units); }
  std::span<double> bias(int units) const { return recurrent.subspan(4 * units * units + 3 * units, 4 * units); }
};

struct LstmState {
  std::vector<double> hidden;
  std::vector<double> cell;

  static LstmState zeros(int units) {
    return {std::vector<double>(units, 0.0), std::vector<double>(units, 0.0)};
  }
};

/// Optional signal quantizers applied inside a step: `gate` (one-sided unit
/// grid) to the sigmoid gates, `symmetric` to the cell candidate and the
/// output h.
struct LstmSignals {
  const QuantSpec* gate = nullptr;
  const QuantSpec* symmetric = nullptr;
};

/// Everything one step produces, retained for backpropagation.
struct LstmStep {
  std::vector<double> x;
  std::vector<double> h_prev;
  std::vector<double> c_prev;
  std::vector<double> raw;    // 4N activations before signal quantization
  std::vector<double> gates;  // 4N activations after signal quantization
  std::vector<double> cell;
  std::vector<double> tanh_cell;
  std::vector<double> hidden;
};

/// i,f = sigm(W x + U h + p.c + b), g = tanh(W x + U h + b),
/// c' = f.c + i.g, o = sigm(W x + U h + p.c' + b), h' = o.tanh(c').
LstmStep lstm_step(std::span<const double> x, const LstmState& state, const LstmWeights& w,
                   const LstmSignals& signals = {});

/// Backward through one step with straight-through quantizers. On entry
/// `grad_cell` holds dL/dc' from later steps; on exit it holds dL/dc. Writes
/// dL/dh_prev to grad_h_prev and, if non-empty, dL/dx to grad_x.
void lstm_step_backward(const LstmStep& step, const LstmWeights& w, std::span<const double> grad_hidden,
                        std::span<double> grad_cell, std::span<double> grad_h_prev, std::span<double> grad_x,
                        const LstmGrads& grads);

/// out = W x + b with W laid out rows x cols followed by the bias.
std::vector<double> dense_forward(std::span<const double> x, std::span<const double> group, int rows);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace fxrnn::ops
