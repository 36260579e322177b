#include "fxrnn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace fxrnn::ops {

namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

void require(bool ok, const char* what) {
  if (!ok) throw GraphError(what);
}

}  // namespace

std::vector<double> conv2d_forward(std::span<const double> input, Shape3 in, std::span<const double> weights,
                                   std::span<const double> bias, int maps, int kernel) {
  const int oh = in.height - kernel + 1;
  const int ow = in.width - kernel + 1;
  require(oh > 0 && ow > 0, "conv2d: kernel larger than input");
  require(input.size() == static_cast<std::size_t>(in.size()), "conv2d: input shape mismatch");
  require(weights.size() == static_cast<std::size_t>(maps) * in.channels * kernel * kernel,
          "conv2d: weight shape mismatch");
  require(bias.size() == static_cast<std::size_t>(maps), "conv2d: bias shape mismatch");

  std::vector<double> out(static_cast<std::size_t>(maps) * oh * ow);
  for (int m = 0; m < maps; ++m) {
    double* dst = out.data() + static_cast<std::size_t>(m) * oh * ow;
    std::fill(dst, dst + oh * ow, bias[m]);
    for (int c = 0; c < in.channels; ++c) {
      const double* plane = input.data() + static_cast<std::size_t>(c) * in.height * in.width;
      const double* kern = weights.data() + (static_cast<std::size_t>(m) * in.channels + c) * kernel * kernel;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const double wv = kern[ky * kernel + kx];
          for (int y = 0; y < oh; ++y) {
            const double* src = plane + (y + ky) * in.width + kx;
            double* row = dst + y * ow;
            for (int x = 0; x < ow; ++x) row[x] += wv * src[x];
          }
        }
      }
    }
  }
  return out;
}

void conv2d_backward(std::span<const double> input, Shape3 in, std::span<const double> weights, int maps,
                     int kernel, std::span<const double> grad_out, std::span<double> grad_weights,
                     std::span<double> grad_bias, std::span<double> grad_input) {
  const int oh = in.height - kernel + 1;
  const int ow = in.width - kernel + 1;
  require(grad_out.size() == static_cast<std::size_t>(maps) * oh * ow, "conv2d: gradient shape mismatch");
  require(grad_input.empty() || grad_input.size() == input.size(), "conv2d: input gradient shape mismatch");
  for (int m = 0; m < maps; ++m) {
    const double* go = grad_out.data() + static_cast<std::size_t>(m) * oh * ow;
    double gb = 0.0;
    for (int i = 0; i < oh * ow; ++i) gb += go[i];
    grad_bias[m] += gb;
    for (int c = 0; c < in.channels; ++c) {
      const std::size_t plane_off = static_cast<std::size_t>(c) * in.height * in.width;
      const double* plane = input.data() + plane_off;
      const std::size_t kern_off = (static_cast<std::size_t>(m) * in.channels + c) * kernel * kernel;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          double acc = 0.0;
          const double wv = weights[kern_off + ky * kernel + kx];
          for (int y = 0; y < oh; ++y) {
            const double* src = plane + (y + ky) * in.width + kx;
            const double* g = go + y * ow;
            for (int x = 0; x < ow; ++x) acc += g[x] * src[x];
            if (!grad_input.empty()) {
              double* gi = grad_input.data() + plane_off + (y + ky) * in.width + kx;
              for (int x = 0; x < ow; ++x) gi[x] += wv * g[x];
            }
          }
          grad_weights[kern_off + ky * kernel + kx] += acc;
        }
      }
    }
  }
}

PoolResult maxpool2d_forward(std::span<const double> input, Shape3 in, int window, int stride) {
  require(input.size() == static_cast<std::size_t>(in.size()), "maxpool2d: input shape mismatch");
  require(window >= 1 && stride >= 1, "maxpool2d: bad window");
  auto out_dim = [&](int d) { return d < window ? 1 : (d - window) / stride + 1; };
  PoolResult r;
  r.shape = {in.channels, out_dim(in.height), out_dim(in.width)};
  r.output.resize(static_cast<std::size_t>(r.shape.size()));
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (int c = 0; c < in.channels; ++c) {
    const std::size_t plane = static_cast<std::size_t>(c) * in.height * in.width;
    for (int oy = 0; oy < r.shape.height; ++oy) {
      const int y0 = oy * stride;
      const int y1 = std::min(y0 + window, in.height);
      for (int ox = 0; ox < r.shape.width; ++ox, ++o) {
        const int x0 = ox * stride;
        const int x1 = std::min(x0 + window, in.width);
        std::size_t best = plane + static_cast<std::size_t>(y0) * in.width + x0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            const std::size_t idx = plane + static_cast<std::size_t>(y) * in.width + x;
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.output[o] = input[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

void maxpool2d_backward(std::span<const double> grad_out, std::span<const std::uint32_t> argmax,
                        std::span<double> grad_input) {
  require(grad_out.size() == argmax.size(), "maxpool2d: gradient shape mismatch");
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_input[argmax[i]] += grad_out[i];
}

LstmWeights LstmWeights::from_groups(std::span<const double> input_group, std::span<const double> recurrent_group,
                                     int units, int inputs) {
  const auto n = static_cast<std::size_t>(units);
  const auto m = static_cast<std::size_t>(inputs);
  require(input_group.size() == 4 * n * m, "lstm: input weight group size mismatch");
  require(recurrent_group.size() == 4 * n * n + 7 * n, "lstm: recurrent weight group size mismatch");
  LstmWeights w;
  w.units = units;
  w.inputs = inputs;
  w.input = input_group;
  w.recurrent = recurrent_group.first(4 * n * n);
  w.peephole = recurrent_group.subspan(4 * n * n, 3 * n);
  w.bias = recurrent_group.subspan(4 * n * n + 3 * n, 4 * n);
  return w;
}

LstmStep lstm_step(std::span<const double> x, const LstmState& state, const LstmWeights& w,
                   const LstmSignals& signals) {
  const int n = w.units;
  const int m = w.inputs;
  require(x.size() == static_cast<std::size_t>(m), "lstm: input size mismatch");
  require(state.hidden.size() == static_cast<std::size_t>(n) && state.cell.size() == static_cast<std::size_t>(n),
          "lstm: state size mismatch");
  for (double v : state.cell) {
    if (!std::isfinite(v)) throw GraphError("lstm: non-finite state");
  }

  LstmStep s;
  s.x.assign(x.begin(), x.end());
  s.h_prev = state.hidden;
  s.c_prev = state.cell;
  std::vector<double> pre(w.bias.begin(), w.bias.end());
  for (int r = 0; r < 4 * n; ++r) {
    double acc = 0.0;
    const double* wi = w.input.data() + static_cast<std::size_t>(r) * m;
    for (int k = 0; k < m; ++k) acc += wi[k] * x[k];
    const double* wr = w.recurrent.data() + static_cast<std::size_t>(r) * n;
    for (int k = 0; k < n; ++k) acc += wr[k] * s.h_prev[k];
    pre[r] += acc;
  }

  auto gate_q = [&](double v) { return signals.gate ? quantize_value(v, *signals.gate) : v; };
  auto sym_q = [&](double v) { return signals.symmetric ? quantize_value(v, *signals.symmetric) : v; };

  s.raw.resize(4 * n);
  s.gates.resize(4 * n);
  s.cell.resize(n);
  s.tanh_cell.resize(n);
  s.hidden.resize(n);
  for (int j = 0; j < n; ++j) {
    const double ri = sigmoid(pre[j] + w.peephole[j] * s.c_prev[j]);
    const double rf = sigmoid(pre[n + j] + w.peephole[n + j] * s.c_prev[j]);
    const double rg = std::tanh(pre[2 * n + j]);
    s.raw[j] = ri;
    s.raw[n + j] = rf;
    s.raw[2 * n + j] = rg;
    s.gates[j] = gate_q(ri);
    s.gates[n + j] = gate_q(rf);
    s.gates[2 * n + j] = sym_q(rg);
    s.cell[j] = s.gates[n + j] * s.c_prev[j] + s.gates[j] * s.gates[2 * n + j];
    const double ro = sigmoid(pre[3 * n + j] + w.peephole[2 * n + j] * s.cell[j]);
    s.raw[3 * n + j] = ro;
    s.gates[3 * n + j] = gate_q(ro);
    s.tanh_cell[j] = std::tanh(s.cell[j]);
    s.hidden[j] = sym_q(s.gates[3 * n + j] * s.tanh_cell[j]);
  }
  return s;
}

void lstm_step_backward(const LstmStep& s, const LstmWeights& w, std::span<const double> grad_hidden,
                        std::span<double> grad_cell, std::span<double> grad_h_prev, std::span<double> grad_x,
                        const LstmGrads& grads) {
  const int n = w.units;
  const int m = w.inputs;
  std::vector<double> da(4 * n);
  auto peep = grads.peephole(n);
  for (int j = 0; j < n; ++j) {
    const double i = s.gates[j];
    const double f = s.gates[n + j];
    const double g = s.gates[2 * n + j];
    const double o = s.gates[3 * n + j];
    const double dh = grad_hidden[j];
    const double d_o = dh * s.tanh_cell[j];
    double dc = grad_cell[j] + dh * o * (1.0 - s.tanh_cell[j] * s.tanh_cell[j]);
    const double ro = s.raw[3 * n + j];
    const double da_o = d_o * ro * (1.0 - ro);
    dc += da_o * w.peephole[2 * n + j];
    const double ri = s.raw[j];
    const double rf = s.raw[n + j];
    const double rg = s.raw[2 * n + j];
    const double da_i = dc * g * ri * (1.0 - ri);
    const double da_f = dc * s.c_prev[j] * rf * (1.0 - rf);
    const double da_g = dc * i * (1.0 - rg * rg);
    da[j] = da_i;
    da[n + j] = da_f;
    da[2 * n + j] = da_g;
    da[3 * n + j] = da_o;
    peep[j] += da_i * s.c_prev[j];
    peep[n + j] += da_f * s.c_prev[j];
    peep[2 * n + j] += da_o * s.cell[j];
    grad_cell[j] = dc * f + da_i * w.peephole[j] + da_f * w.peephole[n + j];
  }

  auto grad_rec = grads.recurrent_matrix(n);
  auto grad_bias = grads.bias(n);
  std::fill(grad_h_prev.begin(), grad_h_prev.end(), 0.0);
  if (!grad_x.empty()) std::fill(grad_x.begin(), grad_x.end(), 0.0);
  for (int r = 0; r < 4 * n; ++r) {
    const double d = da[r];
    grad_bias[r] += d;
    if (d == 0.0) continue;
    double* gi = grads.input.data() + static_cast<std::size_t>(r) * m;
    const double* wi = w.input.data() + static_cast<std::size_t>(r) * m;
    for (int k = 0; k < m; ++k) {
      gi[k] += d * s.x[k];
      if (!grad_x.empty()) grad_x[k] += d * wi[k];
    }
    double* gr = grad_rec.data() + static_cast<std::size_t>(r) * n;
    const double* wr = w.recurrent.data() + static_cast<std::size_t>(r) * n;
    for (int k = 0; k < n; ++k) {
      gr[k] += d * s.h_prev[k];
      grad_h_prev[k] += d * wr[k];
    }
  }
}

std::vector<double> dense_forward(std::span<const double> x, std::span<const double> group, int rows) {
  const auto cols = x.size();
  require(group.size() == static_cast<std::size_t>(rows) * (cols + 1), "dense: weight shape mismatch");
  std::vector<double> out(rows);
  const double* bias = group.data() + static_cast<std::size_t>(rows) * cols;
  for (int r = 0; r < rows; ++r) {
    double acc = bias[r];
    const double* wr = group.data() + static_cast<std::size_t>(r) * cols;
    for (std::size_t k = 0; k < cols; ++k) acc += wr[k] * x[k];
    out[r] = acc;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace fxrnn::ops
