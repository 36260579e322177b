#include "fxrnn/network.hpp"

#include <algorithm>
#include <cmath>

namespace fxrnn {

std::string_view to_string(Mode mode) { return mode == Mode::floating ? "float" : "quantized"; }

Mode mode_from_string(std::string_view name) {
  if (name == "float" || name == "floating") return Mode::floating;
  if (name == "quantized" || name == "fixed") return Mode::quantized;
  throw GraphError("unknown mode '" + std::string(name) + "' (expected float or quantized)");
}

ActivationRecorder::ActivationRecorder(const std::vector<std::string>& groups, std::uint64_t seed,
                                       std::size_t capacity) {
  std::uint64_t salt = 0;
  for (const auto& g : groups) stats_.emplace(g, ActivationStats(g, seed + 0x9e3779b97f4a7c15ULL * ++salt, capacity));
}

void ActivationRecorder::record(const std::string& group, std::span<const double> values) {
  const auto it = stats_.find(group);
  if (it != stats_.end()) it->second.add(values);
}

const ActivationStats& ActivationRecorder::stats(const std::string& group) const {
  const auto it = stats_.find(group);
  if (it == stats_.end()) throw GraphError("no activations recorded for '" + group + "'");
  return it->second;
}

int ForwardTrace::predicted() const {
  const auto& p = posterior();
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

GroupArrays effective_weights(const MasterModel& model, Mode mode, bool strict) {
  GroupArrays out = model.weights;
  if (mode == Mode::floating) return out;
  if (strict) {
    for (const auto& g : model.graph.weight_groups()) {
      if (!model.weight_specs.contains(g.name)) throw GraphError("no QuantSpec for weight group '" + g.name + "'");
    }
  }
  for (const auto& [name, spec] : model.weight_specs) {
    auto it = out.find(name);
    if (it == out.end()) throw GraphError("QuantSpec for unknown weight group '" + name + "'");
    for (double& v : it->second) v = quantize_value(v, spec);
  }
  return out;
}

namespace {

// Signal quantizers resolved for one pass.
struct SignalPlan {
  const QuantSpec* input = nullptr;
  std::vector<const QuantSpec*> layer;  // per layer
  QuantSpec gate;                       // unit grid for LSTM gates
  bool has_gate = false;
};

SignalPlan resolve_signals(const MasterModel& model, Mode mode, bool strict) {
  SignalPlan plan;
  plan.layer.assign(model.graph.layers.size(), nullptr);
  if (mode == Mode::floating) return plan;
  auto find = [&](const std::string& group) -> const QuantSpec* {
    if (group.empty()) return nullptr;
    const auto it = model.signal_specs.find(group);
    if (it == model.signal_specs.end()) {
      if (strict) throw GraphError("no QuantSpec for signal group '" + group + "'");
      return nullptr;
    }
    return &it->second;
  };
  plan.input = find(model.graph.input_signal_group);
  for (std::size_t i = 0; i < model.graph.layers.size(); ++i) {
    const auto& l = model.graph.layers[i];
    plan.layer[i] = find(l.signal_group);
    if (l.kind == LayerKind::lstm && plan.layer[i] != nullptr) {
      plan.gate = fixed_step_size(QuantKind::signal_bounded_unit, plan.layer[i]->bits).snapped_to_f32();
      plan.gate.group = l.signal_group;
      plan.has_gate = true;
    }
  }
  return plan;
}

void quantize_in_place(std::vector<double>& v, const QuantSpec* spec) {
  if (spec == nullptr) return;
  for (double& x : v) x = quantize_value(x, *spec);
}

}  // namespace

ForwardTrace run_forward(const MasterModel& model, std::shared_ptr<const GroupArrays> weights,
                         const SequenceSample& sample, const ForwardOptions& options) {
  const auto& graph = model.graph;
  if (sample.frame_shape != graph.input_shape) {
    throw DataError("sample '" + sample.id + "' frame shape " + to_string(sample.frame_shape) +
                    " does not match graph input " + to_string(graph.input_shape));
  }
  sample.validate(graph.output_classes);
  const SignalPlan signals = resolve_signals(model, options.mode, options.strict);
  const auto in_shapes = graph.input_shapes();
  const int li = graph.lstm_index();
  const auto& lstm = graph.layers[li];
  const auto& dense = graph.layers[li + 1];
  const auto lw = ops::LstmWeights::from_groups(weights->at(lstm.input_weight_group), weights->at(lstm.weight_group),
                                                lstm.units, in_shapes[li].size());
  const auto& out_group = weights->at(dense.weight_group);
  ops::LstmSignals lstm_signals;
  if (signals.layer[li] != nullptr) {
    lstm_signals.gate = &signals.gate;
    lstm_signals.symmetric = signals.layer[li];
  }

  ForwardTrace trace;
  trace.weights = weights;
  ops::LstmState state = ops::LstmState::zeros(lstm.units);
  ActivationRecorder* rec = options.recorder;

  for (int t = 0; t < sample.frames; ++t) {
    ForwardTrace::Frame frame;
    const auto raw = sample.frame(t);
    std::vector<double> cur(raw.begin(), raw.end());
    if (rec != nullptr && !graph.input_signal_group.empty()) rec->record(graph.input_signal_group, cur);
    quantize_in_place(cur, signals.input);
    for (int l = 0; l < li; ++l) {
      const auto& layer = graph.layers[l];
      std::vector<double> next;
      std::vector<std::uint32_t> argmax;
      switch (layer.kind) {
        case LayerKind::conv2d: {
          const auto& g = weights->at(layer.weight_group);
          const auto n_w = g.size() - static_cast<std::size_t>(layer.out_channels);
          next = ops::conv2d_forward(cur, in_shapes[l], std::span(g).first(n_w), std::span(g).subspan(n_w),
                                     layer.out_channels, layer.kernel);
          break;
        }
        case LayerKind::relu:
          next = cur;
          for (double& v : next) v = std::max(v, 0.0);
          break;
        case LayerKind::maxpool2d: {
          auto pooled = ops::maxpool2d_forward(cur, in_shapes[l], layer.window, layer.stride);
          next = std::move(pooled.output);
          argmax = std::move(pooled.argmax);
          break;
        }
        default:
          throw GraphError("unexpected frame layer");
      }
      if (!layer.signal_group.empty()) {
        if (rec != nullptr) rec->record(layer.signal_group, next);
        quantize_in_place(next, signals.layer[l]);
      }
      if (options.keep_trace) {
        frame.acts.push_back(std::move(cur));
        frame.argmax.push_back(std::move(argmax));
      }
      cur = std::move(next);
    }

    auto step = ops::lstm_step(cur, state, lw, lstm_signals);
    if (rec != nullptr && !lstm.signal_group.empty()) rec->record(lstm.signal_group, step.hidden);
    state.hidden = step.hidden;
    state.cell = step.cell;
    trace.posteriors.push_back(ops::softmax(ops::dense_forward(step.hidden, out_group, dense.units)));
    if (options.keep_trace) {
      frame.acts.push_back(std::move(cur));
      trace.frames.push_back(std::move(frame));
      trace.steps.push_back(std::move(step));
    }
  }
  return trace;
}

ForwardTrace trace_sequence(const MasterModel& model, const SequenceSample& sample, Mode mode, bool strict) {
  auto weights = std::make_shared<const GroupArrays>(effective_weights(model, mode, strict));
  ForwardOptions opts;
  opts.mode = mode;
  opts.strict = strict;
  return run_forward(model, std::move(weights), sample, opts);
}

std::vector<double> forward_sequence(const MasterModel& model, const SequenceSample& sample, Mode mode,
                                     bool strict) {
  auto weights = std::make_shared<const GroupArrays>(effective_weights(model, mode, strict));
  ForwardOptions opts;
  opts.mode = mode;
  opts.strict = strict;
  opts.keep_trace = false;
  return run_forward(model, std::move(weights), sample, opts).posterior();
}

GroupArrays zero_gradients(const MasterModel& model) {
  GroupArrays out;
  for (const auto& [name, w] : model.weights) out[name].assign(w.size(), 0.0);
  return out;
}

double sequence_loss(const ForwardTrace& trace, int label) {
  return -std::log(std::max(trace.posterior()[static_cast<std::size_t>(label)], 1e-300));
}

void accumulate_gradients(const MasterModel& model, const ForwardTrace& trace, int label, double loss_weight,
                          int bptt_window, GroupArrays& grads) {
  if (trace.steps.empty()) throw GraphError("backward needs a forward trace with retained activations");
  const auto& graph = model.graph;
  const auto& weights = *trace.weights;
  const int li = graph.lstm_index();
  const auto& lstm = graph.layers[li];
  const auto& dense = graph.layers[li + 1];
  const auto in_shapes = graph.input_shapes();
  const int n = lstm.units;
  const int m = in_shapes[li].size();
  const int k = dense.units;
  const int steps = static_cast<int>(trace.steps.size());

  const auto lw = ops::LstmWeights::from_groups(weights.at(lstm.input_weight_group), weights.at(lstm.weight_group), n, m);
  const ops::LstmGrads lg{grads.at(lstm.input_weight_group), grads.at(lstm.weight_group)};

  // Softmax cross-entropy at the final frame: dL/dlogits = p - onehot.
  const auto& last = trace.steps.back();
  std::vector<double> dlogits = trace.posterior();
  dlogits[static_cast<std::size_t>(label)] -= 1.0;
  for (double& v : dlogits) v *= loss_weight;

  const auto& wout = weights.at(dense.weight_group);
  auto& gout = grads.at(dense.weight_group);
  std::vector<double> dh(n, 0.0);
  for (int r = 0; r < k; ++r) {
    const double d = dlogits[r];
    gout[static_cast<std::size_t>(k) * n + r] += d;
    for (int j = 0; j < n; ++j) {
      gout[static_cast<std::size_t>(r) * n + j] += d * last.hidden[j];
      dh[j] += d * wout[static_cast<std::size_t>(r) * n + j];
    }
  }

  const bool has_frames = li > 0;
  std::vector<double> dc(n, 0.0);
  std::vector<double> dh_prev(n);
  std::vector<double> dx(has_frames ? m : 0);
  const int first = bptt_window > 0 ? std::max(0, steps - bptt_window) : 0;
  for (int t = steps - 1; t >= first; --t) {
    ops::lstm_step_backward(trace.steps[t], lw, dh, dc, dh_prev, dx, lg);
    dh.swap(dh_prev);
    if (!has_frames) continue;

    const auto& frame = trace.frames[t];
    std::vector<double> grad = dx;
    for (int l = li - 1; l >= 0; --l) {
      const auto& layer = graph.layers[l];
      const auto& input = frame.acts[l];
      std::vector<double> grad_in;
      switch (layer.kind) {
        case LayerKind::conv2d: {
          const auto& g = weights.at(layer.weight_group);
          auto& gg = grads.at(layer.weight_group);
          const auto n_w = g.size() - static_cast<std::size_t>(layer.out_channels);
          if (l > 0) grad_in.assign(input.size(), 0.0);
          ops::conv2d_backward(input, in_shapes[l], std::span(g).first(n_w), layer.out_channels, layer.kernel, grad,
                               std::span(gg).first(n_w), std::span(gg).subspan(n_w), grad_in);
          break;
        }
        case LayerKind::relu:
          grad_in = std::move(grad);
          for (std::size_t i = 0; i < grad_in.size(); ++i) {
            if (!(input[i] > 0.0)) grad_in[i] = 0.0;
          }
          break;
        case LayerKind::maxpool2d:
          grad_in.assign(input.size(), 0.0);
          ops::maxpool2d_backward(grad, frame.argmax[l], grad_in);
          break;
        default:
          throw GraphError("unexpected frame layer");
      }
      grad = std::move(grad_in);
    }
  }
}

GroupArrays backward_sequence(const MasterModel& model, const ForwardTrace& trace, int label, double loss_weight,
                              int bptt_window) {
  GroupArrays grads = zero_gradients(model);
  accumulate_gradients(model, trace, label, loss_weight, bptt_window, grads);
  return grads;
}

}  // namespace fxrnn
