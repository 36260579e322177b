#include "fxrnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

namespace fxrnn {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adadelta ? "adadelta" : "nesterov"; }

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "adadelta") return OptimizerKind::adadelta;
  if (name == "nesterov") return OptimizerKind::nesterov;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(final_lr > 0.0) || !(final_lr <= initial_lr)) throw std::invalid_argument("need 0 < final_lr <= initial_lr");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (max_epochs < 0) throw std::invalid_argument("max_epochs must be non-negative");
  if (batch_streams < 1) throw std::invalid_argument("batch_streams must be at least 1");
  if (bptt_window < 0) throw std::invalid_argument("bptt_window must be non-negative");
  if (!(adadelta_rho > 0.0 && adadelta_rho < 1.0) || !(adadelta_eps > 0.0)) {
    throw std::invalid_argument("AdaDelta needs 0 < rho < 1 and eps > 0");
  }
}

void adadelta_update(std::span<const double> grad, AdaDeltaState& state, double rho, double eps,
                     std::span<double> delta) {
  if (state.mean_sq_grad.size() != grad.size() || state.mean_sq_delta.size() != grad.size() ||
      delta.size() != grad.size()) {
    throw std::invalid_argument("AdaDelta accumulator shape mismatch");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i];
    double& eg2 = state.mean_sq_grad[i];
    double& edx2 = state.mean_sq_delta[i];
    eg2 = rho * eg2 + (1.0 - rho) * g * g;
    const double dx = -std::sqrt(edx2 + eps) / std::sqrt(eg2 + eps) * g;
    edx2 = rho * edx2 + (1.0 - rho) * dx * dx;
    delta[i] = dx;
  }
}

Optimizer::Optimizer(const MasterModel& model, const TrainConfig& config) : config_(config) {
  for (const auto& [name, w] : model.weights) {
    if (config_.optimizer == OptimizerKind::adadelta) {
      adadelta_.emplace(name, AdaDeltaState(w.size()));
    } else {
      velocity_[name].assign(w.size(), 0.0);
    }
  }
}

void Optimizer::step(GroupArrays& weights, const GroupArrays& grads, double lr) {
  for (auto& [name, w] : weights) {
    const auto& g = grads.at(name);
    if (config_.optimizer == OptimizerKind::adadelta) {
      std::vector<double> delta(w.size());
      adadelta_update(g, adadelta_.at(name), config_.adadelta_rho, config_.adadelta_eps, delta);
      const double scale = lr / config_.initial_lr;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * delta[i];
    } else {
      auto& v = velocity_.at(name);
      const double mu = config_.momentum;
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] - lr * g[i];
        w[i] += mu * v[i] - lr * g[i];
      }
    }
  }
}

void write_curve_csv(std::span<const CurvePoint> curve, std::ostream& out) {
  out << "epoch,train_loss,valid_miss,lr\n";
  out << std::setprecision(10);
  for (const auto& p : curve) out << p.epoch << ',' << p.train_loss << ',' << p.valid_miss << ',' << p.lr << '\n';
}

EvalResult evaluate_detailed(const MasterModel& model, std::span<const SequenceSample> samples, Mode mode) {
  if (samples.empty()) throw DataError("cannot evaluate on an empty split");
  auto weights = std::make_shared<const GroupArrays>(effective_weights(model, mode));
  ForwardOptions opts;
  opts.mode = mode;
  opts.keep_trace = false;
  std::size_t misses = 0;
  double loss = 0.0;
  for (const auto& s : samples) {
    const auto trace = run_forward(model, weights, s, opts);
    if (trace.predicted() != s.label) ++misses;
    loss += sequence_loss(trace, s.label);
  }
  const auto n = static_cast<double>(samples.size());
  return {100.0 * static_cast<double>(misses) / n, loss / n};
}

double evaluate(const MasterModel& model, std::span<const SequenceSample> samples, Mode mode) {
  return evaluate_detailed(model, samples, mode).miss;
}

namespace {

struct TrainingRun {
  MasterModel model;
  std::vector<CurvePoint> curve;
  double best_miss = 0.0;
  int best_epoch = 0;
};

double mean_train_loss(const MasterModel& model, std::span<const SequenceSample> samples, Mode mode) {
  return evaluate_detailed(model, samples, mode).mean_loss;
}

TrainingRun run_training(const MasterModel& start, const DatasetSplit& data, const TrainConfig& config, Mode mode,
                         const std::function<void(MasterModel&)>& after_epoch) {
  config.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.valid.empty()) throw DataError("validation split is empty");

  MasterModel model = start;
  Optimizer optimizer(model, config);
  double lr = config.initial_lr;

  const EvalResult first = evaluate_detailed(model, data.valid, mode);
  TrainingRun run;
  run.model = model;
  run.best_miss = first.miss;
  double best_loss = first.mean_loss;
  run.curve.push_back({0, mean_train_loss(model, data.train, mode), first.miss, lr});

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int stale = 0;
  const auto batch = static_cast<std::size_t>(config.batch_streams);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start_idx = 0; start_idx < order.size(); start_idx += batch) {
      const std::size_t end_idx = std::min(order.size(), start_idx + batch);
      auto weights = std::make_shared<const GroupArrays>(effective_weights(model, mode));
      ForwardOptions opts;
      opts.mode = mode;
      GroupArrays grads = zero_gradients(model);
      const double weight = 1.0 / static_cast<double>(end_idx - start_idx);
      for (std::size_t i = start_idx; i < end_idx; ++i) {
        const auto& s = data.train[order[i]];
        const auto trace = run_forward(model, weights, s, opts);
        loss_sum += sequence_loss(trace, s.label);
        accumulate_gradients(model, trace, s.label, weight, config.bptt_window, grads);
      }
      optimizer.step(model.weights, grads, lr);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss)) throw NumericError("training loss diverged at epoch " + std::to_string(epoch));
    for (const auto& [name, w] : model.weights) {
      for (double v : w) {
        if (!std::isfinite(v)) throw NumericError("non-finite weight in group '" + name + "'");
      }
    }
    if (after_epoch) after_epoch(model);

    const EvalResult v = evaluate_detailed(model, data.valid, mode);
    run.curve.push_back({epoch, train_loss, v.miss, lr});
    const bool better = v.miss < run.best_miss - 1e-9 ||
                        (std::fabs(v.miss - run.best_miss) <= 1e-9 && v.mean_loss < best_loss);
    if (better) {
      run.model = model;
      run.best_miss = v.miss;
      run.best_epoch = epoch;
      best_loss = v.mean_loss;
      stale = 0;
    } else if (++stale >= config.patience) {
      lr *= 0.5;
      stale = 0;
      if (lr < config.final_lr) break;
    }
  }
  return run;
}

}  // namespace

TrainResult train_float(const MasterModel& model, const DatasetSplit& data, const TrainConfig& config) {
  auto run = run_training(model, data, config, Mode::floating, {});
  return {std::move(run.model), std::move(run.curve), run.best_miss, run.best_epoch};
}

void attach_quant_specs(MasterModel& model, const GroupBits& bits, std::span<const SequenceSample> samples) {
  bits.require_known(model.graph);
  fit_weight_specs(model, bits.weights);

  std::vector<std::string> recorded;
  for (const auto& [name, b] : bits.signals) {
    const auto info = model.graph.signal_group(name);
    if (info.kind == QuantKind::signal_bounded_sym || info.kind == QuantKind::signal_bounded_unit) {
      QuantSpec spec = fixed_step_size(info.kind, b).snapped_to_f32();
      spec.group = name;
      model.signal_specs[name] = spec;
    } else {
      recorded.push_back(name);
    }
  }
  if (recorded.empty()) return;
  if (samples.empty()) throw DataError("fitting signal step sizes needs activation samples");

  ActivationRecorder recorder(recorded, model.seed);
  auto weights = std::make_shared<const GroupArrays>(model.weights);
  ForwardOptions opts;
  opts.mode = Mode::floating;
  opts.keep_trace = false;
  opts.recorder = &recorder;
  for (const auto& s : samples) run_forward(model, weights, s, opts);

  for (const auto& name : recorded) {
    const int b = bits.signals.at(name);
    const auto& stats = recorder.stats(name);
    const auto kind = model.graph.signal_group(name).kind;
    QuantSpec spec = kind == QuantKind::signal_unbounded ? optimize_relu_step_size(stats, b)
                                                          : optimize_step_size(stats.values(), b, kind);
    spec = spec.snapped_to_f32();
    spec.group = name;
    model.signal_specs[name] = spec;
  }
}

RetrainResult retrain_quantized(const MasterModel& model, const RetrainPlan& plan, const DatasetSplit& data) {
  plan.groups.require_known(model.graph);
  MasterModel start = model;
  start.clear_specs();
  for (const auto& [name, bits] : plan.groups.weights) {
    const auto it = model.weight_specs.find(name);
    if (it == model.weight_specs.end()) throw GraphError("no QuantSpec for weight group '" + name + "'");
    if (it->second.bits != bits) throw GraphError("QuantSpec of weight group '" + name + "' has the wrong bits");
    start.weight_specs[name] = it->second;
  }
  for (const auto& [name, bits] : plan.groups.signals) {
    const auto it = model.signal_specs.find(name);
    if (it == model.signal_specs.end()) throw GraphError("no QuantSpec for signal group '" + name + "'");
    if (it->second.bits != bits) throw GraphError("QuantSpec of signal group '" + name + "' has the wrong bits");
    start.signal_specs[name] = it->second;
  }

  const auto refit = [&plan](MasterModel& m) { fit_weight_specs(m, plan.groups.weights); };
  auto run = run_training(start, data, plan.config, Mode::quantized, refit);
  RetrainResult out;
  out.valid_miss = run.best_miss;
  out.test_miss = data.test.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : evaluate(run.model, data.test, Mode::quantized);
  out.model = std::move(run.model);
  out.curve = std::move(run.curve);
  return out;
}

}  // namespace fxrnn
