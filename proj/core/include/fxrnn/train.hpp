#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "fxrnn/data.hpp"
#include "fxrnn/model.hpp"
#include "fxrnn/network.hpp"

namespace fxrnn {

/// Training diverged (non-finite loss or weights).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { adadelta, nesterov };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view name);

/// Training hyper-parameters.
///
/// The learning rate halves whenever validation fails to improve for
/// `patience` consecutive epochs and training stops once it drops below
/// `final_lr`. With AdaDelta the rate acts as a relative scale
/// (lr / initial_lr) on the AdaDelta step; with Nesterov it is the absolute
/// step size.
struct TrainConfig {
  double initial_lr = 1e-5;
  double final_lr = 1e-7;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::adadelta;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;
  int max_epochs = 100;
  int patience = 5;
  std::uint64_t seed = 1;
  int batch_streams = 8;
  int bptt_window = 64;

  void validate() const;
};

struct AdaDeltaState {
  std::vector<double> mean_sq_grad;
  std::vector<double> mean_sq_delta;

  explicit AdaDeltaState(std::size_t n = 0) : mean_sq_grad(n, 0.0), mean_sq_delta(n, 0.0) {}
};

/// One AdaDelta step: writes the weight delta for `grad` into `delta` and
/// updates the running averages.
void adadelta_update(std::span<const double> grad, AdaDeltaState& state, double rho, double eps,
                     std::span<double> delta);

/// Per-group optimizer state for a model's weight arrays.
class Optimizer {
 public:
  Optimizer(const MasterModel& model, const TrainConfig& config);
  /// Applies one update computed from `grads` at learning rate `lr`.
  void step(GroupArrays& weights, const GroupArrays& grads, double lr);

 private:
  TrainConfig config_;
  std::map<std::string, AdaDeltaState> adadelta_;
  GroupArrays velocity_;
};

struct CurvePoint {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_miss = 0.0;
  double lr = 0.0;
};

void write_curve_csv(std::span<const CurvePoint> curve, std::ostream& out);

struct TrainResult {
  MasterModel model;  // weights with the lowest validation miss rate seen
  std::vector<CurvePoint> curve;
  double best_valid_miss = 0.0;
  int best_epoch = 0;
};

struct EvalResult {
  double miss = 0.0;  // percent
  double mean_loss = 0.0;
};

/// Miss rate (%) of argmax predictions at the final frame. Throws DataError
/// on an empty split.
double evaluate(const MasterModel& model, std::span<const SequenceSample> samples, Mode mode);
EvalResult evaluate_detailed(const MasterModel& model, std::span<const SequenceSample> samples, Mode mode);

/// Float training with early stopping on validation miss rate.
TrainResult train_float(const MasterModel& model, const DatasetSplit& data, const TrainConfig& config);

/// Groups quantized during retraining, with their bit-widths.
struct RetrainPlan {
  GroupBits groups;
  TrainConfig config;
};

/// Fits QuantSpecs for `bits` on `model`: weights by L2 search on the master
/// weights, bounded signals analytically, unbounded signals by L2 search on
/// activations recorded over `samples` in float mode.
void attach_quant_specs(MasterModel& model, const GroupBits& bits, std::span<const SequenceSample> samples);

struct RetrainResult {
  MasterModel model;  // master weights plus the plan's QuantSpecs
  std::vector<CurvePoint> curve;
  double valid_miss = 0.0;
  double test_miss = 0.0;
};

/// Retraining in the quantization domain: forward passes quantize the plan's
/// groups, straight-through gradients update the master weights, and weight
/// step sizes are refit after every epoch. Specs for groups outside the plan
/// are dropped. Throws GraphError if a plan group has no QuantSpec.
RetrainResult retrain_quantized(const MasterModel& model, const RetrainPlan& plan, const DatasetSplit& data);

}  // namespace fxrnn
