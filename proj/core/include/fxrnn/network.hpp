#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fxrnn/data.hpp"
#include "fxrnn/layers.hpp"
#include "fxrnn/model.hpp"

namespace fxrnn {

/// floating: master weights, no signal quantization. quantized: every group
/// carrying a QuantSpec is quantized (weights once per pass, signals at every
/// step).
enum class Mode { floating, quantized };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view name);

/// Collects pre-quantization values of selected signal groups.
class ActivationRecorder {
 public:
  ActivationRecorder(const std::vector<std::string>& groups, std::uint64_t seed,
                     std::size_t capacity = ActivationStats::kDefaultCapacity);

  bool wants(const std::string& group) const { return stats_.contains(group); }
  void record(const std::string& group, std::span<const double> values);
  const ActivationStats& stats(const std::string& group) const;

 private:
  std::map<std::string, ActivationStats> stats_;
};

/// Intermediate values of one sequence pass, retained for backpropagation.
struct ForwardTrace {
  struct Frame {
    std::vector<std::vector<double>> acts;  // acts[0] = input, acts[l+1] = output of frame layer l
    std::vector<std::vector<std::uint32_t>> argmax;
  };

  std::shared_ptr<const GroupArrays> weights;  // the weights the pass used
  std::vector<Frame> frames;
  std::vector<ops::LstmStep> steps;
  std::vector<std::vector<double>> posteriors;  // softmax output at every step

  const std::vector<double>& posterior() const { return posteriors.back(); }
  /// argmax of the final posterior; ties resolve to the lowest class index.
  int predicted() const;
};

struct ForwardOptions {
  Mode mode = Mode::floating;
  /// In quantized mode, require a QuantSpec for every weight and signal group.
  bool strict = false;
  /// Keep per-frame activations and LSTM steps (needed for backward).
  bool keep_trace = true;
  ActivationRecorder* recorder = nullptr;
};

/// Weights a forward pass in `mode` would use: grid values for groups with a
/// spec in quantized mode, master values otherwise.
GroupArrays effective_weights(const MasterModel& model, Mode mode, bool strict = false);

ForwardTrace run_forward(const MasterModel& model, std::shared_ptr<const GroupArrays> weights,
                         const SequenceSample& sample, const ForwardOptions& options);

ForwardTrace trace_sequence(const MasterModel& model, const SequenceSample& sample, Mode mode, bool strict = false);

/// Class posterior at the final frame.
std::vector<double> forward_sequence(const MasterModel& model, const SequenceSample& sample, Mode mode,
                                     bool strict = false);

/// Zero-filled arrays shaped like the model's weight groups.
GroupArrays zero_gradients(const MasterModel& model);

/// Cross-entropy at the final frame, -log p[label].
double sequence_loss(const ForwardTrace& trace, int label);

/// Adds loss_weight * dL/dw for every weight group to `grads`, using
/// straight-through quantizers. Only the last `bptt_window` steps are
/// unrolled (0 = the whole sequence).
void accumulate_gradients(const MasterModel& model, const ForwardTrace& trace, int label, double loss_weight,
                          int bptt_window, GroupArrays& grads);

GroupArrays backward_sequence(const MasterModel& model, const ForwardTrace& trace, int label,
                              double loss_weight = 1.0, int bptt_window = 0);

}  // namespace fxrnn
