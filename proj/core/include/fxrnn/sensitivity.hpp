#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fxrnn/modelstore.hpp"
#include "fxrnn/train.hpp"

namespace fxrnn {

/// What a sensitivity row quantizes: one weight group, one signal group, or
/// every group at once (the "All" column).
enum class GroupKind { weight, signal, all };

std::string_view to_string(GroupKind kind);
GroupKind group_kind_from_string(std::string_view name);

struct SensitivityRow {
  std::string group;
  GroupKind kind = GroupKind::weight;
  int bits = 2;
  double direct_miss = 0.0;                 // percent, test split
  std::optional<double> retrained_miss;     // absent when retraining is off
};

struct SensitivityReport {
  std::string graph_id;
  std::string dataset_id;
  std::uint64_t seed = 0;
  double baseline_float_miss = 0.0;
  std::vector<SensitivityRow> rows;

  /// Rows of one kind at one bit-width, in report order.
  std::vector<SensitivityRow> select(GroupKind kind, int bits) const;
};

/// Retraining budget for one sensitivity row.
inline constexpr int kSensitivityEpochCap = 20;

/// Test miss rate with only `group` quantized at `bits`, everything else
/// float. Signal step sizes are fitted on the training split.
double direct_sensitivity(const MasterModel& model, const std::string& group, GroupKind kind, int bits,
                          const DatasetSplit& data);

/// As direct_sensitivity, then retrain_quantized restricted to that group
/// (epochs capped at kSensitivityEpochCap). Returns the retrained test miss.
double retrain_sensitivity(const MasterModel& model, const std::string& group, GroupKind kind, int bits,
                           const DatasetSplit& data, const TrainConfig& config);

struct SensitivityOptions {
  std::vector<int> bits{2};
  bool retrain = true;
  bool include_all = true;
  std::vector<std::string> weight_groups;  // empty: every weight group
  std::vector<std::string> signal_groups;  // empty: every signal group
  TrainConfig config;
};

/// Full table: for each bit-width, every selected weight group, every
/// selected signal group, then the "All" row (uniform full quantization).
SensitivityReport analyze_sensitivity(const MasterModel& model, const DatasetSplit& data,
                                      const SensitivityOptions& options, std::string dataset_id);

void write_sensitivity_csv(const SensitivityReport& report, std::ostream& out);
/// One block per kind and bit-width, groups as columns, D and R rows.
void write_sensitivity_table(const SensitivityReport& report, std::ostream& out);

struct BitAllocation {
  GroupBits bits;
  double miss = 0.0;              // percent, test split
  std::size_t packed_bytes = 0;   // payload plus header of the .fxrn file
};

/// Test miss rate with every group of `bits` quantized directly (no retrain).
/// Specs are fitted on the training split.
double direct_quantize_eval(const MasterModel& model, const GroupBits& bits, const DatasetSplit& data);

struct FullQuantization {
  MasterModel model;  // retrained master weights with specs attached
  BitAllocation allocation;
  double direct_miss = 0.0;
  std::vector<CurvePoint> curve;
  CostReport cost;
};

/// Joint retraining with every group quantized at its allocated bits.
/// Throws GraphError naming a group missing from `bits`.
FullQuantization full_quantization(const MasterModel& model, const GroupBits& bits, const DatasetSplit& data,
                                   const TrainConfig& config, double frame_rate);

struct EscalationStep {
  std::string group;
  GroupKind kind = GroupKind::weight;
  int bits = 0;        // after the increment
  double miss = 0.0;   // direct, validation split
};

struct Escalation {
  GroupBits bits;             // best allocation found
  double valid_miss = 0.0;    // its direct validation miss
  bool reached = false;       // target met within max_bits
  std::vector<EscalationStep> trace;
};

/// Greedy bit escalation. Each round tries +1 bit on every group still below
/// `max_bits`, ranking candidates by direct validation miss, and keeps the
/// best. Stops when the miss is at or below `target_miss` or no group can
/// grow. The trace has at most (max_bits - 2) * groups steps.
Escalation escalate_bits(const MasterModel& model, const GroupBits& initial, const DatasetSplit& data,
                         double target_miss, int max_bits);

void write_escalation_csv(const Escalation& escalation, std::ostream& out);

}  // namespace fxrnn
