#include "fxrnn/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace fxrnn {

std::string_view to_string(GroupKind kind) {
  switch (kind) {
    case GroupKind::weight:
      return "weight";
    case GroupKind::signal:
      return "signal";
    case GroupKind::all:
      return "all";
  }
  return "?";
}

GroupKind group_kind_from_string(std::string_view name) {
  if (name == "weight") return GroupKind::weight;
  if (name == "signal") return GroupKind::signal;
  if (name == "all") return GroupKind::all;
  throw GraphError("unknown group kind '" + std::string(name) + "'");
}

std::vector<SensitivityRow> SensitivityReport::select(GroupKind kind, int bits) const {
  std::vector<SensitivityRow> out;
  for (const auto& r : rows) {
    if (r.kind == kind && r.bits == bits) out.push_back(r);
  }
  return out;
}

namespace {

GroupBits single_group(const MasterModel& model, const std::string& group, GroupKind kind, int bits) {
  GroupBits gb;
  switch (kind) {
    case GroupKind::weight:
      model.graph.weight_group(group);
      gb.weights[group] = bits;
      break;
    case GroupKind::signal:
      model.graph.signal_group(group);
      gb.signals[group] = bits;
      break;
    case GroupKind::all:
      gb = GroupBits::uniform(model.graph, bits);
      break;
  }
  return gb;
}

MasterModel with_specs(const MasterModel& model, const GroupBits& bits, const DatasetSplit& data) {
  MasterModel q = model;
  q.clear_specs();
  attach_quant_specs(q, bits, data.train);
  return q;
}

TrainConfig capped(TrainConfig config) {
  config.max_epochs = std::min(config.max_epochs, kSensitivityEpochCap);
  return config;
}

}  // namespace

double direct_sensitivity(const MasterModel& model, const std::string& group, GroupKind kind, int bits,
                          const DatasetSplit& data) {
  const auto q = with_specs(model, single_group(model, group, kind, bits), data);
  return evaluate(q, data.test, Mode::quantized);
}

double retrain_sensitivity(const MasterModel& model, const std::string& group, GroupKind kind, int bits,
                           const DatasetSplit& data, const TrainConfig& config) {
  const auto gb = single_group(model, group, kind, bits);
  const auto q = with_specs(model, gb, data);
  return retrain_quantized(q, {gb, capped(config)}, data).test_miss;
}

double direct_quantize_eval(const MasterModel& model, const GroupBits& bits, const DatasetSplit& data) {
  return evaluate(with_specs(model, bits, data), data.test, Mode::quantized);
}

SensitivityReport analyze_sensitivity(const MasterModel& model, const DatasetSplit& data,
                                      const SensitivityOptions& options, std::string dataset_id) {
  if (options.bits.empty()) throw GraphError("sensitivity needs at least one bit-width");
  SensitivityReport report;
  report.graph_id = model.graph.id;
  report.dataset_id = std::move(dataset_id);
  report.seed = options.config.seed;
  report.baseline_float_miss = evaluate(model, data.test, Mode::floating);

  std::vector<std::string> weights = options.weight_groups;
  if (weights.empty()) {
    for (const auto& g : model.graph.weight_groups()) weights.push_back(g.name);
  }
  std::vector<std::string> signals = options.signal_groups;
  if (signals.empty()) {
    for (const auto& g : model.graph.signal_groups()) signals.push_back(g.name);
  }

  for (int bits : options.bits) {
    auto run = [&](const std::string& group, GroupKind kind) {
      SensitivityRow row{group, kind, bits, direct_sensitivity(model, group, kind, bits, data), std::nullopt};
      if (options.retrain) row.retrained_miss = retrain_sensitivity(model, group, kind, bits, data, options.config);
      report.rows.push_back(std::move(row));
    };
    for (const auto& g : weights) run(g, GroupKind::weight);
    for (const auto& g : signals) run(g, GroupKind::signal);
    if (options.include_all) run("All", GroupKind::all);
  }
  return report;
}

void write_sensitivity_csv(const SensitivityReport& report, std::ostream& out) {
  out << "group,kind,bits,direct_miss,retrained_miss\n";
  out << std::setprecision(10);
  out << "float,baseline,," << report.baseline_float_miss << ",\n";
  for (const auto& r : report.rows) {
    out << r.group << ',' << to_string(r.kind) << ',' << r.bits << ',' << r.direct_miss << ',';
    if (r.retrained_miss) out << *r.retrained_miss;
    out << '\n';
  }
}

void write_sensitivity_table(const SensitivityReport& report, std::ostream& out) {
  out << "Sensitivity of " << report.graph_id << " on " << report.dataset_id << " (seed " << report.seed
      << "), test miss rate %\n";
  out << "Float baseline: " << std::fixed << std::setprecision(2) << report.baseline_float_miss << "\n";

  std::vector<int> bit_list;
  for (const auto& r : report.rows) {
    if (std::find(bit_list.begin(), bit_list.end(), r.bits) == bit_list.end()) bit_list.push_back(r.bits);
  }
  constexpr int label_width = 4;
  for (int bits : bit_list) {
    for (GroupKind kind : {GroupKind::weight, GroupKind::signal}) {
      auto rows = report.select(kind, bits);
      // The "All" column closes the signal table.
      if (kind == GroupKind::signal) {
        const auto all = report.select(GroupKind::all, bits);
        rows.insert(rows.end(), all.begin(), all.end());
      }
      if (rows.empty()) continue;
      std::size_t width = 8;
      for (const auto& r : rows) width = std::max(width, r.group.size() + 2);
      const int w = static_cast<int>(width);

      out << '\n' << (kind == GroupKind::weight ? "Weight" : "Signal") << " groups, " << bits << " bits\n";
      out << std::setw(label_width) << "";
      for (const auto& r : rows) out << std::setw(w) << r.group;
      out << '\n' << std::setw(label_width) << std::left << "D" << std::right;
      for (const auto& r : rows) out << std::setw(w) << r.direct_miss;
      out << '\n';
      const bool any_retrained =
          std::any_of(rows.begin(), rows.end(), [](const SensitivityRow& r) { return r.retrained_miss.has_value(); });
      if (any_retrained) {
        out << std::setw(label_width) << std::left << "R" << std::right;
        for (const auto& r : rows) {
          if (r.retrained_miss) {
            out << std::setw(w) << *r.retrained_miss;
          } else {
            out << std::setw(w) << "-";
          }
        }
        out << '\n';
      }
    }
  }
  out << std::defaultfloat;
}

FullQuantization full_quantization(const MasterModel& model, const GroupBits& bits, const DatasetSplit& data,
                                   const TrainConfig& config, double frame_rate) {
  bits.require_complete(model.graph);
  bits.require_known(model.graph);
  const auto q = with_specs(model, bits, data);

  FullQuantization out;
  out.direct_miss = evaluate(q, data.test, Mode::quantized);
  auto retrained = retrain_quantized(q, {bits, config}, data);
  out.model = std::move(retrained.model);
  out.curve = std::move(retrained.curve);
  out.allocation.bits = bits;
  out.allocation.miss = retrained.test_miss;
  out.cost = cost_report(model.graph, bits.weights, frame_rate);
  out.cost.header_bytes = packed_header_bytes(out.model);
  out.allocation.packed_bytes = out.cost.packed_bytes + out.cost.header_bytes;
  return out;
}

namespace {

double direct_valid_miss(const MasterModel& model, const GroupBits& bits, const DatasetSplit& data) {
  return evaluate(with_specs(model, bits, data), data.valid, Mode::quantized);
}

}  // namespace

Escalation escalate_bits(const MasterModel& model, const GroupBits& initial, const DatasetSplit& data,
                         double target_miss, int max_bits) {
  initial.require_known(model.graph);
  level_count(max_bits);

  Escalation esc;
  esc.bits = initial;
  esc.valid_miss = direct_valid_miss(model, initial, data);
  GroupBits current = initial;
  double current_miss = esc.valid_miss;

  while (current_miss > target_miss) {
    struct Candidate {
      std::string group;
      GroupKind kind;
      GroupBits bits;
      double miss;
    };
    std::optional<Candidate> best;
    auto consider = [&](const std::string& group, GroupKind kind, const std::map<std::string, int>& side) {
      if (side.at(group) >= max_bits) return;
      GroupBits trial = current;
      (kind == GroupKind::weight ? trial.weights : trial.signals)[group] += 1;
      const double miss = direct_valid_miss(model, trial, data);
      if (!best || miss < best->miss) best = Candidate{group, kind, std::move(trial), miss};
    };
    for (const auto& [name, b] : current.weights) consider(name, GroupKind::weight, current.weights);
    for (const auto& [name, b] : current.signals) consider(name, GroupKind::signal, current.signals);
    if (!best) break;

    const auto& side = best->kind == GroupKind::weight ? best->bits.weights : best->bits.signals;
    esc.trace.push_back({best->group, best->kind, side.at(best->group), best->miss});
    current = std::move(best->bits);
    current_miss = best->miss;
    if (current_miss < esc.valid_miss) {
      esc.bits = current;
      esc.valid_miss = current_miss;
    }
  }
  esc.reached = esc.valid_miss <= target_miss;
  return esc;
}

void write_escalation_csv(const Escalation& escalation, std::ostream& out) {
  out << "step,group,kind,bits,valid_miss\n";
  out << std::setprecision(10);
  int step = 0;
  for (const auto& s : escalation.trace) {
    out << ++step << ',' << s.group << ',' << to_string(s.kind) << ',' << s.bits << ',' << s.miss << '\n';
  }
}

}  // namespace fxrnn
