// fxrnn: train, quantize and inspect fixed-point gesture recognition models.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fxrnn/modelstore.hpp"
#include "fxrnn/sensitivity.hpp"

namespace fs = std::filesystem;
using namespace fxrnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  // data
  std::string preset{kAccelPreset};
  std::string data;
  bool synthetic = false;
  int per_class = 0;
  double noise = 0.05;
  std::vector<std::string> gestures{"1", "2", "3", "4", "5", "6", "7", "8"};
  std::string split = "test";
  std::uint64_t seed = 1;
  // training
  int epochs = 100;
  double initial_lr = 1e-5;
  double final_lr = 0.0;  // 0: 1e-8 for image presets, 1e-7 for accelerometer
  double momentum = 0.9;
  std::string optimizer = "adadelta";
  int patience = 5;
  int batch = 8;
  int bptt = 64;
  // quantization
  std::string model;
  std::string mode = "float";
  std::vector<int> bits{2};
  std::vector<std::string> groups;
  std::vector<std::string> alloc;
  bool escalate = false;
  double target_miss = 0.0;
  int max_bits = 4;
  bool no_retrain = false;
  double frame_rate = 0.0;
  double cache_kb = 128.0;
  // output
  std::string out = "fxrnn-out";
};

TrainConfig train_config(const Options& o, const NetworkGraph& graph) {
  TrainConfig c;
  c.initial_lr = o.initial_lr;
  c.final_lr = o.final_lr > 0 ? o.final_lr : (is_image_graph(graph) ? 1e-8 : 1e-7);
  c.momentum = o.momentum;
  c.optimizer = optimizer_from_string(o.optimizer);
  c.max_epochs = o.epochs;
  c.patience = o.patience;
  c.seed = o.seed;
  c.batch_streams = o.batch;
  c.bptt_window = o.bptt;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Data

struct LoadedData {
  DatasetSplit split;
  std::string id;
  std::vector<SequenceSample> all;  // canonical order, for the data manifest
};

LoadedData load_data(const Options& o, const NetworkGraph& graph) {
  if (o.synthetic == !o.data.empty()) throw UsageError("give exactly one of --data PATH or --synthetic");
  LoadedData out;
  const bool image = is_image_graph(graph);
  if (o.synthetic) {
    if (image) {
      VideoSynthConfig cfg;
      if (o.per_class > 0) cfg.per_class = o.per_class;
      cfg.noise = o.noise;
      cfg.seed = o.seed;
      cfg.size = graph.input_shape.height;
      if (graph.input_shape.width != cfg.size || graph.input_shape.channels != 3) {
        throw DataError("synthetic video needs a square RGB input");
      }
      out.all = synth_video(cfg);
      out.id = "synth-video";
    } else {
      AccelSynthConfig cfg;
      cfg.classes = graph.output_classes;
      if (o.per_class > 0) cfg.per_class = o.per_class;
      cfg.noise = o.noise;
      cfg.seed = o.seed;
      out.all = synth_accel(cfg);
      out.id = "synth-accel";
    }
  } else {
    if (image) {
      out.all = load_image_dataset(o.data, graph.input_shape.height);
    } else {
      AccelLoadOptions lo;
      lo.gestures = o.gestures;
      out.all = load_accel_dataset(o.data, lo);
    }
    out.id = fs::path(o.data).filename().string();
  }
  if (out.all.empty()) throw DataError("dataset is empty");
  for (const auto& s : out.all) {
    if (s.frame_shape != graph.input_shape) {
      throw DataError("sample '" + s.id + "' has frame shape " + to_string(s.frame_shape) + ", model expects " +
                      to_string(graph.input_shape));
    }
    s.validate(graph.output_classes);
  }
  out.split = stratified_split(out.all, image ? kImageSplit : kAccelSplit, o.seed);
  return out;
}

const std::vector<SequenceSample>& pick_split(const DatasetSplit& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "valid") return d.valid;
  if (name == "test") return d.test;
  throw UsageError("--split must be train, valid or test");
}

// ---------------------------------------------------------------------------
// Allocation

int parse_bits(const std::string& entry, const std::string& text) {
  int bits = 0;
  try {
    std::size_t used = 0;
    bits = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw UsageError("bad bit-width in allocation entry '" + entry + "'");
  }
  if (bits < kMinBits || bits > kMaxBits) {
    throw UsageError("allocation entry '" + entry + "': bits must lie in [" + std::to_string(kMinBits) + ", " +
                     std::to_string(kMaxBits) + "]");
  }
  return bits;
}

/// Entries `key=bits`, applied in order. Keys: all, weights, signals,
/// w:<group>, s:<group>, or a bare group name (every namespace holding it).
GroupBits parse_allocation(const std::vector<std::string>& entries, const NetworkGraph& graph) {
  GroupBits out;
  for (const auto& entry : entries) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw UsageError("allocation entry '" + entry + "' is not key=bits");
    const std::string key = entry.substr(0, eq);
    const int bits = parse_bits(entry, entry.substr(eq + 1));
    if (key == "all" || key == "weights") {
      for (const auto& g : graph.weight_groups()) out.weights[g.name] = bits;
    }
    if (key == "all" || key == "signals") {
      for (const auto& g : graph.signal_groups()) out.signals[g.name] = bits;
    }
    if (key == "all" || key == "weights" || key == "signals") continue;
    if (key.starts_with("w:")) {
      const auto name = key.substr(2);
      if (!graph.has_weight_group(name)) throw UsageError("unknown weight group '" + name + "'");
      out.weights[name] = bits;
    } else if (key.starts_with("s:")) {
      const auto name = key.substr(2);
      if (!graph.has_signal_group(name)) throw UsageError("unknown signal group '" + name + "'");
      out.signals[name] = bits;
    } else {
      const bool w = graph.has_weight_group(key);
      const bool s = graph.has_signal_group(key);
      if (!w && !s) throw UsageError("unknown group '" + key + "'");
      if (w) out.weights[key] = bits;
      if (s) out.signals[key] = bits;
    }
  }
  return out;
}

void check_bits(const std::vector<int>& bits) {
  for (int b : bits) {
    if (b < kMinBits || b > kMaxBits) {
      throw UsageError("--bits must lie in [" + std::to_string(kMinBits) + ", " + std::to_string(kMaxBits) + "]");
    }
  }
}

GroupBits resolve_allocation(const Options& o, const NetworkGraph& graph) {
  if (!o.alloc.empty()) return parse_allocation(o.alloc, graph);
  if (o.bits.size() != 1) throw UsageError("--bits takes a single width here (use --alloc for mixed widths)");
  check_bits(o.bits);
  return GroupBits::uniform(graph, o.bits.front());
}

double frame_rate_for(const Options& o, const NetworkGraph& graph) {
  if (o.frame_rate > 0) return o.frame_rate;
  return is_image_graph(graph) ? 30.0 : 10.0;
}

// ---------------------------------------------------------------------------
// Output

class OutputDir {
 public:
  OutputDir(const Options& o, std::vector<fs::path> inputs) : root_(o.out), inputs_(std::move(inputs)) {}

  void write(const std::string& name, std::span<const std::uint8_t> bytes) const {
    fs::create_directories(root_);
    const fs::path target = root_ / name;
    for (const auto& in : inputs_) {
      std::error_code ec;
      if (fs::exists(target) && fs::equivalent(in, target, ec)) {
        throw UsageError("refusing to overwrite input file " + in.string());
      }
    }
    write_file(target, bytes);
  }

  void write_text(const std::string& name, const std::string& text) const {
    write(name, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  fs::path path(const std::string& name) const { return root_ / name; }

 private:
  fs::path root_;
  std::vector<fs::path> inputs_;
};

std::string option_value(const CLI::Option* opt) {
  if (opt->count() == 0) return opt->get_default_str();
  const auto& results = opt->results();
  if (opt->get_expected_min() == 0) return results.empty() ? "true" : results.back();
  std::string joined;
  const bool vector_valued = opt->get_expected_max() > 1;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!vector_valued) {
      joined = results[i];
      continue;
    }
    if (!joined.empty()) joined += ',';
    joined += results[i];
  }
  return joined;
}

/// Resolved options as `key = value` lines, readable back through --config.
std::string manifest_text(const CLI::App& command) {
  std::ostringstream out;
  out << "# fxrnn " << command.get_name() << "\n";
  for (const CLI::Option* opt : command.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "config") continue;
    std::string value = option_value(opt);
    if (opt->get_expected_min() == 0 && value.empty()) value = "false";
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') value = value.substr(1, value.size() - 2);
    if (value == "{}") value.clear();
    out << names.front() << " = " << value << "\n";
  }
  return out.str();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string bits_text(const GroupBits& bits) {
  std::ostringstream s;
  bool first = true;
  for (const auto& [name, b] : bits.weights) {
    s << (first ? "" : ",") << "w:" << name << "=" << b;
    first = false;
  }
  for (const auto& [name, b] : bits.signals) {
    s << (first ? "" : ",") << "s:" << name << "=" << b;
    first = false;
  }
  return s.str();
}

std::string data_manifest(const std::vector<SequenceSample>& samples) {
  std::ostringstream s;
  write_manifest(samples, s);
  return s.str();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const Options& o, const CLI::App& cmd) {
  const auto graph = make_preset(o.preset);
  const auto config = train_config(o, graph);
  const auto data = load_data(o, graph);  // validated before anything is written

  const auto init = MasterModel::initialize(graph, o.seed);
  const auto result = train_float(init, data.split, config);
  const double test_miss = data.split.test.empty() ? 0.0 : evaluate(result.model, data.split.test, Mode::floating);

  OutputDir out(o, {});
  std::ostringstream curve;
  write_curve_csv(result.curve, curve);
  out.write("model.fxrm", save_master(result.model));
  out.write_text("curve.csv", curve.str());
  out.write_text("data_manifest.txt", data_manifest(data.all));
  out.write_text("run_manifest.txt", manifest_text(cmd));

  std::cout << "preset = " << graph.id << "\n"
            << "dataset = " << data.id << " (" << data.split.train.size() << "/" << data.split.valid.size() << "/"
            << data.split.test.size() << ")\n"
            << "epochs_run = " << result.curve.size() - 1 << "\n"
            << "best_epoch = " << result.best_epoch << "\n"
            << "valid_miss = " << fixed(result.best_valid_miss) << "\n"
            << "test_miss = " << fixed(test_miss) << "\n"
            << "model = " << out.path("model.fxrm").string() << "\n";
  return kExitOk;
}

MasterModel require_model(const Options& o) {
  if (o.model.empty()) throw UsageError("--model is required");
  return load_model_file(o.model);
}

int cmd_eval(const Options& o, const CLI::App& cmd) {
  const auto model = require_model(o);
  const Mode mode = mode_from_string(o.mode);
  const auto data = load_data(o, model.graph);
  const auto& split = pick_split(data.split, o.split);
  if (split.empty()) throw DataError("the " + o.split + " split is empty");
  if (mode == Mode::quantized) forward_sequence(model, split.front(), mode, true);  // every group needs a spec
  const auto r = evaluate_detailed(model, split, mode);

  OutputDir out(o, {o.model});
  out.write_text("run_manifest.txt", manifest_text(cmd));
  std::cout << "split = " << o.split << "\n"
            << "samples = " << split.size() << "\n"
            << "mode = " << to_string(mode) << "\n"
            << "miss_rate = " << fixed(r.miss) << "\n"
            << "mean_loss = " << fixed(r.mean_loss, 6) << "\n";
  return kExitOk;
}

int cmd_sensitivity(const Options& o, const CLI::App& cmd) {
  auto model = require_model(o);
  model.clear_specs();
  const auto data = load_data(o, model.graph);
  check_bits(o.bits);
  SensitivityOptions so;
  so.bits = o.bits;
  so.retrain = !o.no_retrain;
  so.config = train_config(o, model.graph);
  for (const auto& g : o.groups) {
    const bool w = model.graph.has_weight_group(g);
    const bool s = model.graph.has_signal_group(g);
    if (!w && !s) throw UsageError("unknown group '" + g + "'");
    if (w) so.weight_groups.push_back(g);
    if (s) so.signal_groups.push_back(g);
  }
  auto report = [&] {
    if (o.groups.empty()) return analyze_sensitivity(model, data.split, so, data.id);
    // Explicit filter: only the named groups, no "All" row.
    SensitivityReport r;
    r.graph_id = model.graph.id;
    r.dataset_id = data.id;
    r.seed = so.config.seed;
    r.baseline_float_miss = evaluate(model, data.split.test, Mode::floating);
    for (int bits : so.bits) {
      auto add = [&](const std::string& g, GroupKind kind) {
        SensitivityRow row{g, kind, bits, direct_sensitivity(model, g, kind, bits, data.split), std::nullopt};
        if (so.retrain) row.retrained_miss = retrain_sensitivity(model, g, kind, bits, data.split, so.config);
        r.rows.push_back(std::move(row));
      };
      for (const auto& g : so.weight_groups) add(g, GroupKind::weight);
      for (const auto& g : so.signal_groups) add(g, GroupKind::signal);
    }
    return r;
  }();

  std::ostringstream csv, table;
  write_sensitivity_csv(report, csv);
  write_sensitivity_table(report, table);
  OutputDir out(o, {o.model});
  out.write_text("sensitivity.csv", csv.str());
  out.write_text("sensitivity.txt", table.str());
  out.write_text("run_manifest.txt", manifest_text(cmd));
  std::cout << table.str();
  return kExitOk;
}

std::string memory_summary(const CostReport& cost, double cache_kb) {
  std::ostringstream s;
  const auto cache = static_cast<std::size_t>(cache_kb * 1024.0);
  s << "float32_bytes = " << cost.float_bytes << "\n"
    << "packed_payload_bytes = " << cost.packed_bytes << "\n"
    << "packed_header_bytes = " << cost.header_bytes << "\n"
    << "memory_ratio = " << fixed(100.0 * cost.packed_ratio(), 2) << "%\n"
    << "memory_saving = " << fixed(100.0 * (1.0 - cost.packed_ratio()), 2) << "%\n"
    << "mults_per_frame = " << cost.total_per_frame() << "\n"
    << "mults_per_second = " << fixed(cost.total_per_second(), 0) << "\n"
    << "cache_bytes = " << cache << "\n"
    << "fits_in_cache = " << (cache_fit(cost, cache) ? "yes" : "no") << "\n";
  return s.str();
}

int cmd_quantize(const Options& o, const CLI::App& cmd) {
  auto model = require_model(o);
  model.clear_specs();
  GroupBits bits = resolve_allocation(o, model.graph);
  bits.require_complete(model.graph);
  const auto config = train_config(o, model.graph);
  const auto data = load_data(o, model.graph);
  const double rate = frame_rate_for(o, model.graph);

  std::string escalation_csv;
  if (o.escalate) {
    const auto esc = escalate_bits(model, bits, data.split, o.target_miss, o.max_bits);
    std::ostringstream s;
    write_escalation_csv(esc, s);
    escalation_csv = s.str();
    if (!esc.reached) {
      std::cerr << "warning: target miss " << o.target_miss << "% not reached within " << o.max_bits
                << " bits; using the best allocation found\n";
    }
    bits = esc.bits;
  }

  const double float_miss = evaluate(model, data.split.test, Mode::floating);
  MasterModel quantized;
  double direct_miss = 0.0;
  double final_miss = 0.0;
  std::vector<CurvePoint> curve;
  CostReport cost;
  if (o.no_retrain) {
    quantized = model;
    attach_quant_specs(quantized, bits, data.split.train);
    direct_miss = evaluate(quantized, data.split.test, Mode::quantized);
    final_miss = direct_miss;
    cost = cost_report(model.graph, bits.weights, rate);
    cost.header_bytes = packed_header_bytes(quantized);
  } else {
    auto fq = full_quantization(model, bits, data.split, config, rate);
    quantized = std::move(fq.model);
    direct_miss = fq.direct_miss;
    final_miss = fq.allocation.miss;
    curve = std::move(fq.curve);
    cost = fq.cost;
  }

  std::ostringstream summary;
  summary << "preset = " << model.graph.id << "\n"
          << "dataset = " << data.id << "\n"
          << "allocation = " << bits_text(bits) << "\n"
          << "float_test_miss = " << fixed(float_miss) << "\n"
          << "direct_test_miss = " << fixed(direct_miss) << "\n";
  if (!o.no_retrain) summary << "retrained_test_miss = " << fixed(final_miss) << "\n";
  summary << memory_summary(cost, o.cache_kb);

  std::ostringstream cost_csv, cost_txt;
  write_cost_csv(cost, cost_csv);
  write_cost_table(cost, cost_txt);
  OutputDir out(o, {o.model});
  out.write("model.fxrn", save_packed(quantized));
  out.write("quantized.fxrm", save_master(quantized));
  out.write_text("cost.csv", cost_csv.str());
  out.write_text("cost.txt", cost_txt.str());
  out.write_text("summary.txt", summary.str());
  if (!curve.empty()) {
    std::ostringstream c;
    write_curve_csv(curve, c);
    out.write_text("curve.csv", c.str());
  }
  if (o.escalate) out.write_text("escalation.csv", escalation_csv);
  out.write_text("run_manifest.txt", manifest_text(cmd));
  std::cout << summary.str();
  return kExitOk;
}

int cmd_pack(const Options& o, const CLI::App& cmd) {
  const auto model = require_model(o);
  const auto bytes = save_packed(model);
  OutputDir out(o, {o.model});
  out.write("model.fxrn", bytes);
  out.write_text("run_manifest.txt", manifest_text(cmd));
  std::cout << "packed = " << out.path("model.fxrn").string() << "\n"
            << "bytes = " << bytes.size() << "\n"
            << "payload_bytes = " << memory_footprint(model, StorageFormat::packed) << "\n";
  return kExitOk;
}

int cmd_report(const Options& o, const CLI::App& cmd) {
  NetworkGraph graph;
  std::map<std::string, int> weight_bits;
  std::size_t header = 0;
  if (!o.model.empty()) {
    const auto model = load_model_file(o.model);
    graph = model.graph;
    if (model.weight_specs.size() == graph.weight_groups().size() && o.alloc.empty()) {
      for (const auto& [name, spec] : model.weight_specs) weight_bits[name] = spec.bits;
      header = packed_header_bytes(model);
    } else {
      weight_bits = resolve_allocation(o, graph).weights;
    }
  } else {
    graph = make_preset(o.preset);
    weight_bits = resolve_allocation(o, graph).weights;
  }
  for (const auto& g : graph.weight_groups()) {
    if (!weight_bits.contains(g.name)) throw GraphError("allocation is missing weight group '" + g.name + "'");
  }
  auto cost = cost_report(graph, weight_bits, frame_rate_for(o, graph));
  cost.header_bytes = header;

  std::ostringstream csv, txt;
  write_cost_csv(cost, csv);
  write_cost_table(cost, txt);
  txt << memory_summary(cost, o.cache_kb);
  std::vector<fs::path> inputs;
  if (!o.model.empty()) inputs.emplace_back(o.model);
  OutputDir out(o, inputs);
  out.write_text("cost.csv", csv.str());
  out.write_text("cost.txt", txt.str());
  out.write_text("run_manifest.txt", manifest_text(cmd));
  std::cout << txt.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Wiring

void add_data_options(CLI::App* c, Options& o) {
  c->add_option("--data", o.data, "Dataset root (image: <class>/<seq>/<frame>; accel: <user>/<gesture>/<rep>.csv)");
  c->add_flag("--synthetic", o.synthetic, "Use the seeded synthetic dataset for the model's modality");
  c->add_option("--per-class", o.per_class, "Synthetic samples per class (0: 40 accel, 10 video)");
  c->add_option("--noise", o.noise, "Synthetic noise standard deviation");
  c->add_option("--gestures", o.gestures, "Accelerometer gesture directories to keep, in label order")->delimiter(',');
  c->add_option("--seed", o.seed, "Seed for data generation, splitting, initialisation and training");
}

void add_train_options(CLI::App* c, Options& o) {
  c->add_option("--epochs", o.epochs, "Maximum epochs");
  c->add_option("--initial-lr", o.initial_lr, "Initial learning rate");
  c->add_option("--final-lr", o.final_lr, "Stop once the halved learning rate drops below this (0: 1e-8 image, 1e-7 accel)");
  c->add_option("--momentum", o.momentum, "Nesterov momentum");
  c->add_option("--optimizer", o.optimizer, "adadelta or nesterov")->check(CLI::IsMember({"adadelta", "nesterov"}));
  c->add_option("--patience", o.patience, "Stale epochs before the learning rate halves");
  c->add_option("--batch", o.batch, "Sequences per update");
  c->add_option("--bptt", o.bptt, "Truncated backpropagation window (0: whole sequence)");
}

void add_cost_options(CLI::App* c, Options& o) {
  c->add_option("--frame-rate", o.frame_rate, "Frames per second for cost reports (0: 30 image, 10 accel)");
  c->add_option("--cache-kb", o.cache_kb, "Cache size for the fits-in-cache verdict, KiB");
}

void add_alloc_options(CLI::App* c, Options& o) {
  c->add_option("--bits", o.bits, "Uniform bit-width for every group")->delimiter(',');
  c->add_option("--alloc", o.alloc,
                "Allocation entries key=bits, applied in order; keys: all, weights, signals, w:<group>, "
                "s:<group> or a group name")
      ->delimiter(',');
}

/// Reads `key = value` lines into argument form. Keys are long option names
/// of `command`; unknown keys are an error, `#` starts a comment.
std::vector<std::string> config_arguments(const fs::path& path, const CLI::App& command) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const CLI::Option* opt = command.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw UsageError(path.string() + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1") args.push_back("--" + key);
      continue;
    }
    if (value.empty()) continue;
    args.push_back("--" + key);
    args.push_back(value);
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Fixed-point LSTM gesture recognition toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;

  auto* train = app.add_subcommand("train", "Train a float model");
  train->add_option("--preset", o.preset, "Network preset")->check([](const std::string& name) {
    try {
      make_preset(name);
    } catch (const GraphError& e) {
      return std::string(e.what());
    }
    return std::string();
  });
  add_data_options(train, o);
  add_train_options(train, o);

  auto* sensitivity = app.add_subcommand("sensitivity", "Per-group quantization sensitivity (direct and retrained)");
  sensitivity->add_option("--model", o.model, "Trained float model (.fxrm)");
  add_data_options(sensitivity, o);
  add_train_options(sensitivity, o);
  sensitivity->add_option("--bits", o.bits, "Bit-widths to analyse")->delimiter(',');
  sensitivity->add_option("--group", o.groups, "Restrict to these groups")->delimiter(',');
  sensitivity->add_flag("--no-retrain", o.no_retrain, "Direct quantization only");

  auto* quantize = app.add_subcommand("quantize", "Fit step sizes, retrain in the quantized domain and pack");
  quantize->add_option("--model", o.model, "Trained float model (.fxrm)");
  add_data_options(quantize, o);
  add_train_options(quantize, o);
  add_alloc_options(quantize, o);
  quantize->add_flag("--escalate", o.escalate, "Greedily add bits until --target-miss is met");
  quantize->add_option("--target-miss", o.target_miss, "Escalation target: validation miss rate, %");
  quantize->add_option("--max-bits", o.max_bits, "Escalation ceiling per group");
  quantize->add_flag("--no-retrain", o.no_retrain, "Direct quantization only");
  add_cost_options(quantize, o);

  auto* eval = app.add_subcommand("eval", "Miss rate of a model on a dataset split");
  eval->add_option("--model", o.model, "Model file (.fxrm or .fxrn)");
  eval->add_option("--mode", o.mode, "float or quantized")->check(CLI::IsMember({"float", "quantized"}));
  eval->add_option("--split", o.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  add_data_options(eval, o);

  auto* pack = app.add_subcommand("pack", "Write a quantized master model as a packed .fxrn file");
  pack->add_option("--model", o.model, "Quantized master model (.fxrm with step sizes)");

  auto* report = app.add_subcommand("report", "Multiplication and memory budget");
  report->add_option("--preset", o.preset, "Network preset (ignored with --model)");
  report->add_option("--model", o.model, "Model file; its bit-widths are used when fully quantized");
  add_alloc_options(report, o);
  add_cost_options(report, o);

  for (auto* c : {train, sensitivity, quantize, eval, pack, report}) {
    c->add_option("--out", o.out, "Output directory");
    c->add_option("--config", config_path, "Flat key = value file; command-line flags take precedence");
  }

  // Config values go in front of the command-line arguments so that the
  // command line wins under the take-last policy.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
      if (args[i].starts_with("--config=")) config_path = args[i].substr(9);
    }
    if (!config_path.empty() && !args.empty()) {
      const CLI::App* command = app.get_subcommand_no_throw(args.front());
      if (command == nullptr) throw UsageError("unknown command '" + args.front() + "'");
      auto extra = config_arguments(config_path, *command);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(o, *train);
    if (sensitivity->parsed()) return cmd_sensitivity(o, *sensitivity);
    if (quantize->parsed()) return cmd_quantize(o, *quantize);
    if (eval->parsed()) return cmd_eval(o, *eval);
    if (pack->parsed()) return cmd_pack(o, *pack);
    if (report->parsed()) return cmd_report(o, *report);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const GraphError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const QuantError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
