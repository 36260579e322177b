// Acceptance run: one PASS/FAIL/SKIP line per criterion, nonzero exit on
// any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

#include "fxrnn/modelstore.hpp"
#include "fxrnn/network.hpp"
#include "fxrnn/sensitivity.hpp"

using namespace fxrnn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum class Status { pass, fail, skip } status = Status::fail;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Status::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Status::fail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

template <typename T>
std::string str(const T& v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v << "%";
  return s.str();
}

// ---------------------------------------------------------------------------
// Quantizer oracle

// L2 error of `values` on a symmetric grid, with its own rounding.
double oracle_error(const std::vector<double>& values, int bits, double delta) {
  const int half = ((1 << bits) - 2) / 2;
  double err = 0.0;
  for (double v : values) {
    const double r = v / delta;
    double k = r >= 0 ? std::floor(r + 0.5) : -std::floor(-r + 0.5);
    k = std::clamp(k, -static_cast<double>(half), static_cast<double>(half));
    const double d = v - delta * k;
    err += d * d;
  }
  return err;
}

double oracle_min_error(const std::vector<double>& values, int bits) {
  double peak = 0.0;
  for (double v : values) peak = std::max(peak, std::fabs(v));
  double best = std::numeric_limits<double>::infinity();
  for (int j = 1; j <= 100000; ++j) best = std::min(best, oracle_error(values, bits, peak * j / 100000.0));
  return best;
}

Outcome quantizer_oracle() {
  constexpr double kTol = 1e-9;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 64);
  std::uniform_int_distribution<int> bits_pick(2, 4);
  std::uniform_real_distribution<double> scale(0.01, 2.0);
  double worst = 0.0;
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = bits_pick(rng);
    const double sigma = scale(rng);
    std::normal_distribution<double> g(0.0, sigma);
    std::vector<double> values(static_cast<std::size_t>(size(rng)));
    for (double& v : values) v = g(rng);
    const auto spec = optimize_step_size(values, bits);
    const double diff = std::fabs(oracle_error(values, bits, spec.delta) - oracle_min_error(values, bits));
    worst = std::max(worst, diff);
    if (diff > kTol) ++mismatches;
  }
  return check(mismatches == 0, "200 sets, bits 2-4, worst |error - oracle| = " + str(worst) + " (tol 1e-9)");
}

// ---------------------------------------------------------------------------
// Gradients

NetworkGraph small_cnn_lstm() {
  NetworkGraph g;
  g.id = "acceptance-cnn-lstm";
  g.input_shape = {2, 7, 7};
  g.input_signal_group = "In";
  g.input_signal_kind = QuantKind::signal_bounded_unit;
  g.layers = {conv_layer("C1", 3, 3, "In-C1"),       relu_layer("C1.relu", "C1"),
              pool_layer("S1", 2, 2, "S1"),          lstm_layer("L1", 4, "S1-L1", "L1", "L1"),
              dense_layer("Out", 3, "L1-Out"),       softmax_layer()};
  g.output_classes = 3;
  g.validate();
  return g;
}

Outcome gradient_check() {
  constexpr double kEps = 1e-4;
  constexpr double kTol = 1e-3;
  auto m = MasterModel::initialize(small_cnn_lstm(), 11);
  for (auto& [name, w] : m.weights) {
    for (double& v : w) v *= 4.0;
  }
  SequenceSample s;
  s.id = "fd";
  s.label = 2;
  s.frame_shape = m.graph.input_shape;
  s.frames = 2;
  s.data.resize(static_cast<std::size_t>(s.frame_shape.size()) * 2);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : s.data) v = u(rng);

  const auto analytic = backward_sequence(m, trace_sequence(m, s, Mode::floating), s.label);
  auto loss = [&] { return sequence_loss(trace_sequence(m, s, Mode::floating), s.label); };
  std::ostringstream detail;
  bool ok = true;
  for (const auto& group : m.graph.weight_groups()) {
    auto& w = m.weights.at(group.name);
    double worst = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + kEps;
      const double up = loss();
      w[i] = saved - kEps;
      const double down = loss();
      w[i] = saved;
      const double numeric = (up - down) / (2 * kEps);
      const double a = analytic.at(group.name)[i];
      const double scale = std::max(std::fabs(numeric), std::fabs(a));
      if (scale < 1e-7) continue;
      worst = std::max(worst, std::fabs(numeric - a) / scale);
    }
    ok = ok && worst <= kTol;
    detail << group.name << " " << std::scientific << std::setprecision(2) << worst << "; ";
  }
  detail << "tol 1e-3, eps 1e-4, 2 frames, N=4";
  return check(ok, "worst relative error " + detail.str());
}

// ---------------------------------------------------------------------------
// Formulas and costs

Outcome formula_reproduction() {
  const auto accel = make_preset(kAccelPreset);
  const std::int64_t lstm = lstm_param_count(128, 3);
  const std::int64_t total = lstm + 128 * 8 + 8;
  auto m = MasterModel::initialize(accel, 1);
  AccelSynthConfig cfg;
  cfg.per_class = 2;
  attach_quant_specs(m, GroupBits::uniform(accel, 2), synth_accel(cfg));
  const auto float_bytes = memory_footprint(m, StorageFormat::float32);
  const auto packed_bytes = memory_footprint(m, StorageFormat::packed);

  const auto image = make_preset(kImagePreset);
  std::size_t cnn = 0;
  for (const auto& g : image.weight_groups()) {
    if (image.layers[static_cast<std::size_t>(g.layer)].kind == LayerKind::conv2d) cnn += g.count;
  }
  const double cnn_rel = std::fabs(static_cast<double>(cnn) - 79200.0) / 79200.0;
  const double saving = 1.0 - 2.0 / 32.0;
  const double measured_saving = 1.0 - static_cast<double>(packed_bytes) / static_cast<double>(float_bytes);

  const bool ok = total == 69000 && accel.weight_count() == 69000 && float_bytes == 276000 &&
                  packed_bytes == 17250 && cnn == 79328 && cnn_rel <= 0.002 && saving == 0.9375 &&
                  measured_saving == 0.9375;
  return check(ok, "accel weights " + str(total) + ", float " + str(float_bytes) + " B, 2-bit " +
                       str(packed_bytes) + " B, CNN weights " + str(cnn) + " (" + pct(100 * cnn_rel) +
                       " from 79.2K), saving " + pct(100 * measured_saving));
}

Outcome cost_accounting() {
  const auto r = multiplication_count(make_preset(kImagePreset), 30.0);
  auto per_second = [&](const std::string& name) -> std::int64_t {
    for (const auto& l : r.layers) {
      if (l.layer == name) return l.matrix * 30;
    }
    return -1;
  };
  const std::int64_t l1 = per_second("L1");
  const std::int64_t recurrent = r.lstm_recurrent_only * 30;
  const bool ok = per_second("C1") == 56448000 && per_second("C2") == 76800000 && per_second("C3") == 1536000 &&
                  per_second("Out") == 34560;
  std::ostringstream d;
  d << "C1 " << per_second("C1") << ", C2 " << per_second("C2") << ", C3 " << per_second("C3") << ", Out "
    << per_second("Out") << " /s; L1 counted as 4N^2+4NM = " << l1 << " /s, recurrent part alone " << recurrent
    << " /s (published 1.966 M)";
  return check(ok, d.str());
}

// ---------------------------------------------------------------------------
// End-to-end on synthetic accelerometer data

struct Pipeline {
  DatasetSplit data;
  MasterModel float_model;
  double float_miss = 0.0;
  double direct_miss = 0.0;
  MasterModel quantized;
  double retrained_miss = 0.0;
};

const Pipeline& pipeline() {
  static const Pipeline p = [] {
    Pipeline out;
    AccelSynthConfig sc;  // 8 classes, 40 per class, noise 0.05
    sc.seed = 1;
    out.data = stratified_split(synth_accel(sc), kAccelSplit, 1);
    TrainConfig cfg;
    cfg.seed = 1;
    out.float_model = train_float(MasterModel::initialize(make_accel_lstm(32), 1), out.data, cfg).model;
    out.float_miss = evaluate(out.float_model, out.data.test, Mode::floating);
    const auto bits = GroupBits::uniform(out.float_model.graph, 2);
    out.direct_miss = direct_quantize_eval(out.float_model, bits, out.data);
    auto fq = full_quantization(out.float_model, bits, out.data, cfg, 10.0);
    out.quantized = std::move(fq.model);
    out.retrained_miss = fq.allocation.miss;
    return out;
  }();
  return p;
}

Outcome end_to_end() {
  const auto& p = pipeline();
  const bool ok = p.float_miss <= 5.0 && p.direct_miss > p.float_miss && p.retrained_miss <= p.float_miss + 5.0;
  return check(ok, "N=32 float " + pct(p.float_miss) + " (<= 5%), direct 2-bit " + pct(p.direct_miss) +
                       " (> float), retrained 2-bit " + pct(p.retrained_miss) + " (<= float + 5)");
}

// ---------------------------------------------------------------------------
// Sensitivity table structure

bool groups_match(const std::vector<SensitivityRow>& rows, const std::vector<std::string>& names, bool retrained) {
  if (rows.size() != names.size()) return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].group != names[i] || rows[i].retrained_miss.has_value() != retrained) return false;
  }
  return true;
}

Outcome sensitivity_shape() {
  const auto& p = pipeline();
  SensitivityOptions accel_opts;
  const auto accel = analyze_sensitivity(p.float_model, p.data, accel_opts, "synth-accel");
  const bool accel_ok = groups_match(accel.select(GroupKind::weight, 2), {"In-L1", "L1", "L1-Out"}, true) &&
                        groups_match(accel.select(GroupKind::signal, 2), {"In", "L1"}, true) &&
                        accel.select(GroupKind::all, 2).size() == 1;

  // Image preset at full size on a small synthetic video set; one training
  // epoch is enough to exercise the structure.
  VideoSynthConfig vc;
  vc.per_class = 5;
  vc.frames = 4;
  const auto video = stratified_split(synth_video(vc), kImageSplit, 1);
  TrainConfig short_run;
  short_run.max_epochs = 1;
  const auto image_model =
      train_float(MasterModel::initialize(make_preset(kImagePreset), 1), video, short_run).model;
  SensitivityOptions image_opts;
  image_opts.config = short_run;
  const auto image = analyze_sensitivity(image_model, video, image_opts, "synth-video");
  const bool image_ok =
      groups_match(image.select(GroupKind::weight, 2), {"In-C1", "S1-C2", "S2-C3", "S3-L1", "L1", "L1-Out"},
                   true) &&
      groups_match(image.select(GroupKind::signal, 2), {"In", "C1", "S1", "C2", "S2", "C3", "S3", "L1"}, true) &&
      image.select(GroupKind::all, 2).size() == 1;

  std::ostringstream table;
  write_sensitivity_table(accel, table);
  std::cout << table.str();
  return check(accel_ok && image_ok, "accel " + str(accel.rows.size()) + " rows (3 weight, 2 signal, All), image " +
                                         str(image.rows.size()) + " rows (6 weight, 8 signal, All), direct and "
                                         "retrained entries present");
}

// ---------------------------------------------------------------------------
// Packed model equivalence

Outcome packed_equivalence() {
  const auto& master = pipeline().quantized;
  const auto dir = fs::temp_directory_path() / "fxrnn-acceptance";
  fs::create_directories(dir);
  const auto path = dir / "model.fxrn";
  const auto bytes = save_packed(master);
  write_file(path, bytes);
  const auto loaded = load_model_file(path);
  const bool resave = save_packed(loaded) == bytes;

  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 0.7);
  std::uniform_int_distribution<int> frames(1, 40);
  int identical = 0;
  for (int i = 0; i < 100; ++i) {
    SequenceSample s{"rand", 0, {3, 1, 1}, frames(rng), {}};
    s.data.resize(static_cast<std::size_t>(3 * s.frames));
    for (double& v : s.data) v = g(rng) + (i % 3 == 2 ? 1.0 : 0.0);
    if (forward_sequence(master, s, Mode::quantized, true) == forward_sequence(loaded, s, Mode::quantized, true)) {
      ++identical;
    }
  }
  fs::remove_all(dir);
  return check(resave && identical == 100, str(identical) + "/100 posteriors bit-identical, re-save " +
                                               (resave ? "byte-identical" : "differs") + " (" + str(bytes.size()) +
                                               " B)");
}

// ---------------------------------------------------------------------------
// Cambridge gesture data (optional)

std::optional<fs::path> cambridge_root() {
  if (const char* env = std::getenv("FXRNN_CAMBRIDGE_DIR"); env != nullptr && fs::is_directory(env)) {
    return fs::path(env);
  }
  return std::nullopt;
}

Outcome cambridge() {
  const auto root = cambridge_root();
  if (!root) return {Outcome::Status::skip, "FXRNN_CAMBRIDGE_DIR not set or not a directory"};
  const auto graph = make_preset(kImagePreset);
  const auto data = stratified_split(load_image_dataset(*root, graph.input_shape.height), kImageSplit, 1);
  TrainConfig cfg;
  const auto trained = train_float(MasterModel::initialize(graph, 1), data, cfg).model;
  const double float_miss = evaluate(trained, data.test, Mode::floating);
  const auto fq = full_quantization(trained, GroupBits::uniform(graph, 2), data, cfg, 30.0);
  const bool ok = std::fabs(float_miss - 22.79) <= 5.0 && fq.allocation.miss <= float_miss + 5.0;
  return check(ok, "float " + pct(float_miss) + " (22.79% +/- 5), 2-bit retrained " + pct(fq.allocation.miss) +
                       " (<= float + 5)");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"quantizer-oracle", quantizer_oracle},     {"gradient-check", gradient_check},
      {"formula-reproduction", formula_reproduction}, {"cost-accounting", cost_accounting},
      {"end-to-end-synth-accel", end_to_end},     {"sensitivity-table-shape", sensitivity_shape},
      {"packed-equivalence", packed_equivalence}, {"cambridge-regime", cambridge},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = o.status == Outcome::Status::pass ? "PASS" : o.status == Outcome::Status::skip ? "SKIP" : "FAIL";
    if (o.status == Outcome::Status::fail) ++failures;
    std::cout << tag << " " << name << ": " << o.detail << " [" << std::fixed << std::setprecision(1) << secs
              << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
