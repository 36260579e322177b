#include "fxrnn/modelstore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace fxrnn {

namespace {

constexpr std::array<char, 4> kPackedMagic{'F', 'X', 'R', 'N'};
constexpr std::array<char, 4> kMasterMagic{'F', 'X', 'R', 'M'};

class ByteWriter {
 public:
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i32(std::int32_t v) { le(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    if (s.size() > 0xffff) throw FormatError("string too long for model file");
    u16(static_cast<std::uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }
  std::size_t size() const { return bytes_.size(); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("truncated model file");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(le(4))); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4))); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const auto n = u16();
    const auto s = take(n);
    return {reinterpret_cast<const char*>(s.data()), s.size()};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::uint64_t le(int n) {
    const auto s = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_graph(ByteWriter& w, const NetworkGraph& g) {
  w.str(g.id);
  w.i32(g.input_shape.channels);
  w.i32(g.input_shape.height);
  w.i32(g.input_shape.width);
  w.str(g.input_signal_group);
  w.u8(static_cast<std::uint8_t>(g.input_signal_kind));
  w.i32(g.output_classes);
  w.u32(static_cast<std::uint32_t>(g.layers.size()));
  for (const auto& l : g.layers) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.str(l.name);
    w.i32(l.out_channels);
    w.i32(l.kernel);
    w.i32(l.window);
    w.i32(l.stride);
    w.i32(l.units);
    w.str(l.weight_group);
    w.str(l.input_weight_group);
    w.str(l.signal_group);
  }
}

QuantKind read_kind(std::uint8_t v) {
  if (v > static_cast<std::uint8_t>(QuantKind::signal_unbounded_sym)) throw FormatError("bad quantization kind");
  return static_cast<QuantKind>(v);
}

NetworkGraph read_graph(ByteReader& r) {
  NetworkGraph g;
  g.id = r.str();
  g.input_shape.channels = r.i32();
  g.input_shape.height = r.i32();
  g.input_shape.width = r.i32();
  g.input_signal_group = r.str();
  g.input_signal_kind = read_kind(r.u8());
  g.output_classes = r.i32();
  const auto n = r.u32();
  if (n > 1024) throw FormatError("implausible layer count");
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec l;
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::softmax)) throw FormatError("bad layer kind");
    l.kind = static_cast<LayerKind>(kind);
    l.name = r.str();
    l.out_channels = r.i32();
    l.kernel = r.i32();
    l.window = r.i32();
    l.stride = r.i32();
    l.units = r.i32();
    l.weight_group = r.str();
    l.input_weight_group = r.str();
    l.signal_group = r.str();
    g.layers.push_back(std::move(l));
  }
  try {
    g.validate();
  } catch (const GraphError& e) {
    throw FormatError(std::string("invalid graph in model file: ") + e.what());
  }
  return g;
}

void expect_magic(ByteReader& r, const std::array<char, 4>& magic, std::uint16_t version) {
  const auto m = r.take(4);
  if (std::memcmp(m.data(), magic.data(), 4) != 0) throw FormatError("bad magic");
  const auto v = r.u16();
  if (v != version) throw FormatError("unsupported version " + std::to_string(v));
}

void check_group_count(const NetworkGraph& g, const std::string& name, std::size_t count) {
  if (!g.has_weight_group(name)) throw FormatError("model file names unknown weight group '" + name + "'");
  if (g.weight_group(name).count != count) throw FormatError("shape disagreement for group '" + name + "'");
}

void finish(ByteReader& r, MasterModel& m) {
  if (!r.done()) throw FormatError("trailing bytes after model");
  if (m.weights.size() != m.graph.weight_groups().size()) throw FormatError("model file is missing weight groups");
  try {
    m.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("inconsistent model file: ") + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> save_packed(const MasterModel& model) {
  model.validate();
  ByteWriter w;
  w.raw(kPackedMagic.data(), 4);
  w.u16(kPackedVersion);
  write_graph(w, model.graph);
  w.u64(model.seed);
  w.u32(static_cast<std::uint32_t>(model.weights.size()));
  for (const auto& [name, values] : model.weights) {
    const auto it = model.weight_specs.find(name);
    if (it == model.weight_specs.end()) throw FormatError("weight group '" + name + "' has no QuantSpec to pack");
    const QuantSpec& spec = it->second;
    if (static_cast<double>(static_cast<float>(spec.delta)) != spec.delta) {
      throw FormatError("step size of group '" + name + "' is not representable as f32");
    }
    std::vector<std::uint16_t> codes;
    codes.reserve(values.size());
    for (double v : values) codes.push_back(index_to_code(quantize_index(v, spec), spec));
    w.str(name);
    w.u32(static_cast<std::uint32_t>(values.size()));
    w.u8(static_cast<std::uint8_t>(spec.bits));
    w.f32(static_cast<float>(spec.delta));
    const auto packed = pack_codes(codes, spec.bits);
    w.raw(packed.data(), packed.size());
  }
  w.u32(static_cast<std::uint32_t>(model.signal_specs.size()));
  for (const auto& [name, spec] : model.signal_specs) {
    if (static_cast<double>(static_cast<float>(spec.delta)) != spec.delta) {
      throw FormatError("step size of signal '" + name + "' is not representable as f32");
    }
    w.str(name);
    w.u8(static_cast<std::uint8_t>(spec.kind));
    w.u8(static_cast<std::uint8_t>(spec.bits));
    w.f32(static_cast<float>(spec.delta));
  }
  return w.take();
}

MasterModel load_packed(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  expect_magic(r, kPackedMagic, kPackedVersion);
  MasterModel m;
  m.graph = read_graph(r);
  m.seed = r.u64();
  const auto groups = r.u32();
  for (std::uint32_t i = 0; i < groups; ++i) {
    std::string name = r.str();
    const auto count = r.u32();
    check_group_count(m.graph, name, count);
    const int bits = r.u8();
    const double delta = r.f32();
    QuantSpec spec;
    try {
      spec = QuantSpec::make(name, bits, delta, QuantKind::weight);
    } catch (const QuantError& e) {
      throw FormatError(e.what());
    }
    const auto codes = unpack_codes(r.take(packed_size(count, bits)), bits, count);
    std::vector<double> values(count);
    for (std::size_t k = 0; k < count; ++k) {
      int index = 0;
      try {
        index = code_to_index(codes[k], spec);
      } catch (const QuantError& e) {
        throw FormatError(e.what());
      }
      values[k] = spec.delta * static_cast<double>(index);
    }
    if (!m.weights.emplace(name, std::move(values)).second) throw FormatError("duplicate group '" + name + "'");
    m.weight_specs[name] = spec;
  }
  const auto signals = r.u32();
  for (std::uint32_t i = 0; i < signals; ++i) {
    std::string name = r.str();
    const QuantKind kind = read_kind(r.u8());
    const int bits = r.u8();
    const double delta = r.f32();
    try {
      m.signal_specs[name] = QuantSpec::make(name, bits, delta, kind);
    } catch (const QuantError& e) {
      throw FormatError(e.what());
    }
  }
  finish(r, m);
  return m;
}

std::vector<std::uint8_t> save_master(const MasterModel& model) {
  model.validate();
  ByteWriter w;
  w.raw(kMasterMagic.data(), 4);
  w.u16(kMasterVersion);
  write_graph(w, model.graph);
  w.u64(model.seed);
  w.u32(static_cast<std::uint32_t>(model.weights.size()));
  for (const auto& [name, values] : model.weights) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(values.size()));
    for (double v : values) w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(model.weight_specs.size()));
  for (const auto& [name, spec] : model.weight_specs) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(spec.bits));
    w.f64(spec.delta);
  }
  w.u32(static_cast<std::uint32_t>(model.signal_specs.size()));
  for (const auto& [name, spec] : model.signal_specs) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(spec.kind));
    w.u8(static_cast<std::uint8_t>(spec.bits));
    w.f64(spec.delta);
  }
  return w.take();
}

MasterModel load_master(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  expect_magic(r, kMasterMagic, kMasterVersion);
  MasterModel m;
  m.graph = read_graph(r);
  m.seed = r.u64();
  const auto groups = r.u32();
  for (std::uint32_t i = 0; i < groups; ++i) {
    std::string name = r.str();
    const auto count = r.u32();
    check_group_count(m.graph, name, count);
    std::vector<double> values(count);
    for (auto& v : values) v = r.f64();
    if (!m.weights.emplace(name, std::move(values)).second) throw FormatError("duplicate group '" + name + "'");
  }
  try {
    const auto wspecs = r.u32();
    for (std::uint32_t i = 0; i < wspecs; ++i) {
      std::string name = r.str();
      const int bits = r.u8();
      const double delta = r.f64();
      m.weight_specs[name] = QuantSpec::make(name, bits, delta, QuantKind::weight);
    }
    const auto sspecs = r.u32();
    for (std::uint32_t i = 0; i < sspecs; ++i) {
      std::string name = r.str();
      const QuantKind kind = read_kind(r.u8());
      const int bits = r.u8();
      const double delta = r.f64();
      m.signal_specs[name] = QuantSpec::make(name, bits, delta, kind);
    }
  } catch (const QuantError& e) {
    throw FormatError(e.what());
  }
  finish(r, m);
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

MasterModel load_model_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kPackedMagic.data(), 4) == 0) return load_packed(bytes);
  return load_master(bytes);
}

std::size_t packed_payload_bytes(const NetworkGraph& graph, const std::map<std::string, int>& weight_bits) {
  std::size_t total = 0;
  for (const auto& g : graph.weight_groups()) {
    const auto it = weight_bits.find(g.name);
    if (it == weight_bits.end()) throw GraphError("no bit-width for weight group '" + g.name + "'");
    total += packed_size(g.count, it->second);
  }
  return total;
}

std::size_t memory_footprint(const MasterModel& model, StorageFormat format) {
  if (format == StorageFormat::float32) return 4 * model.weight_count();
  std::map<std::string, int> bits;
  for (const auto& [name, spec] : model.weight_specs) bits[name] = spec.bits;
  return packed_payload_bytes(model.graph, bits);
}

std::size_t packed_header_bytes(const MasterModel& model) {
  return save_packed(model).size() - memory_footprint(model, StorageFormat::packed);
}

std::int64_t CostReport::total_per_frame() const {
  std::int64_t total = 0;
  for (const auto& l : layers) total += l.per_frame();
  return total;
}

double CostReport::packed_ratio() const {
  return float_bytes == 0 ? 0.0 : static_cast<double>(packed_bytes) / static_cast<double>(float_bytes);
}

CostReport multiplication_count(const NetworkGraph& graph, double frame_rate) {
  graph.validate();
  CostReport report;
  report.frame_rate = frame_rate;
  const auto ins = graph.input_shapes();
  const auto outs = graph.output_shapes();
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& l = graph.layers[i];
    const std::int64_t in_size = ins[i].size();
    switch (l.kind) {
      case LayerKind::conv2d: {
        const std::int64_t k2 = static_cast<std::int64_t>(l.kernel) * l.kernel;
        report.layers.push_back(
            {l.name, static_cast<std::int64_t>(outs[i].size()) * k2 * ins[i].channels, 0});
        break;
      }
      case LayerKind::lstm: {
        const std::int64_t n = l.units;
        report.layers.push_back({l.name, 4 * n * n + 4 * n * in_size, 3 * n});
        report.lstm_recurrent_only = 4 * n * n;
        break;
      }
      case LayerKind::dense:
        report.layers.push_back({l.name, in_size * l.units, 0});
        break;
      default:
        break;
    }
  }
  return report;
}

CostReport cost_report(const NetworkGraph& graph, const std::map<std::string, int>& weight_bits, double frame_rate) {
  CostReport report = multiplication_count(graph, frame_rate);
  report.float_bytes = 4 * graph.weight_count();
  report.packed_bytes = packed_payload_bytes(graph, weight_bits);
  return report;
}

bool cache_fit(const CostReport& report, std::size_t cache_bytes) { return report.packed_bytes <= cache_bytes; }

void write_cost_csv(const CostReport& report, std::ostream& out) {
  out << "layer,mults_per_frame,peephole_per_frame,mults_per_second\n";
  out << std::setprecision(12);
  for (const auto& l : report.layers) {
    out << l.layer << ',' << l.matrix << ',' << l.peephole << ',' << report.per_second(l) << '\n';
  }
  out << "total," << report.total_per_frame() << ",," << report.total_per_second() << '\n';
  out << "lstm_recurrent_only," << report.lstm_recurrent_only << ",,"
      << static_cast<double>(report.lstm_recurrent_only) * report.frame_rate << '\n';
  out << "float32_bytes," << report.float_bytes << ",,\n";
  out << "packed_bytes," << report.packed_bytes << ",,\n";
  out << "header_bytes," << report.header_bytes << ",,\n";
}

void write_cost_table(const CostReport& report, std::ostream& out) {
  auto human = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(3);
    if (v >= 1e6) {
      s << v / 1e6 << " M";
    } else if (v >= 1e3) {
      s << v / 1e3 << " K";
    } else {
      s << v;
    }
    return s.str();
  };
  out << "Multiplications at " << report.frame_rate << " Hz\n";
  out << std::left << std::setw(12) << "layer" << std::right << std::setw(14) << "per frame" << std::setw(12)
      << "peephole" << std::setw(16) << "per second" << '\n';
  for (const auto& l : report.layers) {
    out << std::left << std::setw(12) << l.layer << std::right << std::setw(14) << l.matrix << std::setw(12)
        << l.peephole << std::setw(16) << human(report.per_second(l)) << '\n';
  }
  out << std::left << std::setw(12) << "total" << std::right << std::setw(14) << report.total_per_frame()
      << std::setw(12) << "" << std::setw(16) << human(report.total_per_second()) << '\n';
  if (report.lstm_recurrent_only > 0) {
    out << "LSTM recurrent products only (4N^2): " << report.lstm_recurrent_only << " per frame, "
        << human(static_cast<double>(report.lstm_recurrent_only) * report.frame_rate) << " per second\n";
  }
  if (report.float_bytes > 0) {
    out << "Weight memory: float32 " << report.float_bytes << " B, packed " << report.packed_bytes << " B (+"
        << report.header_bytes << " B header), ratio " << std::fixed << std::setprecision(2)
        << 100.0 * report.packed_ratio() << "%, saving " << 100.0 * (1.0 - report.packed_ratio()) << "%\n";
    out << std::defaultfloat;
  }
}

}  // namespace fxrnn
