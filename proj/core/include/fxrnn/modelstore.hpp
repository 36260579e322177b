#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fxrnn/model.hpp"

namespace fxrnn {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kPackedVersion = 1;
inline constexpr std::uint16_t kMasterVersion = 1;

/// `.fxrn` packed model. Little-endian, fixed-width fields:
///
///   "FXRN" u16 version, graph table, u64 seed,
///   u32 weight-group count, then per group (sorted by name):
///     str name, u32 count, u8 bits, f32 delta, ceil(count*bits/8) code bytes
///   u32 signal-spec count, then per spec (sorted by name):
///     str name, u8 kind, u8 bits, f32 delta
///
/// Strings are u16 length + bytes. Codes are offset level indices packed
/// LSB-first. Every weight group must carry a QuantSpec.
std::vector<std::uint8_t> save_packed(const MasterModel& model);

/// Decodes a packed model into its quantized view: master weights equal the
/// grid values, specs attached. Throws FormatError on bad magic, version,
/// truncation or shape disagreement.
MasterModel load_packed(std::span<const std::uint8_t> bytes);

/// `.fxrm` full-precision model (f64 weights, f64 step sizes).
std::vector<std::uint8_t> save_master(const MasterModel& model);
MasterModel load_master(std::span<const std::uint8_t> bytes);

/// Loads either format, chosen by magic.
MasterModel load_model_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames, so readers never see a
/// partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Sum over weight groups of ceil(count * bits / 8).
std::size_t packed_payload_bytes(const NetworkGraph& graph, const std::map<std::string, int>& weight_bits);

enum class StorageFormat { float32, packed };

/// float32: 4 bytes per weight. packed: payload only (uses the model's
/// weight specs; header bytes are reported by packed_header_bytes).
std::size_t memory_footprint(const MasterModel& model, StorageFormat format);
std::size_t packed_header_bytes(const MasterModel& model);

struct LayerCost {
  std::string layer;
  std::int64_t matrix = 0;    // multiplications per frame
  std::int64_t peephole = 0;  // LSTM peephole products per frame
  std::int64_t per_frame() const { return matrix + peephole; }
};

struct CostReport {
  double frame_rate = 0.0;
  std::vector<LayerCost> layers;
  std::int64_t lstm_recurrent_only = 0;  // 4N^2 per frame, for comparison
  std::size_t float_bytes = 0;
  std::size_t packed_bytes = 0;
  std::size_t header_bytes = 0;

  std::int64_t total_per_frame() const;
  double total_per_second() const { return static_cast<double>(total_per_frame()) * frame_rate; }
  double per_second(const LayerCost& c) const { return static_cast<double>(c.per_frame()) * frame_rate; }
  /// packed / float32 byte ratio.
  double packed_ratio() const;
};

/// Per-layer multiplications: conv maps*oh*ow*k^2*in_maps, LSTM 4N^2+4NM
/// (+3N peephole), dense N*K. Memory fields are left zero.
CostReport multiplication_count(const NetworkGraph& graph, double frame_rate);

/// Multiplications plus float32 and packed weight memory at `weight_bits`.
CostReport cost_report(const NetworkGraph& graph, const std::map<std::string, int>& weight_bits, double frame_rate);

/// True when the packed weights fit in a cache of `cache_bytes`.
bool cache_fit(const CostReport& report, std::size_t cache_bytes);

void write_cost_csv(const CostReport& report, std::ostream& out);
void write_cost_table(const CostReport& report, std::ostream& out);

}  // namespace fxrnn
