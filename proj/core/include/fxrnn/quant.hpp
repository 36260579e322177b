#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fxrnn {

/// Raised for invalid quantizer parameters and degenerate inputs
/// (all-zero groups, out-of-range codes, non-finite values).
class QuantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How a group's grid is laid out.
///
/// Symmetric kinds use the level indices -(levels-1)/2 .. +(levels-1)/2;
/// one-sided kinds (bounded unit, unbounded) use 0 .. levels-1.
enum class QuantKind : std::uint8_t {
  weight = 0,
  signal_bounded_sym = 1,   // tanh outputs, grid spans [-1, 1]
  signal_bounded_unit = 2,  // sigmoid outputs and [0,1] images, grid spans [0, 1]
  signal_unbounded = 3,     // ReLU outputs, one-sided grid fitted on collected values
  signal_unbounded_sym = 4, // signed raw inputs, symmetric grid fitted on collected values
};

std::string_view to_string(QuantKind kind);
QuantKind quant_kind_from_string(std::string_view name);

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 16;

/// Number of grid levels for a bit-width: 2^bits - 1 (odd, contains zero).
int level_count(int bits);

struct QuantSpec {
  std::string group;
  int bits = 2;
  int levels = 3;
  double delta = 1.0;
  QuantKind kind = QuantKind::weight;

  /// Validating constructor; levels is derived from bits.
  static QuantSpec make(std::string group, int bits, double delta, QuantKind kind);

  bool one_sided() const noexcept {
    return kind == QuantKind::signal_bounded_unit || kind == QuantKind::signal_unbounded;
  }
  int min_index() const noexcept { return one_sided() ? 0 : -(levels - 1) / 2; }
  int max_index() const noexcept { return one_sided() ? levels - 1 : (levels - 1) / 2; }

  /// Copy whose delta is exactly representable as a 32-bit float, which is
  /// how step sizes are stored in packed models.
  QuantSpec snapped_to_f32() const;

  void validate() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

/// Signed level index of v on the spec's grid (round half away from zero,
/// then clamp). Throws on non-finite v.
int quantize_index(double v, const QuantSpec& spec);

/// Grid value for v: spec.delta * quantize_index(v, spec).
double quantize_value(double v, const QuantSpec& spec);

/// Sum of squared reconstruction errors over values.
double l2_error(std::span<const double> values, const QuantSpec& spec);

/// Offset-encodes a level index into an unsigned code in [0, levels-1].
std::uint16_t index_to_code(int index, const QuantSpec& spec);
int code_to_index(std::uint16_t code, const QuantSpec& spec);

/// Resolution of the step-size lattice: candidates are max|v| * j / kStepLattice
/// for j = 1 .. kStepLattice.
inline constexpr int kStepLattice = 100000;

/// L2-optimal symmetric step size for a weight group. The returned delta is
/// the global minimiser of the squared error over the step-size lattice.
/// Throws QuantError when every value is zero.
QuantSpec optimize_step_size(std::span<const double> values, int bits,
                             QuantKind kind = QuantKind::weight);

/// Analytic step size for sigmoid/tanh outputs: grid endpoints equal the
/// activation's range endpoints.
QuantSpec fixed_step_size(QuantKind kind, int bits);

/// Sample of a signal group's activations gathered over a dataset pass.
///
/// Keeps every value up to `capacity`; beyond that a seeded reservoir keeps
/// a uniform sample, so memory is bounded and results are reproducible.
class ActivationStats {
 public:
  static constexpr std::size_t kDefaultCapacity = std::size_t{1} << 20;

  explicit ActivationStats(std::string group = {}, std::uint64_t seed = 0,
                           std::size_t capacity = kDefaultCapacity);

  void add(double value);
  void add(std::span<const double> values);

  const std::string& group() const noexcept { return group_; }
  std::span<const double> values() const noexcept { return values_; }
  std::uint64_t seen() const noexcept { return seen_; }
  double max_value() const noexcept { return max_; }
  double min_value() const noexcept { return min_; }
  bool empty() const noexcept { return values_.empty(); }

 private:
  std::string group_;
  std::size_t capacity_;
  std::vector<double> values_;
  std::uint64_t seen_ = 0;
  double max_;
  double min_;
  std::mt19937_64 rng_;
};

/// L2-optimal one-sided step size for ReLU-style (non-negative) activations.
/// Throws QuantError when no collected value is positive (dead layer).
QuantSpec optimize_relu_step_size(const ActivationStats& stats, int bits);

/// Packs codes LSB-first into bytes; ceil(count * bits / 8) bytes.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint16_t> codes, int bits);
std::vector<std::uint16_t> unpack_codes(std::span<const std::uint8_t> bytes, int bits,
                                        std::size_t count);

inline constexpr std::size_t packed_size(std::size_t count, int bits) {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

}  // namespace fxrnn
