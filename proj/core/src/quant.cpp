#include "fxrnn/quant.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>

namespace fxrnn {

namespace {

constexpr std::array<std::pair<QuantKind, std::string_view>, 5> kKindNames{{
    {QuantKind::weight, "weight"},
    {QuantKind::signal_bounded_sym, "signal_bounded_sym"},
    {QuantKind::signal_bounded_unit, "signal_bounded_unit"},
    {QuantKind::signal_unbounded, "signal_unbounded"},
    {QuantKind::signal_unbounded_sym, "signal_unbounded_sym"},
}};

// Breakpoint sweeps above this many (value, level) pairs fall back to the
// coarse-to-fine lattice walk.
constexpr std::size_t kExactSweepBudget = std::size_t{1} << 23;

// Step-size search over non-negative magnitudes whose level index is
// min(top, round(m / delta)). Values that always land on level 0 only add a
// constant and are left out by the caller.
class LatticeSearch {
 public:
  LatticeSearch(std::vector<double> mags, int top) : mags_(std::move(mags)), top_(top) {
    for (double m : mags_) max_ = std::max(max_, m);
  }

  double delta_at(long j) const {
    return max_ * (static_cast<double>(j) / static_cast<double>(kStepLattice));
  }

  long best_index() const {
    if (mags_.size() * static_cast<std::size_t>(top_) <= kExactSweepBudget) return sweep();
    return coarse_to_fine();
  }

 private:
  double error_at(long j) const {
    const double delta = delta_at(j);
    const double top = static_cast<double>(top_);
    double err = 0.0;
    for (double m : mags_) {
      const double k = std::min(top, std::round(m / delta));
      const double e = m - delta * k;
      err += e * e;
    }
    return err;
  }

  long lattice_floor(double delta) const {
    const double x = delta * kStepLattice / max_;
    if (!(x < static_cast<double>(kStepLattice))) return kStepLattice;
    return static_cast<long>(std::floor(x));
  }

  // The error is a continuous piecewise quadratic in delta, S0 - 2 delta A +
  // delta^2 B, whose pieces change where a value's index steps. Walking the
  // pieces from large to small delta, each piece's lattice minimum sits on one
  // of the two lattice points bracketing A/B.
  long sweep() const {
    struct Breakpoint {
      double at;
      double mag;
      int level;
    };
    std::vector<Breakpoint> points;
    points.reserve(mags_.size() * static_cast<std::size_t>(top_));
    double s0 = 0.0;
    for (double m : mags_) {
      s0 += m * m;
      if (m <= 0.0) continue;
      for (int k = 1; k <= top_; ++k) points.push_back({m / (k - 0.5), m, k});
    }
    std::sort(points.begin(), points.end(),
              [](const Breakpoint& a, const Breakpoint& b) { return a.at > b.at; });

    double a = 0.0;
    double b = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    std::vector<std::pair<long, double>> candidates;
    auto consider = [&](long j) {
      const double d = delta_at(j);
      candidates.emplace_back(j, s0 - 2.0 * d * a + d * d * b);
    };

    for (std::size_t idx = 0;; ++idx) {
      const double lo = idx < points.size() ? points[idx].at : 0.0;
      const long j_max = std::isinf(hi) ? kStepLattice : lattice_floor(hi);
      const long j_min = std::max(1L, lattice_floor(lo) + 1);
      if (j_min <= j_max) {
        if (b == 0.0) {
          consider(j_max);
        } else {
          const double star = (a / b) * kStepLattice / max_;
          const long f = star >= static_cast<double>(kStepLattice)
                             ? kStepLattice
                             : static_cast<long>(std::floor(star));
          consider(std::clamp(f, j_min, j_max));
          consider(std::clamp(f + 1, j_min, j_max));
        }
      }
      if (idx == points.size()) break;
      a += points[idx].mag;
      b += 2.0 * points[idx].level - 1.0;
      hi = lo;
    }

    // The closed form cancels badly near zero error, so near-ties are
    // settled by direct evaluation; exact ties go to the smaller step.
    double best_closed = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) best_closed = std::min(best_closed, c.second);
    const double tol = 1e-12 * s0;
    long best_j = kStepLattice;
    double best_err = std::numeric_limits<double>::infinity();
    for (const auto& [j, closed] : candidates) {
      if (closed > best_closed + tol) continue;
      const double e = error_at(j);
      if (e < best_err - tol || (e <= best_err + tol && j < best_j)) {
        best_err = std::min(best_err, e);
        best_j = j;
      }
    }
    return best_j;
  }

  // 1000 coarse lattice points, then two refinement passes at 10x resolution
  // around the incumbent.
  long coarse_to_fine() const {
    long best_j = kStepLattice;
    double best_err = std::numeric_limits<double>::infinity();
    auto scan = [&](long from, long to, long step) {
      for (long j = std::max(1L, from); j <= std::min<long>(kStepLattice, to); j += step) {
        const double e = error_at(j);
        if (e < best_err) {
          best_err = e;
          best_j = j;
        }
      }
    };
    scan(100, kStepLattice, 100);
    const long coarse = best_j;
    scan(coarse - 100, coarse + 100, 10);
    const long mid = best_j;
    scan(mid - 10, mid + 10, 1);
    return best_j;
  }

  std::vector<double> mags_;
  int top_;
  double max_ = 0.0;
};

void require_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw QuantError("non-finite value in quantization group");
  }
}

}  // namespace

std::string_view to_string(QuantKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

QuantKind quant_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw QuantError("unknown quantization kind '" + std::string(name) + "'");
}

int level_count(int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw QuantError("bit-width " + std::to_string(bits) + " outside [2, 16]");
  }
  return (1 << bits) - 1;
}

QuantSpec QuantSpec::make(std::string group, int bits, double delta, QuantKind kind) {
  QuantSpec spec;
  spec.group = std::move(group);
  spec.bits = bits;
  spec.levels = level_count(bits);
  spec.delta = delta;
  spec.kind = kind;
  spec.validate();
  return spec;
}

void QuantSpec::validate() const {
  if (levels != level_count(bits)) throw QuantError("levels must equal 2^bits - 1");
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw QuantError("step size of group '" + group + "' must be positive and finite");
  }
}

QuantSpec QuantSpec::snapped_to_f32() const {
  QuantSpec out = *this;
  out.delta = static_cast<double>(static_cast<float>(delta));
  out.validate();
  return out;
}

int quantize_index(double v, const QuantSpec& spec) {
  if (!std::isfinite(v)) throw QuantError("cannot quantize a non-finite value");
  const double r = std::round(v / spec.delta);
  return static_cast<int>(std::clamp(r, static_cast<double>(spec.min_index()),
                                     static_cast<double>(spec.max_index())));
}

double quantize_value(double v, const QuantSpec& spec) {
  return spec.delta * static_cast<double>(quantize_index(v, spec));
}

double l2_error(std::span<const double> values, const QuantSpec& spec) {
  double err = 0.0;
  for (double v : values) {
    const double e = v - quantize_value(v, spec);
    err += e * e;
  }
  return err;
}

std::uint16_t index_to_code(int index, const QuantSpec& spec) {
  if (index < spec.min_index() || index > spec.max_index()) {
    throw QuantError("level index out of range for group '" + spec.group + "'");
  }
  return static_cast<std::uint16_t>(index - spec.min_index());
}

int code_to_index(std::uint16_t code, const QuantSpec& spec) {
  if (code >= spec.levels) {
    throw QuantError("code out of range for group '" + spec.group + "'");
  }
  return static_cast<int>(code) + spec.min_index();
}

QuantSpec optimize_step_size(std::span<const double> values, int bits, QuantKind kind) {
  if (values.empty()) throw QuantError("cannot fit a step size to an empty group");
  require_finite(values);
  if (kind != QuantKind::weight && kind != QuantKind::signal_unbounded_sym) {
    throw QuantError("optimize_step_size fits symmetric grids only");
  }
  const int levels = level_count(bits);
  std::vector<double> mags;
  mags.reserve(values.size());
  double max_abs = 0.0;
  for (double v : values) {
    mags.push_back(std::fabs(v));
    max_abs = std::max(max_abs, std::fabs(v));
  }
  if (max_abs == 0.0) throw QuantError("all-zero group has no defined step size");
  const LatticeSearch search(std::move(mags), (levels - 1) / 2);
  return QuantSpec::make({}, bits, search.delta_at(search.best_index()), kind);
}

QuantSpec fixed_step_size(QuantKind kind, int bits) {
  const int levels = level_count(bits);
  switch (kind) {
    case QuantKind::signal_bounded_unit:
      return QuantSpec::make({}, bits, 1.0 / (levels - 1), kind);
    case QuantKind::signal_bounded_sym:
      return QuantSpec::make({}, bits, 2.0 / (levels - 1), kind);
    default:
      throw QuantError("fixed step sizes exist only for bounded signal kinds");
  }
}

ActivationStats::ActivationStats(std::string group, std::uint64_t seed, std::size_t capacity)
    : group_(std::move(group)),
      capacity_(capacity),
      max_(-std::numeric_limits<double>::infinity()),
      min_(std::numeric_limits<double>::infinity()),
      rng_(seed) {
  if (capacity_ == 0) throw QuantError("activation buffer capacity must be positive");
}

void ActivationStats::add(double value) {
  if (!std::isfinite(value)) throw QuantError("non-finite activation in group '" + group_ + "'");
  max_ = std::max(max_, value);
  min_ = std::min(min_, value);
  ++seen_;
  if (values_.size() < capacity_) {
    values_.push_back(value);
    return;
  }
  std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
  const std::uint64_t slot = pick(rng_);
  if (slot < capacity_) values_[slot] = value;
}

void ActivationStats::add(std::span<const double> values) {
  for (double v : values) add(v);
}

QuantSpec optimize_relu_step_size(const ActivationStats& stats, int bits) {
  if (stats.empty()) throw QuantError("no activations collected for group '" + stats.group() + "'");
  const int levels = level_count(bits);
  std::vector<double> mags;
  mags.reserve(stats.values().size());
  double max_pos = 0.0;
  for (double v : stats.values()) {
    if (v > 0.0) {
      mags.push_back(v);
      max_pos = std::max(max_pos, v);
    }
  }
  if (max_pos == 0.0) {
    throw QuantError("group '" + stats.group() + "' produced only zero activations (dead layer)");
  }
  const LatticeSearch search(std::move(mags), levels - 1);
  return QuantSpec::make(stats.group(), bits, search.delta_at(search.best_index()),
                         QuantKind::signal_unbounded);
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint16_t> codes, int bits) {
  if (bits < 1 || bits > kMaxBits) throw QuantError("packing bit-width outside [1, 16]");
  std::vector<std::uint8_t> out;
  out.reserve(packed_size(codes.size(), bits));
  std::uint32_t acc = 0;
  int filled = 0;
  for (std::uint16_t code : codes) {
    if ((static_cast<std::uint32_t>(code) >> bits) != 0) {
      throw QuantError("code " + std::to_string(code) + " does not fit in " +
                       std::to_string(bits) + " bits");
    }
    acc |= static_cast<std::uint32_t>(code) << filled;
    filled += bits;
    while (filled >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc & 0xffu));
      acc >>= 8;
      filled -= 8;
    }
  }
  if (filled > 0) out.push_back(static_cast<std::uint8_t>(acc & 0xffu));
  return out;
}

std::vector<std::uint16_t> unpack_codes(std::span<const std::uint8_t> bytes, int bits,
                                        std::size_t count) {
  if (bits < 1 || bits > kMaxBits) throw QuantError("packing bit-width outside [1, 16]");
  if (bytes.size() != packed_size(count, bits)) {
    throw QuantError("packed buffer holds " + std::to_string(bytes.size()) + " bytes, expected " +
                     std::to_string(packed_size(count, bits)));
  }
  std::vector<std::uint16_t> out;
  out.reserve(count);
  const std::uint32_t mask = (1u << bits) - 1u;
  std::uint32_t acc = 0;
  int filled = 0;
  std::size_t next = 0;
  for (std::size_t i = 0; i < count; ++i) {
    while (filled < bits) {
      acc |= static_cast<std::uint32_t>(bytes[next++]) << filled;
      filled += 8;
    }
    out.push_back(static_cast<std::uint16_t>(acc & mask));
    acc >>= bits;
    filled -= bits;
  }
  return out;
}

}  // namespace fxrnn
