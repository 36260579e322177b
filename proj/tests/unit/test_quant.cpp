#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "fxrnn/quant.hpp"

using namespace fxrnn;

namespace {

// Independent reference: evaluate the L2 error for every step size
// max|v| * j / 1e5, j = 1..1e5, with its own rounding and clamping.
double brute_force_min_error(const std::vector<double>& values, int bits, bool one_sided) {
  double peak = 0.0;
  for (double v : values) peak = std::max(peak, std::fabs(v));
  const int levels = (1 << bits) - 1;
  const int lo = one_sided ? 0 : -(levels - 1) / 2;
  const int hi = one_sided ? levels - 1 : (levels - 1) / 2;
  double best = std::numeric_limits<double>::infinity();
  for (int j = 1; j <= 100000; ++j) {
    const double delta = peak * j / 100000.0;
    double err = 0.0;
    for (double v : values) {
      const double r = v / delta;
      double k = r >= 0 ? std::floor(r + 0.5) : -std::floor(-r + 0.5);
      k = std::clamp(k, static_cast<double>(lo), static_cast<double>(hi));
      const double d = v - delta * k;
      err += d * d;
    }
    best = std::min(best, err);
  }
  return best;
}

}  // namespace

TEST(Quant, LevelCount) {
  EXPECT_EQ(level_count(2), 3);
  EXPECT_EQ(level_count(3), 7);
  EXPECT_EQ(level_count(4), 15);
  EXPECT_EQ(level_count(16), 65535);
  EXPECT_THROW(level_count(1), QuantError);
  EXPECT_THROW(level_count(17), QuantError);
}

TEST(Quant, SpecValidation) {
  EXPECT_THROW(QuantSpec::make("g", 2, 0.0, QuantKind::weight), QuantError);
  EXPECT_THROW(QuantSpec::make("g", 2, -1.0, QuantKind::weight), QuantError);
  EXPECT_THROW(QuantSpec::make("g", 2, std::nan(""), QuantKind::weight), QuantError);
  const auto s = QuantSpec::make("g", 3, 0.25, QuantKind::weight);
  EXPECT_EQ(s.levels, 7);
  EXPECT_EQ(s.min_index(), -3);
  EXPECT_EQ(s.max_index(), 3);
  const auto u = QuantSpec::make("g", 3, 0.25, QuantKind::signal_unbounded);
  EXPECT_EQ(u.min_index(), 0);
  EXPECT_EQ(u.max_index(), 6);
}

TEST(Quant, QuantizeValueExamples) {
  const auto s = QuantSpec::make("w", 2, 0.5, QuantKind::weight);
  EXPECT_EQ(quantize_value(0.0, s), 0.0);
  EXPECT_EQ(quantize_value(0.7, s), 0.5);
  EXPECT_EQ(quantize_value(-3.0, s), -0.5);
  // Half away from zero.
  EXPECT_EQ(quantize_value(0.25, s), 0.5);
  EXPECT_EQ(quantize_value(-0.25, s), -0.5);
  EXPECT_THROW(quantize_value(std::numeric_limits<double>::infinity(), s), QuantError);

  const auto unit = fixed_step_size(QuantKind::signal_bounded_unit, 2);
  EXPECT_EQ(quantize_value(-0.3, unit), 0.0);
  EXPECT_EQ(quantize_value(0.3, unit), 0.5);
  EXPECT_EQ(quantize_value(0.8, unit), 1.0);
}

TEST(Quant, IdempotentAndMonotone) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (auto kind : {QuantKind::weight, QuantKind::signal_bounded_unit, QuantKind::signal_unbounded,
                    QuantKind::signal_bounded_sym, QuantKind::signal_unbounded_sym}) {
    for (int bits : {2, 3, 4, 8}) {
      const auto s = QuantSpec::make("g", bits, 0.37, kind);
      std::vector<double> v(500);
      for (double& x : v) x = u(rng);
      std::sort(v.begin(), v.end());
      double prev = -std::numeric_limits<double>::infinity();
      for (double x : v) {
        const double q = quantize_value(x, s);
        EXPECT_EQ(quantize_value(q, s), q);
        EXPECT_GE(q, prev);
        prev = q;
      }
    }
  }
}

TEST(Quant, FixedStepSizes) {
  const auto unit2 = fixed_step_size(QuantKind::signal_bounded_unit, 2);
  EXPECT_DOUBLE_EQ(unit2.delta, 0.5);
  EXPECT_EQ(unit2.delta * unit2.max_index(), 1.0);
  EXPECT_EQ(unit2.delta * unit2.min_index(), 0.0);
  const auto sym2 = fixed_step_size(QuantKind::signal_bounded_sym, 2);
  EXPECT_DOUBLE_EQ(sym2.delta, 1.0);
  const auto sym3 = fixed_step_size(QuantKind::signal_bounded_sym, 3);
  EXPECT_DOUBLE_EQ(sym3.delta, 1.0 / 3.0);
  EXPECT_EQ(sym3.levels, 7);
  EXPECT_DOUBLE_EQ(sym3.delta * sym3.max_index(), 1.0);
  EXPECT_DOUBLE_EQ(sym3.delta * sym3.min_index(), -1.0);
  for (int bits = 2; bits <= 8; ++bits) {
    const auto u = fixed_step_size(QuantKind::signal_bounded_unit, bits);
    EXPECT_DOUBLE_EQ(u.delta * u.max_index(), 1.0);
  }
  EXPECT_THROW(fixed_step_size(QuantKind::weight, 2), QuantError);
}

TEST(Quant, StepSizeExamples) {
  const std::vector<double> single{-0.37};
  const auto s1 = optimize_step_size(single, 2);
  EXPECT_DOUBLE_EQ(s1.delta, 0.37);
  EXPECT_EQ(l2_error(single, s1), 0.0);

  const std::vector<double> pm{1.0, -1.0, 1.0, -1.0};
  const auto s2 = optimize_step_size(pm, 2);
  EXPECT_DOUBLE_EQ(s2.delta, 1.0);
  EXPECT_EQ(l2_error(pm, s2), 0.0);

  const std::vector<double> mixed{0.3, 0.9, -0.9};
  const auto s3 = optimize_step_size(mixed, 2);
  EXPECT_NEAR(l2_error(mixed, s3), brute_force_min_error(mixed, 2, false), 1e-9);

  EXPECT_THROW(optimize_step_size(std::vector<double>{0.0, 0.0}, 2), QuantError);
  EXPECT_THROW(optimize_step_size(std::vector<double>{}, 2), QuantError);
  EXPECT_THROW(optimize_step_size(std::vector<double>{1.0, std::nan("")}, 2), QuantError);
}

TEST(Quant, StepSizeMatchesExhaustiveGrid) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(1, 64);
  std::normal_distribution<double> gauss(0.0, 0.3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(size(rng)));
    for (double& x : v) x = gauss(rng);
    for (int bits : {2, 3, 4}) {
      const auto s = optimize_step_size(v, bits);
      EXPECT_NEAR(l2_error(v, s), brute_force_min_error(v, bits, false), 1e-9) << "trial " << trial;
    }
  }
}

TEST(Quant, ReluStepSize) {
  ActivationStats stats("C1");
  stats.add(std::vector<double>{0.0, 0.0, 5.0});
  const auto s = optimize_relu_step_size(stats, 2);
  EXPECT_DOUBLE_EQ(s.delta, 2.5);
  EXPECT_EQ(quantize_index(5.0, s), 2);
  EXPECT_EQ(l2_error(stats.values(), s), 0.0);

  ActivationStats constant("C2");
  constant.add(std::vector<double>{0.8, 0.8, 0.8});
  const auto c = optimize_relu_step_size(constant, 2);
  EXPECT_NEAR(l2_error(constant.values(), c), brute_force_min_error({0.8, 0.8, 0.8}, 2, true), 1e-12);

  ActivationStats dead("C3");
  dead.add(std::vector<double>{0.0, 0.0});
  EXPECT_THROW(optimize_relu_step_size(dead, 2), QuantError);
  EXPECT_THROW(optimize_relu_step_size(ActivationStats("empty"), 2), QuantError);
}

TEST(Quant, ReluStepSizeMatchesExhaustiveGrid) {
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> expo(2.0);
  for (int trial = 0; trial < 10; ++trial) {
    ActivationStats stats("S");
    std::vector<double> v(40);
    for (double& x : v) x = trial % 2 == 0 ? expo(rng) : std::max(0.0, expo(rng) - 0.4);
    stats.add(v);
    for (int bits : {2, 3}) {
      const auto s = optimize_relu_step_size(stats, bits);
      EXPECT_NEAR(l2_error(v, s), brute_force_min_error(v, bits, true), 1e-9);
    }
  }
}

TEST(Quant, ActivationStatsReservoir) {
  ActivationStats a("g", 7, 100);
  ActivationStats b("g", 7, 100);
  for (int i = 0; i < 1000; ++i) {
    a.add(static_cast<double>(i));
    b.add(static_cast<double>(i));
  }
  EXPECT_EQ(a.values().size(), 100u);
  EXPECT_EQ(a.seen(), 1000u);
  EXPECT_EQ(a.max_value(), 999.0);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(Quant, PackExamples) {
  EXPECT_TRUE(pack_codes(std::vector<std::uint16_t>{}, 2).empty());
  EXPECT_TRUE(unpack_codes({}, 2, 0).empty());
  const auto packed = pack_codes(std::vector<std::uint16_t>{0, 1, 2, 0}, 2);
  ASSERT_EQ(packed.size(), 1u);
  EXPECT_EQ(packed[0], 0x24);
  EXPECT_EQ(packed_size(178656, 2), 44664u);
  EXPECT_THROW(pack_codes(std::vector<std::uint16_t>{4}, 2), QuantError);
  EXPECT_THROW(unpack_codes(std::vector<std::uint8_t>{0x00}, 2, 5), QuantError);
}

TEST(Quant, PackRoundTrip) {
  std::mt19937_64 rng(2);
  for (int bits : {2, 3, 4}) {
    std::uniform_int_distribution<int> code(0, (1 << bits) - 2);
    for (std::size_t n = 0; n <= 1000; n += (n < 20 ? 1 : 37)) {
      std::vector<std::uint16_t> codes(n);
      for (auto& c : codes) c = static_cast<std::uint16_t>(code(rng));
      const auto bytes = pack_codes(codes, bits);
      EXPECT_EQ(bytes.size(), (n * bits + 7) / 8);
      EXPECT_EQ(unpack_codes(bytes, bits, n), codes);
    }
  }
}

TEST(Quant, CodeOffsets) {
  const auto s = QuantSpec::make("w", 2, 1.0, QuantKind::weight);
  EXPECT_EQ(index_to_code(-1, s), 0);
  EXPECT_EQ(index_to_code(0, s), 1);
  EXPECT_EQ(index_to_code(1, s), 2);
  EXPECT_EQ(code_to_index(2, s), 1);
  EXPECT_THROW(code_to_index(3, s), QuantError);
  EXPECT_THROW(index_to_code(2, s), QuantError);
}
