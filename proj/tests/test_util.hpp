#pragma once

// Test-only helpers: brute-force oracles and fixed-seed data.

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace dsen::testing {

inline constexpr double kPi = std::numbers::pi;

/// Single-frequency DFT amplitude (peak units) of x at freq_hz.
inline double dft_amplitude(std::span<const double> x, double fs, double freq_hz) {
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = 2.0 * kPi * freq_hz * static_cast<double>(i) / fs;
    acc += x[i] * std::complex<double>(std::cos(w), -std::sin(w));
  }
  return 2.0 * std::abs(acc) / static_cast<double>(x.size());
}

inline std::vector<double> sinusoid(double amp, double freq, double fs, std::size_t n, double phase = 0.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = amp * std::cos(2.0 * kPi * freq * static_cast<double>(i) / fs + phase);
  return v;
}

inline std::vector<double> normal_vector(std::size_t n, unsigned seed, double mean = 0.0, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline double rel_norm_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace dsen::testing
