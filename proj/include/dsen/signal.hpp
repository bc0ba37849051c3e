#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "dsen/matrix.hpp"

namespace dsen::signal {

/// Multi-channel EEG (µV), channels × samples.
struct EEGRecording {
  Matrix data;
  double sample_rate_hz = 0.0;
  std::vector<std::string> channel_names;

  std::size_t channels() const { return data.rows; }
  std::size_t samples() const { return data.cols; }

  /// Throws DataError if any invariant is broken (non-finite values, fewer
  /// than two samples, channel name count mismatch).
  void validate() const;
};

enum class Band { Theta, Alpha, Beta, Gamma, Broadband };

struct BandSpec {
  std::string name;
  double low_hz = 0.0;
  double high_hz = 0.0;

  static BandSpec canonical(Band band);
  /// Accepts theta, alpha, beta, gamma, broadband. Throws ConfigError otherwise.
  static BandSpec parse(const std::string& name);

  void validate(double sample_rate_hz) const;
};

/// Instantaneous amplitude and phase (radians, in (-pi, pi]).
struct AnalyticSeries {
  Matrix amplitude;
  Matrix phase;
};

/// n equal-length windows, one per stimulus interval.
struct SegmentedSample {
  std::vector<Matrix> segments;
  double window_seconds = 0.0;

  std::size_t n_segments() const { return segments.size(); }
  /// Segments joined along time: channels × (n · window samples).
  Matrix concatenated() const;
};

struct Interval {
  double start_s = 0.0;
  double end_s = 0.0;
};

// Kernel design. All kernels are odd-length, symmetric, Hamming-windowed sinc.
std::size_t bandpass_taps(double sample_rate_hz, double low_hz);
std::vector<double> lowpass_kernel(double sample_rate_hz, double cutoff_hz, std::size_t taps);
std::vector<double> bandpass_kernel(double sample_rate_hz, double low_hz, double high_hz);

/// Zero-phase filtering: causal FIR pass forward then backward over an
/// odd-extended copy of x. Requires x.size() >= 3 * h.size().
std::vector<double> filtfilt(std::span<const double> x, std::span<const double> h);

EEGRecording resample(const EEGRecording& rec, double target_hz);
EEGRecording bandpass(const EEGRecording& rec, const BandSpec& band);

/// Analytic signal x + i·H[x] by the frequency-domain method.
std::vector<std::complex<double>> analytic_signal(std::span<const double> x);
AnalyticSeries hilbert_analytic(const EEGRecording& rec);

/// Brick-wall analytic signal keeping only frequencies in [low_hz, high_hz].
/// The real part is the ideally band-limited x. Used for synthesis.
std::vector<std::complex<double>> analytic_band(std::span<const double> x, double sample_rate_hz, double low_hz,
                                                double high_hz);

/// Takes the k-th window of every interval to form sample k. Intervals
/// shorter than one window yield zero samples and a warning.
std::vector<SegmentedSample> segment_and_concat(const EEGRecording& rec,
                                                std::span<const Interval> boundaries,
                                                double window_s);

}  // namespace dsen::signal
