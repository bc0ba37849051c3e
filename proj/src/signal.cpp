#include "dsen/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

#include "dsen/error.hpp"
#include "dsen/log.hpp"

namespace dsen::signal {
namespace {

constexpr double kPi = std::numbers::pi;

// The FFTW planner is not re-entrant; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

double sinc_lowpass_tap(double cutoff_norm, double offset) {
  // cutoff_norm is cutoff / sample_rate (cycles per sample).
  if (offset == 0.0) return 2.0 * cutoff_norm;
  return std::sin(2.0 * kPi * cutoff_norm * offset) / (kPi * offset);
}

// Full linear convolution via FFT.
std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t n = 1;
  while (n < out_len) n <<= 1;
  std::vector<std::complex<double>> fa(n), fb(n);
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = b[i];
  auto* pa = reinterpret_cast<fftw_complex*>(fa.data());
  auto* pb = reinterpret_cast<fftw_complex*>(fb.data());
  fftw_plan plan_a, plan_b, plan_inv;
  {
    std::lock_guard lock(planner_mutex());
    plan_a = fftw_plan_dft_1d(static_cast<int>(n), pa, pa, FFTW_FORWARD, FFTW_ESTIMATE);
    plan_b = fftw_plan_dft_1d(static_cast<int>(n), pb, pb, FFTW_FORWARD, FFTW_ESTIMATE);
    plan_inv = fftw_plan_dft_1d(static_cast<int>(n), pa, pa, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan_a);
  fftw_execute(plan_b);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fftw_execute(plan_inv);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_a);
    fftw_destroy_plan(plan_b);
    fftw_destroy_plan(plan_inv);
  }
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real() / static_cast<double>(n);
  return out;
}

}  // namespace

void EEGRecording::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw DataError("recording sample rate must be positive");
  }
  if (channels() < 1) throw DataError("recording has no channels");
  if (samples() < 2) throw DataError("recording needs at least 2 samples");
  if (data.data.size() != channels() * samples()) throw ShapeError("recording data size mismatch");
  if (!channel_names.empty() && channel_names.size() != channels()) {
    throw DataError("channel name count does not match channel count");
  }
  for (std::size_t c = 0; c < channels(); ++c) {
    for (double v : data.row(c)) {
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite value in channel " << c;
        throw DataError(os.str());
      }
    }
  }
}

BandSpec BandSpec::canonical(Band band) {
  switch (band) {
    case Band::Theta: return {"theta", 4.0, 7.0};
    case Band::Alpha: return {"alpha", 8.0, 12.0};
    case Band::Beta: return {"beta", 13.0, 29.0};
    case Band::Gamma: return {"gamma", 30.0, 45.0};
    case Band::Broadband: return {"broadband", 1.0, 45.0};
  }
  throw ConfigError("unknown band");
}

BandSpec BandSpec::parse(const std::string& name) {
  if (name == "theta") return canonical(Band::Theta);
  if (name == "alpha") return canonical(Band::Alpha);
  if (name == "beta") return canonical(Band::Beta);
  if (name == "gamma") return canonical(Band::Gamma);
  if (name == "broadband") return canonical(Band::Broadband);
  throw ConfigError("unknown band name '" + name + "'");
}

void BandSpec::validate(double sample_rate_hz) const {
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate_hz / 2.0)) {
    std::ostringstream os;
    os << "band " << name << " (" << low_hz << "-" << high_hz << " Hz) invalid at " << sample_rate_hz
       << " Hz";
    throw ConfigError(os.str());
  }
}

Matrix SegmentedSample::concatenated() const {
  if (segments.empty()) return {};
  const std::size_t ch = segments.front().rows;
  const std::size_t len = segments.front().cols;
  Matrix out(ch, len * segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (std::size_t c = 0; c < ch; ++c) {
      std::copy(segments[s].row(c).begin(), segments[s].row(c).end(),
                out.row(c).begin() + static_cast<std::ptrdiff_t>(s * len));
    }
  }
  return out;
}

std::size_t bandpass_taps(double sample_rate_hz, double low_hz) {
  auto taps = static_cast<std::size_t>(std::lround(4.0 * sample_rate_hz / low_hz));
  if (taps % 2 == 0) ++taps;
  return std::max<std::size_t>(taps, 3);
}

std::vector<double> lowpass_kernel(double sample_rate_hz, double cutoff_hz, std::size_t taps) {
  if (taps % 2 == 0) throw ConfigError("FIR kernel length must be odd");
  const double fc = cutoff_hz / sample_rate_hz;
  const double mid = static_cast<double>(taps - 1) / 2.0;
  std::vector<double> h(taps);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double w = 0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(taps - 1));
    h[i] = w * sinc_lowpass_tap(fc, static_cast<double>(i) - mid);
    sum += h[i];
  }
  for (double& v : h) v /= sum;  // unit DC gain
  return h;
}

std::vector<double> bandpass_kernel(double sample_rate_hz, double low_hz, double high_hz) {
  const std::size_t taps = bandpass_taps(sample_rate_hz, low_hz);
  auto hi = lowpass_kernel(sample_rate_hz, high_hz, taps);
  const auto lo = lowpass_kernel(sample_rate_hz, low_hz, taps);
  for (std::size_t i = 0; i < taps; ++i) hi[i] -= lo[i];
  return hi;
}

std::vector<double> filtfilt(std::span<const double> x, std::span<const double> h) {
  const std::size_t n = x.size();
  const std::size_t k = h.size();
  if (n < 3 * k) {
    std::ostringstream os;
    os << "signal of " << n << " samples too short for a " << k << "-tap filter (need " << 3 * k << ")";
    throw DataError(os.str());
  }
  const std::size_t pad = std::min(3 * k, n - 1);
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  // Forward then backward filtering equals one pass of h convolved with its
  // reversal. The padding is longer than the start-up transient of either
  // pass, so the interior matches the two-pass form exactly.
  std::vector<double> hr(h.rbegin(), h.rend());
  std::vector<double> g(2 * k - 1, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) g[i + j] += h[i] * hr[j];
  const auto y = fft_convolve(ext, g);
  // g is centred at index k - 1.
  const std::size_t start = pad + k - 1;
  return {y.begin() + static_cast<std::ptrdiff_t>(start), y.begin() + static_cast<std::ptrdiff_t>(start + n)};
}

EEGRecording resample(const EEGRecording& rec, double target_hz) {
  rec.validate();
  if (!(target_hz > 0.0) || target_hz > rec.sample_rate_hz) {
    throw DataError("unsupported resample: target rate must be positive and not above the source rate");
  }
  const double ratio = rec.sample_rate_hz / target_hz;
  const auto factor = static_cast<std::size_t>(std::lround(ratio));
  if (std::abs(ratio - static_cast<double>(factor)) > 1e-9 * ratio) {
    std::ostringstream os;
    os << "unsupported resample: " << rec.sample_rate_hz << " -> " << target_hz
       << " Hz is not an integer decimation";
    throw DataError(os.str());
  }
  if (factor == 1) return rec;

  // Anti-alias cutoff at 80% of the new Nyquist frequency.
  const std::size_t taps = 20 * factor + 1;
  const auto h = lowpass_kernel(rec.sample_rate_hz, 0.4 * target_hz, taps);
  EEGRecording out;
  out.sample_rate_hz = target_hz;
  out.channel_names = rec.channel_names;
  out.data = Matrix(rec.channels(), rec.samples() / factor);
  for (std::size_t c = 0; c < rec.channels(); ++c) {
    const auto filtered = filtfilt(rec.data.row(c), h);
    auto dst = out.data.row(c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = filtered[i * factor];
  }
  return out;
}

EEGRecording bandpass(const EEGRecording& rec, const BandSpec& band) {
  rec.validate();
  band.validate(rec.sample_rate_hz);
  const auto h = bandpass_kernel(rec.sample_rate_hz, band.low_hz, band.high_hz);
  EEGRecording out;
  out.sample_rate_hz = rec.sample_rate_hz;
  out.channel_names = rec.channel_names;
  out.data = Matrix(rec.channels(), rec.samples());
  for (std::size_t c = 0; c < rec.channels(); ++c) {
    const auto y = filtfilt(rec.data.row(c), h);
    std::copy(y.begin(), y.end(), out.data.row(c).begin());
  }
  return out;
}

namespace {

// FFT, scale bin k by gain(k), inverse FFT.
template <typename Gain>
std::vector<std::complex<double>> spectral_gain(std::span<const double> x, Gain gain) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {x[i], 0.0};
  auto* data = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan fwd;
  fftw_plan inv;
  {
    std::lock_guard lock(planner_mutex());
    fwd = fftw_plan_dft_1d(static_cast<int>(n), data, data, FFTW_FORWARD, FFTW_ESTIMATE);
    inv = fftw_plan_dft_1d(static_cast<int>(n), data, data, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (std::size_t k = 0; k < n; ++k) buf[k] *= gain(k);
  fftw_execute(inv);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& v : buf) v *= scale;
  return buf;
}

}  // namespace

std::vector<std::complex<double>> analytic_signal(std::span<const double> x) {
  const std::size_t n = x.size();
  // Keep DC (and Nyquist for even n), double positive, zero negative frequencies.
  return spectral_gain(x, [n](std::size_t k) {
    if (k == 0 || (n % 2 == 0 && k == n / 2)) return 1.0;
    return k < (n + 1) / 2 ? 2.0 : 0.0;
  });
}

std::vector<std::complex<double>> analytic_band(std::span<const double> x, double sample_rate_hz, double low_hz,
                                                double high_hz) {
  const std::size_t n = x.size();
  const double df = sample_rate_hz / static_cast<double>(n);
  return spectral_gain(x, [=](std::size_t k) {
    const double f = static_cast<double>(k) * df;
    if (k >= (n + 1) / 2 || f < low_hz || f > high_hz) return 0.0;
    return k == 0 ? 1.0 : 2.0;
  });
}

AnalyticSeries hilbert_analytic(const EEGRecording& rec) {
  rec.validate();
  if (rec.samples() < 8) throw DataError("Hilbert transform needs at least 8 samples");
  AnalyticSeries out{Matrix(rec.channels(), rec.samples()), Matrix(rec.channels(), rec.samples())};
  for (std::size_t c = 0; c < rec.channels(); ++c) {
    const auto z = analytic_signal(rec.data.row(c));
    auto amp = out.amplitude.row(c);
    auto ph = out.phase.row(c);
    for (std::size_t i = 0; i < z.size(); ++i) {
      amp[i] = std::abs(z[i]);
      double p = std::atan2(z[i].imag(), z[i].real());
      if (p <= -kPi) p = kPi;
      ph[i] = p;
    }
  }
  return out;
}

std::vector<SegmentedSample> segment_and_concat(const EEGRecording& rec,
                                                std::span<const Interval> boundaries,
                                                double window_s) {
  rec.validate();
  if (boundaries.empty()) throw DataError("segment_and_concat: empty boundaries");
  if (!(window_s > 0.0)) throw ConfigError("window length must be positive");
  const double fs = rec.sample_rate_hz;
  const auto win = static_cast<std::size_t>(std::lround(window_s * fs));
  if (win == 0) throw ConfigError("window shorter than one sample");

  struct Span {
    std::size_t start, end;
  };
  std::vector<Span> spans;
  for (const auto& b : boundaries) {
    if (!(b.start_s >= 0.0 && b.end_s > b.start_s)) throw DataError("invalid interval bounds");
    const auto s = static_cast<std::size_t>(std::lround(b.start_s * fs));
    const auto e = static_cast<std::size_t>(std::lround(b.end_s * fs));
    if (e > rec.samples()) throw DataError("interval extends beyond the recording");
    spans.push_back({s, e});
  }
  auto sorted = spans;
  std::sort(sorted.begin(), sorted.end(), [](const Span& a, const Span& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].start < sorted[i - 1].end) throw DataError("intervals overlap");
  }

  std::size_t count = SIZE_MAX;
  for (const auto& sp : spans) count = std::min(count, (sp.end - sp.start) / win);
  if (count == 0) {
    warn("segment_and_concat: an interval is shorter than the window; no samples emitted");
    return {};
  }

  std::vector<SegmentedSample> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    out[k].window_seconds = window_s;
    for (const auto& sp : spans) {
      Matrix seg(rec.channels(), win);
      const std::size_t offset = sp.start + k * win;
      for (std::size_t c = 0; c < rec.channels(); ++c) {
        const auto src = rec.data.row(c);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(offset),
                  src.begin() + static_cast<std::ptrdiff_t>(offset + win), seg.row(c).begin());
      }
      out[k].segments.push_back(std::move(seg));
    }
  }
  return out;
}

}  // namespace dsen::signal
