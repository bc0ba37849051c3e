#include "doctest.h"

#include <cmath>

#include "dsen/error.hpp"
#include "dsen/log.hpp"
#include "dsen/signal.hpp"
#include "test_util.hpp"

using namespace dsen;
using namespace dsen::signal;
using dsen::testing::dft_amplitude;
using dsen::testing::kPi;
using dsen::testing::sinusoid;

namespace {

EEGRecording make_recording(std::vector<std::vector<double>> channels, double fs) {
  EEGRecording rec;
  rec.sample_rate_hz = fs;
  rec.data = Matrix(channels.size(), channels.front().size());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    std::copy(channels[c].begin(), channels[c].end(), rec.data.row(c).begin());
    rec.channel_names.push_back("ch" + std::to_string(c));
  }
  return rec;
}

}  // namespace

TEST_CASE("band definitions") {
  CHECK(BandSpec::parse("theta").low_hz == 4.0);
  CHECK(BandSpec::parse("theta").high_hz == 7.0);
  CHECK(BandSpec::parse("alpha").high_hz == 12.0);
  CHECK(BandSpec::parse("beta").high_hz == 29.0);
  CHECK(BandSpec::parse("gamma").low_hz == 30.0);
  CHECK(BandSpec::parse("broadband").low_hz == 1.0);
  CHECK_THROWS_AS(BandSpec::parse("delta"), ConfigError);
  CHECK_THROWS_AS((BandSpec{"x", 40.0, 120.0}.validate(200.0)), ConfigError);
  CHECK(bandpass_taps(200.0, 13.0) % 2 == 1);
  CHECK(bandpass_taps(200.0, 1.0) == 801);
}

TEST_CASE("resample") {
  SUBCASE("constant signal stays constant") {
    auto rec = make_recording({std::vector<double>(5000, 5.0)}, 1000.0);
    auto out = resample(rec, 200.0);
    CHECK(out.sample_rate_hz == 200.0);
    REQUIRE(out.samples() == 1000);
    for (double v : out.data.row(0)) CHECK(v == doctest::Approx(5.0).epsilon(1e-9));
  }
  SUBCASE("identity") {
    auto rec = make_recording({dsen::testing::normal_vector(300, 3)}, 200.0);
    auto out = resample(rec, 200.0);
    CHECK(out.data == rec.data);
  }
  SUBCASE("anti-aliasing keeps low band and rejects content above the new Nyquist") {
    const double fs = 1000.0;
    const std::size_t n = 4000;
    auto a = sinusoid(1.0, 10.0, fs, n);
    auto b = sinusoid(1.0, 90.0, fs, n);
    auto c = sinusoid(1.0, 160.0, fs, n);  // would alias onto 40 Hz
    for (std::size_t i = 0; i < n; ++i) a[i] += b[i] + c[i];
    auto out = resample(make_recording({a}, fs), 200.0);
    REQUIRE(out.samples() == 800);
    auto row = out.data.row(0);
    std::span<const double> interior(row.data() + 80, 640);
    CHECK(dft_amplitude(interior, 200.0, 10.0) == doctest::Approx(1.0).epsilon(0.02));
    CHECK(dft_amplitude(interior, 200.0, 40.0) < 0.01);  // > 40 dB down
  }
  SUBCASE("non-integer and upsampling ratios are rejected") {
    auto rec = make_recording({std::vector<double>(100, 1.0)}, 250.0);
    CHECK_THROWS_AS(resample(rec, 200.0), DataError);
    CHECK_THROWS_AS(resample(rec, 500.0), DataError);
  }
}

TEST_CASE("bandpass") {
  const double fs = 200.0;
  const std::size_t n = 800;
  const std::size_t edge = n / 20;
  const auto beta = BandSpec::parse("beta");

  SUBCASE("passband sinusoid is preserved within 2%") {
    auto x = sinusoid(1.0, 20.0, fs, n, 0.3);
    auto y = bandpass(make_recording({x}, fs), beta);
    REQUIRE(y.samples() == n);
    for (std::size_t i = edge; i < n - edge; ++i) CHECK(std::abs(y.data(0, i) - x[i]) < 0.02);
  }
  SUBCASE("stopband sinusoid is attenuated below 1%") {
    auto x = sinusoid(1.0, 5.0, fs, n);
    auto y = bandpass(make_recording({x}, fs), beta);
    for (std::size_t i = edge; i < n - edge; ++i) CHECK(std::abs(y.data(0, i)) < 0.01);
  }
  SUBCASE("zero in, zero out") {
    auto y = bandpass(make_recording({std::vector<double>(n, 0.0)}, fs), beta);
    for (double v : y.data.data) CHECK(v == 0.0);
  }
  SUBCASE("linearity") {
    auto x = dsen::testing::normal_vector(n, 11);
    auto z = dsen::testing::normal_vector(n, 12);
    std::vector<double> mix(n);
    for (std::size_t i = 0; i < n; ++i) mix[i] = 2.5 * x[i] - 0.7 * z[i];
    auto bx = bandpass(make_recording({x}, fs), beta);
    auto bz = bandpass(make_recording({z}, fs), beta);
    auto bm = bandpass(make_recording({mix}, fs), beta);
    std::vector<double> expect(n);
    for (std::size_t i = 0; i < n; ++i) expect[i] = 2.5 * bx.data(0, i) - 0.7 * bz.data(0, i);
    CHECK(dsen::testing::rel_norm_diff(bm.data.row(0), expect) < 1e-9);
  }
  SUBCASE("short signal") {
    auto theta = BandSpec::parse("theta");
    CHECK_THROWS_AS(bandpass(make_recording({std::vector<double>(400, 1.0)}, fs), theta), DataError);
  }
}

TEST_CASE("hilbert analytic signal") {
  const double fs = 200.0;
  const std::size_t n = 800;
  const std::size_t lo = n / 20;
  const std::size_t hi = n - n / 20;

  SUBCASE("unit cosine has unit envelope and linear phase") {
    auto a = hilbert_analytic(make_recording({sinusoid(1.0, 10.0, fs, n)}, fs));
    const double step = 2.0 * kPi * 10.0 / fs;
    for (std::size_t i = lo; i < hi; ++i) {
      CHECK(std::abs(a.amplitude(0, i) - 1.0) < 1e-3);
      double d = a.phase(0, i + 1) - a.phase(0, i) - step;
      d = std::remainder(d, 2.0 * kPi);
      CHECK(std::abs(d) < 1e-3);
    }
  }
  SUBCASE("scaled cosine") {
    auto a = hilbert_analytic(make_recording({sinusoid(3.5, 10.0, fs, n)}, fs));
    for (std::size_t i = lo; i < hi; ++i) CHECK(std::abs(a.amplitude(0, i) - 3.5) < 3.5e-3);
  }
  SUBCASE("real part round trip and envelope dominance on noise") {
    for (std::size_t len : {801u, 1000u}) {
      auto x = dsen::testing::normal_vector(len, 5);
      const auto z = analytic_signal(x);
      std::vector<double> re(len);
      for (std::size_t i = 0; i < len; ++i) re[i] = z[i].real();
      CHECK(dsen::testing::rel_norm_diff(re, x) < 1e-10);
      auto bp = bandpass(make_recording({x}, fs), BandSpec::parse("gamma"));
      auto a = hilbert_analytic(bp);
      for (std::size_t i = 0; i < len; ++i) {
        CHECK(a.amplitude(0, i) >= std::abs(bp.data(0, i)) - 1e-9);
        CHECK(a.phase(0, i) > -kPi);
        CHECK(a.phase(0, i) <= kPi);
      }
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(hilbert_analytic(make_recording({std::vector<double>(4, 1.0)}, fs)), DataError);
    auto x = sinusoid(1.0, 10.0, fs, 64);
    x[7] = std::nan("");
    CHECK_THROWS_AS(hilbert_analytic(make_recording({x}, fs)), DataError);
  }
}

TEST_CASE("segment_and_concat") {
  const double fs = 200.0;
  SUBCASE("single 4 s interval gives two samples") {
    auto rec = make_recording({dsen::testing::normal_vector(1000, 1)}, fs);
    const Interval iv[] = {{0.5, 4.5}};
    auto s = segment_and_concat(rec, iv, 2.0);
    REQUIRE(s.size() == 2);
    CHECK(s[0].n_segments() == 1);
    CHECK(s[0].segments[0].cols == 400);
    CHECK(s[1].segments[0](0, 0) == rec.data(0, 100 + 400));
  }
  SUBCASE("nine clips of 160-296 s") {
    const double durations[] = {160, 296, 216, 200, 180, 250, 230, 190, 222};
    std::vector<Interval> ivs;
    double t = 0.0;
    for (double d : durations) {
      ivs.push_back({t, t + d});
      t += d + 30.0;
    }
    auto rec = make_recording({std::vector<double>(static_cast<std::size_t>(t * fs), 0.0)}, fs);
    auto s = segment_and_concat(rec, ivs, 2.0);
    CHECK(s.size() == 80);
    for (const auto& smp : s) {
      CHECK(smp.n_segments() == 9);
      for (const auto& seg : smp.segments) CHECK(seg.cols == 400);
      CHECK(smp.concatenated().cols == 3600);
    }
  }
  SUBCASE("interval shorter than the window warns and emits nothing") {
    int warnings = 0;
    auto prev = set_warning_sink([&](const std::string&) { ++warnings; });
    auto rec = make_recording({std::vector<double>(1000, 0.0)}, fs);
    const Interval iv[] = {{0.0, 1.0}, {1.0, 4.0}};
    CHECK(segment_and_concat(rec, iv, 2.0).empty());
    CHECK(warnings == 1);
    set_warning_sink(prev);
  }
  SUBCASE("errors") {
    auto rec = make_recording({std::vector<double>(1000, 0.0)}, fs);
    CHECK_THROWS_AS(segment_and_concat(rec, std::span<const Interval>{}, 2.0), DataError);
    const Interval overlap[] = {{0.0, 3.0}, {2.0, 4.0}};
    CHECK_THROWS_AS(segment_and_concat(rec, overlap, 1.0), DataError);
    const Interval beyond[] = {{0.0, 9.0}};
    CHECK_THROWS_AS(segment_and_concat(rec, beyond, 1.0), DataError);
  }
}
