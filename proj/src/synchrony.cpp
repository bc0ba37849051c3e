#include "dsen/synchrony.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <complex>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dsen/error.hpp"

namespace dsen::synchrony {
namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.rows << "x" << a.cols << " vs " << b.rows << "x" << b.cols;
    throw ShapeError(os.str());
  }
  if (a.rows == 0 || a.cols == 0) throw ShapeError(std::string(what) + ": empty input");
}

double poly(std::span<const double> c, double x) {
  double r = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) r = r * x + c[i];
  return r;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(std::span<const double> v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

double isc(const Matrix& amp_x, const Matrix& amp_y) {
  require_same_shape(amp_x, amp_y, "isc");
  const auto n = static_cast<double>(amp_x.cols);
  double total = 0.0;
  for (std::size_t c = 0; c < amp_x.rows; ++c) {
    const auto x = amp_x.row(c);
    const auto y = amp_y.row(c);
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double dx = x[i] - mx;
      const double dy = y[i] - my;
      sxy += dx * dy;
      sxx += dx * dx;
      syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) {
      throw DataError("isc: zero amplitude variance in channel " + std::to_string(c));
    }
    total += std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
  }
  return total / static_cast<double>(amp_x.rows);
}

double plv(const Matrix& phase_x, const Matrix& phase_y) {
  require_same_shape(phase_x, phase_y, "plv");
  double total = 0.0;
  for (std::size_t c = 0; c < phase_x.rows; ++c) {
    const auto x = phase_x.row(c);
    const auto y = phase_y.row(c);
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - y[i];
      re += std::cos(d);
      im += std::sin(d);
    }
    const double n = static_cast<double>(x.size());
    total += std::min(1.0, std::hypot(re / n, im / n));
  }
  return total / static_cast<double>(phase_x.rows);
}

TestResult shapiro_wilk(std::span<const double> sample) {
  const std::size_t n = sample.size();
  if (n < 3 || n > 5000) {
    throw DataError("shapiro_wilk: unsupported sample size " + std::to_string(n) + " (need 3..5000)");
  }
  std::vector<double> x(sample.begin(), sample.end());
  for (double v : x) {
    if (!std::isfinite(v)) throw DataError("shapiro_wilk: non-finite value");
  }
  std::sort(x.begin(), x.end());
  const double range = x.back() - x.front();
  if (!(range > 1e-19 * std::max(1.0, std::abs(x.front())))) {
    throw DataError("shapiro_wilk: degenerate sample (all values equal)");
  }

  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static constexpr double c3[] = {0.544, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};
  static constexpr double g[] = {-2.273, 0.459};

  const double an = static_cast<double>(n);
  const std::size_t half = n / 2;
  // Coefficients for the upper half of the order statistics, largest first.
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    const boost::math::normal_distribution<double> std_normal;
    std::vector<double> m(half);
    double summ2 = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      m[i] = boost::math::quantile(std_normal, (static_cast<double>(i + 1) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = poly(c1, rsn) - m[0] / ssumm2;
    std::size_t first;
    double fac;
    if (n > 5) {
      first = 2;
      const double a2 = -m[1] / ssumm2 + poly(c2, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[1] = a2;
    } else {
      first = 1;
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
    }
    a[0] = a1;
    for (std::size_t i = first; i < half; ++i) a[i] = -m[i] / fac;
  }

  // Scale by the range for conditioning; W is scale-invariant.
  double num = 0.0;
  for (std::size_t i = 0; i < half; ++i) num += a[i] * (x[n - 1 - i] - x[i]) / range;
  const double mean = mean_of(x) / range;
  double den = 0.0;
  for (double v : x) den += (v / range - mean) * (v / range - mean);
  double w = std::min(1.0, num * num / den);

  TestResult result{w, 1.0};
  if (n == 3) {
    constexpr double pi6 = 1.90985931710274;  // 6 / pi
    constexpr double stqr = 1.04719755119660;  // pi / 3
    w = std::max(w, 0.75);
    result.statistic = w;
    result.p_value = std::clamp(pi6 * (std::asin(std::sqrt(w)) - stqr), 0.0, 1.0);
    return result;
  }
  const double w1 = 1.0 - w;
  if (w1 <= 0.0) return result;
  double y = std::log(w1);
  double mean_z;
  double sd_z;
  if (n <= 11) {
    const double gamma = poly(g, an);
    if (y >= gamma) {
      result.p_value = 1e-99;
      return result;
    }
    y = -std::log(gamma - y);
    mean_z = poly(c3, an);
    sd_z = std::exp(poly(c4, an));
  } else {
    const double xx = std::log(an);
    mean_z = poly(c5, xx);
    sd_z = std::exp(poly(c6, xx));
  }
  const boost::math::normal_distribution<double> dist(mean_z, sd_z);
  result.p_value = std::clamp(boost::math::cdf(boost::math::complement(dist, y)), 0.0, 1.0);
  return result;
}

TestResult t_test(std::span<const double> group_a, std::span<const double> group_b) {
  if (group_a.size() < 2 || group_b.size() < 2) throw DataError("t_test: each group needs at least 2 values");
  for (auto g : {group_a, group_b}) {
    for (double v : g) {
      if (!std::isfinite(v)) throw DataError("t_test: non-finite value");
    }
  }
  const double ma = mean_of(group_a);
  const double mb = mean_of(group_b);
  const double va = variance_of(group_a, ma) / static_cast<double>(group_a.size());
  const double vb = variance_of(group_b, mb) / static_cast<double>(group_b.size());
  const double se2 = va + vb;
  if (!(se2 > 0.0)) throw DataError("t_test: zero variance in both groups");
  const double t = (ma - mb) / std::sqrt(se2);
  const double df = se2 * se2 / (va * va / static_cast<double>(group_a.size() - 1) +
                                 vb * vb / static_cast<double>(group_b.size() - 1));
  const boost::math::students_t_distribution<double> dist(df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return {t, std::clamp(p, 0.0, 1.0)};
}

PairFeature pair_feature(std::span<const signal::EEGRecording> x, std::span<const signal::EEGRecording> y,
                         std::span<const signal::BandSpec> bands, const FeatureOptions& opts) {
  if (x.size() != y.size() || x.empty()) throw DataError("pair_feature: need matching, non-empty sample lists");
  PairFeature out;
  for (const auto& band : bands) {
    // Concatenate the analytic series of all of this pair's samples.
    Matrix amp_x, amp_y, ph_x, ph_y;
    auto append = [](Matrix& dst, const Matrix& src) {
      if (dst.rows == 0) {
        dst = src;
        return;
      }
      if (dst.rows != src.rows) throw ShapeError("pair_feature: channel count changes between samples");
      Matrix merged(dst.rows, dst.cols + src.cols);
      for (std::size_t c = 0; c < dst.rows; ++c) {
        std::copy(dst.row(c).begin(), dst.row(c).end(), merged.row(c).begin());
        std::copy(src.row(c).begin(), src.row(c).end(),
                  merged.row(c).begin() + static_cast<std::ptrdiff_t>(dst.cols));
      }
      dst = std::move(merged);
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].channels() != y[i].channels() || x[i].samples() != y[i].samples()) {
        throw ShapeError("pair_feature: partner recordings are not aligned");
      }
      const auto ax = signal::hilbert_analytic(signal::bandpass(x[i], band));
      const auto ay = signal::hilbert_analytic(signal::bandpass(y[i], band));
      append(amp_x, ax.amplitude);
      append(amp_y, ay.amplitude);
      append(ph_x, ax.phase);
      append(ph_y, ay.phase);
    }
    if (opts.per_window_samples == 0) {
      out.isc_per_band[band.name] = isc(amp_x, amp_y);
      out.plv_per_band[band.name] = plv(ph_x, ph_y);
      continue;
    }
    const std::size_t w = opts.per_window_samples;
    const std::size_t n_win = amp_x.cols / w;
    if (n_win == 0) throw DataError("pair_feature: window longer than the series");
    double isc_sum = 0.0, plv_sum = 0.0;
    auto window = [&](const Matrix& m, std::size_t k) {
      Matrix out_w(m.rows, w);
      for (std::size_t c = 0; c < m.rows; ++c) {
        std::copy_n(m.row(c).begin() + static_cast<std::ptrdiff_t>(k * w), w, out_w.row(c).begin());
      }
      return out_w;
    };
    for (std::size_t k = 0; k < n_win; ++k) {
      isc_sum += isc(window(amp_x, k), window(amp_y, k));
      plv_sum += plv(window(ph_x, k), window(ph_y, k));
    }
    out.isc_per_band[band.name] = isc_sum / static_cast<double>(n_win);
    out.plv_per_band[band.name] = plv_sum / static_cast<double>(n_win);
  }
  return out;
}

Grouping relation_grouping() {
  return [](const PairObservation& p) -> std::optional<int> { return p.relation == 1 ? 0 : 1; };
}

Grouping gender_grouping() {
  return [](const PairObservation& p) -> std::optional<int> { return p.same_gender ? 0 : 1; };
}

SynchronyReport synchrony_table(std::span<const PairObservation> pairs, const Grouping& grouping,
                                const std::string& iv_name, std::span<const std::string> bands) {
  std::vector<const PairObservation*> ga, gb;
  for (const auto& p : pairs) {
    const auto g = grouping(p);
    if (!g) continue;
    (*g == 0 ? ga : gb).push_back(&p);
  }
  if (ga.size() < 2 || gb.size() < 2) {
    std::ostringstream os;
    os << "synchrony_table: insufficient group sizes (" << ga.size() << ", " << gb.size() << ")";
    throw DataError(os.str());
  }
  SynchronyReport report;
  report.n_group_a = ga.size();
  report.n_group_b = gb.size();
  for (Feature f : {Feature::PLV, Feature::ISC}) {
    for (const auto& band : bands) {
      auto collect = [&](const std::vector<const PairObservation*>& group) {
        std::vector<double> v;
        for (const auto* p : group) {
          const auto& m = f == Feature::PLV ? p->feature.plv_per_band : p->feature.isc_per_band;
          const auto it = m.find(band);
          if (it == m.end()) throw DataError("synchrony_table: pair " + p->pair_id + " lacks band " + band);
          v.push_back(it->second);
        }
        return v;
      };
      const auto a = collect(ga);
      const auto b = collect(gb);
      TestResult r;
      const bool identical = std::all_of(a.begin(), a.end(), [&](double v) { return v == a.front(); }) &&
                             std::all_of(b.begin(), b.end(), [&](double v) { return v == a.front(); });
      if (identical) {
        r = {0.0, 1.0};  // no difference and no spread: nothing to test
      } else {
        r = t_test(a, b);
      }
      report.rows.push_back({iv_name, f, band, r.statistic, r.p_value});
    }
  }
  return report;
}

std::string significance_marker(double p_value) {
  if (p_value < kSignificance) return "yes";
  if (p_value < kMarginal) return "marginal";
  return "no";
}

void write_report_csv(const SynchronyReport& report, std::ostream& out) {
  out << "iv,feature,band,statistic,p_value,significant\n";
  std::ostringstream os;
  os << std::setprecision(6);
  for (const auto& r : report.rows) {
    os.str({});
    os << r.iv << ',' << (r.feature == Feature::PLV ? "PLV" : "ISC") << ',' << r.band << ',' << r.statistic << ','
       << r.p_value << ',' << significance_marker(r.p_value) << '\n';
    out << os.str();
  }
}

}  // namespace dsen::synchrony
