#pragma once

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dsen/matrix.hpp"
#include "dsen/signal.hpp"

namespace dsen::synchrony {

/// Mean over channels of the per-channel Pearson correlation between two
/// amplitude envelopes. Result lies in [-1, 1].
double isc(const Matrix& amp_x, const Matrix& amp_y);

/// Mean over channels of |mean_t exp(i(phase_x - phase_y))|. Result in [0, 1].
double plv(const Matrix& phase_x, const Matrix& phase_y);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Shapiro-Wilk normality test (Royston's AS R94 approximation, 3 <= n <= 5000).
TestResult shapiro_wilk(std::span<const double> sample);

/// Two-sample Welch t-test, two-sided, Welch-Satterthwaite degrees of freedom.
TestResult t_test(std::span<const double> group_a, std::span<const double> group_b);

enum class Feature { PLV, ISC };

struct PairFeature {
  std::map<std::string, double> isc_per_band;
  std::map<std::string, double> plv_per_band;
};

struct FeatureOptions {
  /// Average ISC/PLV over windows of this many samples instead of computing
  /// them over the whole concatenated series. Zero disables.
  std::size_t per_window_samples = 0;
};

/// Band-limits each aligned (x, y) recording, takes the analytic signal, and
/// computes ISC and PLV per band over the pair's concatenated series.
PairFeature pair_feature(std::span<const signal::EEGRecording> x,
                         std::span<const signal::EEGRecording> y,
                         std::span<const signal::BandSpec> bands, const FeatureOptions& opts = {});

/// One dyad's features plus the metadata the tests group on.
struct PairObservation {
  std::string pair_id;
  int relation = 0;       // 0 stranger, 1 friend
  bool same_gender = true;
  PairFeature feature;
};

/// Returns 0 for group A, 1 for group B, nullopt to exclude a pair.
using Grouping = std::function<std::optional<int>(const PairObservation&)>;

Grouping relation_grouping();  // A = friend, B = stranger
Grouping gender_grouping();    // A = same gender, B = different

struct ReportRow {
  std::string iv;
  Feature feature = Feature::ISC;
  std::string band;
  double statistic = 0.0;
  double p_value = 1.0;
};

struct SynchronyReport {
  std::vector<ReportRow> rows;
  std::size_t n_group_a = 0;
  std::size_t n_group_b = 0;
};

inline constexpr double kSignificance = 0.05;
inline constexpr double kMarginal = 0.10;

/// Welch t-test per (feature, band), rows ordered PLV bands then ISC bands.
SynchronyReport synchrony_table(std::span<const PairObservation> pairs, const Grouping& grouping,
                                const std::string& iv_name, std::span<const std::string> bands);

/// "yes" below 0.05, "marginal" below 0.10, otherwise "no".
std::string significance_marker(double p_value);

/// CSV with header iv,feature,band,statistic,p_value,significant; 6 significant digits.
void write_report_csv(const SynchronyReport& report, std::ostream& out);

}  // namespace dsen::synchrony
