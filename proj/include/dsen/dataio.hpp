#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dsen/signal.hpp"

namespace dsen::data {

/// One time window of a dyad: both subjects' n concatenated segments.
/// Values are float32, the storage precision of .dyad files.
struct DyadicSample {
  int pair_id = 0;
  int window = 0;       // index of this window within the pair
  int label = 0;        // 0 stranger, 1 friend
  bool same_gender = true;
  std::vector<float> x;  // channels x (n_segments * segment_len), row-major
  std::vector<float> y;

  bool operator==(const DyadicSample&) const = default;
};

struct Dataset {
  double sample_rate_hz = 200.0;
  std::size_t n_channels = 0;
  std::size_t n_segments = 0;
  std::size_t segment_len = 0;
  std::vector<std::string> channel_names;
  std::vector<DyadicSample> samples;

  std::size_t sample_values() const { return n_channels * n_segments * segment_len; }
  /// Throws DataError on inconsistent sizes, labels, or non-finite values.
  void validate() const;
  /// Distinct pair ids in first-appearance order.
  std::vector<int> pair_ids() const;
  /// Subject 0 = x, 1 = y, as a double-precision recording.
  signal::EEGRecording recording(const DyadicSample& s, int subject) const;

  bool operator==(const Dataset&) const = default;
};

std::vector<std::string> default_channel_names(std::size_t n);

struct GeneratorConfig {
  std::size_t n_stranger_pairs = 18;
  std::size_t n_friend_pairs = 54;
  double coupling_rho = 0.6;  // friend-pair beta/gamma envelope coupling
  double stranger_rho = 0.0;
  std::map<std::string, double> band_power{{"theta", 1.0}, {"alpha", 1.5}, {"beta", 0.8}, {"gamma", 0.5}};
  double noise_floor = 0.1;
  std::uint64_t seed = 1;

  std::size_t n_channels = 30;
  std::size_t n_segments = 9;
  std::size_t segment_len = 400;
  std::size_t windows_per_pair = 4;
  double sample_rate_hz = 200.0;
  double envelope_cutoff_hz = 2.0;
  double envelope_depth = 0.5;  // standard deviation of the log envelope
  /// Carrier noise occupies this central fraction of each band.
  double carrier_width_fraction = 0.25;
  bool phase_coupling = false;  // also mix carrier noise, which couples PLV

  void validate() const;
};

/// Synthetic dyads. Pair i < n_stranger_pairs is a stranger pair. Each pair
/// draws from its own stream derived from (seed, pair_id), so any thread
/// count gives identical output.
Dataset generate(const GeneratorConfig& cfg, unsigned threads = 1);

inline constexpr std::uint32_t kDyadVersion = 1;

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::string& bytes, const std::string& what = "dataset");
void write_dataset(const Dataset& ds, const std::string& path);
/// Missing file -> ConfigError; bad magic, version, header or payload size -> FormatError.
Dataset read_dataset(const std::string& path);

struct ImportOptions {
  double target_rate_hz = 200.0;
  std::size_t n_segments = 9;
  double window_s = 2.0;
};

/// Reads <dir>/manifest.csv with columns
/// pair_id,file_x,file_y,label,gender_match,sample_rate. Each subject file
/// has one row per time point and one column per channel, with an optional
/// header row of channel names. Each recording is split into n_segments
/// equal clips and windowed.
Dataset import_csv(const std::string& dir, const ImportOptions& opts = {});

/// Integer-id stream derivation shared by the generator and training.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dsen::data
