#include "dsen/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "dsen/binio.hpp"
#include "dsen/error.hpp"

namespace dsen::data {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over the combined key
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::string> default_channel_names(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("ch" + std::to_string(i + 1));
  return names;
}

void Dataset::validate() const {
  if (!(sample_rate_hz > 0.0)) throw DataError("dataset: sample rate must be positive");
  if (n_channels == 0 || n_segments == 0 || segment_len == 0) throw DataError("dataset: empty sample geometry");
  if (channel_names.size() != n_channels) throw DataError("dataset: channel name count does not match channels");
  const std::size_t n = sample_values();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.x.size() != n || s.y.size() != n) {
      throw DataError("dataset: sample " + std::to_string(i) + " (pair " + std::to_string(s.pair_id) +
                      ") has the wrong number of values");
    }
    if (s.label != 0 && s.label != 1) throw DataError("dataset: sample " + std::to_string(i) + " has label outside {0,1}");
    for (const auto* v : {&s.x, &s.y}) {
      for (float f : *v) {
        if (!std::isfinite(f)) throw DataError("dataset: non-finite value in pair " + std::to_string(s.pair_id));
      }
    }
  }
}

std::vector<int> Dataset::pair_ids() const {
  std::vector<int> ids;
  std::set<int> seen;
  for (const auto& s : samples) {
    if (seen.insert(s.pair_id).second) ids.push_back(s.pair_id);
  }
  return ids;
}

signal::EEGRecording Dataset::recording(const DyadicSample& s, int subject) const {
  const auto& v = subject == 0 ? s.x : s.y;
  signal::EEGRecording rec;
  rec.sample_rate_hz = sample_rate_hz;
  rec.channel_names = channel_names;
  rec.data = Matrix(n_channels, n_segments * segment_len);
  std::copy(v.begin(), v.end(), rec.data.data.begin());
  return rec;
}

void GeneratorConfig::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("generator.") + name + " must lie in [0, 1]");
  };
  unit(coupling_rho, "coupling_rho");
  unit(stranger_rho, "stranger_rho");
  if (n_channels == 0 || n_segments == 0 || segment_len == 0 || windows_per_pair == 0) {
    throw ConfigError("generator: channels, segments, segment_len and windows_per_pair must be positive");
  }
  if (!(sample_rate_hz > 0.0)) throw ConfigError("generator.sample_rate_hz must be positive");
  if (!(noise_floor >= 0.0)) throw ConfigError("generator.noise_floor must be non-negative");
  if (!(envelope_depth >= 0.0)) throw ConfigError("generator.envelope_depth must be non-negative");
  if (!(carrier_width_fraction > 0.0 && carrier_width_fraction <= 1.0)) {
    throw ConfigError("generator.carrier_width_fraction must lie in (0, 1]");
  }
  if (!(envelope_cutoff_hz > 0.0 && envelope_cutoff_hz < sample_rate_hz / 2)) {
    throw ConfigError("generator.envelope_cutoff_hz must lie in (0, Nyquist)");
  }
  for (const auto& [band, power] : band_power) {
    const auto spec = signal::BandSpec::parse(band);
    spec.validate(sample_rate_hz);
    if (!(power >= 0.0)) throw ConfigError("generator.band_power." + band + " must be non-negative");
  }
}

namespace {

using Series = std::vector<double>;

Series white(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Series v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Zero-mean, unit-variance process band-limited to [0, cutoff].
Series slow_process(std::size_t n, double fs, double cutoff, std::mt19937_64& rng) {
  const auto z = signal::analytic_band(white(n, rng), fs, 0.0, cutoff);
  Series v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = z[i].real();
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  for (auto& x : v) x = sd > 0.0 ? (x - mu) / sd : 0.0;
  return v;
}

Series mix(const Series& priv, const Series& shared, double rho) {
  Series out(priv.size());
  const double a = std::sqrt(1.0 - rho), b = std::sqrt(rho);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * priv[i] + b * shared[i];
  return out;
}

std::vector<DyadicSample> generate_pair(const GeneratorConfig& cfg, int pair_id) {
  std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(pair_id)));
  const bool friends = static_cast<std::size_t>(pair_id) >= cfg.n_stranger_pairs;
  const bool same_gender = std::bernoulli_distribution(0.5)(rng);
  const std::size_t clip_len = cfg.windows_per_pair * cfg.segment_len;
  const std::size_t n = cfg.n_segments * clip_len;
  const double fs = cfg.sample_rate_hz;
  const std::size_t c_count = cfg.n_channels;

  std::array<Matrix, 2> subj{Matrix(c_count, n), Matrix(c_count, n)};
  for (const auto& [band_name, power] : cfg.band_power) {
    const auto band = signal::BandSpec::parse(band_name);
    const bool coupled_band = band_name == "beta" || band_name == "gamma";
    const double rho = coupled_band ? (friends ? cfg.coupling_rho : cfg.stranger_rho) : 0.0;
    const Series shared_env = slow_process(n, fs, cfg.envelope_cutoff_hz, rng);
    std::vector<Series> shared_carrier;
    if (cfg.phase_coupling) {
      for (std::size_t c = 0; c < c_count; ++c) shared_carrier.push_back(white(n, rng));
    }
    const double amp = std::sqrt(power);
    const double centre = 0.5 * (band.low_hz + band.high_hz);
    const double half_width = 0.5 * cfg.carrier_width_fraction * (band.high_hz - band.low_hz);
    for (auto& m : subj) {
      const Series env = mix(slow_process(n, fs, cfg.envelope_cutoff_hz, rng), shared_env, rho);
      for (std::size_t c = 0; c < c_count; ++c) {
        Series noise = white(n, rng);
        if (cfg.phase_coupling) noise = mix(noise, shared_carrier[c], rho);
        const auto z = signal::analytic_band(noise, fs, centre - half_width, centre + half_width);
        auto row = m.row(c);
        for (std::size_t i = 0; i < n; ++i) {
          // Unit-modulus carrier so the envelope is set by env alone.
          row[i] += amp * std::exp(cfg.envelope_depth * env[i]) * std::cos(std::arg(z[i]));
        }
      }
    }
  }
  std::normal_distribution<double> floor_noise(0.0, 1.0);
  for (auto& m : subj) {
    for (auto& v : m.data) v += cfg.noise_floor * floor_noise(rng);
  }

  std::vector<signal::Interval> clips;
  for (std::size_t k = 0; k < cfg.n_segments; ++k) {
    clips.push_back({static_cast<double>(k * clip_len) / fs, static_cast<double>((k + 1) * clip_len) / fs});
  }
  const double window_s = static_cast<double>(cfg.segment_len) / fs;
  std::array<std::vector<signal::SegmentedSample>, 2> windows;
  for (int s = 0; s < 2; ++s) {
    signal::EEGRecording rec{subj[s], fs, default_channel_names(c_count)};
    windows[s] = signal::segment_and_concat(rec, clips, window_s);
  }
  std::vector<DyadicSample> out;
  for (std::size_t w = 0; w < windows[0].size(); ++w) {
    DyadicSample ds;
    ds.pair_id = pair_id;
    ds.window = static_cast<int>(w);
    ds.label = friends ? 1 : 0;
    ds.same_gender = same_gender;
    const Matrix mx = windows[0][w].concatenated(), my = windows[1][w].concatenated();
    ds.x.assign(mx.data.begin(), mx.data.end());
    ds.y.assign(my.data.begin(), my.data.end());
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace

Dataset generate(const GeneratorConfig& cfg, unsigned threads) {
  cfg.validate();
  const std::size_t pairs = cfg.n_stranger_pairs + cfg.n_friend_pairs;
  std::vector<std::vector<DyadicSample>> per_pair(pairs);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(pairs, 1))));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t p = t; p < pairs; p += threads) per_pair[p] = generate_pair(cfg, static_cast<int>(p));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Dataset ds;
  ds.sample_rate_hz = cfg.sample_rate_hz;
  ds.n_channels = cfg.n_channels;
  ds.n_segments = cfg.n_segments;
  ds.segment_len = cfg.segment_len;
  ds.channel_names = default_channel_names(cfg.n_channels);
  for (auto& v : per_pair) {
    for (auto& s : v) ds.samples.push_back(std::move(s));
  }
  return ds;
}

namespace {
constexpr char kMagic[] = "DYAD";
}

std::string encode_dataset(const Dataset& ds) {
  ds.validate();
  nlohmann::json header;
  header["sample_rate_hz"] = ds.sample_rate_hz;
  header["n_channels"] = ds.n_channels;
  header["n_segments"] = ds.n_segments;
  header["segment_len"] = ds.segment_len;
  header["channel_names"] = ds.channel_names;
  header["n_samples"] = ds.samples.size();
  auto& meta = header["samples"] = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    meta.push_back({{"pair_id", s.pair_id},
                    {"window", s.window},
                    {"label", s.label == 1 ? "friend" : "stranger"},
                    {"gender_match", s.same_gender ? "same" : "different"}});
  }
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  binio::put_u32(out, kDyadVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& s : ds.samples) {
    binio::put_array(out, s.x.data(), s.x.size());
    binio::put_array(out, s.y.data(), s.y.size());
  }
  return out;
}

Dataset decode_dataset(const std::string& bytes, const std::string& what) {
  binio::Reader rd(bytes, what);
  if (rd.bytes(4, "magic") != std::string(kMagic, 4)) throw FormatError(what + ": bad magic, not a .dyad file");
  const auto version = rd.u32("version");
  if (version != kDyadVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  const auto len = rd.u32("header length");
  Dataset ds;
  std::size_t n_samples = 0;
  try {
    const auto header = nlohmann::json::parse(rd.bytes(len, "header"));
    ds.sample_rate_hz = header.at("sample_rate_hz").get<double>();
    ds.n_channels = header.at("n_channels").get<std::size_t>();
    ds.n_segments = header.at("n_segments").get<std::size_t>();
    ds.segment_len = header.at("segment_len").get<std::size_t>();
    ds.channel_names = header.at("channel_names").get<std::vector<std::string>>();
    n_samples = header.at("n_samples").get<std::size_t>();
    const auto& meta = header.at("samples");
    if (meta.size() != n_samples) throw FormatError(what + ": header lists " + std::to_string(meta.size()) +
                                                    " samples but declares " + std::to_string(n_samples));
    for (const auto& m : meta) {
      DyadicSample s;
      s.pair_id = m.at("pair_id").get<int>();
      s.window = m.at("window").get<int>();
      const auto label = m.at("label").get<std::string>();
      const auto gender = m.at("gender_match").get<std::string>();
      if ((label != "friend" && label != "stranger") || (gender != "same" && gender != "different")) {
        throw FormatError(what + ": unknown label or gender_match value in header");
      }
      s.label = label == "friend" ? 1 : 0;
      s.same_gender = gender == "same";
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed header (" + e.what() + ")");
  }
  const std::size_t n = ds.sample_values();
  const std::size_t expected = n_samples * 2 * n * sizeof(float);
  if (rd.remaining() != expected) {
    const std::size_t bad = rd.offset() + std::min(rd.remaining(), expected);
    throw FormatError(what + ": payload is " + std::to_string(rd.remaining()) + " bytes but the header implies " +
                      std::to_string(expected) + "; corruption at byte offset " + std::to_string(bad));
  }
  for (auto& s : ds.samples) {
    s.x.resize(n);
    s.y.resize(n);
    rd.array(s.x.data(), n, "payload");
    rd.array(s.y.data(), n, "payload");
  }
  try {
    ds.validate();
  } catch (const DataError& e) {
    throw FormatError(what + ": " + e.what());
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) { binio::write_file(path, encode_dataset(ds)); }

Dataset read_dataset(const std::string& path) { return decode_dataset(binio::read_file(path), path); }

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

bool parse_double(const std::string& s, double& v) {
  std::istringstream is(s);
  is >> v;
  return !is.fail() && is.eof();
}

struct CsvRecording {
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
};

CsvRecording read_subject_csv(const std::filesystem::path& path, const std::string& pair) {
  std::ifstream in(path);
  if (!in) throw DataError("pair " + pair + ": cannot open " + path.string());
  CsvRecording rec;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    std::vector<double> row(cells.size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size() && numeric; ++i) numeric = parse_double(cells[i], row[i]);
    if (!numeric) {
      if (rec.rows.empty() && rec.names.empty()) {
        rec.names = cells;
        continue;
      }
      throw DataError("pair " + pair + ": non-numeric value in " + path.string() + " line " + std::to_string(line_no));
    }
    if (!rec.rows.empty() && row.size() != rec.rows.front().size()) {
      throw DataError("pair " + pair + ": ragged row in " + path.string() + " line " + std::to_string(line_no));
    }
    rec.rows.push_back(std::move(row));
  }
  if (rec.rows.empty()) throw DataError("pair " + pair + ": " + path.string() + " has no data rows");
  if (!rec.names.empty() && rec.names.size() != rec.rows.front().size()) {
    throw DataError("pair " + pair + ": header of " + path.string() + " does not match its column count");
  }
  return rec;
}

signal::EEGRecording to_recording(const CsvRecording& csv, double fs) {
  const std::size_t ch = csv.rows.front().size(), t = csv.rows.size();
  signal::EEGRecording rec;
  rec.sample_rate_hz = fs;
  rec.channel_names = csv.names.empty() ? default_channel_names(ch) : csv.names;
  rec.data = Matrix(ch, t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < ch; ++c) rec.data(c, i) = csv.rows[i][c];
  return rec;
}

}  // namespace

Dataset import_csv(const std::string& dir, const ImportOptions& opts) {
  const std::filesystem::path root(dir);
  const auto manifest_path = root / "manifest.csv";
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("cannot open " + manifest_path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest is empty");
  const auto header = split_csv_line(line);
  const std::vector<std::string> want{"pair_id", "file_x", "file_y", "label", "gender_match", "sample_rate"};
  if (header != want) throw DataError("manifest header must be pair_id,file_x,file_y,label,gender_match,sample_rate");

  Dataset ds;
  ds.sample_rate_hz = opts.target_rate_hz;
  ds.n_segments = opts.n_segments;
  ds.segment_len = static_cast<std::size_t>(std::lround(opts.window_s * opts.target_rate_hz));
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != want.size()) throw DataError("manifest row has " + std::to_string(cells.size()) + " fields");
    const std::string& pair = cells[0];
    double pid = 0.0, rate = 0.0;
    if (!parse_double(pair, pid) || pid != std::floor(pid)) throw DataError("pair " + pair + ": pair_id must be an integer");
    if (!parse_double(cells[5], rate) || !(rate > 0.0)) throw DataError("pair " + pair + ": invalid sample_rate");
    int label;
    if (cells[3] == "friend" || cells[3] == "1") {
      label = 1;
    } else if (cells[3] == "stranger" || cells[3] == "0") {
      label = 0;
    } else {
      throw DataError("pair " + pair + ": label must be friend or stranger");
    }
    if (cells[4] != "same" && cells[4] != "different") throw DataError("pair " + pair + ": gender_match must be same or different");

    const auto cx = read_subject_csv(root / cells[1], pair);
    const auto cy = read_subject_csv(root / cells[2], pair);
    if (cx.rows.size() != cy.rows.size() || cx.rows.front().size() != cy.rows.front().size()) {
      throw DataError("pair " + pair + ": partner recordings differ in shape (" + std::to_string(cx.rows.size()) + "x" +
                      std::to_string(cx.rows.front().size()) + " vs " + std::to_string(cy.rows.size()) + "x" +
                      std::to_string(cy.rows.front().size()) + ")");
    }
    std::array<signal::EEGRecording, 2> recs{to_recording(cx, rate), to_recording(cy, rate)};
    for (auto& r : recs) {
      try {
        r.validate();
        if (rate != opts.target_rate_hz) r = signal::resample(r, opts.target_rate_hz);
      } catch (const Error& e) {
        throw DataError("pair " + pair + ": " + e.what());
      }
    }
    if (ds.n_channels == 0) {
      ds.n_channels = recs[0].channels();
      ds.channel_names = recs[0].channel_names;
    } else if (recs[0].channels() != ds.n_channels) {
      throw DataError("pair " + pair + ": channel count differs from earlier pairs");
    }
    const double total_s = static_cast<double>(recs[0].samples()) / opts.target_rate_hz;
    const double clip_s = total_s / static_cast<double>(opts.n_segments);
    std::vector<signal::Interval> clips;
    for (std::size_t k = 0; k < opts.n_segments; ++k) clips.push_back({k * clip_s, (k + 1) * clip_s});
    const auto wx = signal::segment_and_concat(recs[0], clips, opts.window_s);
    const auto wy = signal::segment_and_concat(recs[1], clips, opts.window_s);
    if (wx.empty()) throw DataError("pair " + pair + ": recording too short for one window per clip");
    for (std::size_t w = 0; w < wx.size(); ++w) {
      DyadicSample s;
      s.pair_id = static_cast<int>(pid);
      s.window = static_cast<int>(w);
      s.label = label;
      s.same_gender = cells[4] == "same";
      const Matrix mx = wx[w].concatenated(), my = wy[w].concatenated();
      s.x.assign(mx.data.begin(), mx.data.end());
      s.y.assign(my.data.begin(), my.data.end());
      ds.samples.push_back(std::move(s));
    }
  }
  if (ds.samples.empty()) throw DataError("manifest lists no pairs");
  ds.validate();
  return ds;
}

}  // namespace dsen::data
