#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "dsen/binio.hpp"
#include "dsen/dataio.hpp"
#include "dsen/error.hpp"
#include "dsen/synchrony.hpp"
#include "test_util.hpp"

using namespace dsen;
using namespace dsen::data;

namespace {

GeneratorConfig small_config(std::uint64_t seed) {
  GeneratorConfig g;
  g.n_stranger_pairs = 3;
  g.n_friend_pairs = 5;
  g.n_channels = 4;
  g.n_segments = 3;
  g.windows_per_pair = 2;
  g.seed = seed;
  return g;
}

// Per-pair ISC in one band over all of the pair's windows.
std::map<int, double> pair_isc(const Dataset& ds, const std::string& band) {
  const std::vector<signal::BandSpec> bands{signal::BandSpec::parse(band)};
  std::map<int, std::vector<signal::EEGRecording>> xs, ys;
  for (const auto& s : ds.samples) {
    xs[s.pair_id].push_back(ds.recording(s, 0));
    ys[s.pair_id].push_back(ds.recording(s, 1));
  }
  std::map<int, double> out;
  for (const auto& [pid, x] : xs) out[pid] = synchrony::pair_feature(x, ys[pid], bands).isc_per_band.at(band);
  return out;
}

double mean_over(const std::map<int, double>& m, const Dataset& ds, int label) {
  double s = 0.0;
  int n = 0;
  for (const auto& [pid, v] : m) {
    for (const auto& smp : ds.samples) {
      if (smp.pair_id == pid) {
        if (smp.label == label) {
          s += v;
          ++n;
        }
        break;
      }
    }
  }
  return s / n;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("dsen_dataio_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
            std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void write_csv(const std::filesystem::path& p, std::size_t rows, std::size_t cols, double fs, double freq, bool header) {
  std::ofstream out(p);
  if (header) {
    for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << "E" << c;
    out << "\n";
  }
  out.precision(17);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < cols; ++c) {
      out << (c ? "," : "") << std::cos(2 * testing::kPi * freq * i / fs + 0.1 * c);
    }
    out << "\n";
  }
}

}  // namespace

TEST_CASE("generator shape, labels and determinism") {
  const auto cfg = small_config(7);
  const auto a = generate(cfg);
  CHECK(a.samples.size() == 8 * 2);
  CHECK(a.sample_values() == 4 * 3 * 400);
  a.validate();
  for (const auto& s : a.samples) CHECK(s.label == (s.pair_id >= 3 ? 1 : 0));
  CHECK(a == generate(cfg));
  CHECK(a == generate(cfg, 3));
  CHECK_FALSE(a == generate(small_config(8)));
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    auto rec = a.recording(a.samples[i], 0);
    CHECK_NOTHROW(rec.validate());
  }
  GeneratorConfig bad = cfg;
  bad.coupling_rho = 1.5;
  CHECK_THROWS_AS(generate(bad), ConfigError);
  bad = cfg;
  bad.band_power["delta"] = 1.0;
  CHECK_THROWS_AS(generate(bad), ConfigError);
}

TEST_CASE("full coupling gives friend ISC_beta above 0.8") {
  auto cfg = small_config(11);
  cfg.n_stranger_pairs = 0;
  cfg.n_friend_pairs = 12;
  cfg.coupling_rho = 1.0;
  const auto ds = generate(cfg);
  const auto isc = pair_isc(ds, "beta");
  CHECK(mean_over(isc, ds, 1) > 0.8);
}

TEST_CASE("friend ISC_beta is non-decreasing in coupling") {
  double prev = -1.0;
  for (double rho : {0.0, 0.3, 0.6, 0.9}) {
    auto cfg = small_config(12);
    cfg.coupling_rho = rho;
    const auto ds = generate(cfg);
    const double m = mean_over(pair_isc(ds, "beta"), ds, 1);
    CAPTURE(rho);
    CHECK(m >= prev);
    prev = m;
  }
}

TEST_CASE("zero coupling: friend and stranger ISC are indistinguishable") {
  auto cfg = small_config(13);
  cfg.n_stranger_pairs = 18;
  cfg.n_friend_pairs = 54;
  cfg.windows_per_pair = 1;
  cfg.coupling_rho = 0.0;
  const auto ds = generate(cfg);
  const auto isc = pair_isc(ds, "beta");
  std::vector<double> f, s;
  for (const auto& [pid, v] : isc) (pid >= 18 ? f : s).push_back(v);
  CHECK(synchrony::t_test(f, s).p_value > 0.05);
}

TEST_CASE(".dyad round trip and corruption") {
  const auto ds = generate(small_config(21));
  const auto bytes = encode_dataset(ds);
  CHECK(bytes.substr(0, 4) == "DYAD");
  CHECK(decode_dataset(bytes) == ds);

  TempDir tmp;
  const auto path = (tmp.path / "d.dyad").string();
  write_dataset(ds, path);
  CHECK(read_dataset(path) == ds);
  CHECK(binio::read_file(path) == bytes);

  auto bad = bytes;
  bad.replace(0, 4, "XXXX");
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);

  // Header declares 4 channels, payload sized for 3.
  const std::size_t per_channel = 3 * 400 * sizeof(float);
  const std::size_t short_len = bytes.size() - ds.samples.size() * 2 * per_channel;
  try {
    decode_dataset(bytes.substr(0, short_len));
    FAIL("short payload accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_dataset(bytes.substr(0, 10)), FormatError);
  CHECK_THROWS_AS(read_dataset((tmp.path / "missing.dyad").string()), ConfigError);
}

TEST_CASE("csv import") {
  TempDir tmp;
  auto manifest = [&](const std::string& rows) {
    std::ofstream m(tmp.path / "manifest.csv");
    m << "pair_id,file_x,file_y,label,gender_match,sample_rate\n" << rows;
  };
  SUBCASE("two 30-column files make one sample") {
    write_csv(tmp.path / "a.csv", 3600, 30, 200.0, 10.0, true);
    write_csv(tmp.path / "b.csv", 3600, 30, 200.0, 12.0, false);
    manifest("5,a.csv,b.csv,friend,different,200\n");
    const auto ds = import_csv(tmp.path.string());
    REQUIRE(ds.samples.size() == 1);
    CHECK(ds.n_channels == 30);
    CHECK(ds.channel_names[3] == "E3");
    CHECK(ds.samples[0].pair_id == 5);
    CHECK(ds.samples[0].label == 1);
    CHECK_FALSE(ds.samples[0].same_gender);
    CHECK(ds.samples[0].x[1] == static_cast<float>(std::cos(2 * testing::kPi * 10.0 / 200.0)));
  }
  SUBCASE("mismatched partner lengths name the pair") {
    write_csv(tmp.path / "a.csv", 3600, 30, 200.0, 10.0, false);
    write_csv(tmp.path / "b.csv", 3500, 30, 200.0, 10.0, false);
    manifest("9,a.csv,b.csv,stranger,same,200\n");
    try {
      import_csv(tmp.path.string());
      FAIL("mismatch accepted");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("pair 9") != std::string::npos);
    }
  }
  SUBCASE("1000 Hz source is resampled to 200 Hz") {
    write_csv(tmp.path / "a.csv", 18000, 2, 1000.0, 10.0, false);
    write_csv(tmp.path / "b.csv", 18000, 2, 1000.0, 10.0, false);
    manifest("1,a.csv,b.csv,1,same,1000\n");
    const auto ds = import_csv(tmp.path.string());
    REQUIRE(ds.samples.size() == 1);
    CHECK(ds.sample_rate_hz == 200.0);
    CHECK(ds.samples[0].x.size() == 2 * 3600);
    // The first clip's window, interior only.
    std::vector<double> seg(ds.samples[0].x.begin() + 100, ds.samples[0].x.begin() + 300);
    CHECK(testing::dft_amplitude(seg, 200.0, 10.0) == doctest::Approx(1.0).epsilon(0.02));
  }
  SUBCASE("bad manifest") {
    manifest("1,a.csv,b.csv,enemy,same,200\n");
    CHECK_THROWS_AS(import_csv(tmp.path.string()), DataError);
  }
}
