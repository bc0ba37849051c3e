#include "dsen/config.hpp"

#include <functional>
#include <sstream>
#include <vector>

#include "dsen/binio.hpp"
#include "dsen/error.hpp"

namespace dsen::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    n = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::string fmt(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> put;
};

template <typename Section, typename T>
Key size_key(std::string name, Section RunConfig::*sec, T Section::*field) {
  return {std::move(name), [=](const RunConfig& c) { return std::to_string((c.*sec).*field); },
          [=](RunConfig& c, const std::string& v) { (c.*sec).*field = static_cast<T>(to_size(v)); }};
}

template <typename Section>
Key double_key(std::string name, Section RunConfig::*sec, double Section::*field) {
  return {std::move(name), [=](const RunConfig& c) { return fmt((c.*sec).*field); },
          [=](RunConfig& c, const std::string& v) { (c.*sec).*field = to_double(v); }};
}

template <typename Section>
Key bool_key(std::string name, Section RunConfig::*sec, bool Section::*field) {
  return {std::move(name), [=](const RunConfig& c) { return std::string((c.*sec).*field ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { (c.*sec).*field = to_bool(v); }};
}

const std::vector<std::string> kBands{"theta", "alpha", "beta", "gamma"};

std::vector<Key> make_keys() {
  using data::GeneratorConfig;
  using model::ExtractorConfig;
  using train::TrainConfig;
  constexpr auto G = &RunConfig::generator;
  constexpr auto M = &RunConfig::model;
  constexpr auto T = &RunConfig::train;
  std::vector<Key> k;

  k.push_back(size_key("generator.n_stranger_pairs", G, &GeneratorConfig::n_stranger_pairs));
  k.push_back(size_key("generator.n_friend_pairs", G, &GeneratorConfig::n_friend_pairs));
  k.push_back(double_key("generator.coupling_rho", G, &GeneratorConfig::coupling_rho));
  k.push_back(double_key("generator.stranger_rho", G, &GeneratorConfig::stranger_rho));
  for (const auto& band : kBands) {
    k.push_back({"generator.band_power." + band,
                 [band](const RunConfig& c) {
                   auto it = c.generator.band_power.find(band);
                   return it == c.generator.band_power.end() ? std::string("0") : fmt(it->second);
                 },
                 [band](RunConfig& c, const std::string& v) {
                   const double p = to_double(v);
                   if (p == 0.0) {
                     c.generator.band_power.erase(band);
                   } else {
                     c.generator.band_power[band] = p;
                   }
                 }});
  }
  k.push_back(double_key("generator.noise_floor", G, &GeneratorConfig::noise_floor));
  k.push_back(size_key("generator.seed", G, &GeneratorConfig::seed));
  k.push_back(size_key("generator.n_channels", G, &GeneratorConfig::n_channels));
  k.push_back(size_key("generator.n_segments", G, &GeneratorConfig::n_segments));
  k.push_back(size_key("generator.segment_len", G, &GeneratorConfig::segment_len));
  k.push_back(size_key("generator.windows_per_pair", G, &GeneratorConfig::windows_per_pair));
  k.push_back(double_key("generator.sample_rate_hz", G, &GeneratorConfig::sample_rate_hz));
  k.push_back(double_key("generator.envelope_cutoff_hz", G, &GeneratorConfig::envelope_cutoff_hz));
  k.push_back(double_key("generator.envelope_depth", G, &GeneratorConfig::envelope_depth));
  k.push_back(double_key("generator.carrier_width_fraction", G, &GeneratorConfig::carrier_width_fraction));
  k.push_back(bool_key("generator.phase_coupling", G, &GeneratorConfig::phase_coupling));

  k.push_back(size_key("model.local_kernel", M, &ExtractorConfig::local_kernel));
  k.push_back(size_key("model.local_pool_target", M, &ExtractorConfig::local_pool_target));
  k.push_back(size_key("model.global_kernel", M, &ExtractorConfig::global_kernel));
  k.push_back(size_key("model.temporal_feature_dim", M, &ExtractorConfig::temporal_feature_dim));
  k.push_back({"model.edgeconv_dims",
               [](const RunConfig& c) {
                 std::string s;
                 for (auto d : c.model.edgeconv_dims) s += (s.empty() ? "" : ",") + std::to_string(d);
                 return s;
               },
               [](RunConfig& c, const std::string& v) {
                 std::vector<std::size_t> dims;
                 std::stringstream ss(v);
                 std::string item;
                 while (std::getline(ss, item, ',')) dims.push_back(to_size(trim(item)));
                 if (dims.empty()) throw ConfigError("model.edgeconv_dims needs at least one width");
                 c.model.edgeconv_dims = dims;
               }});
  k.push_back(size_key("model.head_out_dim", M, &ExtractorConfig::head_out_dim));
  k.push_back({"model.edge_mode",
               [](const RunConfig& c) {
                 return std::string(c.model.edge_mode == model::EdgeMode::Concat ? "concat" : "difference");
               },
               [](RunConfig& c, const std::string& v) {
                 if (v == "concat") {
                   c.model.edge_mode = model::EdgeMode::Concat;
                 } else if (v == "difference") {
                   c.model.edge_mode = model::EdgeMode::Difference;
                 } else {
                   throw ConfigError("expected concat or difference, got '" + v + "'");
                 }
               }});
  k.push_back({"model.aggregation",
               [](const RunConfig& c) {
                 return std::string(c.model.aggregation == model::Aggregation::Max ? "max" : "mean");
               },
               [](RunConfig& c, const std::string& v) {
                 if (v == "max") {
                   c.model.aggregation = model::Aggregation::Max;
                 } else if (v == "mean") {
                   c.model.aggregation = model::Aggregation::Mean;
                 } else {
                   throw ConfigError("expected max or mean, got '" + v + "'");
                 }
               }});
  k.push_back(bool_key("model.share_channel_weights", M, &ExtractorConfig::share_channel_weights));

  k.push_back(double_key("train.lr", T, &TrainConfig::lr));
  k.push_back(size_key("train.batch_size", T, &TrainConfig::batch_size));
  k.push_back(size_key("train.max_epochs", T, &TrainConfig::max_epochs));
  k.push_back(double_key("train.dropout_keep", T, &TrainConfig::dropout_keep));
  k.push_back(size_key("train.seed", T, &TrainConfig::seed));
  k.push_back(bool_key("train.no_cca", T, &TrainConfig::no_cca));
  k.push_back(bool_key("train.no_triplet", T, &TrainConfig::no_triplet));
  k.push_back(bool_key("train.no_attention", T, &TrainConfig::no_attention));
  k.push_back(bool_key("train.raw_input", T, &TrainConfig::raw_input));
  k.push_back(bool_key("train.single_forward", T, &TrainConfig::single_forward));
  k.push_back(double_key("train.input_band_low_hz", T, &TrainConfig::input_band_low_hz));
  k.push_back(double_key("train.input_band_high_hz", T, &TrainConfig::input_band_high_hz));
  k.push_back(double_key("train.triplet_margin", T, &TrainConfig::triplet_margin));
  k.push_back(double_key("train.cca_eps", T, &TrainConfig::cca_eps));
  k.push_back(double_key("train.alpha", T, &TrainConfig::alpha));
  k.push_back(double_key("train.beta", T, &TrainConfig::beta));
  k.push_back(size_key("train.cca_dim", T, &TrainConfig::cca_dim));
  k.push_back(size_key("train.train_pairs_per_class", T, &TrainConfig::train_pairs_per_class));
  return k;
}

const std::vector<Key>& keys() {
  static const std::vector<Key> k = make_keys();
  return k;
}

}  // namespace

void set(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (k.name == key) {
      k.put(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse(const std::string& text, const std::string& source, RunConfig base, std::set<std::string>* assigned) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    try {
      if (eq == std::string::npos) throw ConfigError("expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      set(base, key, trim(line.substr(eq + 1)));
      if (assigned) assigned->insert(key);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load(const std::string& path, RunConfig base, std::set<std::string>* assigned) {
  return parse(binio::read_file(path), path, std::move(base), assigned);
}

std::string dump(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace dsen::config
