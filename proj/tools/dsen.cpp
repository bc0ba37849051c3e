// dsen: generate synthetic dyads, run the synchrony statistics, and train,
// evaluate and inspect DSEN models. Exit codes: 0 ok, 2 usage/config,
// 3 data or format, 4 numeric.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "dsen/analysis.hpp"
#include "dsen/binio.hpp"
#include "dsen/checkpoint.hpp"
#include "dsen/config.hpp"
#include "dsen/error.hpp"
#include "dsen/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dsen;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Usage:
      return kExitUsage;
    case ErrorKind::Numeric:
      return kExitNumeric;
    case ErrorKind::Data:
    case ErrorKind::Shape:
    case ErrorKind::Format:
      return kExitData;
  }
  return kExitData;
}

// git's blob id: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json file_entry(const std::string& path) {
  return {{"path", path}, {"git_blob_sha1", git_blob_sha1(binio::read_file(path))}};
}

json config_json(const config::RunConfig& cfg) {
  json j = json::object();
  std::istringstream in(config::dump(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

struct Manifest {
  json doc;

  Manifest(const std::string& command, const std::vector<std::string>& argv) {
    doc["command"] = command;
    doc["argv"] = argv;
    doc["started_utc"] = utc_now();
    doc["inputs"] = json::array();
    doc["outputs"] = json::array();
  }
  void input(const std::string& path) { doc["inputs"].push_back(file_entry(path)); }
  void output(const std::string& path) { doc["outputs"].push_back(file_entry(path)); }
  void write(const std::string& path) {
    doc["finished_utc"] = utc_now();
    binio::write_file(path, doc.dump(2) + "\n");
  }
};

void write_text(const std::string& path, const std::string& text) { binio::write_file(path, text); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
};

config::RunConfig resolve_config(const Common& c) {
  config::RunConfig cfg;
  std::set<std::string> assigned;
  if (!c.config_path.empty()) cfg = config::load(c.config_path, {}, &assigned);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config::set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    assigned.insert(kv.substr(0, eq));
  }
  std::optional<std::uint64_t> seed = c.seed;
  if (!seed && !assigned.count("generator.seed") && !assigned.count("train.seed")) {
    if (const char* env = std::getenv("DSEN_SEED")) {
      try {
        config::set(cfg, "train.seed", env);
      } catch (const ConfigError&) {
        throw ConfigError(std::string("DSEN_SEED must be a non-negative integer, got '") + env + "'");
      }
      seed = cfg.train.seed;
    }
  }
  if (seed) {
    cfg.generator.seed = *seed;
    cfg.train.seed = *seed;
  }
  return cfg;
}

// --- run directories ---------------------------------------------------------

struct RunPaths {
  fs::path dir;
  std::string config() const { return (dir / "config.txt").string(); }
  std::string split() const { return (dir / "split.csv").string(); }
  std::string log() const { return (dir / "epoch_log.csv").string(); }
  std::string final_ckpt() const { return (dir / "checkpoint_final.ckpt").string(); }
  std::string best_ckpt() const { return (dir / "checkpoint_best.ckpt").string(); }
  std::string metrics() const { return (dir / "metrics.csv").string(); }
  std::string manifest() const { return (dir / "manifest.json").string(); }
};

void write_split(const std::string& path, const train::Split& s) {
  std::ostringstream os;
  os << "pair_id,role\n";
  for (int p : s.train_pairs) os << p << ",train\n";
  for (int p : s.test_pairs) os << p << ",test\n";
  write_text(path, os.str());
}

train::Split read_split(const std::string& path) {
  std::istringstream in(binio::read_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "pair_id,role") throw FormatError(path + ": unexpected header");
  train::Split s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path + ": malformed row '" + line + "'");
    const int pid = std::stoi(line.substr(0, comma));
    const std::string role = line.substr(comma + 1);
    if (role == "train") {
      s.train_pairs.push_back(pid);
    } else if (role == "test") {
      s.test_pairs.push_back(pid);
    } else {
      throw FormatError(path + ": unknown role '" + role + "'");
    }
  }
  return s;
}

struct LoadedRun {
  config::RunConfig cfg;
  model::ExtractorConfig mcfg;
  train::TrainState state;
  train::Split split;
};

LoadedRun load_run(const RunPaths& run, const data::Dataset& ds, const std::string& which) {
  if (!fs::exists(run.dir)) throw ConfigError("run directory " + run.dir.string() + " does not exist");
  LoadedRun r;
  r.cfg = config::load(run.config());
  r.mcfg = train::resolve_model(ds, r.cfg.model, r.cfg.train);
  r.state = train::init_state(r.mcfg, r.cfg.train);
  const std::string ckpt = which == "best" ? run.best_ckpt() : run.final_ckpt();
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint " + ckpt + " not found");
  r.state.load_arrays(ad::read_checkpoint(ckpt));
  r.split = read_split(run.split());
  return r;
}

// --- commands ------------------------------------------------------------------

std::string sweep_path(const std::string& out, double rho) {
  const fs::path p(out);
  char buf[32];
  std::snprintf(buf, sizeof buf, "_rho%g", rho);
  return (p.parent_path() / (p.stem().string() + buf + p.extension().string())).string();
}

int cmd_generate(const Common& common, const std::string& out, const std::vector<double>& sweep, unsigned threads,
                 const std::vector<std::string>& argv) {
  const auto cfg = resolve_config(common);
  std::vector<std::pair<std::string, data::GeneratorConfig>> jobs;
  if (sweep.empty()) {
    jobs.emplace_back(out, cfg.generator);
  } else {
    for (double rho : sweep) {
      auto g = cfg.generator;
      g.coupling_rho = rho;
      jobs.emplace_back(sweep_path(out, rho), g);
    }
  }
  for (const auto& [path, g] : jobs) {
    Manifest m("generate", argv);
    auto snapshot = cfg;
    snapshot.generator = g;
    m.doc["config"] = config_json(snapshot);
    m.doc["seed"] = g.seed;
    data::write_dataset(data::generate(g, threads), path);
    m.output(path);
    m.write(path + ".manifest.json");
    std::cout << path << '\n';
  }
  return kExitOk;
}

int cmd_stats(const Common& common, const std::string& dataset, const std::string& bands, const std::string& iv,
              const std::string& out, const std::vector<std::string>& argv) {
  const auto cfg = resolve_config(common);
  const auto band_list = split_list(bands);
  for (const auto& b : band_list) signal::BandSpec::parse(b);
  if (iv != "relation" && iv != "gender") throw ConfigError("--iv must be relation or gender");
  Manifest m("stats", argv);
  m.doc["config"] = config_json(cfg);
  const auto ds = data::read_dataset(dataset);
  m.input(dataset);
  const auto report = analysis::synchrony_stats(ds, band_list, iv);
  std::ostringstream os;
  synchrony::write_report_csv(report, os);
  write_text(out, os.str());
  m.output(out);
  m.write(out + ".manifest.json");
  return kExitOk;
}

int cmd_train(const Common& common, const std::string& dataset, const std::string& ablate, const std::string& out,
              bool resume, std::optional<std::size_t> epochs, const std::vector<std::string>& argv) {
  const RunPaths run{out};
  const auto ds = data::read_dataset(dataset);

  config::RunConfig cfg;
  train::TrainState state;
  train::TrainState* resume_state = nullptr;
  if (resume) {
    auto loaded = load_run(run, ds, "final");
    cfg = loaded.cfg;
    state = std::move(loaded.state);
    resume_state = &state;
  } else {
    cfg = resolve_config(common);
    if (ablate == "no_cca") {
      cfg.train.no_cca = true;
    } else if (ablate == "no_triplet") {
      cfg.train.no_triplet = true;
    } else if (ablate == "no_attention") {
      cfg.train.no_attention = true;
    } else if (ablate == "raw") {
      cfg.train.raw_input = true;
    } else if (!ablate.empty()) {
      throw ConfigError("--ablate must be one of no_cca, no_triplet, no_attention, raw");
    }
  }
  if (epochs) cfg.train.max_epochs = *epochs;
  cfg.train.validate();
  train::resolve_model(ds, cfg.model, cfg.train);
  fs::create_directories(run.dir);

  Manifest m("train", argv);
  m.input(dataset);
  m.doc["seed"] = cfg.train.seed;
  m.doc["ablation"] = ablate.empty() ? "none" : ablate;
  m.doc["raw_input"] = cfg.train.raw_input;
  m.doc["resumed_from_epoch"] = resume ? state.epoch : 0;
  write_text(run.config(), config::dump(cfg));

  std::ofstream log(run.log(), resume ? std::ios::app : std::ios::trunc);
  if (!log) throw ConfigError("cannot write " + run.log());
  if (!resume) train::write_log_header(log);

  const auto result = train::run(ds, cfg.model, cfg.train, resume_state,
                                 [&](const train::TrainState& st, const std::vector<train::BatchLog>& rows) {
                                   train::write_log_rows(log, rows);
                                   log.flush();
                                   const auto arrays = st.to_arrays();
                                   ad::write_checkpoint(run.final_ckpt(), arrays);
                                   if (st.best_epoch == st.epoch) ad::write_checkpoint(run.best_ckpt(), arrays);
                                 });
  log.close();
  write_split(run.split(), result.split);
  if (!fs::exists(run.final_ckpt())) ad::write_checkpoint(run.final_ckpt(), result.state.to_arrays());
  if (!fs::exists(run.best_ckpt())) ad::write_checkpoint(run.best_ckpt(), result.state.to_arrays());

  if (!result.split.test_pairs.empty()) {
    std::ostringstream os;
    train::write_eval_csv(result.test, os);
    write_text(run.metrics(), os.str());
    m.output(run.metrics());
  }
  m.doc["config"] = config_json(cfg);
  m.doc["epochs_completed"] = result.state.epoch;
  m.doc["best_epoch"] = result.state.best_epoch;
  for (const auto& p : {run.config(), run.split(), run.log(), run.final_ckpt(), run.best_ckpt()}) m.output(p);
  m.write(run.manifest());
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, const std::string& dataset, const std::string& out, const std::string& which,
             const std::vector<std::string>& argv) {
  const auto ds = data::read_dataset(dataset);
  auto r = load_run(RunPaths{run_dir}, ds, which);
  const auto test = train::samples_of(ds, r.split.test_pairs);
  if (test.empty()) throw DataError("no held-out samples of this run are present in " + dataset);
  Manifest m("eval", argv);
  m.input(dataset);
  m.input(which == "best" ? RunPaths{run_dir}.best_ckpt() : RunPaths{run_dir}.final_ckpt());
  m.doc["config"] = config_json(r.cfg);
  const auto inputs = train::prepare_all(ds, r.cfg.train);
  const auto result = train::evaluate(r.state.params, ds, inputs, test, r.mcfg, r.cfg.train);
  std::ostringstream os;
  train::write_eval_csv(result, os);
  write_text(out, os.str());
  m.output(out);
  m.write(out + ".manifest.json");
  return kExitOk;
}

int cmd_export(const std::string& run_dir, const std::string& dataset, const std::string& out,
               const std::vector<std::string>& argv) {
  const auto ds = data::read_dataset(dataset);
  auto r = load_run(RunPaths{run_dir}, ds, "final");
  const auto test = train::samples_of(ds, r.split.test_pairs);
  if (test.empty()) throw DataError("no held-out samples of this run are present in " + dataset);
  Manifest m("export-features", argv);
  m.input(dataset);
  m.input(RunPaths{run_dir}.final_ckpt());
  m.doc["config"] = config_json(r.cfg);
  const auto inputs = train::prepare_all(ds, r.cfg.train);
  const auto feats = train::fused_features(r.state.params, inputs, test, r.mcfg, r.cfg.train);
  std::ostringstream os;
  os.precision(17);
  os << "pair_id,label";
  for (std::size_t k = 0; k < feats.front().size(); ++k) os << ",f" << k;
  os << '\n';
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& s = ds.samples[test[i]];
    os << s.pair_id << ',' << (s.label == 1 ? "friend" : "stranger");
    for (double v : feats[i]) os << ',' << v;
    os << '\n';
  }
  write_text(out, os.str());
  m.output(out);
  m.write(out + ".manifest.json");
  return kExitOk;
}

int cmd_ablate(const Common& common, const std::string& dataset, const std::string& out,
               const std::vector<std::string>& argv) {
  const auto cfg = resolve_config(common);
  const auto ds = data::read_dataset(dataset);
  Manifest m("ablate", argv);
  m.input(dataset);
  m.doc["config"] = config_json(cfg);
  m.doc["seed"] = cfg.train.seed;
  const auto rows = train::ablation_suite(ds, cfg.model, cfg.train);
  std::ostringstream os;
  train::write_ablation_csv(rows, os);
  write_text(out, os.str());
  m.output(out);
  m.write(out + ".manifest.json");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Dyadic EEG synchrony analysis and DSEN training"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  Common common;
  std::uint64_t seed_value = 0;
  app.add_option("--config", common.config_path, "key = value configuration file");
  app.add_option("--set", common.overrides, "override one key, key=value (repeatable)");
  auto* seed_opt = app.add_option("--seed", seed_value, "seed for generation and training (fallback: DSEN_SEED)");
  app.add_flag("--print-config", common.print_config, "print the full configuration and exit");

  auto* gen = app.add_subcommand("generate", "write a synthetic dyadic dataset");
  std::string gen_out;
  std::vector<double> sweep;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  gen->add_option("--out", gen_out, "output .dyad path")->required();
  gen->add_option("--rho-sweep", sweep, "one dataset per friend coupling value")->delimiter(',');
  gen->add_option("--threads", threads, "generator threads");

  auto* stats = app.add_subcommand("stats", "t-tests of ISC and PLV between groups");
  std::string stats_ds, stats_bands = "theta,alpha,beta,gamma", stats_iv = "relation", stats_out;
  stats->add_option("--dataset", stats_ds)->required();
  stats->add_option("--bands", stats_bands, "comma-separated band names");
  stats->add_option("--iv", stats_iv, "relation or gender");
  stats->add_option("--out", stats_out)->required();

  auto* tr = app.add_subcommand("train", "train DSEN on the seeded split");
  std::string tr_ds, tr_ablate, tr_out;
  bool tr_resume = false;
  std::size_t tr_epochs = 0;
  tr->add_option("--dataset", tr_ds)->required();
  tr->add_option("--ablate", tr_ablate, "no_cca, no_triplet, no_attention or raw");
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_flag("--resume", tr_resume, "continue from the run directory's final checkpoint");
  auto* epochs_opt = tr->add_option("--epochs", tr_epochs, "override train.max_epochs");

  auto* ev = app.add_subcommand("eval", "metrics of a trained run on its held-out pairs");
  std::string ev_run, ev_ds, ev_out, ev_which = "final";
  ev->add_option("--run", ev_run)->required();
  ev->add_option("--dataset", ev_ds)->required();
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--checkpoint", ev_which, "final or best")->check(CLI::IsMember({"final", "best"}));

  auto* ex = app.add_subcommand("export-features", "fused features of the held-out samples");
  std::string ex_run, ex_ds, ex_out;
  ex->add_option("--run", ex_run)->required();
  ex->add_option("--dataset", ex_ds)->required();
  ex->add_option("--out", ex_out)->required();

  auto* ab = app.add_subcommand("ablate", "full model and the four ablations on one split");
  std::string ab_ds, ab_out;
  ab->add_option("--dataset", ab_ds)->required();
  ab->add_option("--out", ab_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*seed_opt) common.seed = seed_value;
    if (common.print_config) {
      std::cout << config::dump(resolve_config(common));
      return kExitOk;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return kExitUsage;
    }
    if (*gen) return cmd_generate(common, gen_out, sweep, threads, args);
    if (*stats) return cmd_stats(common, stats_ds, stats_bands, stats_iv, stats_out, args);
    if (*tr) {
      std::optional<std::size_t> epochs;
      if (*epochs_opt) epochs = tr_epochs;
      return cmd_train(common, tr_ds, tr_ablate, tr_out, tr_resume, epochs, args);
    }
    if (*ev) return cmd_eval(ev_run, ev_ds, ev_out, ev_which, args);
    if (*ex) return cmd_export(ex_run, ex_ds, ex_out, args);
    if (*ab) return cmd_ablate(common, ab_ds, ab_out, args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
