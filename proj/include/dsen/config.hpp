#pragma once

#include <set>
#include <string>

#include "dsen/dataio.hpp"
#include "dsen/model.hpp"
#include "dsen/training.hpp"

namespace dsen::config {

/// Everything a command can be configured with. Files are `key = value`
/// lines; `#` starts a comment. Keys are prefixed generator., model. or train.
struct RunConfig {
  data::GeneratorConfig generator;
  model::ExtractorConfig model;
  train::TrainConfig train;
};

/// Applies the assignments in `text` on top of `base`. Unknown keys and
/// malformed values raise ConfigError naming `source` and the line. The
/// names of assigned keys are added to `assigned` when given.
RunConfig parse(const std::string& text, const std::string& source = "config", RunConfig base = {},
                std::set<std::string>* assigned = nullptr);
RunConfig load(const std::string& path, RunConfig base = {}, std::set<std::string>* assigned = nullptr);

/// Every key with its current value, one per line, in a stable order.
std::string dump(const RunConfig& cfg);

/// Sets one key; used by parse and by command-line overrides.
void set(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace dsen::config
