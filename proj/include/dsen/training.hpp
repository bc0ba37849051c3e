#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "dsen/dataio.hpp"
#include "dsen/model.hpp"
#include "dsen/optim.hpp"

namespace dsen::train {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 79;
  std::size_t max_epochs = 100;
  double dropout_keep = 0.75;
  std::uint64_t seed = 1;

  bool no_cca = false;
  bool no_triplet = false;
  bool no_attention = false;  // H_fused = H_X ⊕ H_Y
  bool raw_input = false;     // bandpassed signal instead of its Hilbert amplitude
  /// Reuse the features computed before the triplet update for the combined
  /// step instead of re-forwarding.
  bool single_forward = false;

  double input_band_low_hz = 13.0;
  double input_band_high_hz = 45.0;
  double triplet_margin = 0.3;
  double cca_eps = 1e-4;
  double alpha = 1.0;  // cross-entropy weight
  double beta = 1.0;   // CCA weight
  /// Leading feature coordinates fed to the CCA loss (0 = all). Keeps the
  /// covariance full rank at the default batch size.
  std::size_t cca_dim = 64;
  std::size_t train_pairs_per_class = 15;

  void validate() const;
};

struct SampleRef {
  std::size_t sample = 0;  // index into Dataset::samples
  int subject = 0;         // 0 = x, 1 = y
  bool operator==(const SampleRef&) const = default;
};

struct TripletItem {
  SampleRef anchor, positive, negative;
};

struct DualItem {
  SampleRef x, y;
  int label = 0;
};

struct Split {
  std::vector<int> train_pairs;
  std::vector<int> test_pairs;
};

/// Takes the input geometry from the dataset and dropout from the training
/// config, then validates.
model::ExtractorConfig resolve_model(const data::Dataset& ds, model::ExtractorConfig mcfg, const TrainConfig& tcfg);

/// Seeded choice of `per_class` stranger and friend pairs for training; all
/// other pairs are held out. Throws DataError when a class is too small.
Split split_dataset(const data::Dataset& ds, std::uint64_t seed, std::size_t per_class = 15);

/// Indices of the samples whose pair is in `pairs`, in dataset order.
std::vector<std::size_t> samples_of(const data::Dataset& ds, const std::vector<int>& pairs);

struct TrainingSets {
  std::vector<TripletItem> triplets;
  std::vector<DualItem> duals;
};

/// One dual and one triplet item per training sample. Negatives are a random
/// subject from a random other pair. Throws DataError with fewer than two pairs.
TrainingSets build_sets(const data::Dataset& ds, const std::vector<int>& train_pairs, ad::Rng& rng);

/// Model input for one subject of one sample: per segment bandpass, then
/// Hilbert amplitude unless raw, then a per-channel z-score over the window.
/// Returns channels × (n·L), row-major.
std::vector<double> prepare_input(const data::Dataset& ds, const data::DyadicSample& s, int subject,
                                  const TrainConfig& cfg);

/// prepare_input for every sample and subject: index 2·sample + subject.
std::vector<std::vector<double>> prepare_all(const data::Dataset& ds, const TrainConfig& cfg);

struct BatchLog {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double triplet = std::numeric_limits<double>::quiet_NaN();  // NaN when the term is disabled
  double cca = std::numeric_limits<double>::quiet_NaN();
  double cls = 0.0;
  double combined = 0.0;
};

void write_log_header(std::ostream& out);
void write_log_rows(std::ostream& out, const std::vector<BatchLog>& rows);

struct TrainState {
  model::DsenParams params;
  ad::AdamState adam_f;    // θ_f, triplet step
  ad::AdamState adam_all;  // θ_f ∪ θ_c, combined step
  std::size_t epoch = 0;   // completed epochs
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  std::vector<ad::NamedArray> to_arrays() const;
  /// `params` must already be initialised with the right shapes.
  void load_arrays(const std::vector<ad::NamedArray>& arrays);
};

TrainState init_state(const model::ExtractorConfig& mcfg, const TrainConfig& tcfg);

/// The per-epoch stream for batch order, negatives and dropout.
ad::Rng epoch_rng(const TrainConfig& cfg, std::size_t epoch);

/// One pass of the two-step update over shuffled batches. Non-finite values
/// raise NumericError naming the epoch, batch and loss term.
std::vector<BatchLog> train_epoch(TrainState& state, const TrainingSets& sets,
                                  const std::vector<std::vector<double>>& inputs, const model::ExtractorConfig& mcfg,
                                  const TrainConfig& tcfg, ad::Rng& rng);

struct Confusion {
  // counts[true][predicted], 0 stranger, 1 friend
  std::array<std::array<std::size_t, 2>, 2> counts{};
  std::size_t total() const;
  double accuracy() const;
  double f1() const;  // friend = positive
};

struct EvalResult {
  double accuracy = 0.0;
  double f1 = 0.0;
  Confusion confusion;
  // per-pair majority vote
  double pair_accuracy = 0.0;
  double pair_f1 = 0.0;
  Confusion pair_confusion;
};

/// Friend probabilities per listed sample, eval mode.
std::vector<double> predict(model::DsenParams& params, const data::Dataset& ds,
                            const std::vector<std::vector<double>>& inputs, const std::vector<std::size_t>& samples,
                            const model::ExtractorConfig& mcfg, const TrainConfig& tcfg);

/// Throws DataError on an empty sample list.
EvalResult evaluate(model::DsenParams& params, const data::Dataset& ds, const std::vector<std::vector<double>>& inputs,
                    const std::vector<std::size_t>& samples, const model::ExtractorConfig& mcfg,
                    const TrainConfig& tcfg);

/// Metrics from friend probabilities; window ties (p = 0.5) count as friend,
/// pair vote ties fall back to the mean probability.
EvalResult score(const data::Dataset& ds, const std::vector<std::size_t>& samples, const std::vector<double>& p_friend);

/// H_fused rows [N, 2·head] for the listed samples, eval mode.
std::vector<std::vector<double>> fused_features(model::DsenParams& params, const std::vector<std::vector<double>>& inputs,
                                                const std::vector<std::size_t>& samples,
                                                const model::ExtractorConfig& mcfg, const TrainConfig& tcfg);

void write_eval_csv(const EvalResult& r, std::ostream& out);

struct RunResult {
  TrainState state;
  Split split;
  std::vector<BatchLog> log;
  EvalResult test;
};

using EpochHook = std::function<void(const TrainState&, const std::vector<BatchLog>&)>;

/// Split, build sets and train from state.epoch up to max_epochs, then
/// evaluate on the held-out pairs. Pass a resumed state to continue.
RunResult run(const data::Dataset& ds, model::ExtractorConfig mcfg, const TrainConfig& tcfg,
              TrainState* resume = nullptr, const EpochHook& on_epoch = {});

struct AblationRow {
  std::string name;
  EvalResult result;
};

/// Full model plus the four ablations, each from the same seed and split.
/// Rows: without_cca, without_triplet, without_attention, raw_eeg, full.
std::vector<AblationRow> ablation_suite(const data::Dataset& ds, const model::ExtractorConfig& mcfg,
                                        const TrainConfig& tcfg);

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out);

}  // namespace dsen::train
