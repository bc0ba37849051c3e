#include "dsen/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "dsen/error.hpp"
#include "dsen/log.hpp"
#include "dsen/losses.hpp"

namespace dsen::train {

using ad::Tensor;
using data::Dataset;

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a finite value >= 0");
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ConfigError("train.dropout_keep must lie in (0, 1]");
  if (!(input_band_low_hz > 0.0 && input_band_low_hz < input_band_high_hz)) {
    throw ConfigError("train.input_band_low_hz must be positive and below train.input_band_high_hz");
  }
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("train.alpha and train.beta must be >= 0");
  if (!(cca_eps > 0.0)) throw ConfigError("train.cca_eps must be positive");
  if (train_pairs_per_class == 0) throw ConfigError("train.train_pairs_per_class must be positive");
  losses::TripletConfig{triplet_margin}.validate();
}

namespace {

// Fisher-Yates over the engine's raw output, so the order does not depend on
// the standard library's distribution implementations.
template <typename T>
void shuffle(std::vector<T>& v, ad::Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.next() % i;
    std::swap(v[i - 1], v[j]);
  }
}

std::size_t pick(std::size_t n, ad::Rng& rng) { return rng.next() % n; }

}  // namespace

model::ExtractorConfig resolve_model(const Dataset& ds, model::ExtractorConfig mcfg, const TrainConfig& tcfg) {
  mcfg.n_channels = ds.n_channels;
  mcfg.n_segments = ds.n_segments;
  mcfg.segment_len = ds.segment_len;
  mcfg.dropout_keep = tcfg.dropout_keep;
  mcfg.validate();
  return mcfg;
}

Split split_dataset(const Dataset& ds, std::uint64_t seed, std::size_t per_class) {
  std::vector<int> strangers, friends;
  std::set<int> seen;
  for (const auto& s : ds.samples) {
    if (!seen.insert(s.pair_id).second) continue;
    (s.label == 1 ? friends : strangers).push_back(s.pair_id);
  }
  if (strangers.size() < per_class || friends.size() < per_class) {
    std::ostringstream os;
    os << "cannot split: need " << per_class << " stranger and " << per_class << " friend pairs, have "
       << strangers.size() << " and " << friends.size();
    throw DataError(os.str());
  }
  ad::Rng rng(data::derive_seed(seed, 0));
  shuffle(strangers, rng);
  shuffle(friends, rng);
  Split split;
  for (auto* group : {&strangers, &friends}) {
    split.train_pairs.insert(split.train_pairs.end(), group->begin(), group->begin() + per_class);
    split.test_pairs.insert(split.test_pairs.end(), group->begin() + per_class, group->end());
  }
  std::sort(split.train_pairs.begin(), split.train_pairs.end());
  std::sort(split.test_pairs.begin(), split.test_pairs.end());
  return split;
}

std::vector<std::size_t> samples_of(const Dataset& ds, const std::vector<int>& pairs) {
  const std::set<int> wanted(pairs.begin(), pairs.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (wanted.count(ds.samples[i].pair_id)) out.push_back(i);
  }
  return out;
}

TrainingSets build_sets(const Dataset& ds, const std::vector<int>& train_pairs, ad::Rng& rng) {
  const std::set<int> distinct(train_pairs.begin(), train_pairs.end());
  if (distinct.size() < 2) throw DataError("cannot form triplet negatives from fewer than two pairs");
  const auto idx = samples_of(ds, train_pairs);

  std::map<int, std::vector<std::size_t>> by_pair;
  for (auto i : idx) by_pair[ds.samples[i].pair_id].push_back(i);
  std::vector<int> pair_list;
  for (const auto& [pid, _] : by_pair) pair_list.push_back(pid);

  TrainingSets sets;
  for (auto i : idx) {
    const auto& s = ds.samples[i];
    sets.duals.push_back({{i, 0}, {i, 1}, s.label});
    // Draw from the other pairs only: index k among n-1 skips the anchor's pair.
    const auto own = std::find(pair_list.begin(), pair_list.end(), s.pair_id) - pair_list.begin();
    auto k = static_cast<std::ptrdiff_t>(pick(pair_list.size() - 1, rng));
    if (k >= own) ++k;
    const auto& windows = by_pair[pair_list[static_cast<std::size_t>(k)]];
    const std::size_t neg = windows[pick(windows.size(), rng)];
    const int subject = static_cast<int>(pick(2, rng));
    sets.triplets.push_back({{i, 0}, {i, 1}, {neg, subject}});
  }
  return sets;
}

std::vector<double> prepare_input(const Dataset& ds, const data::DyadicSample& s, int subject, const TrainConfig& cfg) {
  signal::BandSpec band{"input", cfg.input_band_low_hz, cfg.input_band_high_hz};
  band.validate(ds.sample_rate_hz);
  const auto h = signal::bandpass_kernel(ds.sample_rate_hz, band.low_hz, band.high_hz);
  const auto& raw = subject == 0 ? s.x : s.y;
  const std::size_t width = ds.n_segments * ds.segment_len;
  std::vector<double> out(ds.n_channels * width);
  std::vector<double> seg(ds.segment_len);

  for (std::size_t c = 0; c < ds.n_channels; ++c) {
    double* row = out.data() + c * width;
    for (std::size_t k = 0; k < ds.n_segments; ++k) {
      const float* src = raw.data() + c * width + k * ds.segment_len;
      std::copy(src, src + ds.segment_len, seg.begin());
      const auto filtered = signal::filtfilt(seg, h);
      if (cfg.raw_input) {
        std::copy(filtered.begin(), filtered.end(), row + k * ds.segment_len);
      } else {
        const auto z = signal::analytic_signal(filtered);
        for (std::size_t t = 0; t < ds.segment_len; ++t) row[k * ds.segment_len + t] = std::abs(z[t]);
      }
    }
    double mean = 0.0;
    for (std::size_t t = 0; t < width; ++t) mean += row[t];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t t = 0; t < width; ++t) var += (row[t] - mean) * (row[t] - mean);
    const double sd = std::sqrt(var / static_cast<double>(width));
    const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
    for (std::size_t t = 0; t < width; ++t) row[t] = (row[t] - mean) * inv;
  }
  return out;
}

std::vector<std::vector<double>> prepare_all(const Dataset& ds, const TrainConfig& cfg) {
  std::vector<std::vector<double>> out;
  out.reserve(2 * ds.samples.size());
  for (const auto& s : ds.samples) {
    out.push_back(prepare_input(ds, s, 0, cfg));
    out.push_back(prepare_input(ds, s, 1, cfg));
  }
  return out;
}

void write_log_header(std::ostream& out) { out << "epoch,batch,loss_triplet,loss_cca,loss_cls,loss_combined\n"; }

void write_log_rows(std::ostream& out, const std::vector<BatchLog>& rows) {
  auto field = [&](double v) {
    if (!std::isnan(v)) out << v;
  };
  const auto old = out.precision(17);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.batch << ',';
    field(r.triplet);
    out << ',';
    field(r.cca);
    out << ',' << r.cls << ',' << r.combined << '\n';
  }
  out.precision(old);
}

namespace {

void put_adam(std::vector<ad::NamedArray>& out, const std::string& prefix, const ad::AdamState& st,
              const std::vector<std::pair<std::string, Tensor>>& named) {
  out.push_back({prefix + ".step", {1}, {static_cast<double>(st.step)}});
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    out.push_back({prefix + ".m." + named[i].first, named[i].second.shape(), st.m[i]});
    out.push_back({prefix + ".v." + named[i].first, named[i].second.shape(), st.v[i]});
  }
}

void get_adam(const std::map<std::string, const ad::NamedArray*>& by_name, const std::string& prefix,
              ad::AdamState& st, const std::vector<std::pair<std::string, Tensor>>& named) {
  st = {};
  auto it = by_name.find(prefix + ".step");
  if (it == by_name.end()) throw FormatError("checkpoint is missing " + prefix + ".step");
  st.step = static_cast<std::size_t>(it->second->values.at(0));
  if (st.step == 0) return;
  for (const auto& [name, t] : named) {
    auto m = by_name.find(prefix + ".m." + name);
    auto v = by_name.find(prefix + ".v." + name);
    if (m == by_name.end() || v == by_name.end()) throw FormatError("checkpoint is missing optimiser state for " + name);
    if (m->second->values.size() != t.size() || v->second->values.size() != t.size()) {
      throw FormatError("optimiser state for " + name + " has the wrong size");
    }
    st.m.push_back(m->second->values);
    st.v.push_back(v->second->values);
  }
}

std::vector<std::pair<std::string, Tensor>> named_all(const model::DsenParams& p) {
  auto all = p.named_extractor();
  auto cls = p.named_classifier();
  all.insert(all.end(), cls.begin(), cls.end());
  return all;
}

}  // namespace

std::vector<ad::NamedArray> TrainState::to_arrays() const {
  auto out = params.to_arrays();
  out.push_back({"train.epoch", {1}, {static_cast<double>(epoch)}});
  out.push_back({"train.best_loss", {1}, {best_loss}});
  out.push_back({"train.best_epoch", {1}, {static_cast<double>(best_epoch)}});
  put_adam(out, "adam_f", adam_f, params.named_extractor());
  put_adam(out, "adam_all", adam_all, named_all(params));
  return out;
}

void TrainState::load_arrays(const std::vector<ad::NamedArray>& arrays) {
  params.load_arrays(arrays);
  std::map<std::string, const ad::NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto scalar = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->values.size() != 1) throw FormatError("checkpoint is missing " + name);
    return it->second->values[0];
  };
  epoch = static_cast<std::size_t>(scalar("train.epoch"));
  best_loss = scalar("train.best_loss");
  best_epoch = static_cast<std::size_t>(scalar("train.best_epoch"));
  get_adam(by_name, "adam_f", adam_f, params.named_extractor());
  get_adam(by_name, "adam_all", adam_all, named_all(params));
}

TrainState init_state(const model::ExtractorConfig& mcfg, const TrainConfig& tcfg) {
  TrainState st;
  st.params = model::init_params(mcfg, data::derive_seed(tcfg.seed, 2));
  return st;
}

ad::Rng epoch_rng(const TrainConfig& cfg, std::size_t epoch) {
  return ad::Rng(data::derive_seed(data::derive_seed(cfg.seed, 1), epoch));
}

namespace {

Tensor gather(const std::vector<std::vector<double>>& inputs, const std::vector<SampleRef>& refs,
              const model::ExtractorConfig& mcfg) {
  const std::size_t width = mcfg.input_len();
  const std::size_t per = mcfg.n_channels * width;
  std::vector<double> v;
  v.reserve(refs.size() * per);
  for (const auto& r : refs) {
    const auto& src = inputs.at(2 * r.sample + static_cast<std::size_t>(r.subject));
    if (src.size() != per) throw ShapeError("prepared input does not match the model configuration");
    v.insert(v.end(), src.begin(), src.end());
  }
  return Tensor::from_values({refs.size(), mcfg.n_channels, width}, std::move(v));
}

Tensor fuse(const Tensor& hx, const Tensor& hy, const model::DsenParams& p, const TrainConfig& cfg) {
  if (cfg.no_attention) return ad::concat({hx, hy}, 1);
  return model::attention_fuse(hx, hy, p.wq, p.wk, p.wv);
}

using Grads = std::vector<std::vector<double>>;

Grads take_grads(std::vector<Tensor>& params) {
  Grads g;
  for (auto& t : params) {
    g.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                : std::vector<double>(t.size(), 0.0));
    t.zero_grad();
  }
  return g;
}

void put_grads(std::vector<Tensor>& params, const Grads& g) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].grad_mut();
    std::copy(g[i].begin(), g[i].end(), dst.begin());
  }
}

void check_grads(const Grads& g, const std::string& where) {
  for (const auto& v : g) {
    for (double x : v) {
      if (!std::isfinite(x)) throw NumericError(where + ": non-finite gradient");
    }
  }
}

struct Batch {
  std::vector<SampleRef> x, y, z;
  std::vector<int> labels;
};

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, ad::Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    // A short tail joins the previous batch so every batch keeps a usable covariance.
    if (!out.empty() && end - start < batch_size / 2) {
      out.back().insert(out.back().end(), order.begin() + static_cast<std::ptrdiff_t>(start), order.end());
      break;
    }
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace

std::vector<BatchLog> train_epoch(TrainState& state, const TrainingSets& sets,
                                  const std::vector<std::vector<double>>& inputs, const model::ExtractorConfig& mcfg,
                                  const TrainConfig& tcfg, ad::Rng& rng) {
  if (sets.duals.empty() || sets.duals.size() != sets.triplets.size()) {
    throw DataError("training sets are empty or inconsistent");
  }
  if (sets.duals.size() < 2) throw DataError("training needs at least two samples per epoch");
  auto& p = state.params;
  std::vector<Tensor> theta_f = p.extractor_params();
  std::vector<Tensor> theta_all = p.all_params();
  const ad::AdamConfig adam{tcfg.lr};
  const model::Mode mode{true, &rng};
  const losses::TripletConfig trip_cfg{tcfg.triplet_margin};
  const losses::CcaConfig cca_cfg{tcfg.cca_eps};
  ad::zero_grads(theta_all);

  std::vector<BatchLog> logs;
  const auto batches = make_batches(sets.duals.size(), tcfg.batch_size, rng);
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    BatchLog log;
    log.epoch = state.epoch;
    log.batch = bi;
    auto where = [&](const char* term) {
      return "epoch " + std::to_string(state.epoch) + " batch " + std::to_string(bi) + " (" + term + " loss)";
    };
    Batch b;
    for (auto i : batches[bi]) {
      b.x.push_back(sets.duals[i].x);
      b.y.push_back(sets.duals[i].y);
      b.z.push_back(sets.triplets[i].negative);
      b.labels.push_back(sets.duals[i].label);
    }
    const std::size_t n = b.x.size();

    auto triplet_step = [&]() -> Tensor {
      try {
        std::vector<SampleRef> refs = b.x;
        refs.insert(refs.end(), b.y.begin(), b.y.end());
        refs.insert(refs.end(), b.z.begin(), b.z.end());
        const Tensor h = model::extract_batch(gather(inputs, refs, mcfg), p, mcfg, mode);
        return losses::triplet_loss(ad::slice(h, 0, 0, n), ad::slice(h, 0, n, n), ad::slice(h, 0, 2 * n, n), trip_cfg);
      } catch (const NumericError& e) {
        throw NumericError(where("triplet") + ": " + e.what());
      }
    };
    struct Combined {
      Tensor total, cls, cca;
    };
    auto combined_step = [&]() -> Combined {
      Tensor hx, hy, cls, cca;
      try {
        std::vector<SampleRef> refs = b.x;
        refs.insert(refs.end(), b.y.begin(), b.y.end());
        const Tensor h = model::extract_batch(gather(inputs, refs, mcfg), p, mcfg, mode);
        hx = ad::slice(h, 0, 0, n);
        hy = ad::slice(h, 0, n, n);
        const Tensor logits = model::classify(fuse(hx, hy, p, tcfg), p, tcfg.dropout_keep, mode);
        cls = losses::cross_entropy(logits, b.labels);
      } catch (const NumericError& e) {
        throw NumericError(where("classification") + ": " + e.what());
      }
      Tensor total = ad::scale(cls, tcfg.alpha);
      if (!tcfg.no_cca && tcfg.beta != 0.0) {
        try {
          const std::size_t d = hx.dim(1);
          const std::size_t k = tcfg.cca_dim == 0 ? d : std::min(tcfg.cca_dim, d);
          cca = losses::cca_loss(ad::slice(hx, 1, 0, k), ad::slice(hy, 1, 0, k), cca_cfg);
          total = ad::add(total, ad::scale(cca, tcfg.beta));
        } catch (const NumericError& e) {
          throw NumericError(where("cca") + ": " + e.what());
        }
      }
      return {total, cls, cca};
    };

    if (tcfg.single_forward) {
      // Both objectives see the parameters as they were at the top of the batch.
      Grads g_trip;
      if (!tcfg.no_triplet) {
        const Tensor t = triplet_step();
        log.triplet = t.item();
        t.backward();
        g_trip = take_grads(theta_f);
        ad::zero_grads(theta_all);
        check_grads(g_trip, where("triplet"));
      }
      const Combined c = combined_step();
      c.total.backward();
      const Grads g_all = take_grads(theta_all);
      check_grads(g_all, where("combined"));
      if (!tcfg.no_triplet) {
        put_grads(theta_f, g_trip);
        ad::adam_step(theta_f, state.adam_f, adam);
        ad::zero_grads(theta_all);
      }
      put_grads(theta_all, g_all);
      ad::adam_step(theta_all, state.adam_all, adam);
      ad::zero_grads(theta_all);
      log.cls = c.cls.item();
      if (c.cca.defined()) log.cca = c.cca.item();
      log.combined = c.total.item();
    } else {
      if (!tcfg.no_triplet) {
        const Tensor t = triplet_step();
        log.triplet = t.item();
        t.backward();
        const Grads g = take_grads(theta_f);
        ad::zero_grads(theta_all);
        check_grads(g, where("triplet"));
        put_grads(theta_f, g);
        ad::adam_step(theta_f, state.adam_f, adam);
        ad::zero_grads(theta_all);
      }
      const Combined c = combined_step();
      c.total.backward();
      const Grads g = take_grads(theta_all);
      check_grads(g, where("combined"));
      put_grads(theta_all, g);
      ad::adam_step(theta_all, state.adam_all, adam);
      ad::zero_grads(theta_all);
      log.cls = c.cls.item();
      if (c.cca.defined()) log.cca = c.cca.item();
      log.combined = c.total.item();
    }
    logs.push_back(log);
  }
  return logs;
}

std::size_t Confusion::total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }

double Confusion::accuracy() const {
  const std::size_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(counts[0][0] + counts[1][1]) / static_cast<double>(n);
}

double Confusion::f1() const {
  const double tp = static_cast<double>(counts[1][1]);
  const double denom = 2.0 * tp + static_cast<double>(counts[0][1] + counts[1][0]);
  // No friends present and none predicted: nothing was missed.
  return denom == 0.0 ? 1.0 : 2.0 * tp / denom;
}

std::vector<double> predict(model::DsenParams& params, const Dataset& /*ds*/,
                            const std::vector<std::vector<double>>& inputs, const std::vector<std::size_t>& samples,
                            const model::ExtractorConfig& mcfg, const TrainConfig& tcfg) {
  ad::NoGradGuard guard;
  std::vector<double> out;
  out.reserve(samples.size());
  const std::size_t chunk = 64;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    std::vector<SampleRef> xs, ys;
    for (std::size_t i = start; i < end; ++i) {
      xs.push_back({samples[i], 0});
      ys.push_back({samples[i], 1});
    }
    const Tensor hx = model::extract_batch(gather(inputs, xs, mcfg), params, mcfg, {});
    const Tensor hy = model::extract_batch(gather(inputs, ys, mcfg), params, mcfg, {});
    const Tensor prob = ad::softmax(model::classify(fuse(hx, hy, params, tcfg), params, tcfg.dropout_keep, {}));
    for (std::size_t r = 0; r < end - start; ++r) out.push_back(prob.values()[2 * r + 1]);
  }
  return out;
}

EvalResult score(const Dataset& ds, const std::vector<std::size_t>& samples, const std::vector<double>& p_friend) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  if (samples.size() != p_friend.size()) throw ShapeError("score: one probability per sample is required");
  EvalResult r;
  struct Votes {
    int label = 0;
    std::size_t friend_votes = 0, total = 0;
    double p_sum = 0.0;
  };
  std::map<int, Votes> pairs;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = ds.samples.at(samples[i]);
    const int pred = p_friend[i] >= 0.5 ? 1 : 0;
    ++r.confusion.counts[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(pred)];
    auto& v = pairs[s.pair_id];
    v.label = s.label;
    v.friend_votes += static_cast<std::size_t>(pred);
    ++v.total;
    v.p_sum += p_friend[i];
  }
  for (const auto& [pid, v] : pairs) {
    int pred = 0;
    if (2 * v.friend_votes > v.total) {
      pred = 1;
    } else if (2 * v.friend_votes == v.total) {
      pred = v.p_sum / static_cast<double>(v.total) >= 0.5 ? 1 : 0;
    }
    ++r.pair_confusion.counts[static_cast<std::size_t>(v.label)][static_cast<std::size_t>(pred)];
  }
  r.accuracy = r.confusion.accuracy();
  r.f1 = r.confusion.f1();
  r.pair_accuracy = r.pair_confusion.accuracy();
  r.pair_f1 = r.pair_confusion.f1();
  return r;
}

EvalResult evaluate(model::DsenParams& params, const Dataset& ds, const std::vector<std::vector<double>>& inputs,
                    const std::vector<std::size_t>& samples, const model::ExtractorConfig& mcfg,
                    const TrainConfig& tcfg) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  return score(ds, samples, predict(params, ds, inputs, samples, mcfg, tcfg));
}

std::vector<std::vector<double>> fused_features(model::DsenParams& params, const std::vector<std::vector<double>>& inputs,
                                                const std::vector<std::size_t>& samples,
                                                const model::ExtractorConfig& mcfg, const TrainConfig& tcfg) {
  ad::NoGradGuard guard;
  std::vector<std::vector<double>> out;
  for (auto s : samples) {
    const Tensor hx = model::extract_batch(gather(inputs, {{s, 0}}, mcfg), params, mcfg, {});
    const Tensor hy = model::extract_batch(gather(inputs, {{s, 1}}, mcfg), params, mcfg, {});
    const Tensor f = fuse(hx, hy, params, tcfg);
    out.emplace_back(f.values().begin(), f.values().end());
  }
  return out;
}

void write_eval_csv(const EvalResult& r, std::ostream& out) {
  const auto old = out.precision(17);
  out << "level,accuracy,f1,tn,fp,fn,tp\n";
  auto row = [&](const char* level, double acc, double f1, const Confusion& c) {
    out << level << ',' << acc << ',' << f1 << ',' << c.counts[0][0] << ',' << c.counts[0][1] << ','
        << c.counts[1][0] << ',' << c.counts[1][1] << '\n';
  };
  row("window", r.accuracy, r.f1, r.confusion);
  row("pair", r.pair_accuracy, r.pair_f1, r.pair_confusion);
  out.precision(old);
}

namespace {

// Collapses repeated warnings (the CCA rank warning fires once per batch).
class DedupWarnings {
 public:
  DedupWarnings() {
    previous_ = set_warning_sink([this](const std::string& msg) {
      if (!seen_.insert(msg).second) return;
      if (previous_) {
        previous_(msg);
      } else {
        std::cerr << "warning: " << msg << '\n';
      }
    });
  }
  ~DedupWarnings() { set_warning_sink(previous_); }
  DedupWarnings(const DedupWarnings&) = delete;
  DedupWarnings& operator=(const DedupWarnings&) = delete;

 private:
  WarningSink previous_;
  std::set<std::string> seen_;
};

}  // namespace

RunResult run(const Dataset& ds, model::ExtractorConfig mcfg, const TrainConfig& tcfg, TrainState* resume,
              const EpochHook& on_epoch) {
  tcfg.validate();
  ds.validate();
  mcfg = resolve_model(ds, mcfg, tcfg);
  DedupWarnings dedup;

  RunResult res;
  res.split = split_dataset(ds, tcfg.seed, tcfg.train_pairs_per_class);
  const auto inputs = prepare_all(ds, tcfg);
  res.state = resume ? *resume : init_state(mcfg, tcfg);

  while (res.state.epoch < tcfg.max_epochs) {
    ad::Rng rng = epoch_rng(tcfg, res.state.epoch);
    const auto sets = build_sets(ds, res.split.train_pairs, rng);
    auto logs = train_epoch(res.state, sets, inputs, mcfg, tcfg, rng);
    double loss = 0.0;
    for (const auto& l : logs) loss += l.combined + (std::isnan(l.triplet) ? 0.0 : l.triplet);
    loss /= static_cast<double>(logs.size());
    ++res.state.epoch;
    if (loss < res.state.best_loss) {
      res.state.best_loss = loss;
      res.state.best_epoch = res.state.epoch;
    }
    if (on_epoch) on_epoch(res.state, logs);
    res.log.insert(res.log.end(), logs.begin(), logs.end());
  }

  const auto test = samples_of(ds, res.split.test_pairs);
  if (!test.empty()) res.test = evaluate(res.state.params, ds, inputs, test, mcfg, tcfg);
  return res;
}

std::vector<AblationRow> ablation_suite(const Dataset& ds, const model::ExtractorConfig& mcfg, const TrainConfig& tcfg) {
  TrainConfig base = tcfg;
  base.no_cca = base.no_triplet = base.no_attention = base.raw_input = false;
  std::vector<std::pair<std::string, TrainConfig>> variants;
  auto with = [&](const char* name, bool TrainConfig::*flag) {
    TrainConfig c = base;
    if (flag) c.*flag = true;
    variants.emplace_back(name, c);
  };
  with("without_cca", &TrainConfig::no_cca);
  with("without_triplet", &TrainConfig::no_triplet);
  with("without_attention", &TrainConfig::no_attention);
  with("raw_eeg", &TrainConfig::raw_input);
  with("full", nullptr);

  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : variants) rows.push_back({name, run(ds, mcfg, cfg).test});
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  const auto old = out.precision(17);
  out << "configuration,accuracy,f1,pair_accuracy,pair_f1\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.result.accuracy << ',' << r.result.f1 << ',' << r.result.pair_accuracy << ','
        << r.result.pair_f1 << '\n';
  }
  out.precision(old);
}

}  // namespace dsen::train
