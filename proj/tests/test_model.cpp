#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dsen/error.hpp"
#include "dsen/gradcheck.hpp"
#include "dsen/log.hpp"
#include "dsen/losses.hpp"
#include "dsen/model.hpp"
#include "test_util.hpp"

using namespace dsen;
using namespace dsen::ad;
using namespace dsen::model;

namespace {

Tensor randn(Shape shape, unsigned seed, bool grad = false, double sd = 1.0) {
  const std::size_t n = numel(shape);
  return Tensor::from_values(std::move(shape), testing::normal_vector(n, seed, 0.0, sd), grad);
}

EdgeConvWeights random_edge(std::size_t d_in, std::size_t d_out, bool concat, unsigned seed) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d_in));
  return {randn({d_out, concat ? 2 * d_in : d_in}, seed, false, s), randn({d_out}, seed + 1, false, 0.1),
          randn({d_out, d_out}, seed + 2, false, s), randn({d_out}, seed + 3, false, 0.1)};
}

// Direct enumeration of every ordered edge (i, j), j != i.
std::vector<double> edgeconv_oracle(const std::vector<double>& x, std::size_t v, std::size_t d,
                                    const EdgeConvWeights& w, bool concat, bool use_max) {
  const std::size_t h = w.b1.size(), out = w.b2.size();
  std::vector<double> res(v * out, use_max ? -INFINITY : 0.0);
  std::vector<double> e(concat ? 2 * d : d), hid(h);
  for (std::size_t i = 0; i < v; ++i) {
    for (std::size_t j = 0; j < v; ++j) {
      if (j == i) continue;
      for (std::size_t k = 0; k < d; ++k) {
        if (concat) {
          e[k] = x[i * d + k];
          e[d + k] = x[j * d + k] - x[i * d + k];
        } else {
          e[k] = x[j * d + k] - x[i * d + k];
        }
      }
      for (std::size_t a = 0; a < h; ++a) {
        double s = w.b1.values()[a];
        for (std::size_t k = 0; k < e.size(); ++k) s += w.w1.values()[a * e.size() + k] * e[k];
        hid[a] = std::max(0.0, s);
      }
      for (std::size_t o = 0; o < out; ++o) {
        double s = w.b2.values()[o];
        for (std::size_t a = 0; a < h; ++a) s += w.w2.values()[o * h + a] * hid[a];
        if (use_max) {
          res[i * out + o] = std::max(res[i * out + o], s);
        } else {
          res[i * out + o] += s / static_cast<double>(v - 1);
        }
      }
    }
  }
  return res;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ExtractorConfig tiny_config() {
  ExtractorConfig c;
  c.n_channels = 4;
  c.n_segments = 2;
  c.segment_len = 64;
  c.local_kernel = 9;
  c.local_pool_target = 12;
  c.global_kernel = 7;
  c.temporal_feature_dim = 6;
  c.edgeconv_dims = {3, 6, 12};
  c.head_out_dim = 5;
  c.validate();
  return c;
}

}  // namespace

TEST_CASE("edgeconv block") {
  SUBCASE("30 x 128 against brute-force edge enumeration") {
    const auto x = testing::normal_vector(30 * 128, 1);
    const ElectrodeGraph g(30);
    for (bool concat : {true, false}) {
      for (bool use_max : {true, false}) {
        const auto w = random_edge(128, 64, concat, 10);
        auto y = edgeconv_block(Tensor::from_values({30, 128}, x), w, g,
                                concat ? EdgeMode::Concat : EdgeMode::Difference,
                                use_max ? Aggregation::Max : Aggregation::Mean);
        REQUIRE(y.shape() == Shape{30, 64});
        CHECK(max_abs_diff(y.values(), edgeconv_oracle(x, 30, 128, w, concat, use_max)) < 1e-10);
      }
    }
  }
  SUBCASE("identical vertices give identical rows") {
    std::vector<double> x;
    const auto row = testing::normal_vector(8, 2);
    for (int i = 0; i < 5; ++i) x.insert(x.end(), row.begin(), row.end());
    auto y = edgeconv_block(Tensor::from_values({5, 8}, x), random_edge(8, 16, true, 20), ElectrodeGraph(5));
    for (std::size_t i = 1; i < 5; ++i)
      for (std::size_t k = 0; k < 16; ++k) CHECK(y.values()[i * 16 + k] == y.values()[k]);
  }
  SUBCASE("two vertices with a difference-selecting sMLP") {
    EdgeConvWeights w{Tensor::from_values({1, 2}, {0, 1}), Tensor::zeros({1}), Tensor::from_values({1, 1}, {1}),
                      Tensor::zeros({1})};
    auto y = edgeconv_block(Tensor::from_values({2, 1}, {1.0, 3.0}), w, ElectrodeGraph(2));
    CHECK(y.values()[0] == 2.0);
    CHECK(y.values()[1] == 0.0);
  }
  SUBCASE("equivariant under vertex permutation") {
    const std::size_t v = 7, d = 5;
    const auto x = testing::normal_vector(v * d, 3);
    std::vector<std::size_t> perm(v);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
    std::vector<double> xp(v * d);
    for (std::size_t i = 0; i < v; ++i) std::copy_n(x.begin() + perm[i] * d, d, xp.begin() + i * d);
    const auto w = random_edge(d, 10, true, 30);
    auto y = edgeconv_block(Tensor::from_values({v, d}, x), w, ElectrodeGraph(v));
    auto yp = edgeconv_block(Tensor::from_values({v, d}, xp), w, ElectrodeGraph(v));
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t k = 0; k < 10; ++k) CHECK(yp.values()[i * 10 + k] == y.values()[perm[i] * 10 + k]);
  }
  SUBCASE("errors") {
    const auto w = random_edge(3, 4, true, 40);
    CHECK_THROWS_AS(edgeconv_block(Tensor::zeros({1, 3}), w, ElectrodeGraph(1)), ShapeError);
    CHECK_THROWS_AS(edgeconv_block(Tensor::zeros({3, 3}), w, ElectrodeGraph(4)), ShapeError);
  }
  const auto adj = ElectrodeGraph(4).adjacency();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(adj(i, j) == (i == j ? 0.0 : 1.0));
}

TEST_CASE("attention fusion") {
  const std::size_t d = 128;
  auto hx = randn({3, d}, 50), hy = randn({3, d}, 51);
  auto wq = randn({d, d}, 52, false, 0.1), wk = randn({d, d}, 53, false, 0.1), wv = randn({d, d}, 54, false, 0.1);
  auto fused = attention_fuse(hx, hy, wq, wk, wv);
  REQUIRE(fused.shape() == Shape{3, 2 * d});
  // Length-1 sequences: the softmax weight is exactly 1.
  auto vx = linear(hx, wv, Tensor()), vy = linear(hy, wv, Tensor());
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t k = 0; k < d; ++k) {
      CHECK(fused.values()[b * 2 * d + k] == vy.values()[b * d + k]);
      CHECK(fused.values()[b * 2 * d + d + k] == vx.values()[b * d + k]);
    }
  }
  // Direct matrix arithmetic for one row.
  for (std::size_t k = 0; k < d; ++k) {
    double ref = 0.0;
    for (std::size_t j = 0; j < d; ++j) ref += wv.values()[k * d + j] * hy.values()[j];
    CHECK(std::abs(fused.values()[k] - ref) < 1e-12);
  }
  auto swapped = attention_fuse(hy, hx, wq, wk, wv);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < d; ++k) CHECK(swapped.values()[b * 2 * d + k] == fused.values()[b * 2 * d + d + k]);
  CHECK_THROWS_AS(attention_fuse(hx, randn({3, 4}, 1), wq, wk, wv), ShapeError);
}

TEST_CASE("classifier head") {
  ExtractorConfig cfg = tiny_config();
  auto p = init_params(cfg, 1);
  auto h = randn({2, 2 * cfg.head_out_dim}, 60);
  auto logits = classify(h, p, cfg.dropout_keep, Mode{});
  CHECK(logits.shape() == Shape{2, 2});
  for (auto t : {p.fc1_w, p.fc1_b, p.fc2_w, p.fc2_b}) std::fill(t.values_mut().begin(), t.values_mut().end(), 0.0);
  auto probs = softmax(classify(h, p, cfg.dropout_keep, Mode{}));
  for (double v : probs.values()) CHECK(v == 0.5);
  // One-hot weights pass a chosen fused coordinate (here index 3) through.
  p.fc1_w.values_mut()[0 * 2 * cfg.head_out_dim + 3] = 1.0;
  p.fc2_w.values_mut()[1 * cfg.head_out_dim + 0] = 1.0;
  auto pos = Tensor::from_values(h.shape(), std::vector<double>(h.size(), 0.7));
  CHECK(classify(pos, p, cfg.dropout_keep, Mode{}).values()[1] == 0.7);
}

TEST_CASE("extractor") {
  auto quiet = set_warning_sink([](const std::string&) {});
  SUBCASE("default configuration produces a 128-dim feature") {
    ExtractorConfig cfg;
    cfg.validate();
    CHECK(cfg.pooled_width() == 896);
    auto p = init_params(cfg, 2);
    auto h = extract_features(randn({30, 3600}, 70), p, cfg);
    CHECK(h.shape() == Shape{128});
  }
  SUBCASE("channel permutation with matching weight permutation leaves H unchanged") {
    const auto cfg = tiny_config();
    auto p = init_params(cfg, 3);
    p.bn.running_mean = {0.1, -0.2, 0.3, 0.05};
    p.bn.running_var = {1.5, 0.7, 1.1, 0.9};
    const std::size_t c = cfg.n_channels, t = cfg.input_len();
    const auto x = testing::normal_vector(c * t, 71);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    auto permute_rows = [&](const Tensor& src, std::size_t width) {
      std::vector<double> out(src.size());
      for (std::size_t i = 0; i < c; ++i)
        std::copy_n(src.values().begin() + perm[i] * width, width, out.begin() + i * width);
      return out;
    };
    auto base = extract_features(Tensor::from_values({c, t}, x), p, cfg);
    auto q = init_params(cfg, 3);
    auto copy_into = [](Tensor& dst, const std::vector<double>& v) { std::copy(v.begin(), v.end(), dst.values_mut().begin()); };
    copy_into(q.local_w, permute_rows(p.local_w, cfg.local_kernel));
    copy_into(q.local_b, permute_rows(p.local_b, 1));
    copy_into(q.bn_gamma, permute_rows(p.bn_gamma, 1));
    copy_into(q.bn_beta, permute_rows(p.bn_beta, 1));
    copy_into(q.global_w, permute_rows(p.global_w, cfg.global_kernel));
    copy_into(q.global_b, permute_rows(p.global_b, 1));
    for (std::size_t i = 0; i < c; ++i) {
      q.bn.running_mean[i] = p.bn.running_mean[perm[i]];
      q.bn.running_var[i] = p.bn.running_var[perm[i]];
    }
    auto permuted = extract_features(Tensor::from_values({c, t}, permute_rows(Tensor::from_values({c, t}, x), t)), q, cfg);
    CHECK(max_abs_diff(base.values(), permuted.values()) < 1e-12);
  }
  SUBCASE("zero input with zero biases gives zero pooled features") {
    const auto cfg = tiny_config();
    auto p = init_params(cfg, 4);
    for (auto t : {p.local_b, p.global_b, p.bn_beta}) std::fill(t.values_mut().begin(), t.values_mut().end(), 0.0);
    for (auto& e : p.edge) {
      for (auto t : {e.b1, e.b2}) std::fill(t.values_mut().begin(), t.values_mut().end(), 0.0);
    }
    auto pooled = pooled_representation(Tensor::zeros({1, cfg.n_channels, cfg.input_len()}), p, cfg, Mode{});
    for (double v : pooled.values()) CHECK(v == 0.0);
  }
  SUBCASE("eval mode is deterministic; train mode dropout follows its seed") {
    const auto cfg = tiny_config();
    auto p = init_params(cfg, 5);
    auto x = randn({3, cfg.n_channels, cfg.input_len()}, 72);
    auto a = extract_batch(x, p, cfg, Mode{});
    auto b = extract_batch(x, p, cfg, Mode{});
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    auto run = [&] {
      auto q = init_params(cfg, 5);
      Rng r(9);
      auto h = extract_batch(x, q, cfg, Mode{true, &r});
      return std::vector<double>(h.values().begin(), h.values().end());
    };
    CHECK(run() == run());
  }
  SUBCASE("config validation") {
    ExtractorConfig cfg = tiny_config();
    auto p = init_params(cfg, 1);
    CHECK_THROWS_AS(extract_features(randn({4, 100}, 1), p, cfg), ConfigError);
    ExtractorConfig bad = cfg;
    bad.edgeconv_dims = {3, 5};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.local_kernel = 65;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    std::string seen;
    set_warning_sink([&](const std::string& m) { seen = m; });
    bad = cfg;
    bad.global_kernel = 1000;
    bad.validate();
    CHECK(bad.global_kernel == cfg.concat_len());
    CHECK(seen.find("clamping") != std::string::npos);
  }
  SUBCASE("shared channel weights") {
    ExtractorConfig cfg = tiny_config();
    cfg.share_channel_weights = true;
    auto p = init_params(cfg, 6);
    CHECK(p.local_w.shape() == Shape{1, 1, cfg.local_kernel});
    CHECK(extract_features(randn({4, cfg.input_len()}, 73), p, cfg).shape() == Shape{cfg.head_out_dim});
  }
  set_warning_sink(quiet);
}

TEST_CASE("checkpoint arrays round trip through params") {
  const auto cfg = tiny_config();
  auto p = init_params(cfg, 7);
  p.bn.running_mean = {1, 2, 3, 4};
  auto q = init_params(cfg, 8);
  q.load_arrays(p.to_arrays());
  CHECK(q.to_arrays() == p.to_arrays());
  auto arrays = p.to_arrays();
  arrays[0].shape = {1};
  CHECK_THROWS_AS(q.load_arrays(arrays), FormatError);
}

TEST_CASE("edgeconv block and attention fusion gradients on 5 random configurations") {
  std::mt19937_64 rng(77);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  for (unsigned cfg = 0; cfg < 5; ++cfg) {
    CAPTURE(cfg);
    const std::size_t b = pick(1, 2), v = pick(2, 5), d_in = pick(1, 4), d_out = pick(1, 4);
    const bool concat = cfg % 2 == 0;
    const auto mode = concat ? EdgeMode::Concat : EdgeMode::Difference;
    const auto agg = cfg % 3 == 0 ? Aggregation::Mean : Aggregation::Max;
    auto w = random_edge(d_in, d_out, concat, 900 + 10 * cfg);
    auto x = randn({b, v, d_in}, 950 + cfg, true);
    auto w1 = Tensor::from_values(w.w1.shape(), {w.w1.values().begin(), w.w1.values().end()}, true);
    auto b1 = Tensor::from_values(w.b1.shape(), {w.b1.values().begin(), w.b1.values().end()}, true);
    auto w2 = Tensor::from_values(w.w2.shape(), {w.w2.values().begin(), w.w2.values().end()}, true);
    auto b2 = Tensor::from_values(w.b2.shape(), {w.b2.values().begin(), w.b2.values().end()}, true);
    const auto probe_w = randn({b, v, d_out}, 990 + cfg);
    auto r = grad_check(
        [&](const std::vector<Tensor>& in) {
          auto y = edgeconv_block(in[0], EdgeConvWeights{in[1], in[2], in[3], in[4]}, ElectrodeGraph(v), mode, agg);
          return sum(mul(y, probe_w));
        },
        {x, w1, b1, w2, b2});
    INFO("edgeconv max rel error " << r.max_rel_error);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.excluded.size() * 20 <= r.checked);

    const std::size_t d = pick(1, 6), rows = pick(1, 3);
    auto hx = randn({rows, d}, 1200 + cfg, true), hy = randn({rows, d}, 1300 + cfg, true);
    auto wq = randn({d, d}, 1400 + cfg, true, 0.5), wk = randn({d, d}, 1500 + cfg, true, 0.5),
         wv = randn({d, d}, 1600 + cfg, true, 0.5);
    const auto probe_f = randn({rows, 2 * d}, 1700 + cfg);
    auto ra = grad_check(
        [&](const std::vector<Tensor>& in) { return sum(mul(attention_fuse(in[0], in[1], in[2], in[3], in[4]), probe_f)); },
        {hx, hy, wq, wk, wv});
    INFO("attention max rel error " << ra.max_rel_error);
    CHECK(ra.checked > 0);
    CHECK(ra.max_rel_error < 1e-4);
  }
}

TEST_CASE("full pipeline gradient on a reduced configuration") {
  auto quiet = set_warning_sink([](const std::string&) {});
  const auto cfg = tiny_config();
  auto params = init_params(cfg, 11);
  const std::size_t b = 4;
  auto x = randn({b, cfg.n_channels, cfg.input_len()}, 80);
  auto y = randn({b, cfg.n_channels, cfg.input_len()}, 81);
  auto z = randn({b, cfg.n_channels, cfg.input_len()}, 82);
  const std::vector<int> labels{1, 0, 1, 1};
  auto inputs = params.all_params();
  auto f = [&](const std::vector<Tensor>&) {
    Rng drop(3);
    const Mode mode{true, &drop};
    auto all = extract_batch(concat({x, y, z}, 0), params, cfg, mode);
    auto hx = slice(all, 0, 0, b), hy = slice(all, 0, b, b), hz = slice(all, 0, 2 * b, b);
    auto fused = attention_fuse(hx, hy, params.wq, params.wk, params.wv);
    auto logits = classify(fused, params, cfg.dropout_keep, mode);
    return add(losses::triplet_loss(hx, hy, hz, {1.5}), losses::combined_loss(logits, labels, hx, hy));
  };
  auto report = grad_check(f, inputs);
  INFO("max rel error " << report.max_rel_error << " at input " << report.worst.input << "[" << report.worst.index
                        << "] analytic " << report.worst.analytic << " numeric " << report.worst.numeric
                        << "; excluded " << report.excluded.size());
  CHECK(report.checked > 500);
  CHECK(report.max_rel_error < 1e-3);
  CHECK(report.excluded.size() * 50 < report.checked);
  set_warning_sink(quiet);
}
