#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "dsen/checkpoint.hpp"
#include "dsen/error.hpp"
#include "dsen/gradcheck.hpp"
#include "dsen/ops.hpp"
#include "dsen/optim.hpp"
#include "test_util.hpp"

using namespace dsen;
using namespace dsen::ad;

namespace {

Tensor rand_leaf(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

// Weighted sum so every output coordinate gets a distinct upstream gradient.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> w(y.size());
  for (auto& x : w) x = d(rng);
  return sum(mul(y, Tensor::from_values(y.shape(), std::move(w))));
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

void check_passes(const GradCheckReport& r, double tol = 1e-4) {
  INFO("max rel error " << r.max_rel_error << " at input " << r.worst.input << " index " << r.worst.index
                        << " analytic " << r.worst.analytic << " numeric " << r.worst.numeric);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < tol);
  CHECK(r.excluded.size() * 20 <= r.checked);
}

std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t cin, std::size_t len,
                                const std::vector<double>& w, std::size_t cout, std::size_t k, std::size_t groups) {
  const std::size_t lout = len - k + 1, cpg = cin / groups, opg = cout / groups;
  std::vector<double> y(cout * lout, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < lout; ++t)
      for (std::size_t c = 0; c < cpg; ++c)
        for (std::size_t j = 0; j < k; ++j) y[o * lout + t] += w[(o * cpg + c) * k + j] * x[((o / opg) * cpg + c) * len + t + j];
  return y;
}

}  // namespace

TEST_CASE("conv1d forward") {
  SUBCASE("hand example") {
    auto x = Tensor::from_values({1, 4}, {1, 2, 3, 4});
    auto w = Tensor::from_values({1, 1, 2}, {1, 1});
    auto y = conv1d(x, w, Tensor(), 1, 1);
    CHECK(y.shape() == Shape{1, 3});
    CHECK(std::vector<double>(y.values().begin(), y.values().end()) == std::vector<double>{3, 5, 7});
  }
  SUBCASE("30 x 3600 grouped, K=64") {
    const auto xv = testing::normal_vector(30 * 3600, 11);
    const auto wv = testing::normal_vector(30 * 64, 12);
    auto y = conv1d(Tensor::from_values({30, 3600}, xv), Tensor::from_values({30, 1, 64}, wv), Tensor(), 1, 30);
    CHECK(y.shape() == Shape{30, 3537});
    const auto ref = conv_oracle(xv, 30, 3600, wv, 30, 64, 30);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - y.values()[i]));
    CHECK(worst < 1e-10);
  }
  SUBCASE("two groups, two outputs per group") {
    const auto xv = testing::normal_vector(4 * 20, 13);
    const auto wv = testing::normal_vector(4 * 2 * 5, 14);
    auto y = conv1d(Tensor::from_values({4, 20}, xv), Tensor::from_values({4, 2, 5}, wv), Tensor(), 1, 2);
    const auto ref = conv_oracle(xv, 4, 20, wv, 4, 5, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  SUBCASE("shape errors") {
    auto x = Tensor::zeros({3, 10});
    CHECK_THROWS_AS(conv1d(x, Tensor::zeros({3, 1, 11}), Tensor(), 1, 3), ShapeError);
    CHECK_THROWS_AS(conv1d(x, Tensor::zeros({4, 1, 3}), Tensor(), 1, 3), ShapeError);
  }
}

TEST_CASE("adaptive max pool 336 -> 100 matches bin oracle") {
  const auto xv = testing::normal_vector(2 * 336, 21);
  auto y = adaptive_max_pool1d(Tensor::from_values({2, 336}, xv), 100);
  REQUIRE(y.shape() == Shape{2, 100});
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t i = 0; i < 100; ++i) {
      const auto lo = static_cast<std::size_t>(std::floor(i * 336.0 / 100.0));
      const auto hi = static_cast<std::size_t>(std::ceil((i + 1) * 336.0 / 100.0));
      const double m = *std::max_element(xv.begin() + r * 336 + lo, xv.begin() + r * 336 + hi);
      CHECK(y.values()[r * 100 + i] == m);
    }
  }
}

TEST_CASE("softmax and relu") {
  auto x = Tensor::from_values({2, 3}, {1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0});
  auto s = softmax(x);
  CHECK(s.values()[0] + s.values()[1] + s.values()[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.values()[5] == doctest::Approx(1.0));
  auto shifted = softmax(add_scalar(x, 50.0));
  for (std::size_t i = 0; i < 6; ++i) CHECK(shifted.values()[i] == doctest::Approx(s.values()[i]).epsilon(1e-14));
  auto r = relu(Tensor::from_values({4}, {-2, 0, 0.5, 3}));
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{0, 0, 0.5, 3});
}

TEST_CASE("svd") {
  auto sv = [](const Tensor& t) {
    auto s = svd(t).s;
    return std::vector<double>(s.values().begin(), s.values().end());
  };
  CHECK(sv(Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})) == std::vector<double>{1, 1, 1});
  const auto d = sv(Tensor::from_values({3, 3}, {3, 0, 0, 0, 1, 0, 0, 0, 2}));
  CHECK(d[0] == doctest::Approx(3.0));
  CHECK(d[1] == doctest::Approx(2.0));
  CHECK(d[2] == doctest::Approx(1.0));

  for (auto [rows, cols, seed] : {std::tuple{8, 8, 31}, {5, 3, 32}, {3, 6, 33}}) {
    const auto ev = testing::normal_vector(rows * cols, seed);
    auto dec = svd(Tensor::from_values({std::size_t(rows), std::size_t(cols)}, ev));
    Eigen::MatrixXd e(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) e(i, j) = ev[i * cols + j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(e.transpose() * e);
    std::vector<double> ref;
    for (int i = 0; i < cols; ++i) ref.push_back(std::sqrt(std::max(0.0, eig.eigenvalues()(i))));
    std::sort(ref.rbegin(), ref.rend());
    const std::size_t r = dec.s.size();
    REQUIRE(r == std::size_t(std::min(rows, cols)));
    for (std::size_t i = 0; i < r; ++i) CHECK(std::abs(dec.s.values()[i] - ref[i]) < 1e-8);
    for (std::size_t i = 1; i < r; ++i) CHECK(dec.s.values()[i - 1] >= dec.s.values()[i]);
    std::vector<double> rec(rows * cols, 0.0);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        for (std::size_t k = 0; k < r; ++k)
          rec[i * cols + j] += dec.u.values()[i * r + k] * dec.s.values()[k] * dec.v.values()[j * r + k];
    CHECK(testing::rel_norm_diff(rec, ev) < 1e-8);
  }
}

TEST_CASE("sym_inv_sqrt whitens a covariance") {
  std::mt19937_64 rng(41);
  auto a = rand_leaf({5, 5}, rng);
  auto spd = add(matmul(transpose(a), a), Tensor::from_values({5, 5}, {1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0,
                                                                       0, 0, 0, 1, 0, 0, 0, 0, 0, 1}));
  auto w = sym_inv_sqrt(spd, 1e-8);
  auto prod = matmul(matmul(w, spd), w);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(prod.values()[i * 5 + j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
  CHECK_THROWS_AS(sym_inv_sqrt(Tensor::from_values({2, 2}, {-1, 0, 0, 1}), 1e-4), NumericError);
}

TEST_CASE("grad check: every primitive on 5 random configurations") {
  // Each subcase gets its own stream so the configurations do not depend on run order.
  SUBCASE("elementwise") {
    std::mt19937_64 rng(2024);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const Shape s{pick(rng, 1, 4), pick(rng, 2, 5)};
      auto a = rand_leaf(s, rng), b = rand_leaf(s, rng);
      for (auto& v : b.values_mut()) v = 1.5 + std::abs(v);  // keep div and sqrt away from 0
      check_passes(grad_check(
          [&](const std::vector<Tensor>& in) {
            auto y = add(mul(in[0], in[1]), sub(div(in[0], in[1]), scale(sqrt(in[1]), 0.7)));
            return probe(add_scalar(y, 0.3), ps);
          },
          {a, b}));
    }
  }
  SUBCASE("linear") {
    std::mt19937_64 rng(2025);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const std::size_t in = pick(rng, 1, 6), out = pick(rng, 1, 6);
      auto x = rand_leaf({pick(rng, 1, 3), pick(rng, 1, 4), in}, rng);
      auto w = rand_leaf({out, in}, rng), b = rand_leaf({out}, rng);
      check_passes(grad_check([&](const std::vector<Tensor>& v) { return probe(linear(v[0], v[1], v[2]), ps); },
                              {x, w, b}));
    }
  }
  SUBCASE("matmul and transpose") {
    std::mt19937_64 rng(2026);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const std::size_t m = pick(rng, 1, 5), k = pick(rng, 1, 5), n = pick(rng, 1, 5);
      auto a = rand_leaf({m, k}, rng), b = rand_leaf({n, k}, rng);
      check_passes(grad_check([&](const std::vector<Tensor>& v) { return probe(matmul(v[0], transpose(v[1])), ps); },
                              {a, b}));
    }
  }
  SUBCASE("conv1d") {
    std::mt19937_64 rng(2027);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const std::size_t groups = pick(rng, 1, 3);
      const std::size_t cin = groups * pick(rng, 1, 2), cout = groups * pick(rng, 1, 2);
      const std::size_t k = pick(rng, 1, 5), len = k + pick(rng, 0, 12), stride = pick(rng, 1, 2);
      auto x = rand_leaf({pick(rng, 1, 2), cin, len}, rng);
      auto w = rand_leaf({cout, cin / groups, k}, rng), b = rand_leaf({cout}, rng);
      check_passes(grad_check(
          [&](const std::vector<Tensor>& v) { return probe(conv1d(v[0], v[1], v[2], stride, groups), ps); },
          {x, w, b}));
    }
  }
  SUBCASE("batch norm, train and eval") {
    std::mt19937_64 rng(2028);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const std::size_t ch = pick(rng, 1, 4);
      auto x = rand_leaf({pick(rng, 2, 4), ch, pick(rng, 1, 6)}, rng);
      auto g = rand_leaf({ch}, rng), b = rand_leaf({ch}, rng);
      for (bool train : {true, false}) {
        BatchNormState st{std::vector<double>(ch, 0.2), std::vector<double>(ch, 1.7)};
        check_passes(grad_check(
            [&](const std::vector<Tensor>& v) { return probe(batch_norm(v[0], v[1], v[2], st, train), ps); },
            {x, g, b}));
    }
    }
  }
  SUBCASE("adaptive max pool") {
    std::mt19937_64 rng(2029);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const std::size_t len = pick(rng, 3, 40);
      auto x = rand_leaf({pick(rng, 1, 3), len}, rng);
      const std::size_t target = pick(rng, 1, len);
      check_passes(grad_check([&](const std::vector<Tensor>& v) { return probe(adaptive_max_pool1d(v[0], target), ps); },
                              {x}));
    }
  }
  SUBCASE("softmax") {
    std::mt19937_64 rng(2030);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      auto x = rand_leaf({pick(rng, 1, 4), pick(rng, 1, 6)}, rng, 2.0);
      check_passes(grad_check([&](const std::vector<Tensor>& v) { return probe(softmax(v[0]), ps); }, {x}));
    }
  }
  SUBCASE("relu away from zero") {
    std::mt19937_64 rng(2031);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      auto x = rand_leaf({pick(rng, 2, 20)}, rng);
      for (auto& v : x.values_mut()) v += v >= 0 ? 0.1 : -0.1;
      check_passes(grad_check([&](const std::vector<Tensor>& v) { return probe(relu(v[0]), ps); }, {x}));
    }
  }
  SUBCASE("reductions and shape ops") {
    std::mt19937_64 rng(2032);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const Shape s{pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 1, 4)};
      auto x = rand_leaf(s, rng), y = rand_leaf(s, rng);
      check_passes(grad_check(
          [&](const std::vector<Tensor>& v) {
            auto p = permute(v[0], {2, 0, 1});
            auto c = concat({v[0], v[1]}, 1);
            auto sl = slice(c, 1, 1, s[1]);
            auto r = reshape(sl, {numel(s)});
            return add(add(probe(p, ps), probe(r, ps + 1)),
                       add(add(probe(max_over_axis(c, 1), ps + 2), probe(mean_over_axis(v[1], 2), ps + 3)),
                           add(probe(sum_last(v[0]), ps + 4), mean(v[1]))));
          },
          {x, y}));
    }
  }
  SUBCASE("pairwise off-diagonal sum") {
    std::mt19937_64 rng(2033);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const Shape s{pick(rng, 1, 2), pick(rng, 2, 5), pick(rng, 1, 3)};
      auto p = rand_leaf(s, rng), q = rand_leaf(s, rng);
      check_passes(grad_check([&](const std::vector<Tensor>& v) { return probe(pairwise_offdiag_sum(v[0], v[1]), ps); },
                              {p, q}));
    }
  }
  SUBCASE("symmetric inverse square root") {
    std::mt19937_64 rng(2034);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      const std::size_t n = pick(rng, 1, 5);
      auto a = rand_leaf({n + 2, n}, rng);
      check_passes(grad_check(
          [&](const std::vector<Tensor>& v) {
            auto c = matmul(transpose(v[0]), v[0]);
            return probe(sym_inv_sqrt(c, 1e-9), ps);
          },
          {a}));
    }
  }
  SUBCASE("nuclear norm") {
    std::mt19937_64 rng(2035);
    for (std::uint64_t ps = 100; ps < 105; ++ps) {
      CAPTURE(ps);
      auto m = rand_leaf({pick(rng, 2, 6), pick(rng, 2, 6)}, rng);
      check_passes(grad_check([&](const std::vector<Tensor>& v) { return nuclear_norm(v[0]); }, {m}));
    }
  }
}

TEST_CASE("relu probed at zero reports excluded points") {
  auto x = Tensor::from_values({3}, {0.0, 1.0, -1.0}, true);
  auto r = grad_check([](const std::vector<Tensor>& v) { return sum(relu(v[0])); }, {x});
  REQUIRE(r.excluded.size() == 1);
  CHECK(r.excluded[0].index == 0);
  CHECK(r.passed);
  CHECK(r.checked == 2);
}

TEST_CASE("max routes gradient to the lowest-index argmax") {
  auto x = Tensor::from_values({2, 3}, {1, 5, 5, 7, 2, 7}, true);
  sum(max_over_axis(x, 1)).backward();
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 1, 0, 1, 0, 0});
  auto p = Tensor::from_values({1, 4}, {3, 3, 1, 1}, true);
  sum(adaptive_max_pool1d(p, 2)).backward();
  CHECK(std::vector<double>(p.grad().begin(), p.grad().end()) == std::vector<double>{1, 0, 1, 0});
}

TEST_CASE("adam") {
  const AdamConfig cfg;
  SUBCASE("zero gradient leaves params unchanged") {
    std::vector<Tensor> ps{Tensor::from_values({3}, {1, -2, 3}, true)};
    ps[0].grad_mut();
    AdamState st;
    adam_step(ps, st, cfg);
    CHECK(std::vector<double>(ps[0].values().begin(), ps[0].values().end()) == std::vector<double>{1, -2, 3});
  }
  SUBCASE("first step moves by about lr") {
    std::vector<Tensor> ps{Tensor::scalar(0.5, true)};
    ps[0].grad_mut()[0] = 1.0;
    AdamState st;
    adam_step(ps, st, cfg);
    CHECK(std::abs(0.5 - ps[0].item()) == doctest::Approx(cfg.lr).epsilon(1e-6));
  }
  SUBCASE("three steps on a quadratic match the hand-unrolled recurrence") {
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<Tensor> ps{Tensor::scalar(2.0, true)};
    AdamState st;
    for (int t = 0; t < 3; ++t) {
      ps[0].zero_grad();
      auto loss = mul(ps[0], ps[0]);
      loss.backward();
      adam_step(ps, st, {lr, b1, b2, eps});
    }
    // f = θ², g = 2θ.
    double th = 2.0;
    const double g1 = 2 * th;
    const double m1 = (1 - b1) * g1, v1 = (1 - b2) * g1 * g1;
    th -= lr * (m1 / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
    const double g2 = 2 * th;
    const double m2 = b1 * m1 + (1 - b1) * g2, v2 = b2 * v1 + (1 - b2) * g2 * g2;
    th -= lr * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
    const double g3 = 2 * th;
    const double m3 = b1 * m2 + (1 - b1) * g3, v3 = b2 * v2 + (1 - b2) * g3 * g3;
    th -= lr * (m3 / (1 - b1 * b1 * b1)) / (std::sqrt(v3 / (1 - b2 * b2 * b2)) + eps);
    CHECK(std::abs(ps[0].item() - th) < 1e-12);
  }
}

TEST_CASE("forward and backward are bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto x = rand_leaf({2, 3, 30}, rng);
    auto w = rand_leaf({3, 1, 5}, rng);
    Rng drop(5);
    auto y = dropout(adaptive_max_pool1d(relu(conv1d(x, w, Tensor(), 1, 3)), 7), 0.75, drop, true);
    auto loss = probe(y, 9);
    loss.backward();
    std::vector<double> out(y.values().begin(), y.values().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("no-grad guard builds detached results") {
  auto x = Tensor::from_values({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(scale(x, 2.0).requires_grad());
  }
  CHECK(scale(x, 2.0).requires_grad());
  CHECK_THROWS_AS(div(x, Tensor::from_values({2}, {0, 1})), NumericError);
}

TEST_CASE("checkpoint round trip and corruption") {
  std::vector<NamedArray> arrays{{"w", {2, 3}, {1, 2, 3, 4, 5, 6.25}},
                                 {"b", {3}, {-0.0, 1e-300, std::numeric_limits<double>::max()}}};
  const auto bytes = encode_checkpoint(arrays);
  CHECK(bytes.substr(0, 8) == "DSENCKPT");
  CHECK(decode_checkpoint(bytes) == arrays);
  CHECK(std::signbit(decode_checkpoint(bytes)[1].values[0]));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
  try {
    decode_checkpoint(bytes.substr(0, bytes.size() - 4));
    FAIL("truncation not detected");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_checkpoint(bytes + "xx"), FormatError);
  CHECK_THROWS_AS(read_checkpoint("/nonexistent/ckpt.bin"), ConfigError);
}
