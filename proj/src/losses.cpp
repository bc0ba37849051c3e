#include "dsen/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dsen/error.hpp"
#include "dsen/log.hpp"
#include "dsen/ops.hpp"

namespace dsen::losses {

using namespace dsen::ad;

void CcaConfig::validate() const {
  if (!(regularization_eps > 0.0)) throw ConfigError("cca.regularization_eps must be positive");
}

void TripletConfig::validate() const {
  if (!(margin > 0.0 && margin < 2.0)) throw ConfigError("triplet.margin must lie in (0, 2)");
}

void CombinedConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("loss weights alpha and beta must be non-negative");
  if (alpha == 0.0 && beta == 0.0) throw ConfigError("loss weights alpha and beta cannot both be zero");
}

namespace {

Tensor centered(const Tensor& h) {
  const std::size_t b = h.dim(0);
  Tensor mu = reshape(mean_over_axis(h, 0), {1, h.dim(1)});
  return sub(h, matmul(Tensor::full({b, 1}, 1.0), mu));
}

Tensor identity(std::size_t d, double v) {
  std::vector<double> out(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) out[i * d + i] = v;
  return Tensor::from_values({d, d}, std::move(out));
}

Tensor as_batch(const Tensor& t) { return t.rank() == 1 ? reshape(t, {1, t.dim(0)}) : t; }

}  // namespace

Tensor cca_loss(const Tensor& h_x, const Tensor& h_y, const CcaConfig& cfg) {
  cfg.validate();
  if (h_x.rank() != 2 || h_x.shape() != h_y.shape()) {
    throw ShapeError("cca_loss: views " + shape_str(h_x.shape()) + " and " + shape_str(h_y.shape()));
  }
  const std::size_t b = h_x.dim(0), d = h_x.dim(1);
  if (b < 2) throw DataError("cca_loss: insufficient batch (" + std::to_string(b) + " < 2)");
  if (b - 1 < d) {
    warn("cca_loss: batch of " + std::to_string(b) + " cannot give full-rank covariances in " + std::to_string(d) +
         " dimensions; relying on regularisation");
  }
  const double inv_n = 1.0 / static_cast<double>(b - 1);
  const Tensor xc = centered(h_x), yc = centered(h_y);
  const Tensor reg = identity(d, cfg.regularization_eps);
  const Tensor rx = add(scale(matmul(transpose(xc), xc), inv_n), reg);
  const Tensor ry = add(scale(matmul(transpose(yc), yc), inv_n), reg);
  const Tensor rxy = scale(matmul(transpose(xc), yc), inv_n);
  const Tensor e = matmul(matmul(sym_inv_sqrt(rx, cfg.regularization_eps), rxy), sym_inv_sqrt(ry, cfg.regularization_eps));
  return scale(nuclear_norm(e), -1.0);
}

Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, const TripletConfig& cfg) {
  cfg.validate();
  const Tensor a = as_batch(anchor), p = as_batch(positive), n = as_batch(negative);
  if (a.shape() != p.shape() || a.shape() != n.shape()) throw ShapeError("triplet_loss: mismatched shapes");
  for (const Tensor* t : {&a, &p, &n}) {
    const std::size_t dim = t->dim(1);
    for (std::size_t r = 0; r < t->dim(0); ++r) {
      double sq = 0.0;
      for (std::size_t k = 0; k < dim; ++k) sq += t->values()[r * dim + k] * t->values()[r * dim + k];
      if (std::sqrt(sq) <= 1e-12) throw NumericError("triplet_loss: degenerate (zero-norm) vector in row " + std::to_string(r));
    }
  }
  auto norm = [](const Tensor& t) { return sqrt(sum_last(mul(t, t))); };
  const Tensor na = norm(a);
  auto cosine = [&](const Tensor& t) { return div(sum_last(mul(a, t)), mul(na, norm(t))); };
  const Tensor dist_p = add_scalar(scale(cosine(p), -1.0), 1.0);
  const Tensor dist_n = add_scalar(scale(cosine(n), -1.0), 1.0);
  return mean(relu(add_scalar(sub(dist_p, dist_n), cfg.margin)));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(1) != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("cross_entropy: label " + std::to_string(y) + " outside {0, 1}");
  }
  const std::size_t b = labels.size(), k = 2;
  std::vector<double> prob(b * k);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* z = logits.values().data() + i * k;
    const double mx = std::max(z[0], z[1]);
    const double lse = mx + std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx));
    total += lse - z[labels[i]];
    for (std::size_t c = 0; c < k; ++c) prob[i * k + c] = std::exp(z[c] - lse);
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  return make_result("cross_entropy", {1}, {total * inv_b}, {logits}, [logits, labels, prob, inv_b](Node& self) {
    auto& g = logits.node()->ensure_grad();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        const double target = static_cast<int>(c) == labels[i] ? 1.0 : 0.0;
        g[i * 2 + c] += self.grad[0] * (prob[i * 2 + c] - target) * inv_b;
      }
    }
  });
}

CombinedTerms combined_terms(const Tensor& logits, const std::vector<int>& labels, const Tensor& h_x,
                             const Tensor& h_y, const CombinedConfig& cfg, const CcaConfig& cca_cfg) {
  cfg.validate();
  CombinedTerms t;
  t.classification = cross_entropy(logits, labels);
  if (cfg.beta != 0.0) t.cca = cca_loss(h_x, h_y, cca_cfg);
  if (cfg.beta == 0.0) {
    t.total = cfg.alpha == 1.0 ? t.classification : scale(t.classification, cfg.alpha);
  } else if (cfg.alpha == 0.0) {
    t.total = cfg.beta == 1.0 ? t.cca : scale(t.cca, cfg.beta);
  } else {
    t.total = add(scale(t.classification, cfg.alpha), scale(t.cca, cfg.beta));
  }
  return t;
}

Tensor combined_loss(const Tensor& logits, const std::vector<int>& labels, const Tensor& h_x, const Tensor& h_y,
                     const CombinedConfig& cfg, const CcaConfig& cca_cfg) {
  return combined_terms(logits, labels, h_x, h_y, cfg, cca_cfg).total;
}

}  // namespace dsen::losses
