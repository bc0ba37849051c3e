#pragma once

#include <vector>

#include "dsen/tensor.hpp"

namespace dsen::losses {

using ad::Tensor;

struct CcaConfig {
  double regularization_eps = 1e-4;
  void validate() const;
};

struct TripletConfig {
  double margin = 0.3;
  void validate() const;
};

struct CombinedConfig {
  double alpha = 1.0;
  double beta = 1.0;
  void validate() const;
};

/// Negative sum of canonical correlations between two views [B, D]. The
/// covariances are regularised by ε·I and whitened through a clamped
/// symmetric inverse square root. Warns when B - 1 < D.
Tensor cca_loss(const Tensor& h_x, const Tensor& h_y, const CcaConfig& cfg = {});

/// Mean over the batch of max(0, d(a, p) - d(a, n) + margin) with cosine
/// distance d = 1 - cos. Accepts [D] or [B, D].
Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                    const TripletConfig& cfg = {});

/// Mean negative log-softmax of the true class. logits [B, 2], labels in {0, 1}.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

struct CombinedTerms {
  Tensor total;
  Tensor classification;
  Tensor cca;  // undefined when beta == 0
};

/// alpha·cross_entropy + beta·cca_loss. A zero weight skips its term.
CombinedTerms combined_terms(const Tensor& logits, const std::vector<int>& labels, const Tensor& h_x,
                             const Tensor& h_y, const CombinedConfig& cfg = {}, const CcaConfig& cca_cfg = {});
Tensor combined_loss(const Tensor& logits, const std::vector<int>& labels, const Tensor& h_x, const Tensor& h_y,
                     const CombinedConfig& cfg = {}, const CcaConfig& cca_cfg = {});

}  // namespace dsen::losses
