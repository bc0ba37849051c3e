#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dsen/tensor.hpp"

namespace dsen::ad {

/// Seeded random stream for dropout masks and initialisation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(engine_); }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sqrt(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]
/// Sum over the last axis: [..., D] -> [...].
Tensor sum_last(const Tensor& x);
/// Max over one axis; gradient goes to the first (lowest-index) maximum.
Tensor max_over_axis(const Tensor& x, std::size_t axis);
Tensor mean_over_axis(const Tensor& x, std::size_t axis);

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor transpose(const Tensor& m);  // rank 2

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
/// y = x·Wᵀ + b over the last axis. x: [..., in], W: [out, in], b: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Softmax over the last axis.
Tensor softmax(const Tensor& x);

/// Grouped valid cross-correlation. x: [B, C_in, L] or [C_in, L];
/// w: [C_out, C_in/groups, K]; b: [C_out] or undefined.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t groups);

/// Adaptive max pooling over the last axis to `target` bins. Bin i covers
/// [floor(i·L/T), ceil((i+1)·L/T)).
Tensor adaptive_max_pool1d(const Tensor& x, std::size_t target);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

/// Per-channel normalisation over batch and time. x: [B, C, L] or [B, C].
/// Train mode uses batch statistics and updates `state` with
/// running = momentum·running + (1-momentum)·batch.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool train,
                  double momentum = 0.9, double eps = 1e-5);

/// Inverted dropout. Identity when !train or keep >= 1.
Tensor dropout(const Tensor& x, double keep, Rng& rng, bool train);

/// EdgeConv helper over a fully-connected graph without self loops.
/// p, q: [B, V, H] -> [B, V, V-1, H] with out[b,i,k] = p[b,i] + q[b,j(k)],
/// where j(k) enumerates the vertices other than i in increasing order.
Tensor pairwise_offdiag_sum(const Tensor& p, const Tensor& q);

/// Symmetric inverse square root via eigendecomposition of (A + Aᵀ)/2 with
/// eigenvalues clamped from below at `floor`. Eigenvalues below -floor raise
/// NumericError.
Tensor sym_inv_sqrt(const Tensor& a, double floor);

/// Sum of singular values (nuclear norm); gradient U·Vᵀ.
Tensor nuclear_norm(const Tensor& m);

struct SvdResult {
  Tensor u;  // [m, r]
  Tensor s;  // [r], descending
  Tensor v;  // [n, r]
};
/// Non-differentiable decomposition; see nuclear_norm for the gradient path.
SvdResult svd(const Tensor& m);

}  // namespace dsen::ad
