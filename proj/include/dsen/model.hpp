#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsen/checkpoint.hpp"
#include "dsen/matrix.hpp"
#include "dsen/ops.hpp"

namespace dsen::model {

using ad::Tensor;

enum class EdgeMode { Concat, Difference };
enum class Aggregation { Max, Mean };

struct ExtractorConfig {
  std::size_t n_channels = 30;
  std::size_t n_segments = 9;
  std::size_t segment_len = 400;
  std::size_t local_kernel = 64;
  std::size_t local_pool_target = 100;
  std::size_t global_kernel = 200;
  std::size_t temporal_feature_dim = 128;
  std::vector<std::size_t> edgeconv_dims{128, 256, 512};
  std::size_t head_out_dim = 128;
  double dropout_keep = 0.75;
  EdgeMode edge_mode = EdgeMode::Concat;
  Aggregation aggregation = Aggregation::Max;
  bool share_channel_weights = false;

  /// Throws ConfigError on invalid values. A global kernel longer than the
  /// concatenated local features is clamped with a warning.
  void validate();
  std::size_t input_len() const { return n_segments * segment_len; }
  std::size_t concat_len() const { return n_segments * local_pool_target; }
  std::size_t pooled_width() const;
};

struct ElectrodeGraph {
  std::size_t n_vertices = 0;

  explicit ElectrodeGraph(std::size_t n) : n_vertices(n) {}
  /// Fully connected, no self loops.
  Matrix adjacency() const;
};

struct EdgeConvWeights {
  Tensor w1, b1, w2, b2;
};

struct DsenParams {
  // θ_f
  Tensor local_w, local_b, bn_gamma, bn_beta;
  ad::BatchNormState bn;
  Tensor global_w, global_b;
  std::vector<EdgeConvWeights> edge;
  Tensor head1_w, head1_b, head2_w, head2_b;
  // θ_c
  Tensor wq, wk, wv;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;

  std::vector<std::pair<std::string, Tensor>> named_extractor() const;
  std::vector<std::pair<std::string, Tensor>> named_classifier() const;
  std::vector<Tensor> extractor_params() const;
  std::vector<Tensor> classifier_params() const;
  std::vector<Tensor> all_params() const;

  /// Weights plus batch-norm running statistics.
  std::vector<ad::NamedArray> to_arrays() const;
  /// Loads values by name into already-initialised params of matching shape.
  void load_arrays(const std::vector<ad::NamedArray>& arrays);
};

/// PyTorch-style uniform(±1/sqrt(fan_in)) initialisation.
DsenParams init_params(const ExtractorConfig& cfg, std::uint64_t seed);

struct Mode {
  bool train = false;
  ad::Rng* rng = nullptr;  // required when train is set and dropout is active
};

/// Batched extractor f: amplitude [B, C, n·L] -> H [B, head_out_dim].
Tensor extract_batch(const Tensor& amp, DsenParams& params, const ExtractorConfig& cfg, Mode mode);

/// Single-sample convenience in eval mode: [C, n·L] -> [head_out_dim].
Tensor extract_features(const Tensor& amp, DsenParams& params, const ExtractorConfig& cfg);

/// The 896-wide vertex-pooled representation before the head, [B, Σ dims].
Tensor pooled_representation(const Tensor& amp, DsenParams& params, const ExtractorConfig& cfg, Mode mode);

/// One EdgeConv block. feats: [V, D_in] or [B, V, D_in] -> same leading shape with D_out.
Tensor edgeconv_block(const Tensor& feats, const EdgeConvWeights& w, const ElectrodeGraph& graph,
                      EdgeMode mode = EdgeMode::Concat, Aggregation agg = Aggregation::Max);

/// Cross-attention fusion of length-1 sequences. h_x, h_y: [B, D] -> [B, 2D].
Tensor attention_fuse(const Tensor& h_x, const Tensor& h_y, const Tensor& wq, const Tensor& wk, const Tensor& wv);

/// fc1 -> ReLU -> dropout -> fc2. h_fused: [B, 2D] -> logits [B, 2] (0 stranger, 1 friend).
Tensor classify(const Tensor& h_fused, const DsenParams& params, double dropout_keep, Mode mode);

}  // namespace dsen::model
