#include "dsen/model.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "dsen/error.hpp"
#include "dsen/log.hpp"

namespace dsen::model {

using namespace dsen::ad;

void ExtractorConfig::validate() {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(n_channels, "n_channels");
  positive(n_segments, "n_segments");
  positive(segment_len, "segment_len");
  positive(local_kernel, "local_kernel");
  positive(local_pool_target, "local_pool_target");
  positive(global_kernel, "global_kernel");
  positive(temporal_feature_dim, "temporal_feature_dim");
  positive(head_out_dim, "head_out_dim");
  if (n_channels < 2) throw ConfigError("model.n_channels must be at least 2 to form an electrode graph");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ConfigError("model.dropout_keep must lie in (0, 1]");
  if (local_kernel > segment_len) {
    throw ConfigError("model.local_kernel (" + std::to_string(local_kernel) + ") exceeds segment_len (" +
                      std::to_string(segment_len) + ")");
  }
  if (edgeconv_dims.empty()) throw ConfigError("model.edgeconv_dims must not be empty");
  for (std::size_t i = 0; i < edgeconv_dims.size(); ++i) {
    positive(edgeconv_dims[i], "edgeconv_dims");
    if (i > 0 && edgeconv_dims[i] != 2 * edgeconv_dims[i - 1]) {
      throw ConfigError("model.edgeconv_dims must double from block to block");
    }
  }
  if (global_kernel > concat_len()) {
    warn("global_kernel " + std::to_string(global_kernel) + " exceeds the concatenated length " +
         std::to_string(concat_len()) + "; clamping");
    global_kernel = concat_len();
  }
}

std::size_t ExtractorConfig::pooled_width() const {
  return std::accumulate(edgeconv_dims.begin(), edgeconv_dims.end(), std::size_t{0});
}

Matrix ElectrodeGraph::adjacency() const {
  Matrix a(n_vertices, n_vertices, 1.0);
  for (std::size_t i = 0; i < n_vertices; ++i) a(i, i) = 0.0;
  return a;
}

std::vector<std::pair<std::string, Tensor>> DsenParams::named_extractor() const {
  std::vector<std::pair<std::string, Tensor>> out{{"local_w", local_w},   {"local_b", local_b},
                                                  {"bn_gamma", bn_gamma}, {"bn_beta", bn_beta},
                                                  {"global_w", global_w}, {"global_b", global_b}};
  for (std::size_t k = 0; k < edge.size(); ++k) {
    const std::string p = "edge" + std::to_string(k) + ".";
    out.emplace_back(p + "w1", edge[k].w1);
    out.emplace_back(p + "b1", edge[k].b1);
    out.emplace_back(p + "w2", edge[k].w2);
    out.emplace_back(p + "b2", edge[k].b2);
  }
  out.emplace_back("head1_w", head1_w);
  out.emplace_back("head1_b", head1_b);
  out.emplace_back("head2_w", head2_w);
  out.emplace_back("head2_b", head2_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> DsenParams::named_classifier() const {
  return {{"wq", wq},         {"wk", wk},         {"wv", wv},         {"fc1_w", fc1_w},
          {"fc1_b", fc1_b},   {"fc2_w", fc2_w},   {"fc2_b", fc2_b}};
}

namespace {
std::vector<Tensor> tensors_of(const std::vector<std::pair<std::string, Tensor>>& named) {
  std::vector<Tensor> out;
  for (const auto& [_, t] : named) out.push_back(t);
  return out;
}
}  // namespace

std::vector<Tensor> DsenParams::extractor_params() const { return tensors_of(named_extractor()); }
std::vector<Tensor> DsenParams::classifier_params() const { return tensors_of(named_classifier()); }
std::vector<Tensor> DsenParams::all_params() const {
  auto out = extractor_params();
  for (auto& t : classifier_params()) out.push_back(t);
  return out;
}

std::vector<NamedArray> DsenParams::to_arrays() const {
  std::vector<NamedArray> out;
  auto push = [&](const std::vector<std::pair<std::string, Tensor>>& named) {
    for (const auto& [name, t] : named) out.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
  };
  push(named_extractor());
  push(named_classifier());
  out.push_back({"bn_running_mean", {bn.running_mean.size()}, bn.running_mean});
  out.push_back({"bn_running_var", {bn.running_var.size()}, bn.running_var});
  return out;
}

void DsenParams::load_arrays(const std::vector<NamedArray>& arrays) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto fetch = [&](const std::string& name) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing parameter " + name);
    return *it->second;
  };
  for (auto named : {named_extractor(), named_classifier()}) {
    for (auto& [name, t] : named) {
      const auto& a = fetch(name);
      if (a.shape != t.shape()) {
        throw FormatError("checkpoint parameter " + name + " has shape " + shape_str(a.shape) + ", model expects " +
                          shape_str(t.shape()));
      }
      std::copy(a.values.begin(), a.values.end(), t.values_mut().begin());
    }
  }
  const auto& rm = fetch("bn_running_mean");
  const auto& rv = fetch("bn_running_var");
  if (rm.values.size() != bn_gamma.size() || rv.values.size() != bn_gamma.size()) {
    throw FormatError("checkpoint batch-norm statistics have the wrong width");
  }
  bn.running_mean = rm.values;
  bn.running_var = rv.values;
}

DsenParams init_params(const ExtractorConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
    return Tensor::from_values(std::move(shape), std::move(v), true);
  };
  const std::size_t conv_ch = cfg.share_channel_weights ? 1 : cfg.n_channels;
  const std::size_t c = cfg.n_channels, head = cfg.head_out_dim;
  DsenParams p;
  p.local_w = uniform({conv_ch, 1, cfg.local_kernel}, cfg.local_kernel);
  p.local_b = uniform({conv_ch}, cfg.local_kernel);
  p.bn_gamma = Tensor::full({c}, 1.0, true);
  p.bn_beta = Tensor::zeros({c}, true);
  p.bn.running_mean.assign(c, 0.0);
  p.bn.running_var.assign(c, 1.0);
  p.global_w = uniform({conv_ch, 1, cfg.global_kernel}, cfg.global_kernel);
  p.global_b = uniform({conv_ch}, cfg.global_kernel);
  std::size_t d_in = cfg.temporal_feature_dim;
  for (std::size_t d_out : cfg.edgeconv_dims) {
    const std::size_t first_in = cfg.edge_mode == EdgeMode::Concat ? 2 * d_in : d_in;
    EdgeConvWeights w;
    w.w1 = uniform({d_out, first_in}, first_in);
    w.b1 = uniform({d_out}, first_in);
    w.w2 = uniform({d_out, d_out}, d_out);
    w.b2 = uniform({d_out}, d_out);
    p.edge.push_back(w);
    d_in = d_out;
  }
  const std::size_t pooled = cfg.pooled_width();
  p.head1_w = uniform({head, pooled}, pooled);
  p.head1_b = uniform({head}, pooled);
  p.head2_w = uniform({head, head}, head);
  p.head2_b = uniform({head}, head);
  p.wq = uniform({head, head}, head);
  p.wk = uniform({head, head}, head);
  p.wv = uniform({head, head}, head);
  p.fc1_w = uniform({head, 2 * head}, 2 * head);
  p.fc1_b = uniform({head}, 2 * head);
  p.fc2_w = uniform({2, head}, head);
  p.fc2_b = uniform({2}, head);
  return p;
}

namespace {

Tensor expand_channels(const Tensor& t, std::size_t channels) {
  if (t.dim(0) == channels) return t;
  return concat(std::vector<Tensor>(channels, t), 0);
}

Tensor maybe_dropout(const Tensor& x, double keep, Mode mode) {
  if (!mode.train || keep >= 1.0) return x;
  if (mode.rng == nullptr) throw ConfigError("training-mode dropout needs an RNG stream");
  return dropout(x, keep, *mode.rng, true);
}

}  // namespace

Tensor edgeconv_block(const Tensor& feats, const EdgeConvWeights& w, const ElectrodeGraph& graph, EdgeMode mode,
                      Aggregation agg) {
  const bool batched = feats.rank() == 3;
  if (!batched && feats.rank() != 2) throw ShapeError("edgeconv_block: expected [V, D] or [B, V, D]");
  Tensor x = batched ? feats : reshape(feats, {1, feats.dim(0), feats.dim(1)});
  const std::size_t v = x.dim(1), d = x.dim(2);
  if (v != graph.n_vertices) {
    throw ShapeError("edgeconv_block: " + std::to_string(v) + " vertices but the graph has " +
                     std::to_string(graph.n_vertices));
  }
  if (v < 2) throw ShapeError("edgeconv_block: graph too small (" + std::to_string(v) + " vertex)");
  // The first sMLP layer is linear in the edge feature, so it is evaluated
  // once per vertex and combined per edge: W·[x_i ⊕ (x_j - x_i)] =
  // (W_a - W_b)·x_i + W_b·x_j.
  Tensor p, q;
  if (mode == EdgeMode::Concat) {
    if (w.w1.dim(1) != 2 * d) throw ShapeError("edgeconv_block: first layer expects width " + std::to_string(2 * d));
    const Tensor wa = slice(w.w1, 1, 0, d);
    const Tensor wb = slice(w.w1, 1, d, d);
    p = linear(x, sub(wa, wb), w.b1);
    q = linear(x, wb, Tensor());
  } else {
    if (w.w1.dim(1) != d) throw ShapeError("edgeconv_block: first layer expects width " + std::to_string(d));
    p = linear(x, scale(w.w1, -1.0), w.b1);
    q = linear(x, w.w1, Tensor());
  }
  Tensor hidden = relu(pairwise_offdiag_sum(p, q));  // [B, V, V-1, H]
  Tensor edge_out = linear(hidden, w.w2, w.b2);
  Tensor out = agg == Aggregation::Max ? max_over_axis(edge_out, 2) : mean_over_axis(edge_out, 2);
  return batched ? out : reshape(out, {v, out.dim(2)});
}

Tensor pooled_representation(const Tensor& amp, DsenParams& params, const ExtractorConfig& cfg, Mode mode) {
  if (amp.rank() != 3 || amp.dim(1) != cfg.n_channels || amp.dim(2) != cfg.input_len()) {
    throw ConfigError("extractor input " + shape_str(amp.shape()) + " does not match the configured [B, " +
                      std::to_string(cfg.n_channels) + ", " + std::to_string(cfg.input_len()) + "]");
  }
  const std::size_t b = amp.dim(0), c = cfg.n_channels, n = cfg.n_segments, len = cfg.segment_len;
  // Fold segments into the batch so each one is convolved independently.
  Tensor seg = reshape(permute(reshape(amp, {b, c, n, len}), {0, 2, 1, 3}), {b * n, c, len});
  Tensor local = conv1d(seg, expand_channels(params.local_w, c), expand_channels(params.local_b, c), 1, c);
  local = relu(batch_norm(local, params.bn_gamma, params.bn_beta, params.bn, mode.train));
  local = adaptive_max_pool1d(local, cfg.local_pool_target);
  const std::size_t pt = cfg.local_pool_target;
  Tensor joined = reshape(permute(reshape(local, {b, n, c, pt}), {0, 2, 1, 3}), {b, c, n * pt});

  Tensor temporal = conv1d(joined, expand_channels(params.global_w, c), expand_channels(params.global_b, c), 1, c);
  temporal = adaptive_max_pool1d(temporal, cfg.temporal_feature_dim);  // [B, C, T]

  const ElectrodeGraph graph(c);
  std::vector<Tensor> pooled;
  Tensor vertex = temporal;
  for (const auto& w : params.edge) {
    vertex = edgeconv_block(vertex, w, graph, cfg.edge_mode, cfg.aggregation);
    pooled.push_back(max_over_axis(vertex, 1));
  }
  return concat(pooled, 1);
}

Tensor extract_batch(const Tensor& amp, DsenParams& params, const ExtractorConfig& cfg, Mode mode) {
  Tensor pooled = pooled_representation(amp, params, cfg, mode);
  Tensor h = relu(linear(pooled, params.head1_w, params.head1_b));
  h = maybe_dropout(h, cfg.dropout_keep, mode);
  return linear(h, params.head2_w, params.head2_b);
}

Tensor extract_features(const Tensor& amp, DsenParams& params, const ExtractorConfig& cfg) {
  if (amp.rank() != 2) throw ConfigError("extract_features expects [channels, time]");
  Tensor h = extract_batch(reshape(amp, {1, amp.dim(0), amp.dim(1)}), params, cfg, Mode{});
  return reshape(h, {h.dim(1)});
}

Tensor attention_fuse(const Tensor& h_x, const Tensor& h_y, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  if (h_x.shape() != h_y.shape() || h_x.rank() != 2) {
    throw ShapeError("attention_fuse: features " + shape_str(h_x.shape()) + " and " + shape_str(h_y.shape()));
  }
  const std::size_t b = h_x.dim(0), d = h_x.dim(1);
  if (wq.shape() != Shape{d, d} || wk.shape() != Shape{d, d} || wv.shape() != Shape{d, d}) {
    throw ShapeError("attention_fuse: projection matrices must be " + shape_str({d, d}));
  }
  const double c = std::sqrt(128.0);
  const Tensor ones = Tensor::full({1, d}, 1.0);
  auto attend = [&](const Tensor& q, const Tensor& k, const Tensor& v) {
    // Each subject is a length-1 sequence, so the score matrix is [B, 1].
    Tensor score = reshape(scale(sum_last(mul(q, k)), 1.0 / c), {b, 1});
    Tensor weight = softmax(score);
    return mul(matmul(weight, ones), v);
  };
  const Tensor qx = linear(h_x, wq, Tensor()), kx = linear(h_x, wk, Tensor()), vx = linear(h_x, wv, Tensor());
  const Tensor qy = linear(h_y, wq, Tensor()), ky = linear(h_y, wk, Tensor()), vy = linear(h_y, wv, Tensor());
  return concat({attend(qx, ky, vy), attend(qy, kx, vx)}, 1);
}

Tensor classify(const Tensor& h_fused, const DsenParams& params, double dropout_keep, Mode mode) {
  if (h_fused.rank() != 2 || h_fused.dim(1) != params.fc1_w.dim(1)) {
    throw ShapeError("classify: expected [B, " + std::to_string(params.fc1_w.dim(1)) + "], got " +
                     shape_str(h_fused.shape()));
  }
  Tensor h = relu(linear(h_fused, params.fc1_w, params.fc1_b));
  h = maybe_dropout(h, dropout_keep, mode);
  return linear(h, params.fc2_w, params.fc2_b);
}

}  // namespace dsen::model
