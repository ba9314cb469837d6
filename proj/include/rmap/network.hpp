#pragma once

#include "rmap/fps.hpp"
#include "rmap/geom.hpp"
#include "rmap/kdtree.hpp"
#include "rmap/optim.hpp"
#include "rmap/rng.hpp"
#include "rmap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmap {

/// Topology of the patch completion network: point proxies feed a
/// transformer encoder, a query head ranks candidate coarse points (zero
/// noise queries), a geometry-biased decoder produces per-point features,
/// and a stack of upsample layers grows the coarse cloud to the output size.
struct NetworkConfig {
  std::size_t n_in = 256;                        // input patch size
  std::size_t n_coarse = 64;                     // |P_c,0|
  std::vector<std::size_t> upsample_factors{1, 4, 4};
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 3;
  std::size_t n_dec_layers = 3;
  std::size_t knn_k = 8;
  std::size_t n_proxies = 32;
  std::uint64_t seed = 1;

  static NetworkConfig desk() { return NetworkConfig(); }

  static NetworkConfig full_scale() {
    NetworkConfig cfg;
    cfg.n_in = 2048;
    cfg.n_coarse = 512;
    cfg.upsample_factors = {1, 4, 4};
    cfg.d_model = 128;
    cfg.n_heads = 4;
    cfg.n_enc_layers = 3;
    cfg.n_dec_layers = 3;
    cfg.knn_k = 16;
    cfg.n_proxies = 128;
    return cfg;
  }

  std::size_t output_size() const {
    return std::accumulate(upsample_factors.begin(), upsample_factors.end(), n_coarse,
                           std::multiplies<>());
  }

  /// Sizes of every emitted cloud: P_c,0 then one entry per upsample layer.
  std::vector<std::size_t> stage_sizes() const {
    std::vector<std::size_t> sizes{n_coarse};
    for (std::size_t f : upsample_factors) sizes.push_back(sizes.back() * f);
    return sizes;
  }

  void validate() const {
    if (n_in == 0 || n_coarse == 0 || d_model == 0 || n_heads == 0 || n_proxies == 0)
      throw std::invalid_argument("network config: zero-sized dimension");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("network config: d_model must be divisible by n_heads");
    if (n_proxies > n_in)
      throw std::invalid_argument("network config: n_proxies cannot exceed n_in");
    if (knn_k == 0 || knn_k > n_in)
      throw std::invalid_argument("network config: knn_k must be in [1, n_in]");
    if (upsample_factors.empty())
      throw std::invalid_argument("network config: at least one upsample factor");
    for (std::size_t f : upsample_factors)
      if (f == 0) throw std::invalid_argument("network config: zero upsample factor");
  }
};

/// Downsampled proxy centers plus one feature vector per proxy.
struct ProxyFeatures {
  PointCloud centers;     // n_proxies points, subset of the input patch
  Tensor features;        // [n_proxies, d_model]
};

/// Coarse cloud P_c,0 as a differentiable tensor plus its query features.
struct QuerySet {
  Tensor coords;    // [n_coarse, 3]
  Tensor features;  // [n_coarse, d_model]
};

struct UpsampleStage {
  Tensor coords;    // [n_i, 3]
  Tensor features;  // [n_i, d_model]
};

inline Tensor cloud_to_tensor(const PointCloud& cloud, bool requires_grad = false) {
  std::vector<double> data;
  data.reserve(cloud.size() * 3);
  for (const Point3& p : cloud.points) {
    data.push_back(p.x());
    data.push_back(p.y());
    data.push_back(p.z());
  }
  return Tensor::make({cloud.size(), 3}, std::move(data), requires_grad);
}

inline PointCloud tensor_to_cloud(const Tensor& t, Frame frame = Frame::world) {
  if (t.rank() != 2 || t.dim(1) != 3)
    throw std::invalid_argument("tensor_to_cloud: expected [n x 3], got " + shape_str(t.shape()));
  PointCloud c(frame);
  c.points.reserve(t.dim(0));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    c.points.push_back({t.value()[i * 3], t.value()[i * 3 + 1], t.value()[i * 3 + 2]});
  return c;
}

/// Resizes a cloud to exactly n points: farthest-point downsample when too
/// large, cyclic repetition when too small.
inline PointCloud fit_to_size(const PointCloud& cloud, std::size_t n) {
  if (cloud.empty()) throw std::invalid_argument("fit_to_size: empty cloud");
  if (cloud.size() == n) return cloud;
  if (cloud.size() > n) return fps(cloud, n, canonical_start_index(cloud.points));
  PointCloud out(cloud.frame);
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.points.push_back(cloud.points[i % cloud.size()]);
  return out;
}

namespace netdetail {

constexpr std::size_t kSlotDim = 16;
constexpr std::size_t kBiasHidden = 16;

inline std::vector<double> uniform_init(Rng& rng, std::size_t n, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

inline void add_linear(ParamMap& params, Rng& rng, const std::string& name, std::size_t in,
                       std::size_t out) {
  params[name + ".w"] = Tensor::parameter({in, out}, uniform_init(rng, in * out, in));
  params[name + ".b"] = Tensor::parameter({out}, uniform_init(rng, out, in));
}

inline void add_layer_norm(ParamMap& params, const std::string& name, std::size_t d) {
  params[name + ".g"] = Tensor::parameter({d}, std::vector<double>(d, 1.0));
  params[name + ".b"] = Tensor::parameter({d}, std::vector<double>(d, 0.0));
}

inline void add_attention(ParamMap& params, Rng& rng, const std::string& name, std::size_t d,
                          std::size_t n_heads) {
  const std::size_t dh = d / n_heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::string hp = name + ".h" + std::to_string(h);
    params[hp + ".wq"] = Tensor::parameter({d, dh}, uniform_init(rng, d * dh, d));
    params[hp + ".wk"] = Tensor::parameter({d, dh}, uniform_init(rng, d * dh, d));
    params[hp + ".wv"] = Tensor::parameter({d, dh}, uniform_init(rng, d * dh, d));
  }
  add_linear(params, rng, name + ".out", d, d);
}

inline Tensor linear(const ParamMap& params, const std::string& name, const Tensor& x) {
  return add(matmul(x, params.at(name + ".w")), params.at(name + ".b"));
}

inline Tensor mlp2(const ParamMap& params, const std::string& name, const Tensor& x) {
  return linear(params, name + ".l2", relu(linear(params, name + ".l1", x)));
}

/// Multi-head attention. `bias` (optional) adds one [nq x nk] matrix per
/// head to the pre-softmax scores.
inline Tensor attention(const ParamMap& params, const std::string& name, const Tensor& q_in,
                        const Tensor& kv_in, std::size_t n_heads,
                        const std::vector<Tensor>* bias = nullptr) {
  const std::size_t d = q_in.dim(1);
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::string hp = name + ".h" + std::to_string(h);
    const Tensor q = matmul(q_in, params.at(hp + ".wq"));
    const Tensor k = matmul(kv_in, params.at(hp + ".wk"));
    const Tensor v = matmul(kv_in, params.at(hp + ".wv"));
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
    if (bias) scores = add(scores, (*bias)[h]);
    heads.push_back(matmul(softmax(scores), v));
  }
  return linear(params, name + ".out", concat(heads, 1));
}

inline Tensor residual_norm(const ParamMap& params, const std::string& ln, const Tensor& x,
                            const Tensor& dx) {
  return layer_norm(add(x, dx), params.at(ln + ".g"), params.at(ln + ".b"));
}

inline std::vector<std::size_t> repeat_indices(std::size_t n, std::size_t times) {
  std::vector<std::size_t> idx;
  idx.reserve(n * times);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < times; ++t) idx.push_back(i);
  return idx;
}

inline std::vector<std::size_t> tile_indices(std::size_t n, std::size_t times) {
  std::vector<std::size_t> idx;
  idx.reserve(n * times);
  for (std::size_t t = 0; t < times; ++t)
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  return idx;
}

}  // namespace netdetail

/// Creates every parameter of the network in a fixed, seeded order.
inline ParamMap build_params(const NetworkConfig& cfg) {
  cfg.validate();
  using namespace netdetail;
  Rng rng(cfg.seed);
  ParamMap p;
  const std::size_t d = cfg.d_model;

  add_linear(p, rng, "enc.edge.l1", 6, d);
  add_linear(p, rng, "enc.edge.l2", d, d);
  add_linear(p, rng, "enc.pos.l1", 3, d);
  add_linear(p, rng, "enc.pos.l2", d, d);
  for (std::size_t i = 0; i < cfg.n_enc_layers; ++i) {
    const std::string lp = "enc.l" + std::to_string(i);
    add_attention(p, rng, lp + ".attn", d, cfg.n_heads);
    add_layer_norm(p, lp + ".ln1", d);
    add_linear(p, rng, lp + ".ff.l1", d, 2 * d);
    add_linear(p, rng, lp + ".ff.l2", 2 * d, d);
    add_layer_norm(p, lp + ".ln2", d);
  }

  const std::size_t n_candidates = 2 * cfg.n_coarse;
  add_linear(p, rng, "query.trunk", d, d);
  add_linear(p, rng, "query.coord", d, n_candidates * 3);
  // The ranking head receives no gradient (top-k selection is not
  // differentiable), so a random init would give a frozen projection whose
  // order flips as the encoder trains. Zero init keeps the scores tied and
  // the selection stable in candidate index order.
  add_linear(p, rng, "query.score", d, n_candidates);
  for (const char* name : {"query.score.w", "query.score.b"}) {
    auto& v = p.at(name).value_mut();
    std::fill(v.begin(), v.end(), 0.0);
  }
  add_linear(p, rng, "query.feat.l1", 3, d);
  add_linear(p, rng, "query.feat.l2", d, d);

  for (std::size_t i = 0; i < cfg.n_dec_layers; ++i) {
    const std::string lp = "dec.l" + std::to_string(i);
    add_attention(p, rng, lp + ".self", d, cfg.n_heads);
    add_layer_norm(p, lp + ".ln1", d);
    add_attention(p, rng, lp + ".cross", d, cfg.n_heads);
    add_layer_norm(p, lp + ".ln2", d);
    add_linear(p, rng, lp + ".bias.l1", 3, kBiasHidden);
    add_linear(p, rng, lp + ".bias.l2", kBiasHidden, cfg.n_heads);
    add_linear(p, rng, lp + ".ff.l1", d, 2 * d);
    add_linear(p, rng, lp + ".ff.l2", 2 * d, d);
    add_layer_norm(p, lp + ".ln3", d);
  }

  for (std::size_t s = 0; s < cfg.upsample_factors.size(); ++s) {
    const std::string sp = "up" + std::to_string(s);
    const std::size_t f = cfg.upsample_factors[s];
    p[sp + ".slot"] = Tensor::parameter({f, kSlotDim}, uniform_init(rng, f * kSlotDim, kSlotDim));
    add_linear(p, rng, sp + ".off.l1", d + kSlotDim, d);
    add_linear(p, rng, sp + ".off.l2", d, 3);
    add_linear(p, rng, sp + ".feat.l1", d + 3, d);
    add_linear(p, rng, sp + ".feat.l2", d, d);
  }
  return p;
}

/// Point-proxy encoder: FPS centers, kNN edge features through a shared MLP
/// with max-pool, positional embedding, then self-attention layers. The FPS
/// start is the point nearest the patch centroid so the proxy set does not
/// depend on input point order.
inline ProxyFeatures encode(const PointCloud& patch, const NetworkConfig& cfg,
                            const ParamMap& params) {
  using namespace netdetail;
  if (patch.size() != cfg.n_in)
    throw std::invalid_argument("encode: patch size " + std::to_string(patch.size()) +
                                " does not match n_in " + std::to_string(cfg.n_in));

  const auto center_idx =
      fps_indices(patch.points, cfg.n_proxies, canonical_start_index(patch.points));
  PointCloud centers(patch.frame);
  centers.points.reserve(cfg.n_proxies);
  for (std::size_t i : center_idx) centers.points.push_back(patch.points[i]);

  const KdTree index(patch);
  std::vector<double> edge;
  edge.reserve(cfg.n_proxies * cfg.knn_k * 6);
  for (const Point3& c : centers.points) {
    for (std::size_t nb : index.knn_indices(c, cfg.knn_k)) {
      const Point3& q = patch.points[nb];
      edge.insert(edge.end(), {q.x() - c.x(), q.y() - c.y(), q.z() - c.z(), c.x(), c.y(), c.z()});
    }
  }
  const Tensor edge_in = Tensor::constant({cfg.n_proxies * cfg.knn_k, 6}, std::move(edge));
  const Tensor edge_feat = mlp2(params, "enc.edge", edge_in);
  Tensor feat = reduce_max(reshape(edge_feat, {cfg.n_proxies, cfg.knn_k, cfg.d_model}), 1);

  const Tensor pos = mlp2(params, "enc.pos", cloud_to_tensor(centers));
  Tensor h = add(feat, pos);
  for (std::size_t i = 0; i < cfg.n_enc_layers; ++i) {
    const std::string lp = "enc.l" + std::to_string(i);
    h = residual_norm(params, lp + ".ln1", h, attention(params, lp + ".attn", h, h, cfg.n_heads));
    h = residual_norm(params, lp + ".ln2", h, mlp2(params, lp + ".ff", h));
  }
  return {std::move(centers), std::move(h)};
}

/// Dynamic query generation with zero noise queries: a head predicts
/// 2*n_coarse candidate coordinates and ranking scores from pooled encoder
/// features; the top n_coarse by score survive (ties keep candidate order).
inline QuerySet generate_queries(const ProxyFeatures& enc, const NetworkConfig& cfg,
                                 const ParamMap& params) {
  using namespace netdetail;
  const Tensor pooled = reduce_max(enc.features, 0);            // [d]
  const Tensor trunk = relu(linear(params, "query.trunk", reshape(pooled, {1, cfg.d_model})));
  const std::size_t n_candidates = 2 * cfg.n_coarse;
  const Tensor cand_coords =
      reshape(linear(params, "query.coord", trunk), {n_candidates, 3});
  const Tensor cand_scores = reshape(linear(params, "query.score", trunk), {n_candidates});

  std::vector<std::size_t> order(n_candidates);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cand_scores.value()[a] > cand_scores.value()[b];
  });
  std::vector<std::size_t> selected(order.begin(), order.begin() + cfg.n_coarse);

  QuerySet q;
  q.coords = gather(cand_coords, selected);
  q.features = add(mlp2(params, "query.feat", q.coords), pooled);
  return q;
}

namespace netdetail {

/// Additive attention bias per head from an MLP over pairwise offsets
/// between query coordinates and proxy centers.
inline std::vector<Tensor> geometry_bias(const ParamMap& params, const std::string& lp,
                                         const Tensor& query_coords, const PointCloud& centers,
                                         std::size_t n_heads) {
  const std::size_t nq = query_coords.dim(0);
  const std::size_t np = centers.size();
  const Tensor q_rep = gather(query_coords, repeat_indices(nq, np));
  const Tensor centers_tile =
      gather(cloud_to_tensor(centers), tile_indices(np, nq));
  const Tensor offsets = sub(q_rep, centers_tile);  // [nq*np, 3]
  const Tensor b = linear(params, lp + ".bias.l2",
                          relu(linear(params, lp + ".bias.l1", offsets)));  // [nq*np, heads]
  const Tensor bt = transpose(b);
  std::vector<Tensor> per_head;
  per_head.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h)
    per_head.push_back(reshape(gather(bt, {h}), {nq, np}));
  return per_head;
}

}  // namespace netdetail

/// Transformer decoder: per layer, self-attention over the queries, then
/// geometry-biased cross-attention into the encoder features, then a
/// feed-forward block; residual + layer norm around each. Returns F_0.
inline Tensor decode(const QuerySet& queries, const ProxyFeatures& enc, const NetworkConfig& cfg,
                     const ParamMap& params) {
  using namespace netdetail;
  Tensor h = queries.features;
  for (std::size_t i = 0; i < cfg.n_dec_layers; ++i) {
    const std::string lp = "dec.l" + std::to_string(i);
    h = residual_norm(params, lp + ".ln1", h, attention(params, lp + ".self", h, h, cfg.n_heads));
    const auto bias = geometry_bias(params, lp, queries.coords, enc.centers, cfg.n_heads);
    h = residual_norm(params, lp + ".ln2", h,
                      attention(params, lp + ".cross", h, enc.features, cfg.n_heads, &bias));
    h = residual_norm(params, lp + ".ln3", h, mlp2(params, lp + ".ff", h));
  }
  return h;
}

/// One upsample layer: each parent spawns `factor` children at parent + MLP
/// offset; child features come from the parent feature and the offset.
/// factor == 1 refines coordinates in place.
inline UpsampleStage upsample_layer(const UpsampleStage& prev, std::size_t layer_index,
                                    std::size_t factor, const ParamMap& params) {
  using namespace netdetail;
  const std::string sp = "up" + std::to_string(layer_index);
  const std::size_t n = prev.coords.dim(0);

  const auto rep = repeat_indices(n, factor);
  const Tensor p_rep = gather(prev.coords, rep);
  const Tensor f_rep = gather(prev.features, rep);
  const Tensor slots = gather(params.at(sp + ".slot"), tile_indices(factor, n));

  const Tensor offsets = mlp2(params, sp + ".off", concat({f_rep, slots}, 1));  // [n*f, 3]
  UpsampleStage next;
  next.coords = add(p_rep, offsets);
  next.features = mlp2(params, sp + ".feat", concat({f_rep, offsets}, 1));
  return next;
}

/// Full forward pass: returns the coarse cloud and every upsample stage as
/// differentiable [n_i x 3] tensors, final stage last.
inline std::vector<Tensor> forward(const PointCloud& patch, const NetworkConfig& cfg,
                                   const ParamMap& params) {
  const ProxyFeatures enc = encode(patch, cfg, params);
  const QuerySet queries = generate_queries(enc, cfg, params);
  const Tensor f0 = decode(queries, enc, cfg, params);

  std::vector<Tensor> stages;
  stages.reserve(cfg.upsample_factors.size() + 1);
  stages.push_back(queries.coords);
  UpsampleStage cur{queries.coords, f0};
  for (std::size_t s = 0; s < cfg.upsample_factors.size(); ++s) {
    cur = upsample_layer(cur, s, cfg.upsample_factors[s], params);
    stages.push_back(cur.coords);
  }
  return stages;
}

/// Convenience: forward pass returning only the final dense cloud.
inline PointCloud predict(const PointCloud& patch, const NetworkConfig& cfg,
                          const ParamMap& params, Frame frame = Frame::world) {
  return tensor_to_cloud(forward(patch, cfg, params).back(), frame);
}

}  // namespace rmap
