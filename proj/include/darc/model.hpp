#pragma once

// The multimodal refinement stack: linear projection of both embedding
// streams, L refinement blocks of bidirectional adaptive cross-attention
// (ACAR) followed by a gated feature adapter (DFA), uniform averaging of
// the per-block adapter outputs, and a scaled cosine classifier.
//
// Activations are laid out [batch x tokens x features]; pooled CLIP-style
// embeddings use tokens == 1.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "darc/grad_check.hpp"
#include "darc/ops.hpp"
#include "darc/tensor.hpp"

namespace darc {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kCosineEps = 1e-12;

struct ModelConfig {
  std::uint32_t d_in_img = 768;
  std::uint32_t d_in_txt = 768;
  std::uint32_t d_map = 1024;
  std::uint32_t n_blocks = 2;
  std::uint32_t n_heads = 8;
  std::uint32_t bottleneck_ratio = 4;
  double lambda_init = 0.05;
  double sigma_scale = 30.0;
  std::uint32_t n_classes = 2;
  bool use_acar = true;
  bool use_dfa = true;
  bool use_sai = true;
  bool use_lp = true;

  std::uint32_t d_k() const { return d_map / n_heads; }
  std::uint32_t d_bottleneck() const { return d_map / bottleneck_ratio; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (d_in_img == 0 || d_in_txt == 0 || d_map == 0) fail("dimensions must be positive");
    if (n_blocks == 0) fail("at least one refinement block is required");
    if (n_heads == 0 || d_map % n_heads != 0) {
      fail("d_map (" + std::to_string(d_map) + ") must be divisible by the head count (" +
           std::to_string(n_heads) + ")");
    }
    if (bottleneck_ratio == 0 || d_map % bottleneck_ratio != 0) {
      fail("d_map (" + std::to_string(d_map) + ") must be divisible by the bottleneck ratio (" +
           std::to_string(bottleneck_ratio) + ")");
    }
    if (n_classes < 2) fail("at least two classes are required");
    if (!(sigma_scale > 0.0)) fail("sigma must be positive");
    if (!use_lp && (d_in_img != d_map || d_in_txt != d_map)) {
      fail("disabling the linear projection requires d_map == d_in (image " + std::to_string(d_in_img) +
           ", text " + std::to_string(d_in_txt) + ", d_map " + std::to_string(d_map) +
           "); the features are used unprojected");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

struct ProjectionLayer {
  Tensor weight;  // [d_map x d_in]
  Tensor bias;    // [d_map]
};

struct AcarBlock {
  std::vector<Tensor> w_q, w_k, w_v;  // per head [d_map x d_k]
  Tensor w_o;                         // [d_map x d_map]
  Tensor w_down;                      // [d_map/r x d_map]
  Tensor w_up;                        // [d_map x d_map/r]
  Tensor lambda;                      // scalar
  Tensor ln_gamma, ln_beta;           // [d_map]
};

struct DfaBlock {
  Tensor w_g;     // [1 x d_map]
  Tensor b_g;     // scalar
  Tensor w_down;  // [d_map/r x d_map]
  Tensor w_up;    // [d_map x d_map/r]
  Tensor ln_gamma, ln_beta;
};

struct RefinementBlock {
  std::optional<AcarBlock> img_to_txt;  // image stream queries text
  std::optional<AcarBlock> txt_to_img;  // text stream queries image
  std::optional<DfaBlock> dfa;
};

namespace detail {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor gaussian(Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape), true);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    for (double& v : t.values()) v = dist(rng_);
    return t;
  }

  static Tensor fill(Shape shape, double v) {
    Tensor t(std::move(shape), true);
    for (double& x : t.values()) x = v;
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

inline AcarBlock make_acar(const ModelConfig& c, Initializer& init) {
  AcarBlock b;
  for (std::uint32_t h = 0; h < c.n_heads; ++h) {
    b.w_q.push_back(init.gaussian({c.d_map, c.d_k()}, c.d_map));
    b.w_k.push_back(init.gaussian({c.d_map, c.d_k()}, c.d_map));
    b.w_v.push_back(init.gaussian({c.d_map, c.d_k()}, c.d_map));
  }
  b.w_o = init.gaussian({c.d_map, c.d_map}, c.d_map);
  b.w_down = init.gaussian({c.d_bottleneck(), c.d_map}, c.d_map);
  b.w_up = init.gaussian({c.d_map, c.d_bottleneck()}, c.d_bottleneck());
  b.lambda = Tensor::scalar(c.lambda_init, true);
  b.ln_gamma = Initializer::fill({c.d_map}, 1.0);
  b.ln_beta = Initializer::fill({c.d_map}, 0.0);
  return b;
}

inline DfaBlock make_dfa(const ModelConfig& c, Initializer& init) {
  DfaBlock b;
  b.w_g = init.gaussian({1, c.d_map}, c.d_map);
  b.b_g = Tensor::scalar(0.0, true);
  b.w_down = init.gaussian({c.d_bottleneck(), c.d_map}, c.d_map);
  b.w_up = init.gaussian({c.d_map, c.d_bottleneck()}, c.d_bottleneck());
  b.ln_gamma = Initializer::fill({c.d_map}, 1.0);
  b.ln_beta = Initializer::fill({c.d_map}, 0.0);
  return b;
}

inline void append(std::vector<NamedTensor>& out, const std::string& prefix, const AcarBlock& b) {
  for (std::size_t h = 0; h < b.w_q.size(); ++h) out.push_back({prefix + ".w_q." + std::to_string(h), b.w_q[h]});
  for (std::size_t h = 0; h < b.w_k.size(); ++h) out.push_back({prefix + ".w_k." + std::to_string(h), b.w_k[h]});
  for (std::size_t h = 0; h < b.w_v.size(); ++h) out.push_back({prefix + ".w_v." + std::to_string(h), b.w_v[h]});
  out.push_back({prefix + ".w_o", b.w_o});
  out.push_back({prefix + ".w_down", b.w_down});
  out.push_back({prefix + ".w_up", b.w_up});
  out.push_back({prefix + ".lambda", b.lambda});
  out.push_back({prefix + ".ln.gamma", b.ln_gamma});
  out.push_back({prefix + ".ln.beta", b.ln_beta});
}

inline void append(std::vector<NamedTensor>& out, const std::string& prefix, const DfaBlock& b) {
  out.push_back({prefix + ".w_g", b.w_g});
  out.push_back({prefix + ".b_g", b.b_g});
  out.push_back({prefix + ".w_down", b.w_down});
  out.push_back({prefix + ".w_up", b.w_up});
  out.push_back({prefix + ".ln.gamma", b.ln_gamma});
  out.push_back({prefix + ".ln.beta", b.ln_beta});
}

}  // namespace detail

// Full parameter set plus hyperparameters. Parameters are tensor handles,
// so a copy aliases the original; use clone() for an independent model.
class DarcModel {
 public:
  ModelConfig config;
  std::optional<ProjectionLayer> proj_img, proj_txt;
  std::vector<RefinementBlock> blocks;
  Tensor classifier;  // W_c [n_classes x d_map], rows unit-norm at init

  // Allocates and randomly initializes every parameter the config enables.
  // The classifier gets the non-semantic Gaussian init; see init_prototypes.
  static DarcModel create(const ModelConfig& cfg, std::uint64_t seed);

  // Parameters in a fixed, name-addressable order.
  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> out;
    if (proj_img) {
      out.push_back({"proj_img.weight", proj_img->weight});
      out.push_back({"proj_img.bias", proj_img->bias});
    }
    if (proj_txt) {
      out.push_back({"proj_txt.weight", proj_txt->weight});
      out.push_back({"proj_txt.bias", proj_txt->bias});
    }
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "blocks." + std::to_string(l);
      if (blocks[l].img_to_txt) detail::append(out, p + ".acar_img_to_txt", *blocks[l].img_to_txt);
      if (blocks[l].txt_to_img) detail::append(out, p + ".acar_txt_to_img", *blocks[l].txt_to_img);
      if (blocks[l].dfa) detail::append(out, p + ".dfa", *blocks[l].dfa);
    }
    out.push_back({"classifier.weight", classifier});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() const {
    for (auto& p : parameters()) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
  }

  DarcModel clone() const {
    DarcModel m = create_empty(config);
    copy_values(*this, m);
    return m;
  }

  // Overwrites every parameter value of `dst` with the one in `src`.
  static void copy_values(const DarcModel& src, DarcModel& dst) {
    auto s = src.parameters();
    auto d = dst.parameters();
    if (s.size() != d.size()) throw DimensionError("copy_values: models have different parameter sets");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i].name != d[i].name || s[i].tensor.shape() != d[i].tensor.shape()) {
        throw DimensionError("copy_values: parameter " + s[i].name + " does not match " + d[i].name);
      }
      auto sv = s[i].tensor.values();
      std::copy(sv.begin(), sv.end(), d[i].tensor.values().begin());
    }
  }

  // Structure for `cfg` with every parameter value zeroed; the target of
  // checkpoint loading and cloning.
  static DarcModel create_empty(const ModelConfig& cfg) {
    cfg.validate();
    DarcModel m = create(cfg, 0);
    for (auto& p : m.parameters()) {
      Tensor t = p.tensor;
      std::fill(t.values().begin(), t.values().end(), 0.0);
    }
    return m;
  }
};

// Row-normalizes W_c from d_map-dimensional class prototypes when SAI is
// enabled and prototypes are supplied, otherwise from a seeded Gaussian
// (std 1/sqrt(d_map)).
inline void init_prototypes(DarcModel& model, const std::optional<Tensor>& prototypes, std::uint64_t seed) {
  const auto& c = model.config;
  Tensor& w = model.classifier;
  if (c.use_sai && prototypes) {
    const Tensor& p = *prototypes;
    if (p.rank() != 2 || p.dim(0) != c.n_classes || p.dim(1) != c.d_map) {
      throw FormatError(FormatErrorKind::kSchemaMismatch,
                        "prototype tensor " + shape_str(p.shape()) + " must be [" + std::to_string(c.n_classes) +
                            "x" + std::to_string(c.d_map) + "] (n_classes x d_map)");
    }
    std::copy(p.values().begin(), p.values().end(), w.values().begin());
  } else {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), std::uint32_t{0x50524f54}};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(c.d_map)));
    for (double& v : w.values()) v = dist(rng);
  }
  const std::size_t d = c.d_map;
  auto v = w.values();
  for (std::size_t r = 0; r < c.n_classes; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += v[r * d + j] * v[r * d + j];
    const double n = std::sqrt(ss);
    if (!(n > 0.0)) throw NumericError("init_prototypes: prototype row " + std::to_string(r) + " has zero norm");
    for (std::size_t j = 0; j < d; ++j) v[r * d + j] /= n;
  }
}

inline DarcModel DarcModel::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DarcModel m;
  m.config = cfg;
  detail::Initializer init(seed);
  if (cfg.use_lp) {
    m.proj_img = ProjectionLayer{init.gaussian({cfg.d_map, cfg.d_in_img}, cfg.d_in_img),
                                 detail::Initializer::fill({cfg.d_map}, 0.0)};
    m.proj_txt = ProjectionLayer{init.gaussian({cfg.d_map, cfg.d_in_txt}, cfg.d_in_txt),
                                 detail::Initializer::fill({cfg.d_map}, 0.0)};
  }
  m.blocks.resize(cfg.n_blocks);
  for (auto& b : m.blocks) {
    if (cfg.use_acar) {
      b.img_to_txt = detail::make_acar(cfg, init);
      b.txt_to_img = detail::make_acar(cfg, init);
    }
    if (cfg.use_dfa) b.dfa = detail::make_dfa(cfg, init);
  }
  m.classifier = Tensor({cfg.n_classes, cfg.d_map}, true);
  init_prototypes(m, std::nullopt, seed);
  return m;
}

// ReLU(W f + b) per token.
inline Tensor project(Graph& g, const ProjectionLayer& layer, const Tensor& f) {
  if (f.rank() < 1 || f.shape().back() != layer.weight.dim(1)) {
    throw DimensionError("project: input " + shape_str(f.shape()) + " does not match projection input dim " +
                         std::to_string(layer.weight.dim(1)));
  }
  return ops::relu(g, ops::add_bias(g, ops::matmul_nt(g, f, layer.weight), layer.bias));
}

struct AttentionTrace {
  std::vector<Tensor> weights;  // per head [B x Tq x Tk]
};

// Multi-head cross-attention with queries from q and keys/values from kv,
// both [B x T x d_map]:
//   head_h = softmax(q Wq_h (kv Wk_h)^T / sqrt(d_k)) kv Wv_h,
//   A = concat(head_1..head_H) W_o.
inline Tensor cross_attention(Graph& g, const AcarBlock& block, const Tensor& q, const Tensor& kv,
                              AttentionTrace* trace = nullptr) {
  if (q.rank() != 3 || kv.rank() != 3 || q.dim(0) != kv.dim(0) || q.dim(2) != kv.dim(2) ||
      q.dim(2) != block.w_o.dim(0)) {
    throw DimensionError("cross_attention: query " + shape_str(q.shape()) + " and key/value " + shape_str(kv.shape()) +
                         " are incompatible with d_map " + std::to_string(block.w_o.dim(0)));
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(block.w_q.front().dim(1)));
  std::vector<Tensor> heads;
  heads.reserve(block.w_q.size());
  for (std::size_t h = 0; h < block.w_q.size(); ++h) {
    Tensor qh = ops::matmul(g, q, block.w_q[h]);
    Tensor kh = ops::matmul(g, kv, block.w_k[h]);
    Tensor vh = ops::matmul(g, kv, block.w_v[h]);
    Tensor weights = ops::softmax_rows(g, ops::scale(g, ops::bmm_nt(g, qh, kh), inv_sqrt_dk));
    if (trace) trace->weights.push_back(weights);
    heads.push_back(ops::bmm(g, weights, vh));
  }
  return ops::matmul(g, ops::concat_last(g, heads), block.w_o);
}

// LN(Q + A + lambda * W_up GELU(W_down A)).
inline Tensor acar_forward(Graph& g, const AcarBlock& block, const Tensor& q, const Tensor& kv,
                           AttentionTrace* trace = nullptr) {
  Tensor a = cross_attention(g, block, q, kv, trace);
  Tensor adaptive =
      ops::mul_scalar(g, ops::matmul_nt(g, ops::gelu(g, ops::matmul_nt(g, a, block.w_down)), block.w_up), block.lambda);
  Tensor residual = ops::add(g, ops::add(g, q, a), adaptive);
  return ops::layer_norm(g, residual, kLayerNormEps, block.ln_gamma, block.ln_beta);
}

struct DfaTrace {
  Tensor gate;  // [B x 1]
};

// g = sigmoid(W_g mean_t(Z) + b_g) per sample;
// LN(Z + g * W_up GELU(W_down Z)).
inline Tensor dfa_forward(Graph& g, const DfaBlock& block, const Tensor& z, DfaTrace* trace = nullptr) {
  if (z.rank() != 3 || z.dim(2) != block.w_g.dim(1)) {
    throw DimensionError("dfa_forward: input " + shape_str(z.shape()) + " does not match d_map " +
                         std::to_string(block.w_g.dim(1)));
  }
  Tensor pooled = ops::mean_axis(g, z, 1);
  Tensor gate = ops::sigmoid(g, ops::add_bias(g, ops::matmul_nt(g, pooled, block.w_g), block.b_g));
  if (trace) trace->gate = gate;
  Tensor branch = ops::matmul_nt(g, ops::gelu(g, ops::matmul_nt(g, z, block.w_down)), block.w_up);
  Tensor gated = ops::mul_per_sample(g, branch, gate);
  return ops::layer_norm(g, ops::add(g, z, gated), kLayerNormEps, block.ln_gamma, block.ln_beta);
}

struct BlockOutput {
  Tensor z_img_to_txt;
  Tensor z_txt_to_img;
  Tensor z_fuse;
  Tensor tap;  // DFA output, fed to aggregation
  AttentionTrace attn_img_to_txt, attn_txt_to_img;
  DfaTrace dfa;
};

// Both ACAR directions, their average, then the adapter. A disabled module
// passes its input through unchanged.
inline BlockOutput block_forward(Graph& g, const RefinementBlock& block, const Tensor& x_img, const Tensor& x_txt) {
  BlockOutput out;
  if (block.img_to_txt && block.txt_to_img) {
    out.z_img_to_txt = acar_forward(g, *block.img_to_txt, x_img, x_txt, &out.attn_img_to_txt);
    out.z_txt_to_img = acar_forward(g, *block.txt_to_img, x_txt, x_img, &out.attn_txt_to_img);
  } else {
    out.z_img_to_txt = x_img;
    out.z_txt_to_img = x_txt;
  }
  if (out.z_img_to_txt.shape() != out.z_txt_to_img.shape()) {
    throw DimensionError("block_forward: fusion needs equal token counts, got " + shape_str(out.z_img_to_txt.shape()) +
                         " and " + shape_str(out.z_txt_to_img.shape()));
  }
  out.z_fuse = ops::scale(g, ops::add(g, out.z_img_to_txt, out.z_txt_to_img), 0.5);
  out.tap = block.dfa ? dfa_forward(g, *block.dfa, out.z_fuse, &out.dfa) : out.z_fuse;
  return out;
}

// Uniform mean of the per-block taps [B x T x d], then mean over tokens,
// giving F_final [B x d].
inline Tensor aggregate(Graph& g, std::span<const Tensor> taps) {
  if (taps.empty()) throw DimensionError("aggregate: no block outputs");
  Tensor acc = taps[0];
  for (std::size_t l = 1; l < taps.size(); ++l) acc = ops::add(g, acc, taps[l]);
  Tensor mean = ops::scale(g, acc, 1.0 / static_cast<double>(taps.size()));
  if (mean.rank() == 3) return ops::mean_axis(g, mean, 1);
  return mean;
}

// sigma * cos(W_c[c], F) for every class; F is [B x d].
inline Tensor classify(Graph& g, const Tensor& w_c, const Tensor& f_final, double sigma) {
  if (f_final.shape().back() != w_c.dim(1)) {
    throw DimensionError("classify: feature " + shape_str(f_final.shape()) + " vs prototypes " + shape_str(w_c.shape()));
  }
  Tensor fn = ops::l2_normalize_rows(g, f_final, kCosineEps);
  Tensor wn = ops::l2_normalize_rows(g, w_c, kCosineEps);
  return ops::scale(g, ops::matmul_nt(g, fn, wn), sigma);
}

struct ForwardResult {
  Tensor logits;   // [B x n_classes]
  Tensor f_final;  // [B x d_map]
  Tensor x_img, x_txt;
  std::vector<BlockOutput> blocks;
};

// f_img [B x T x d_in_img], f_txt [B x T x d_in_txt] -> logits. Block l+1
// consumes block l's two directional ACAR outputs; each block's DFA output
// is a tap for aggregation.
inline ForwardResult model_forward(Graph& g, const DarcModel& model, const Tensor& f_img, const Tensor& f_txt) {
  const auto& c = model.config;
  if (f_img.rank() != 3 || f_txt.rank() != 3 || f_img.dim(0) != f_txt.dim(0)) {
    throw DimensionError("model_forward: expected [B x T x d] inputs with equal batch, got " + shape_str(f_img.shape()) +
                         " and " + shape_str(f_txt.shape()));
  }
  if (f_img.dim(2) != c.d_in_img || f_txt.dim(2) != c.d_in_txt) {
    throw DimensionError("model_forward: input dims " + std::to_string(f_img.dim(2)) + "/" +
                         std::to_string(f_txt.dim(2)) + " do not match config " + std::to_string(c.d_in_img) + "/" +
                         std::to_string(c.d_in_txt));
  }
  ForwardResult r;
  r.x_img = model.proj_img ? project(g, *model.proj_img, f_img) : f_img;
  r.x_txt = model.proj_txt ? project(g, *model.proj_txt, f_txt) : f_txt;
  Tensor img = r.x_img, txt = r.x_txt;
  std::vector<Tensor> taps;
  for (const auto& block : model.blocks) {
    r.blocks.push_back(block_forward(g, block, img, txt));
    img = r.blocks.back().z_img_to_txt;
    txt = r.blocks.back().z_txt_to_img;
    taps.push_back(r.blocks.back().tap);
  }
  r.f_final = aggregate(g, taps);
  r.logits = classify(g, model.classifier, r.f_final, c.sigma_scale);
  return r;
}

}  // namespace darc
