#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biax/error.hpp"
#include "biax/ops.hpp"
#include "biax/rf_planner.hpp"
#include "biax/rng.hpp"
#include "biax/signal.hpp"
#include "biax/tensor.hpp"

namespace biax {

// Which encoder output feeds the decoder's values.
enum class ValueSource { spatial, temporal };
// Where the decoder's queries and keys come from: the temporal encoder output
// or the embedded tokenizer output.
enum class QuerySource { temporal_encoder, tokenizer };
// Ablation wiring: both branches fused by the decoder, or the head reading a
// single encoder branch directly.
enum class BranchMode { both, temporal_only, spatial_only };

struct ModelConfig {
  std::size_t channels = 18;     // C
  std::size_t input_len = 30000; // L, samples per segment
  std::size_t dim = 768;         // D
  std::size_t heads = 8;
  std::size_t ff_mult = 4;
  std::size_t n_temporal_layers = 1;
  std::size_t n_spatial_layers = 1;
  std::vector<rf::ConvLayer> conv_stack{{10, 5, 0}, {5, 3, 0}, {5, 3, 0}, {5, 3, 0}, {5, 2, 0}, {3, 3, 0}, {3, 3, 0}};
  double dropout = 0.1;
  ValueSource decoder_value_source = ValueSource::spatial;
  QuerySource fusion_query_source = QuerySource::temporal_encoder;
  BranchMode branches = BranchMode::both;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  rf::ConvStackSpec stack_spec(double fs = 100.0) const {
    rf::ConvStackSpec s;
    s.layers = conv_stack;
    s.input_len = input_len;
    s.fs = fs;
    return s;
  }

  /// Tokens per channel (T); throws ConfigError for infeasible stacks.
  std::size_t tokens() const { return rf::layer_outputs(stack_spec()).back(); }

  void validate() const {
    if (channels < 1 || input_len < 1 || dim < 1) throw ConfigError("model: channels, input_len and dim must be positive");
    if (heads < 1 || dim % heads != 0)
      throw ConfigError("model: dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
    if (ff_mult < 1) throw ConfigError("model: ff_mult must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0,1)");
    if (branches == BranchMode::spatial_only && n_spatial_layers == 0 && n_temporal_layers == 0)
      throw ConfigError("model: no encoder layers");
    (void)tokens();
  }
};

/// Ordered named parameter collection. Tensors are handles, so entries stay
/// valid while the store is alive.
class ParamStore {
 public:
  Tensor add(std::string name, Shape shape) {
    for (const auto& [n, _] : items_)
      if (n == name) throw ContractError("duplicate parameter " + name);
    items_.emplace_back(std::move(name), Tensor::zeros(std::move(shape), true));
    return items_.back().second;
  }

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : items_)
      if (n == name) return t;
    throw ContractError("no parameter named " + name);
  }

  bool contains(const std::string& name) const {
    for (const auto& [n, _] : items_)
      if (n == name) return true;
    return false;
  }

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderLayerWeights {
  Tensor ln1_gain, ln1_bias;
  AttentionWeights attn;
  Tensor ln2_gain, ln2_bias;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

/// Per-call switches for forward passes.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // dropout source; required when training with dropout > 0
  // When set, every attention probability tensor is appended here.
  std::vector<Tensor>* attention_probe = nullptr;
};

/// Scaled dot-product multi-head attention.
///
/// xq[N x Sq x D] provides queries, xk/xv[N x Sk x D] keys and values. Heads
/// split D into equal slices; the concatenated head outputs pass through wo.
inline Tensor multi_head_attention(const Tensor& xq, const Tensor& xk, const Tensor& xv, const AttentionWeights& w,
                                   std::size_t heads, ForwardContext& ctx, double dropout = 0.0) {
  const std::size_t N = xq.dim(0), Sq = xq.dim(1), D = xq.dim(2), Sk = xk.dim(1);
  if (D % heads != 0) throw DimensionError("attention: width not divisible by head count");
  const std::size_t dh = D / heads;
  auto split = [&](const Tensor& t, std::size_t S) {
    return reshape(permute(reshape(t, {N, S, heads, dh}), {0, 2, 1, 3}), {N * heads, S, dh});
  };
  const Tensor q = split(linear(xq, w.wq, w.bq), Sq);
  const Tensor k = split(linear(xk, w.wk, w.bk), Sk);
  const Tensor v = split(linear(xv, w.wv, w.bv), Sk);
  const Tensor probs = softmax_lastdim(scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))));
  if (ctx.attention_probe) ctx.attention_probe->push_back(probs);
  const Tensor ctxv = bmm(dropout > 0 ? biax::dropout(probs, dropout, ctx.rng, ctx.training) : probs, v);
  const Tensor merged = reshape(permute(reshape(ctxv, {N, heads, Sq, dh}), {0, 2, 1, 3}), {N, Sq, D});
  return linear(merged, w.wo, w.bo);
}

/// Pre-norm transformer encoder layer over x[N x S x D]:
/// h = x + MHA(LN(x)); out = h + FFN(LN(h)).
inline Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w, std::size_t heads, double dropout,
                            ForwardContext& ctx) {
  const Tensor n1 = layer_norm(x, w.ln1_gain, w.ln1_bias);
  const Tensor a = multi_head_attention(n1, n1, n1, w.attn, heads, ctx);
  const Tensor h = add(x, biax::dropout(a, dropout, ctx.rng, ctx.training));
  const Tensor n2 = layer_norm(h, w.ln2_gain, w.ln2_bias);
  const Tensor f = linear(gelu(linear(n2, w.ff1_w, w.ff1_b)), w.ff2_w, w.ff2_b);
  return add(h, biax::dropout(f, dropout, ctx.rng, ctx.training));
}

/// Intermediate tensors of one forward pass.
struct ForwardTrace {
  Tensor tokens;    // B x C x T x D
  Tensor embedded;  // B x (C+1) x (T+1) x D
  Tensor temporal;  // z_to
  Tensor spatial;   // z_so
  Tensor fused;
  Tensor probs;     // B x 2
};

/// Two-branch attention classifier over multichannel segments.
///
/// Pipeline: per-channel convolutional tokenizer -> class tokens and joint
/// positional encodings -> temporal encoder (attention over time within each
/// channel) and spatial encoder (attention over channels within each time
/// step), run side by side on the same embedding -> cross-attention fusion
/// (queries/keys from the temporal branch, values from the spatial branch)
/// -> flattened linear head with softmax over {good, poor}.
class Biaxialformer {
 public:
  explicit Biaxialformer(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    T_ = cfg_.tokens();
    build();
    Rng rng(cfg_.seed);
    initialize(rng);
  }

  Biaxialformer(const Biaxialformer&) = delete;
  Biaxialformer& operator=(const Biaxialformer&) = delete;
  Biaxialformer(Biaxialformer&&) = default;
  Biaxialformer& operator=(Biaxialformer&&) = default;

  /// Deep copy with independent parameter storage.
  Biaxialformer clone() const {
    Biaxialformer m(cfg_);
    m.copy_params_from(*this);
    return m;
  }

  void copy_params_from(const Biaxialformer& other) {
    auto& dst = params_.items();
    const auto& src = other.params_.items();
    if (dst.size() != src.size()) throw ContractError("copy_params_from: parameter sets differ");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].first != src[i].first || dst[i].second.shape() != src[i].second.shape())
        throw ContractError("copy_params_from: mismatch at " + dst[i].first);
      auto d = dst[i].second.mutable_data();
      std::copy(src[i].second.data().begin(), src[i].second.data().end(), d.begin());
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t tokens_per_channel() const { return T_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// x[B x C x L] -> [B x C x T x D]. Channel k runs through its own conv
  /// stack; the first layer is conv -> instance norm -> GELU, the rest conv -> GELU.
  Tensor tokenize(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(1) != cfg_.channels || x.dim(2) != cfg_.input_len)
      throw DimensionError("tokenize: expected [B x " + std::to_string(cfg_.channels) + " x " +
                           std::to_string(cfg_.input_len) + "], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = cfg_.channels;
    Tensor h = reshape(x, {B, C, 1, cfg_.input_len});
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      const auto& l = cfg_.conv_stack[i];
      h = grouped_conv1d(h, conv_[i], l.stride, l.padding);
      if (i == 0) h = instance_norm(h);
      h = gelu(h);
    }
    // [B, C, D, T] -> [B, C, T, D]
    return permute(h, {0, 1, 3, 2});
  }

  /// tokens[B x C x T x D] -> [B x (C+1) x (T+1) x D]:
  /// prepend CLS_intra on time, add intra PE, prepend CLS_inter on channels,
  /// add inter PE.
  Tensor embed(const Tensor& tokens) const {
    const std::size_t C = cfg_.channels, D = cfg_.dim;
    if (tokens.rank() != 4 || tokens.dim(1) != C || tokens.dim(2) != T_ || tokens.dim(3) != D)
      throw DimensionError("embed: unexpected token shape " + shape_str(tokens.shape()));
    const std::size_t B = tokens.dim(0);
    const Tensor cls_intra = repeat_leading(reshape(cls_intra_, {C, 1, D}), B);  // B x C x 1 x D
    Tensor z = concat({cls_intra, tokens}, 2);                                     // B x C x (T+1) x D
    z = add_broadcast(z, pos_intra_);
    const Tensor cls_inter = repeat_leading(reshape(cls_inter_, {1, T_ + 1, D}), B);  // B x 1 x (T+1) x D
    z = concat({cls_inter, z}, 1);                                                   // B x (C+1) x (T+1) x D
    return add_broadcast(z, pos_inter_);
  }

  /// Attention over the (T+1) axis for every (batch, channel) row.
  Tensor temporal_encode(const Tensor& z, ForwardContext& ctx) const {
    check_embedded(z, "temporal_encode");
    const std::size_t B = z.dim(0), C1 = z.dim(1), T1 = z.dim(2), D = z.dim(3);
    Tensor h = reshape(z, {B * C1, T1, D});
    for (const auto& layer : temporal_) h = encoder_layer(h, layer, cfg_.heads, cfg_.dropout, ctx);
    return reshape(h, {B, C1, T1, D});
  }

  /// Attention over the (C+1) axis for every (batch, time) column.
  Tensor spatial_encode(const Tensor& z, ForwardContext& ctx) const {
    check_embedded(z, "spatial_encode");
    const std::size_t B = z.dim(0), C1 = z.dim(1), T1 = z.dim(2), D = z.dim(3);
    Tensor h = reshape(permute(z, {0, 2, 1, 3}), {B * T1, C1, D});
    for (const auto& layer : spatial_) h = encoder_layer(h, layer, cfg_.heads, cfg_.dropout, ctx);
    return permute(reshape(h, {B, T1, C1, D}), {0, 2, 1, 3});
  }

  /// Cross-attention along the temporal axis: Q, K from `query_src`, V from
  /// `value_src`. Both are B x (C+1) x (T+1) x D.
  Tensor fuse(const Tensor& query_src, const Tensor& value_src, ForwardContext& ctx) const {
    if (!has_decoder_) throw ContractError("fuse: model built without a decoder");
    check_embedded(query_src, "fuse");
    check_embedded(value_src, "fuse");
    const std::size_t B = query_src.dim(0), C1 = query_src.dim(1), T1 = query_src.dim(2), D = query_src.dim(3);
    const Tensor q = reshape(query_src, {B * C1, T1, D});
    const Tensor v = reshape(value_src, {B * C1, T1, D});
    const Tensor out = multi_head_attention(q, q, v, decoder_, cfg_.heads, ctx);
    return reshape(biax::dropout(out, cfg_.dropout, ctx.rng, ctx.training), {B, C1, T1, D});
  }

  /// Flatten each example to (C+1)(T+1)D, affine to 2 logits, softmax.
  /// Column 1 is p(poor).
  Tensor classify(const Tensor& fused) const {
    check_embedded(fused, "classify");
    const std::size_t B = fused.dim(0);
    return softmax_lastdim(linear(reshape(fused, {B, fused.numel() / B}), head_w_, head_b_));
  }

  /// Full forward pass x[B x C x L] -> probabilities [B x 2].
  Tensor forward(const Tensor& x, ForwardContext& ctx, ForwardTrace* trace = nullptr) const {
    const Tensor tokens = tokenize(x);
    const Tensor z = embed(tokens);
    Tensor z_to, z_so, head_in;
    switch (cfg_.branches) {
      case BranchMode::temporal_only:
        head_in = z_to = temporal_encode(z, ctx);
        break;
      case BranchMode::spatial_only:
        head_in = z_so = spatial_encode(z, ctx);
        break;
      case BranchMode::both: {
        z_to = temporal_encode(z, ctx);
        z_so = spatial_encode(z, ctx);
        const Tensor& q = cfg_.fusion_query_source == QuerySource::temporal_encoder ? z_to : z;
        const Tensor& v = cfg_.decoder_value_source == ValueSource::spatial ? z_so : z_to;
        head_in = fuse(q, v, ctx);
        break;
      }
    }
    Tensor probs = classify(head_in);
    if (trace) *trace = {tokens, z, z_to, z_so, head_in, probs};
    return probs;
  }

  Tensor forward(const Tensor& x) const {
    ForwardContext ctx;
    return forward(x, ctx);
  }

  /// Re-draws every parameter: truncated normal (init_std) for projection
  /// and head weights, fan-in scaled normal for conv kernels, ones for norm
  /// gains, zeros for biases, class tokens and positional encodings.
  void initialize(Rng& rng) {
    for (auto& [name, t] : params_.items()) {
      auto d = t.mutable_data();
      if (is_gain(name)) {
        std::fill(d.begin(), d.end(), 1.0);
      } else if (name.starts_with("tokenizer.")) {
        const double fan_in = static_cast<double>(t.dim(2) * t.dim(3));
        const double sd = 1.0 / std::sqrt(fan_in);
        for (double& v : d) v = rng.truncated_normal(sd);
      } else if (is_weight(name)) {
        for (double& v : d) v = rng.truncated_normal(cfg_.init_std);
      } else {
        std::fill(d.begin(), d.end(), 0.0);
      }
    }
  }

 private:
  static bool is_gain(const std::string& n) { return n.ends_with("_gain"); }
  static bool is_weight(const std::string& n) {
    return n.ends_with(".wq") || n.ends_with(".wk") || n.ends_with(".wv") || n.ends_with(".wo") ||
           n.ends_with("_w") || n == "head.w";
  }

  void check_embedded(const Tensor& z, const char* op) const {
    if (z.rank() != 4 || z.dim(1) != cfg_.channels + 1 || z.dim(2) != T_ + 1 || z.dim(3) != cfg_.dim)
      throw DimensionError(std::string(op) + ": expected [B x " + std::to_string(cfg_.channels + 1) + " x " +
                           std::to_string(T_ + 1) + " x " + std::to_string(cfg_.dim) + "], got " + shape_str(z.shape()));
  }

  AttentionWeights add_attention(const std::string& p) {
    const std::size_t D = cfg_.dim;
    AttentionWeights a;
    a.wq = params_.add(p + ".wq", {D, D});
    a.bq = params_.add(p + ".bq", {D});
    a.wk = params_.add(p + ".wk", {D, D});
    a.bk = params_.add(p + ".bk", {D});
    a.wv = params_.add(p + ".wv", {D, D});
    a.bv = params_.add(p + ".bv", {D});
    a.wo = params_.add(p + ".wo", {D, D});
    a.bo = params_.add(p + ".bo", {D});
    return a;
  }

  EncoderLayerWeights add_encoder_layer(const std::string& p) {
    const std::size_t D = cfg_.dim, F = cfg_.dim * cfg_.ff_mult;
    EncoderLayerWeights w;
    w.ln1_gain = params_.add(p + ".ln1_gain", {D});
    w.ln1_bias = params_.add(p + ".ln1_bias", {D});
    w.attn = add_attention(p + ".attn");
    w.ln2_gain = params_.add(p + ".ln2_gain", {D});
    w.ln2_bias = params_.add(p + ".ln2_bias", {D});
    w.ff1_w = params_.add(p + ".ff1_w", {D, F});
    w.ff1_b = params_.add(p + ".ff1_b", {F});
    w.ff2_w = params_.add(p + ".ff2_w", {F, D});
    w.ff2_b = params_.add(p + ".ff2_b", {D});
    return w;
  }

  void build() {
    const std::size_t C = cfg_.channels, D = cfg_.dim;
    std::size_t cin = 1;
    for (std::size_t i = 0; i < cfg_.conv_stack.size(); ++i) {
      conv_.push_back(params_.add("tokenizer.conv" + std::to_string(i), {C, D, cin, cfg_.conv_stack[i].kernel}));
      cin = D;
    }
    cls_intra_ = params_.add("embed.cls_intra", {C, D});
    cls_inter_ = params_.add("embed.cls_inter", {T_ + 1, D});
    pos_intra_ = params_.add("embed.pos_intra", {C, T_ + 1, D});
    pos_inter_ = params_.add("embed.pos_inter", {C + 1, T_ + 1, D});
    const bool use_temporal = cfg_.branches != BranchMode::spatial_only;
    const bool use_spatial = cfg_.branches != BranchMode::temporal_only;
    if (use_temporal)
      for (std::size_t l = 0; l < cfg_.n_temporal_layers; ++l) temporal_.push_back(add_encoder_layer("temporal." + std::to_string(l)));
    if (use_spatial)
      for (std::size_t l = 0; l < cfg_.n_spatial_layers; ++l) spatial_.push_back(add_encoder_layer("spatial." + std::to_string(l)));
    has_decoder_ = cfg_.branches == BranchMode::both;
    if (has_decoder_) decoder_ = add_attention("decoder");
    head_w_ = params_.add("head.w", {(C + 1) * (T_ + 1) * D, 2});
    head_b_ = params_.add("head.b", {2});
  }

  ModelConfig cfg_;
  std::size_t T_ = 0;
  ParamStore params_;
  std::vector<Tensor> conv_;
  Tensor cls_intra_, cls_inter_, pos_intra_, pos_inter_;
  std::vector<EncoderLayerWeights> temporal_, spatial_;
  bool has_decoder_ = false;
  AttentionWeights decoder_;
  Tensor head_w_, head_b_;
};

/// Stacks segments into a [B x C x L] tensor (no gradient).
inline Tensor make_batch(std::span<const Segment* const> segs) {
  if (segs.empty()) throw ContractError("make_batch: empty batch");
  const std::size_t C = segs[0]->data.channels, L = segs[0]->data.length;
  std::vector<double> d;
  d.reserve(segs.size() * C * L);
  for (const Segment* s : segs) {
    if (s->data.channels != C || s->data.length != L) throw DimensionError("make_batch: segments differ in shape");
    d.insert(d.end(), s->data.samples.begin(), s->data.samples.end());
  }
  return Tensor(std::move(d), {segs.size(), C, L});
}

}  // namespace biax
