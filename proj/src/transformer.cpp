#include "natreg/transformer.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  if (n_enc_layers == 0 || n_dec_layers == 0) throw ConfigError("layer counts must be positive");
  if (!(dropout >= real(0) && dropout < real(1))) throw ConfigError("dropout must be in [0,1)");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (tgt_vocab_size == 0) throw ConfigError("tgt_vocab_size must be positive");
  if (share_src_tgt_vocab && src_vocab_size != tgt_vocab_size) {
    throw ConfigError("share_src_tgt_vocab requires equal vocabulary sizes");
  }
}

PackedLayout PackedLayout::from_lengths(std::vector<std::size_t> lengths) {
  PackedLayout layout;
  layout.offsets.reserve(lengths.size());
  for (auto len : lengths) {
    layout.offsets.push_back(layout.total);
    layout.total += len;
  }
  layout.lengths = std::move(lengths);
  return layout;
}

TokenBatch TokenBatch::from(std::span<const std::vector<TokenId>> sequences) {
  TokenBatch batch;
  std::vector<std::size_t> lengths;
  for (const auto& s : sequences) {
    lengths.push_back(s.size());
    batch.ids.insert(batch.ids.end(), s.begin(), s.end());
  }
  batch.layout = PackedLayout::from_lengths(std::move(lengths));
  return batch;
}

TokenBatch TokenBatch::single(std::span<const TokenId> sequence) {
  TokenBatch batch;
  batch.ids.assign(sequence.begin(), sequence.end());
  batch.layout = PackedLayout::from_lengths({sequence.size()});
  return batch;
}

std::vector<AttentionSegment> self_segments(const PackedLayout& layout) {
  std::vector<AttentionSegment> segs;
  segs.reserve(layout.count());
  for (std::size_t i = 0; i < layout.count(); ++i) {
    const auto off = layout.offsets[i], len = layout.lengths[i];
    segs.push_back({off, len, off, len, len});
  }
  return segs;
}

std::vector<AttentionSegment> cross_segments(const PackedLayout& dec, const PackedLayout& enc,
                                             std::span<const std::size_t> enc_index) {
  if (!enc_index.empty() && enc_index.size() != dec.count()) {
    throw ContractError("cross_segments: encoder index count differs from decoder sequences");
  }
  if (enc_index.empty() && enc.count() != dec.count()) {
    throw ContractError("cross_segments: " + std::to_string(dec.count()) + " decoder sequences for " +
                        std::to_string(enc.count()) + " encoder sequences");
  }
  std::vector<AttentionSegment> segs;
  segs.reserve(dec.count());
  for (std::size_t i = 0; i < dec.count(); ++i) {
    const std::size_t e = enc_index.empty() ? i : enc_index[i];
    if (e >= enc.count()) throw ContractError("cross_segments: encoder index out of range");
    segs.push_back({dec.offsets[i], dec.lengths[i], enc.offsets[e], enc.lengths[e], enc.lengths[e]});
  }
  return segs;
}

namespace {

Tensor maybe_dropout(const Tensor& x, real rate, const ForwardContext& ctx) {
  if (!ctx.training || rate <= real(0)) return x;
  if (ctx.rng == nullptr) throw ContractError("training forward pass needs an rng for dropout");
  return dropout(x, rate, *ctx.rng);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p, const ForwardContext& ctx,
                    real rate) {
  Tensor hidden = relu(linear(x, p.in.weight, p.in.bias));
  hidden = maybe_dropout(hidden, rate, ctx);
  return linear(hidden, p.out.weight, p.out.bias);
}

Tensor residual_norm(const Tensor& x, const Tensor& sub, const LayerNormParams& ln,
                     const ForwardContext& ctx, real rate) {
  return layer_norm(add(x, maybe_dropout(sub, rate, ctx)), ln.gain, ln.bias);
}

}  // namespace

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            std::span<const AttentionSegment> segments, AttentionMaskKind mask,
                            const AttentionParams& params, std::size_t n_heads,
                            const ForwardContext& ctx) {
  Tensor q = linear(query, params.q.weight, params.q.bias);
  Tensor k = linear(key, params.k.weight, params.k.bias);
  Tensor v = linear(value, params.v.weight, params.v.bias);
  std::vector<real> probs;
  Tensor a = attention(q, k, v, segments, n_heads, mask,
                       ctx.attention_trace != nullptr ? &probs : nullptr);
  if (ctx.attention_trace != nullptr) ctx.attention_trace->push_back(std::move(probs));
  return linear(a, params.o.weight, params.o.bias);
}

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            AttentionMaskKind mask, const AttentionParams& params,
                            std::size_t n_heads, std::size_t key_valid, const ForwardContext& ctx) {
  const std::size_t tk = key.rows();
  if (tk == 0 || key.numel() == 0) throw EmptySequenceError("multi_head_attention: empty key sequence");
  if (mask == AttentionMaskKind::Causal && query.rows() != tk) {
    throw ContractError("causal attention needs equal query and key lengths");
  }
  const std::size_t valid = key_valid == 0 ? tk : key_valid;
  if (mask != AttentionMaskKind::PaddingOnly && valid != tk) {
    throw ContractError("key_valid is only meaningful with a PaddingOnly mask");
  }
  const AttentionSegment seg{0, query.rows(), 0, tk, valid};
  return multi_head_attention(query, key, value, std::span(&seg, 1), mask, params, n_heads, ctx);
}

Tensor sinusoidal_table(std::size_t max_len, std::size_t d_model) {
  std::vector<real> table(max_len * d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      table[pos * d_model + i] = static_cast<real>(std::sin(static_cast<double>(pos) * freq));
      if (i + 1 < d_model) {
        table[pos * d_model + i + 1] = static_cast<real>(std::cos(static_cast<double>(pos) * freq));
      }
    }
  }
  return Tensor::from({max_len, d_model}, std::move(table));
}

// Either creates fresh parameters or binds them from an archive, so that one
// traversal defines names, shapes, and initialization order.
class Transformer::Builder {
 public:
  Builder(Rng* rng, const ModelParams* source) : rng_(rng), source_(source) {}

  Tensor weight(const std::string& name, Shape shape, std::size_t fan_in) {
    if (source_) return bind(name, shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<real> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<real>(dist(*rng_));
    return put(name, Tensor::from(std::move(shape), std::move(data), true));
  }

  Tensor filled(const std::string& name, Shape shape, real value) {
    if (source_) return bind(name, shape);
    std::vector<real> data(shape_numel(shape), value);
    return put(name, Tensor::from(std::move(shape), std::move(data), true));
  }

  Tensor adopt(const std::string& name, const Tensor& existing, const Shape& shape) {
    if (existing.shape() != shape) {
      throw DimensionError("shared tensor '" + name + "' has shape " + shape_string(existing.shape()) +
                           ", expected " + shape_string(shape));
    }
    existing.impl()->requires_grad = true;
    return put(name, existing);
  }

  LinearParams linear(const std::string& name, std::size_t in, std::size_t out) {
    LinearParams p;
    p.weight = weight(name + ".weight", {in, out}, in);
    p.bias = filled(name + ".bias", {out}, 0);
    return p;
  }

  LayerNormParams norm(const std::string& name, std::size_t d) {
    return {filled(name + ".gain", {d}, 1), filled(name + ".bias", {d}, 0)};
  }

  AttentionParams attention(const std::string& name, std::size_t d) {
    return {linear(name + ".q", d, d), linear(name + ".k", d, d), linear(name + ".v", d, d),
            linear(name + ".o", d, d)};
  }

  FeedForwardParams ffn(const std::string& name, std::size_t d, std::size_t d_ff) {
    return {linear(name + ".in", d, d_ff), linear(name + ".out", d_ff, d)};
  }

  ModelParams finish() {
    if (source_ && source_->size() != params_.size()) {
      for (const auto& e : source_->entries()) {
        if (!params_.contains(e.name)) throw FormatError("unexpected tensor '" + e.name + "'");
      }
    }
    return std::move(params_);
  }

 private:
  Tensor bind(const std::string& name, const Shape& shape) {
    Tensor t = source_->get(name);
    if (t.shape() != shape) {
      throw DimensionError("tensor '" + name + "' has shape " + shape_string(t.shape()) +
                           ", expected " + shape_string(shape));
    }
    t.set_requires_grad(true);
    return put(name, t);
  }

  Tensor put(const std::string& name, Tensor t) {
    params_.add(name, t);
    return t;
  }

  Rng* rng_;
  const ModelParams* source_;
  ModelParams params_;
};

Transformer Transformer::assemble(ModelKind kind, const ModelConfig& config, Builder& b,
                                  const Tensor* shared_source_embedding) {
  config.validate();
  if (kind != ModelKind::Backward && config.src_vocab_size == 0) {
    throw ConfigError("src_vocab_size must be positive");
  }
  Transformer t;
  t.kind_ = kind;
  t.config_ = config;
  const std::size_t d = config.d_model;
  t.positions_ = config.learned_positions ? b.weight("pos_embed", {config.max_len, d}, d)
                                          : sinusoidal_table(config.max_len, d);
  if (kind != ModelKind::Backward) {
    t.src_embed_ = b.weight("src_embed", {config.src_vocab_size, d}, d);
  }
  if (kind == ModelKind::Teacher) {
    t.tgt_embed_ = b.weight("tgt_embed", {config.tgt_vocab_size, d}, d);
  } else if (kind == ModelKind::Backward) {
    t.tgt_embed_ = shared_source_embedding != nullptr
                       ? b.adopt("tgt_embed", *shared_source_embedding, {config.tgt_vocab_size, d})
                       : b.weight("tgt_embed", {config.tgt_vocab_size, d}, d);
  }
  for (std::size_t i = 0; i < config.n_enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    t.encoder_.push_back({b.attention(p + ".self_attn", d), b.norm(p + ".ln_self", d),
                          b.ffn(p + ".ffn", d, config.d_ff), b.norm(p + ".ln_ffn", d)});
  }
  for (std::size_t i = 0; i < config.n_dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    DecoderLayer layer;
    layer.self_attn = b.attention(p + ".self_attn", d);
    layer.ln_self = b.norm(p + ".ln_self", d);
    if (kind == ModelKind::Nat) {
      layer.pos_attn = b.attention(p + ".pos_attn", d);
      layer.ln_pos = b.norm(p + ".ln_pos", d);
    }
    layer.cross_attn = b.attention(p + ".cross_attn", d);
    layer.ln_cross = b.norm(p + ".ln_cross", d);
    layer.ffn = b.ffn(p + ".ffn", d, config.d_ff);
    layer.ln_ffn = b.norm(p + ".ln_ffn", d);
    t.decoder_.push_back(std::move(layer));
  }
  if (kind == ModelKind::Nat) {
    // The NAT output layer scores hidden states against its target-embedding table.
    t.tgt_embed_ = b.weight("tgt_embed", {config.tgt_vocab_size, d}, d);
    t.out_.bias = b.filled("out.bias", {config.tgt_vocab_size}, 0);
  } else {
    t.out_ = b.linear("out", d, config.tgt_vocab_size);
  }
  t.params_ = b.finish();
  return t;
}

Transformer Transformer::create(ModelKind kind, const ModelConfig& config, Rng& rng) {
  Builder b(&rng, nullptr);
  return assemble(kind, config, b, nullptr);
}

Transformer Transformer::create_backward(const ModelConfig& config,
                                         const Tensor& shared_source_embedding, Rng& rng) {
  Builder b(&rng, nullptr);
  return assemble(ModelKind::Backward, config, b, &shared_source_embedding);
}

Transformer Transformer::from_params(ModelKind kind, const ModelConfig& config, ModelParams params) {
  Builder b(nullptr, &params);
  return assemble(kind, config, b, nullptr);
}

const Tensor& Transformer::source_embedding() const {
  if (!src_embed_.defined()) throw ContractError("this model has no source-embedding table");
  return src_embed_;
}

const Tensor& Transformer::target_embedding() const { return tgt_embed_; }

void Transformer::check_length(std::size_t length) const {
  if (length == 0) throw EmptySequenceError("empty sequence");
  if (length > config_.max_len) {
    throw LengthError("sequence length " + std::to_string(length) + " exceeds max_len " +
                      std::to_string(config_.max_len));
  }
}

Tensor Transformer::positional_rows(const PackedLayout& layout) const {
  std::vector<std::size_t> index;
  index.reserve(layout.total);
  for (auto len : layout.lengths) {
    check_length(len);
    for (std::size_t p = 0; p < len; ++p) index.push_back(p);
  }
  return gather_rows(positions_, index);
}

Tensor Transformer::run_encoder(Tensor x, const PackedLayout& layout, const ForwardContext& ctx) const {
  const auto segs = self_segments(layout);
  const real rate = config_.dropout;
  x = maybe_dropout(x, rate, ctx);
  for (const auto& layer : encoder_) {
    Tensor a = multi_head_attention(x, x, x, segs, AttentionMaskKind::None, layer.self_attn,
                                    config_.n_heads, ctx);
    x = residual_norm(x, a, layer.ln_self, ctx, rate);
    x = residual_norm(x, feed_forward(x, layer.ffn, ctx, rate), layer.ln_ffn, ctx, rate);
  }
  return x;
}

Tensor Transformer::encode(const TokenBatch& src, const ForwardContext& ctx) const {
  if (kind_ == ModelKind::Backward) throw ContractError("backward model encodes vectors, not tokens");
  if (src.layout.count() == 0) throw EmptySequenceError("encode: empty batch");
  Tensor pos = positional_rows(src.layout);
  const real factor = std::sqrt(static_cast<real>(config_.d_model));
  Tensor x = add(embedding(src_embed_, src.ids, factor), pos);
  return run_encoder(std::move(x), src.layout, ctx);
}

Tensor Transformer::encode_vectors(const Tensor& inputs, const PackedLayout& layout,
                                   const ForwardContext& ctx) const {
  if (inputs.rank() != 2 || inputs.dim(1) != config_.d_model) {
    throw ConfigError("encoder input width " + shape_string(inputs.shape()) + " does not match d_model " +
                      std::to_string(config_.d_model));
  }
  if (inputs.dim(0) != layout.total) throw DimensionError("encode_vectors: layout does not cover inputs");
  Tensor x = add(inputs, positional_rows(layout));
  return run_encoder(std::move(x), layout, ctx);
}

Tensor Transformer::decode_at(const TokenBatch& prefix, const Tensor& enc_out,
                              const PackedLayout& enc_layout, std::span<const std::size_t> enc_index,
                              const ForwardContext& ctx) const {
  if (kind_ == ModelKind::Nat) throw ContractError("decode_at needs an autoregressive model");
  const real rate = config_.dropout;
  Tensor pos = positional_rows(prefix.layout);
  const real factor = std::sqrt(static_cast<real>(config_.d_model));
  Tensor x = maybe_dropout(add(embedding(tgt_embed_, prefix.ids, factor, ctx.freeze_target_embedding), pos), rate, ctx);
  const auto self = self_segments(prefix.layout);
  const auto cross = cross_segments(prefix.layout, enc_layout, enc_index);
  for (const auto& layer : decoder_) {
    x = residual_norm(x,
                      multi_head_attention(x, x, x, self, AttentionMaskKind::Causal, layer.self_attn,
                                           config_.n_heads, ctx),
                      layer.ln_self, ctx, rate);
    x = residual_norm(x,
                      multi_head_attention(x, enc_out, enc_out, cross, AttentionMaskKind::None,
                                           layer.cross_attn, config_.n_heads, ctx),
                      layer.ln_cross, ctx, rate);
    x = residual_norm(x, feed_forward(x, layer.ffn, ctx, rate), layer.ln_ffn, ctx, rate);
  }
  return linear(x, out_.weight, out_.bias);
}

Tensor Transformer::positional_attention_layer(const Tensor& h_prev, const PackedLayout& layout,
                                               std::size_t layer, const ForwardContext& ctx) const {
  if (kind_ != ModelKind::Nat) throw ContractError("positional attention exists only in NAT decoders");
  const auto& l = decoder_.at(layer);
  Tensor pos = positional_rows(layout);
  Tensor a = multi_head_attention(pos, pos, h_prev, self_segments(layout), AttentionMaskKind::None,
                                  *l.pos_attn, config_.n_heads, ctx);
  return residual_norm(h_prev, a, *l.ln_pos, ctx, config_.dropout);
}

NatDecoderOutput Transformer::decode_nat(const Tensor& dec_inputs, const PackedLayout& dec_layout,
                                         const Tensor& enc_out, const PackedLayout& enc_layout,
                                         std::span<const std::size_t> enc_index,
                                         const ForwardContext& ctx) const {
  if (kind_ != ModelKind::Nat) throw ContractError("decode_nat needs a NAT model");
  if (dec_inputs.rank() != 2 || dec_inputs.dim(0) != dec_layout.total ||
      dec_inputs.dim(1) != config_.d_model) {
    throw DimensionError("decode_nat: inputs " + shape_string(dec_inputs.shape()) +
                         " do not match the decoder layout");
  }
  const real rate = config_.dropout;
  const real factor = std::sqrt(static_cast<real>(config_.d_model));
  Tensor pos = positional_rows(dec_layout);
  Tensor x = maybe_dropout(add(scale(dec_inputs, factor), pos), rate, ctx);
  const auto self = self_segments(dec_layout);
  const auto cross = cross_segments(dec_layout, enc_layout, enc_index);
  for (const auto& layer : decoder_) {
    x = residual_norm(x,
                      multi_head_attention(x, x, x, self, AttentionMaskKind::None, layer.self_attn,
                                           config_.n_heads, ctx),
                      layer.ln_self, ctx, rate);
    x = residual_norm(x,
                      multi_head_attention(pos, pos, x, self, AttentionMaskKind::None, *layer.pos_attn,
                                           config_.n_heads, ctx),
                      *layer.ln_pos, ctx, rate);
    x = residual_norm(x,
                      multi_head_attention(x, enc_out, enc_out, cross, AttentionMaskKind::None,
                                           layer.cross_attn, config_.n_heads, ctx),
                      layer.ln_cross, ctx, rate);
    x = residual_norm(x, feed_forward(x, layer.ffn, ctx, rate), layer.ln_ffn, ctx, rate);
  }
  Tensor logits = add_bias(matmul(x, tgt_embed_, /*transpose_b=*/true), out_.bias);
  return {x, logits};
}

NATREG_NAMESPACE_END
