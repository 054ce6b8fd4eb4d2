#pragma once

#include <optional>
#include <span>
#include <vector>

#include "natreg/model_params.hpp"
#include "natreg/ops.hpp"
#include "natreg/rng.hpp"

NATREG_NAMESPACE_BEGIN

using AttentionMaskKind = AttentionMask;

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ff = 64;
  real dropout = real(0.1);
  std::size_t max_len = 64;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  bool share_src_tgt_vocab = false;
  bool learned_positions = false;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

/// Which of the three assemblies a Transformer instance is.
///  - Teacher: autoregressive translator with a causal decoder.
///  - Nat: non-causal decoder with positional attention; outputs are scored
///    against the target-embedding table.
///  - Backward: autoregressive reconstructor whose encoder reads NAT hidden
///    states directly and whose decoder embeds source tokens.
enum class ModelKind { Teacher, Nat, Backward };

/// Row layout of several variable-length sequences packed back to back.
struct PackedLayout {
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;

  static PackedLayout from_lengths(std::vector<std::size_t> lengths);
  std::size_t count() const noexcept { return lengths.size(); }
};

struct TokenBatch {
  std::vector<TokenId> ids;
  PackedLayout layout;

  static TokenBatch from(std::span<const std::vector<TokenId>> sequences);
  static TokenBatch single(std::span<const TokenId> sequence);
};

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  /// Receives every attention probability block computed during the pass,
  /// in call order (see attention()).
  std::vector<std::vector<real>>* attention_trace = nullptr;
  /// Autoregressive decoders look up their input embeddings without gradient.
  bool freeze_target_embedding = false;
};

struct LinearParams {
  Tensor weight;  // [in×out]
  Tensor bias;    // [out]
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  LinearParams q, k, v, o;
};

struct FeedForwardParams {
  LinearParams in, out;
};

struct EncoderLayer {
  AttentionParams self_attn;
  LayerNormParams ln_self;
  FeedForwardParams ffn;
  LayerNormParams ln_ffn;
};

struct DecoderLayer {
  AttentionParams self_attn;
  LayerNormParams ln_self;
  std::optional<AttentionParams> pos_attn;  // NAT only
  std::optional<LayerNormParams> ln_pos;
  AttentionParams cross_attn;
  LayerNormParams ln_cross;
  FeedForwardParams ffn;
  LayerNormParams ln_ffn;
};

/// Output of the NAT decoder: topmost hidden states and vocabulary logits.
struct NatDecoderOutput {
  Tensor hidden;  // [T×d]
  Tensor logits;  // [T×V]
};

/// Multi-head attention block: projections, scaled dot-product attention over
/// packed segments, output projection.
Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            std::span<const AttentionSegment> segments, AttentionMaskKind mask,
                            const AttentionParams& params, std::size_t n_heads,
                            const ForwardContext& ctx = {});

/// Single-sequence convenience form. For PaddingOnly, keys at or beyond
/// key_valid are ignored (0 means all keys are valid).
Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            AttentionMaskKind mask, const AttentionParams& params,
                            std::size_t n_heads, std::size_t key_valid = 0,
                            const ForwardContext& ctx = {});

/// Fixed sinusoidal table [max_len×d].
Tensor sinusoidal_table(std::size_t max_len, std::size_t d_model);

class Transformer {
 public:
  /// Fresh parameters, uniform(−1/√fan_in, 1/√fan_in) weights, zero biases.
  static Transformer create(ModelKind kind, const ModelConfig& config, Rng& rng);
  /// Backward reconstructor whose decoder embedding is `shared_source_embedding`
  /// (the same storage, not a copy).
  static Transformer create_backward(const ModelConfig& config, const Tensor& shared_source_embedding,
                                     Rng& rng);
  /// Binds an archive (e.g. a loaded checkpoint); names and shapes must match.
  static Transformer from_params(ModelKind kind, const ModelConfig& config, ModelParams params);

  ModelKind kind() const noexcept { return kind_; }
  const ModelConfig& config() const noexcept { return config_; }
  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }

  const Tensor& source_embedding() const;
  const Tensor& target_embedding() const;

  /// Positional rows for every packed position (position restarts per sequence).
  Tensor positional_rows(const PackedLayout& layout) const;

  /// Token encoder (Teacher, Nat). Output [Σ T_x × d].
  Tensor encode(const TokenBatch& src, const ForwardContext& ctx = {}) const;
  /// Encoder over precomputed input vectors; positional encodings are added
  /// but no embedding lookup or scaling happens (Backward reads NAT states).
  Tensor encode_vectors(const Tensor& inputs, const PackedLayout& layout,
                        const ForwardContext& ctx = {}) const;

  /// Causal decoder (Teacher, Backward). Decoder sequence i attends encoder
  /// sequence enc_index[i] (identity when empty). Returns logits [Σ T × V].
  Tensor decode_at(const TokenBatch& prefix, const Tensor& enc_out, const PackedLayout& enc_layout,
                   std::span<const std::size_t> enc_index = {},
                   const ForwardContext& ctx = {}) const;

  /// Non-causal NAT decoder over mapped inputs [Σ T_y × d].
  NatDecoderOutput decode_nat(const Tensor& dec_inputs, const PackedLayout& dec_layout,
                              const Tensor& enc_out, const PackedLayout& enc_layout,
                              std::span<const std::size_t> enc_index = {},
                              const ForwardContext& ctx = {}) const;

  /// One positional-attention sub-layer of decoder layer `layer`:
  /// LN(h + PosAttn(Q=K=positions, V=h)).
  Tensor positional_attention_layer(const Tensor& h_prev, const PackedLayout& layout,
                                    std::size_t layer, const ForwardContext& ctx = {}) const;

  const std::vector<EncoderLayer>& encoder_layers() const noexcept { return encoder_; }
  const std::vector<DecoderLayer>& decoder_layers() const noexcept { return decoder_; }

 private:
  class Builder;
  Transformer() = default;
  static Transformer assemble(ModelKind kind, const ModelConfig& config, Builder& b,
                              const Tensor* shared_source_embedding);
  void check_length(std::size_t length) const;
  Tensor run_encoder(Tensor x, const PackedLayout& layout, const ForwardContext& ctx) const;

  ModelKind kind_ = ModelKind::Teacher;
  ModelConfig config_;
  ModelParams params_;
  Tensor positions_;  // sinusoidal constant or learned parameter
  Tensor src_embed_;
  Tensor tgt_embed_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  LinearParams out_;  // Teacher/Backward projection; Nat uses tgt_embed_ + out_.bias
};

/// Self-attention segments for one packed layout.
std::vector<AttentionSegment> self_segments(const PackedLayout& layout);
/// Cross segments from decoder sequences to encoder sequences.
std::vector<AttentionSegment> cross_segments(const PackedLayout& dec, const PackedLayout& enc,
                                             std::span<const std::size_t> enc_index);

NATREG_NAMESPACE_END
