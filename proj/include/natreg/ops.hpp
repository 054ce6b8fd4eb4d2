#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "natreg/rng.hpp"
#include "natreg/tensor.hpp"

NATREG_NAMESPACE_BEGIN

using TokenId = std::int32_t;

// Differentiable primitives. Every op records a backward rule on the active
// tape when one of its inputs requires a gradient. Matrices are rank-2
// tensors; vectors are rank-1.

/// a[m×k] · b[k×n]; with transpose_b, b is [n×k] and b^T is used.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// x[N×in] · weight[in×out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
/// x[N×d] + bias[d] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real factor);
Tensor add_scalar(const Tensor& x, real value);
Tensor relu(const Tensor& x);

/// While alive, appends the sign (input > 0) of every relu element evaluated
/// on this thread to `out`. Finite-difference checks use the pattern to
/// notice probes that land on different sides of a kink.
class ReluPatternScope {
 public:
  explicit ReluPatternScope(std::vector<bool>& out);
  ~ReluPatternScope();
  ReluPatternScope(const ReluPatternScope&) = delete;
  ReluPatternScope& operator=(const ReluPatternScope&) = delete;

 private:
  std::vector<bool>* previous_;
};

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

/// Normalizes each row over the last axis (eps 1e-5) then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps = real(1e-5));

/// Inverted dropout. Identity when rate == 0.
Tensor dropout(const Tensor& x, real rate, Rng& rng);

/// Rows table[ids[i]] * factor. With stop_grad the table receives no gradient.
Tensor embedding(const Tensor& table, std::span<const TokenId> ids, real factor = 1,
                 bool stop_grad = false);

/// Rows x[index[i]]; gradients scatter-add back.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);

/// Same values, cut from the tape.
Tensor detach(const Tensor& x);

Tensor sum(const Tensor& x);
/// Σ weights[i]·x[i] over a rank-1 (or flattened) tensor.
Tensor weighted_sum(const Tensor& x, std::span<const real> weights);
/// Sum of scalar tensors.
Tensor add_scalars(std::span<const Tensor> terms);

inline constexpr real kCosineEps = real(1e-8);

/// u·v / (max(|u|,eps)·max(|v|,eps)) as a scalar tensor.
Tensor cosine_sim(const Tensor& u, const Tensor& v, bool stop_grad_v = false);
/// Row-wise cosine similarity of two [n×d] matrices, result shape [n].
Tensor cosine_sim_rows(const Tensor& u, const Tensor& v, bool stop_grad_v = false);

/// Summed negative log-likelihood of targets under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets);

enum class AttentionMask { Causal, None, PaddingOnly };

/// One query block attending to one key block inside packed row storage.
/// Keys at positions >= k_valid are padding and never attended to.
struct AttentionSegment {
  std::size_t q_offset = 0;
  std::size_t q_len = 0;
  std::size_t k_offset = 0;
  std::size_t k_len = 0;
  std::size_t k_valid = 0;
};

/// Multi-head scaled dot-product attention over packed segments. q, k, v are
/// already projected ([Nq×d], [Nk×d], [Nk×d]); d must divide by n_heads.
/// Causal masks forbid query i from attending key j > i within a segment.
/// When probs_out is given it receives, per segment and head, the q_len×k_len
/// attention matrices in order.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const AttentionSegment> segments, std::size_t n_heads,
                 AttentionMask mask, std::vector<real>* probs_out = nullptr);

NATREG_NAMESPACE_END
