#pragma once

#include <span>
#include <vector>

#include "natreg/transformer.hpp"

NATREG_NAMESPACE_BEGIN

/// Target length from source length: T_y = T_x + delta_t, with a window of
/// ±half_window candidate lengths around it at inference.
struct LengthRule {
  int delta_t = 0;
  int half_window = 0;
};

/// max(1, t_x + delta_t).
std::size_t predict_length(std::size_t t_x, const LengthRule& rule);

/// Ascending, duplicate-free lengths in [T_x+ΔT−B, T_x+ΔT+B], each clamped
/// to at least 1. Holds 2B+1 entries unless clamping merged some.
std::vector<std::size_t> length_candidates(std::size_t t_x, const LengthRule& rule);

/// 1-based source indices i(t) = round(T_x / t_y · t), t = 1..t_y, rounding
/// half away from zero and clamping to [1, T_x].
std::vector<std::size_t> uniform_map_indices(std::size_t t_x, std::size_t t_y);

/// Decoder inputs: row t is the source embedding of token x_{i(t)}.
Tensor uniform_map_inputs(std::span<const TokenId> src_ids, std::size_t t_y,
                          const Tensor& embedding_table);

/// Batched form over packed sources; returns [Σ t_y × d].
Tensor uniform_map_inputs(const TokenBatch& src, std::span<const std::size_t> target_lengths,
                          const Tensor& embedding_table);

struct NatForwardResult {
  Tensor hidden;  // [Σ t_y × d]
  Tensor logits;  // [Σ t_y × V]
  PackedLayout layout;
};

/// encode → uniform mapping → non-causal decoding for one sentence.
NatForwardResult nat_forward(std::span<const TokenId> src_ids, std::size_t t_y,
                             const Transformer& nat, const ForwardContext& ctx = {});

/// Batched NAT forward: sentence i decoded at target_lengths[i].
NatForwardResult nat_forward(const TokenBatch& src, std::span<const std::size_t> target_lengths,
                             const Transformer& nat, const ForwardContext& ctx = {});

NATREG_NAMESPACE_END
