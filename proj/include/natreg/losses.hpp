#pragma once

#include <span>
#include <vector>

#include "natreg/nat_model.hpp"

NATREG_NAMESPACE_BEGIN

/// Trade-off weights of the joint objective L = L_ce + α·L_sim + β·L_rec.
struct LossWeights {
  real alpha = 2;
  real beta = real(0.5);
};

/// Which auxiliary terms are active. `sim` and `universal` are mutually
/// exclusive ablation arms.
struct LossMode {
  bool sim = false;
  bool rec = false;
  bool universal = false;
  /// Cut the reconstruction gradient path into the shared source-embedding
  /// table (the backward decoder still reads it).
  bool sever_rec_embedding = false;

  static LossMode base() { return {}; }
  static LossMode both() { return {true, true, false, false}; }
};

/// Per-sentence-averaged loss values.
struct LossBreakdown {
  real l_ce = 0;
  real l_sim = 0;
  real l_rec = 0;
  real total = 0;
};

struct JointLoss {
  Tensor total;  // differentiable scalar, equals breakdown.total
  LossBreakdown breakdown;
};

/// Negative log-likelihood of the targets summed over positions.
Tensor nat_cross_entropy(const Tensor& logits, std::span<const TokenId> target_ids);

/// Σ_{t<T} 1 + cos(h_t, h_{t+1})·(1 − cos(y_t, y_{t+1})) for one sentence.
/// Target embeddings are read without gradient.
Tensor similarity_loss(const Tensor& hidden, std::span<const TokenId> target_ids,
                       const Tensor& embedding_table);
/// Packed form: pairs never straddle sentence boundaries.
Tensor similarity_loss(const Tensor& hidden, const PackedLayout& layout,
                       std::span<const TokenId> target_ids, const Tensor& embedding_table);

/// Σ_{t<T} cos(h_t, h_{t+1}), the target-agnostic ablation penalty.
Tensor universal_similarity_penalty(const Tensor& hidden);
Tensor universal_similarity_penalty(const Tensor& hidden, const PackedLayout& layout);

/// −Σ_t log P_backward(x_t | h, x_<t): the backward model encodes the hidden
/// states directly and decodes the source teacher-forced from BOS.
Tensor reconstruction_loss(const Tensor& hidden, std::span<const TokenId> src_ids,
                           const Transformer& backward, const ForwardContext& ctx = {});
Tensor reconstruction_loss(const Tensor& hidden, const PackedLayout& hidden_layout,
                           const TokenBatch& src, const Transformer& backward,
                           const ForwardContext& ctx = {});

/// Joint objective over a batch, averaged over sentences. Training uses the
/// reference target lengths. backward may be null when mode.rec is off.
JointLoss joint_loss(std::span<const std::vector<TokenId>> sources,
                     std::span<const std::vector<TokenId>> targets, const Transformer& nat,
                     const Transformer* backward, const LossWeights& weights, const LossMode& mode,
                     const ForwardContext& ctx = {});

NATREG_NAMESPACE_END
