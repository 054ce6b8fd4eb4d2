#include "natreg/losses.hpp"

#include "natreg/errors.hpp"
#include "natreg/vocabulary.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

struct AdjacentPairs {
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
};

AdjacentPairs adjacent_pairs(const PackedLayout& layout) {
  AdjacentPairs pairs;
  for (std::size_t s = 0; s < layout.count(); ++s) {
    for (std::size_t t = 0; t + 1 < layout.lengths[s]; ++t) {
      pairs.left.push_back(layout.offsets[s] + t);
      pairs.right.push_back(layout.offsets[s] + t + 1);
    }
  }
  return pairs;
}

Tensor hidden_pair_cosines(const Tensor& hidden, const AdjacentPairs& pairs) {
  return cosine_sim_rows(gather_rows(hidden, pairs.left), gather_rows(hidden, pairs.right));
}

}  // namespace

Tensor nat_cross_entropy(const Tensor& logits, std::span<const TokenId> target_ids) {
  return cross_entropy(logits, target_ids);
}

Tensor similarity_loss(const Tensor& hidden, std::span<const TokenId> target_ids,
                       const Tensor& embedding_table) {
  return similarity_loss(hidden, PackedLayout::from_lengths({hidden.rows()}), target_ids,
                         embedding_table);
}

Tensor similarity_loss(const Tensor& hidden, const PackedLayout& layout,
                       std::span<const TokenId> target_ids, const Tensor& embedding_table) {
  if (target_ids.size() != layout.total || hidden.rows() != layout.total) {
    throw ContractError("similarity_loss: " + std::to_string(target_ids.size()) + " targets for " +
                        std::to_string(hidden.rows()) + " hidden states");
  }
  const AdjacentPairs pairs = adjacent_pairs(layout);
  if (pairs.left.empty()) return Tensor::scalar(0);

  std::vector<TokenId> y_left, y_right;
  for (std::size_t i = 0; i < pairs.left.size(); ++i) {
    y_left.push_back(target_ids[pairs.left[i]]);
    y_right.push_back(target_ids[pairs.right[i]]);
  }
  // Target-side similarities are constants: no gradient reaches the table.
  Tensor y_cos = cosine_sim_rows(embedding(embedding_table, y_left, 1, /*stop_grad=*/true),
                                 embedding(embedding_table, y_right, 1, /*stop_grad=*/true),
                                 /*stop_grad_v=*/true);
  std::vector<real> dissimilarity(pairs.left.size());
  for (std::size_t i = 0; i < dissimilarity.size(); ++i) dissimilarity[i] = 1 - y_cos.data()[i];

  Tensor h_cos = hidden_pair_cosines(hidden, pairs);
  return add_scalar(weighted_sum(h_cos, dissimilarity), static_cast<real>(pairs.left.size()));
}

Tensor universal_similarity_penalty(const Tensor& hidden) {
  return universal_similarity_penalty(hidden, PackedLayout::from_lengths({hidden.rows()}));
}

Tensor universal_similarity_penalty(const Tensor& hidden, const PackedLayout& layout) {
  const AdjacentPairs pairs = adjacent_pairs(layout);
  if (pairs.left.empty()) return Tensor::scalar(0);
  return sum(hidden_pair_cosines(hidden, pairs));
}

Tensor reconstruction_loss(const Tensor& hidden, std::span<const TokenId> src_ids,
                           const Transformer& backward, const ForwardContext& ctx) {
  return reconstruction_loss(hidden, PackedLayout::from_lengths({hidden.rows()}),
                             TokenBatch::single(src_ids), backward, ctx);
}

Tensor reconstruction_loss(const Tensor& hidden, const PackedLayout& hidden_layout,
                           const TokenBatch& src, const Transformer& backward,
                           const ForwardContext& ctx) {
  if (backward.kind() != ModelKind::Backward) {
    throw ConfigError("reconstruction_loss needs a backward model");
  }
  if (hidden.cols() != backward.config().d_model) {
    throw ConfigError("hidden width " + std::to_string(hidden.cols()) +
                      " does not match the backward model width " +
                      std::to_string(backward.config().d_model));
  }
  if (hidden_layout.count() != src.layout.count()) {
    throw ContractError("reconstruction_loss: sentence counts differ");
  }
  Tensor enc = backward.encode_vectors(hidden, hidden_layout, ctx);
  std::vector<std::vector<TokenId>> inputs;
  std::vector<TokenId> targets;
  for (std::size_t s = 0; s < src.layout.count(); ++s) {
    const auto off = src.layout.offsets[s];
    const auto len = src.layout.lengths[s];
    std::vector<TokenId> in{kBosId};
    for (std::size_t t = 0; t + 1 < len; ++t) in.push_back(src.ids[off + t]);
    for (std::size_t t = 0; t < len; ++t) targets.push_back(src.ids[off + t]);
    inputs.push_back(std::move(in));
  }
  const TokenBatch prefix = TokenBatch::from(inputs);
  Tensor logits = backward.decode_at(prefix, enc, hidden_layout, {}, ctx);
  return cross_entropy(logits, targets);
}

JointLoss joint_loss(std::span<const std::vector<TokenId>> sources,
                     std::span<const std::vector<TokenId>> targets, const Transformer& nat,
                     const Transformer* backward, const LossWeights& weights, const LossMode& mode,
                     const ForwardContext& ctx) {
  if (mode.sim && mode.universal) {
    throw ConfigError("similarity regularization and the universal penalty are exclusive");
  }
  if (mode.rec && backward == nullptr) throw ConfigError("reconstruction needs a backward model");
  if (sources.size() != targets.size() || sources.empty()) {
    throw ContractError("joint_loss: need equally many non-zero sources and targets");
  }
  const TokenBatch src = TokenBatch::from(sources);
  const TokenBatch tgt = TokenBatch::from(targets);
  auto fwd = nat_forward(src, tgt.layout.lengths, nat, ctx);
  const real inv_batch = real(1) / static_cast<real>(sources.size());

  JointLoss out;
  std::vector<Tensor> terms;
  Tensor ce = scale(cross_entropy(fwd.logits, tgt.ids), inv_batch);
  out.breakdown.l_ce = ce.item();
  terms.push_back(ce);
  if (mode.sim || mode.universal) {
    Tensor sim = mode.sim ? similarity_loss(fwd.hidden, fwd.layout, tgt.ids, nat.target_embedding())
                          : universal_similarity_penalty(fwd.hidden, fwd.layout);
    sim = scale(sim, inv_batch);
    out.breakdown.l_sim = sim.item();
    terms.push_back(scale(sim, weights.alpha));
  }
  if (mode.rec) {
    ForwardContext rec_ctx = ctx;
    rec_ctx.freeze_target_embedding = mode.sever_rec_embedding;
    Tensor rec = scale(reconstruction_loss(fwd.hidden, fwd.layout, src, *backward, rec_ctx), inv_batch);
    out.breakdown.l_rec = rec.item();
    terms.push_back(scale(rec, weights.beta));
  }
  out.total = add_scalars(terms);
  out.breakdown.total = out.total.item();
  return out;
}

NATREG_NAMESPACE_END
