#include "natreg/nat_model.hpp"

#include <algorithm>
#include <cmath>

#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

std::size_t predict_length(std::size_t t_x, const LengthRule& rule) {
  if (t_x == 0) throw ContractError("predict_length: source length must be positive");
  const long long len = static_cast<long long>(t_x) + rule.delta_t;
  return static_cast<std::size_t>(std::max(1LL, len));
}

std::vector<std::size_t> length_candidates(std::size_t t_x, const LengthRule& rule) {
  if (t_x == 0) throw ContractError("length_candidates: source length must be positive");
  if (rule.half_window < 0) throw ContractError("length_candidates: negative half window");
  std::vector<std::size_t> out;
  const long long center = static_cast<long long>(t_x) + rule.delta_t;
  for (long long offset = -rule.half_window; offset <= rule.half_window; ++offset) {
    const auto len = static_cast<std::size_t>(std::max(1LL, center + offset));
    if (out.empty() || out.back() != len) out.push_back(len);
  }
  return out;
}

std::vector<std::size_t> uniform_map_indices(std::size_t t_x, std::size_t t_y) {
  if (t_x == 0 || t_y == 0) throw ContractError("uniform mapping needs positive lengths");
  std::vector<std::size_t> index(t_y);
  for (std::size_t t = 1; t <= t_y; ++t) {
    // round(t_x·t / t_y) in exact integer arithmetic; halves round up, which
    // is away from zero for these positive values.
    const std::size_t i = (2 * t_x * t + t_y) / (2 * t_y);
    index[t - 1] = std::clamp<std::size_t>(i, 1, t_x);
  }
  return index;
}

Tensor uniform_map_inputs(std::span<const TokenId> src_ids, std::size_t t_y,
                          const Tensor& embedding_table) {
  const TokenBatch batch = TokenBatch::single(src_ids);
  const std::size_t lengths[] = {t_y};
  return uniform_map_inputs(batch, lengths, embedding_table);
}

Tensor uniform_map_inputs(const TokenBatch& src, std::span<const std::size_t> target_lengths,
                          const Tensor& embedding_table) {
  if (target_lengths.size() != src.layout.count()) {
    throw ContractError("uniform_map_inputs: one target length per source sentence required");
  }
  std::vector<TokenId> mapped;
  for (std::size_t s = 0; s < src.layout.count(); ++s) {
    const std::size_t off = src.layout.offsets[s];
    for (auto i : uniform_map_indices(src.layout.lengths[s], target_lengths[s])) {
      mapped.push_back(src.ids[off + i - 1]);
    }
  }
  return embedding(embedding_table, mapped);
}

NatForwardResult nat_forward(std::span<const TokenId> src_ids, std::size_t t_y,
                             const Transformer& nat, const ForwardContext& ctx) {
  const TokenBatch batch = TokenBatch::single(src_ids);
  const std::size_t lengths[] = {t_y};
  return nat_forward(batch, lengths, nat, ctx);
}

NatForwardResult nat_forward(const TokenBatch& src, std::span<const std::size_t> target_lengths,
                             const Transformer& nat, const ForwardContext& ctx) {
  if (nat.kind() != ModelKind::Nat) throw ContractError("nat_forward needs a NAT model");
  for (auto len : target_lengths) {
    if (len == 0) throw EmptySequenceError("nat_forward: zero target length");
  }
  Tensor enc = nat.encode(src, ctx);
  Tensor inputs = uniform_map_inputs(src, target_lengths, nat.source_embedding());
  PackedLayout layout =
      PackedLayout::from_lengths(std::vector<std::size_t>(target_lengths.begin(), target_lengths.end()));
  auto out = nat.decode_nat(inputs, layout, enc, src.layout, {}, ctx);
  return {out.hidden, out.logits, std::move(layout)};
}

NATREG_NAMESPACE_END
