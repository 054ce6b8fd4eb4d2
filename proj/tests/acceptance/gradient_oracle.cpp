#include "acceptance/gradient_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "natreg/grad_check.hpp"
#include "natreg/losses.hpp"
#include "natreg/vocabulary.hpp"

static_assert(sizeof(natreg::real) == sizeof(double), "the oracle needs the f64 build");

namespace natreg_acceptance {

namespace {

using namespace natreg;

constexpr double kStep = 1e-3;

std::vector<TokenId> draw_ids(std::size_t n, std::size_t vocab, Rng& rng) {
  std::uniform_int_distribution<TokenId> dist(static_cast<TokenId>(kReservedTokens),
                                              static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = dist(rng);
  return ids;
}

GradientCheck to_check(std::string name, const GradCheckReport& r) {
  return {std::move(name), r.max_rel_error, r.elements, r.kink_elements};
}

}  // namespace

GradientOracleResult run_gradient_oracle() {
  const auto start = std::chrono::steady_clock::now();
  constexpr std::size_t kVocab = 12;
  ModelConfig config;
  config.d_model = 8;
  config.n_heads = 2;
  config.n_enc_layers = 1;
  config.n_dec_layers = 1;
  config.d_ff = 16;
  config.dropout = 0;
  config.max_len = 24;
  config.src_vocab_size = kVocab;
  config.tgt_vocab_size = kVocab;

  Rng rng(11);
  Transformer nat = Transformer::create(ModelKind::Nat, config, rng);
  Transformer backward = Transformer::create_backward(config, nat.source_embedding(), rng);
  const std::vector<std::vector<TokenId>> src{draw_ids(4, kVocab, rng), draw_ids(3, kVocab, rng)};
  const std::vector<std::vector<TokenId>> tgt{draw_ids(5, kVocab, rng), draw_ids(3, kVocab, rng)};
  const std::vector<std::size_t> lengths{5, 3};
  std::vector<TokenId> flat_tgt;
  for (const auto& s : tgt) flat_tgt.insert(flat_tgt.end(), s.begin(), s.end());

  auto all_params = nat.params().merged(backward.params(), "nat.", "bwd.").unique_tensors();
  const Tensor target_table = nat.target_embedding();
  std::vector<Tensor> without_target_table;
  for (const auto& t : all_params) {
    if (!t.same_storage(target_table)) without_target_table.push_back(t);
  }
  std::vector<Tensor> nat_params = nat.params().unique_tensors();

  GradientOracleResult out;
  out.checks.push_back(to_check("l_ce", grad_check_many(
                                            [&] {
                                              auto fwd = nat_forward(TokenBatch::from(src), lengths, nat);
                                              return nat_cross_entropy(fwd.logits, flat_tgt);
                                            },
                                            nat_params, kStep)));

  std::vector<Tensor> sim_inputs;
  for (const auto& t : nat_params) {
    if (!t.same_storage(target_table)) sim_inputs.push_back(t);
  }
  out.checks.push_back(to_check("l_sim", grad_check_many(
                                             [&] {
                                               auto fwd = nat_forward(TokenBatch::from(src), lengths, nat);
                                               return similarity_loss(fwd.hidden, fwd.layout, flat_tgt, target_table);
                                             },
                                             sim_inputs, kStep)));

  out.checks.push_back(to_check("l_rec", grad_check_many(
                                             [&] {
                                               auto fwd = nat_forward(TokenBatch::from(src), lengths, nat);
                                               return reconstruction_loss(fwd.hidden, fwd.layout,
                                                                          TokenBatch::from(src), backward);
                                             },
                                             all_params, kStep)));

  const LossWeights weights{2, 0.5};
  auto joint = [&](const LossMode& mode) {
    return [&, mode] { return joint_loss(src, tgt, nat, &backward, weights, mode).total; };
  };
  out.checks.push_back(
      to_check("joint", grad_check_many(joint(LossMode::both()), without_target_table, kStep)));

  // The target table receives no similarity gradient by construction, so its
  // joint gradient must equal that of the objective without the similarity term.
  LossMode rec_only;
  rec_only.rec = true;
  std::vector<Tensor> table{target_table};
  out.checks.push_back(to_check("joint_target_table", grad_check_many(joint(rec_only), table, kStep)));

  auto table_grad = [&](const LossMode& mode) {
    for (auto& t : all_params) t.zero_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(joint_loss(src, tgt, nat, &backward, weights, mode).total);
    }
    const auto g = target_table.grad();
    return std::vector<double>(g.begin(), g.end());
  };
  const auto with_sim = table_grad(LossMode::both());
  const auto without_sim = table_grad(rec_only);
  GradientCheck same{"joint_target_table_vs_no_sim", 0, with_sim.size(), 0};
  for (std::size_t i = 0; i < with_sim.size(); ++i) {
    const double a = with_sim[i], b = without_sim[i];
    same.max_rel_error = std::max(same.max_rel_error, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}));
  }
  for (auto& t : all_params) t.zero_grad();
  out.checks.push_back(same);

  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace natreg_acceptance
