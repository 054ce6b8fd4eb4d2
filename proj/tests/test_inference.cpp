#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "natreg/errors.hpp"
#include "natreg/inference.hpp"
#include "natreg/training.hpp"
#include "support.hpp"

using namespace natreg;
using natreg_test::random_ids;
using natreg_test::tiny_config;

namespace {

struct Models {
  Transformer teacher;
  Transformer nat;
};

Models random_models(std::uint64_t seed) {
  Rng rng(seed);
  auto teacher = Transformer::create(ModelKind::Teacher, tiny_config(), rng);
  auto nat = Transformer::create(ModelKind::Nat, tiny_config(), rng);
  return {std::move(teacher), std::move(nat)};
}

bool clean(const std::vector<TokenId>& ids) {
  return std::none_of(ids.begin(), ids.end(), [](TokenId t) { return t == kPadId || t == kBosId; });
}

}  // namespace

TEST_CASE("argmax prefers the lowest index on ties") {
  const std::vector<real> row{1, 3, 3, 2};
  CHECK(argmax(row) == 1);
  const std::vector<real> flat(5, real(0.5));
  CHECK(argmax(flat) == 0);
}

TEST_CASE("parallel decoding returns exactly t_y tokens without markers") {
  const auto m = random_models(1);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto src = random_ids(1 + trial % 7, 12, rng);
    const std::size_t ty = 1 + trial % 9;
    const auto c = decode_parallel(src, ty, m.nat);
    CHECK(c.length == ty);
    CHECK(c.tokens.size() == ty);
    CHECK(clean(c.tokens));
    CHECK(std::find(c.tokens.begin(), c.tokens.end(), kEosId) == c.tokens.end());
    CHECK(std::isfinite(c.nat_logprob));
  }
}

TEST_CASE("decoding several lengths in one pass matches one length at a time") {
  const auto m = random_models(3);
  const std::vector<TokenId> src{4, 7, 9, 5};
  const std::vector<std::size_t> lengths{2, 3, 4, 5, 6};
  const auto all = decode_parallel_lengths(src, lengths, m.nat);
  REQUIRE(all.size() == lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const auto one = decode_parallel(src, lengths[i], m.nat);
    CHECK(all[i].tokens == one.tokens);
    CHECK(all[i].nat_logprob == doctest::Approx(one.nat_logprob).epsilon(1e-5));
  }
}

TEST_CASE("beam of one is greedy decoding") {
  const auto m = random_models(4);
  Rng rng(5);
  for (int trial = 0; trial < 15; ++trial) {
    const auto src = random_ids(2 + trial % 6, 12, rng);
    const auto greedy = greedy_decode(src, m.teacher);
    CHECK(beam_search(src, m.teacher, 1) == greedy);
    const auto wide = beam_search(src, m.teacher, 4);
    CHECK(clean(wide));
    CHECK(std::find(wide.begin(), wide.end(), kEosId) == wide.end());
    CHECK(wide.size() <= default_max_decode_length(src.size(), m.teacher));
  }
  const std::vector<TokenId> src{4, 5};
  CHECK_THROWS(beam_search(src, m.teacher, 0));
}

TEST_CASE("rescoring") {
  const auto m = random_models(6);
  const std::vector<TokenId> src{4, 5, 6};
  const auto cands = decode_parallel_lengths(src, std::vector<std::size_t>{2, 3, 4, 5}, m.nat);

  SUBCASE("single candidate is only scored") {
    const auto out = rescore({cands[1]}, src, m.teacher);
    REQUIRE(out.size() == 1);
    CHECK(out[0].tokens == cands[1].tokens);
    REQUIRE(out[0].teacher_score.has_value());
    CHECK(std::isfinite(*out[0].teacher_score));
  }
  SUBCASE("ranking ignores input order") {
    auto shuffled = cands;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto a = rescore(cands, src, m.teacher);
    const auto b = rescore(shuffled, src, m.teacher);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tokens == b[i].tokens);
    for (std::size_t i = 1; i < a.size(); ++i) CHECK(*a[i - 1].teacher_score >= *a[i].teacher_score);
  }
  SUBCASE("normalized score is the total divided by length") {
    const auto norm = rescore(cands, src, m.teacher, true);
    const auto raw = rescore(cands, src, m.teacher, false);
    for (const auto& n : norm) {
      const auto it = std::find_if(raw.begin(), raw.end(), [&](const Candidate& r) { return r.tokens == n.tokens; });
      REQUIRE(it != raw.end());
      CHECK(*n.teacher_score == doctest::Approx(*it->teacher_score / n.length).epsilon(1e-5));
    }
  }
}

TEST_CASE("noisy parallel decoding candidate counts") {
  const auto m = random_models(7);
  const std::vector<TokenId> src{4, 5, 6, 7, 8, 9, 10, 11, 4, 5};
  const auto r = translate_npd(src, {-1, 4}, m.nat, &m.teacher);
  CHECK(r.all.size() == 9);
  for (std::size_t i = 0; i < r.all.size(); ++i) CHECK(r.all[i].length == 5 + i);
  const auto best_score = *r.best.teacher_score;
  for (const auto& c : r.all) CHECK(*c.teacher_score <= best_score);

  const auto single = translate_npd(src, {-1, 0}, m.nat, nullptr);
  REQUIRE(single.all.size() == 1);
  CHECK_FALSE(single.best.teacher_score.has_value());
  CHECK(single.best.tokens == decode_parallel(src, 9, m.nat).tokens);
  CHECK_THROWS_AS(translate_npd(src, {0, 2}, m.nat, nullptr), ContractError);

  const std::vector<TokenId> short_src{4, 5};
  CHECK(translate_npd(short_src, {-2, 2}, m.nat, &m.teacher).all.size() == 2);
}

TEST_CASE("de-duplication") {
  const std::vector<std::string> words{"we", "'ll", "see", "climate", "climate", "change", "change"};
  const auto [out, ops] = dedup_postprocess(words);
  CHECK(out == std::vector<std::string>{"we", "'ll", "see", "climate", "change"});
  CHECK(ops == 2);

  const std::vector<TokenId> distinct{4, 5, 6, 4};
  CHECK(dedup_postprocess(distinct).tokens == distinct);
  CHECK(dedup_postprocess(distinct).n_ops == 0);
  const std::vector<TokenId> run{7, 7, 7};
  CHECK(dedup_postprocess(run).tokens == std::vector<TokenId>{7});
  CHECK(dedup_postprocess(run).n_ops == 2);
  CHECK(dedup_postprocess(std::vector<TokenId>{}).n_ops == 0);
}

TEST_CASE("de-duplication is idempotent and removes exactly the adjacent repeats") {
  Rng rng(8);
  std::uniform_int_distribution<int> len(0, 15);
  std::uniform_int_distribution<TokenId> tok(4, 7);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<TokenId> s(static_cast<std::size_t>(len(rng)));
    for (auto& t : s) t = tok(rng);
    const auto once = dedup_postprocess(s);
    const auto twice = dedup_postprocess(once.tokens);
    CHECK(twice.tokens == once.tokens);
    CHECK(twice.n_ops == 0);
    CHECK(once.tokens.size() + once.n_ops == s.size());
  }
}

TEST_CASE("latency measurement") {
  const std::vector<std::vector<TokenId>> none;
  CHECK_THROWS_AS(measure_latency(none, [](std::span<const TokenId>) {}), ContractError);
  const std::vector<std::vector<TokenId>> three{{4}, {5, 6}, {7}};
  std::size_t calls = 0;
  const auto r = measure_latency(three, [&](std::span<const TokenId>) { ++calls; }, 2);
  CHECK(r.sentences == 3);
  CHECK(r.warmup_sentences == 2);
  CHECK(calls == 5);
  CHECK(r.mean_ms >= 0);
}

TEST_CASE("a trained copy teacher and NAT") {
  SyntheticSpec spec;
  spec.vocab_size = 8;
  spec.n_pairs = 600;
  spec.min_len = 2;
  spec.max_len = 6;
  spec.seed = 5;
  const auto corpus = gen_synthetic_corpus(spec);
  const auto split = split_dev(corpus, 0.05, 1);
  TrainConfig config;
  config.model = tiny_config(12, 32);
  config.model.n_heads = 4;
  config.model.d_ff = 64;
  config.max_steps = 400;
  config.eval_interval = 100;
  const auto teacher = train_teacher(split.train, split.dev, config).model;
  REQUIRE(next_token_accuracy(teacher, split.dev) > 0.99);

  const std::vector<TokenId> src{4, 5, 6};
  CHECK(beam_search(src, teacher, 4) == src);
  const auto distilled = distill(teacher, split.train, 4);
  CHECK(distilled.provenance == Provenance::Distilled);
  REQUIRE(distilled.size() == split.train.size());
  std::size_t agree = 0;
  for (std::size_t i = 0; i < distilled.size(); ++i) agree += distilled.pairs[i].tgt == split.train.pairs[i].tgt;
  MESSAGE("distilled targets equal to ground truth: " << agree << "/" << distilled.size());
  CHECK(agree >= distilled.size() * 98 / 100);

  config.mode = LossMode::both();
  const auto nat = train_nat(distilled, split.dev, config).nat;
  CHECK(decode_parallel(src, 3, nat).tokens == src);

  // The teacher's own output outranks corrupted variants of it.
  const auto best = beam_search(src, teacher, 4);
  std::vector<Candidate> cands{{3, best, 0, {}}, {3, {4, 4, 6}, 0, {}}, {3, {6, 5, 4}, 0, {}},
                               {2, {4, 5}, 0, {}}, {4, {4, 5, 6, 6}, 0, {}}};
  CHECK(rescore(cands, src, teacher).front().tokens == best);
}
