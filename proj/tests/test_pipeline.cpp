#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "natreg/checkpoint.hpp"
#include "natreg/errors.hpp"
#include "natreg/optim.hpp"
#include "natreg/training.hpp"
#include "support.hpp"

using namespace natreg;
using natreg_test::TempDir;
using natreg_test::tiny_config;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

ParallelCorpus small_corpus(SyntheticTask task, std::size_t n, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.task = task;
  spec.vocab_size = 8;
  spec.n_pairs = n;
  spec.min_len = 2;
  spec.max_len = 5;
  spec.seed = seed;
  return gen_synthetic_corpus(spec);
}

TrainConfig tiny_train_config(std::size_t steps) {
  TrainConfig c;
  c.model = tiny_config(12);
  c.max_steps = steps;
  c.batch_size = 4;
  c.warmup_steps = 4;
  c.eval_interval = 2;
  return c;
}

}  // namespace

TEST_CASE("vocabulary and tokenization") {
  Vocabulary v;
  CHECK(v.size() == kReservedTokens);
  CHECK(v.add("a") == 4);
  CHECK(v.add("b") == 5);
  CHECK(v.add("a") == 4);
  CHECK(tokenize("a b a", v) == std::vector<TokenId>{4, 5, 4});
  CHECK(tokenize("", v).empty());
  CHECK(tokenize("a z", v) == std::vector<TokenId>{4, kUnkId});
  CHECK(tokenize("  b\ta ", v, true) == std::vector<TokenId>{5, 4, kEosId});
  const std::vector<TokenId> ids{kBosId, 4, 5, kEosId, kPadId};
  CHECK(detokenize(ids, v) == "a b");
  CHECK(Vocabulary::synthetic(3).token(6) == "w2");
}

TEST_CASE("vocabulary files") {
  TempDir dir("vocab");
  const auto v = Vocabulary::synthetic(5);
  v.save(dir / "v.txt");
  const auto back = Vocabulary::load(dir / "v.txt");
  CHECK(back.size() == 9);
  CHECK(back.id("w4") == 8);
  spit(dir / "bad.txt", "x\nx\n");
  CHECK_THROWS_AS(Vocabulary::load(dir / "bad.txt"), FormatError);
  spit(dir / "space.txt", "a b\n");
  CHECK_THROWS_AS(Vocabulary::load(dir / "space.txt"), FormatError);
}

TEST_CASE("synthetic tasks") {
  const std::vector<TokenId> src{4, 5, 6};
  std::vector<TokenId> perm(20);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<TokenId>(i);
  perm[4] = 9;
  perm[9] = 4;
  CHECK(task_image(SyntheticTask::Copy, src, perm) == src);
  CHECK(task_image(SyntheticTask::Reverse, src, perm) == std::vector<TokenId>{6, 5, 4});
  const std::vector<TokenId> twice{4, 4};
  CHECK(task_image(SyntheticTask::Cipher, twice, perm) == std::vector<TokenId>{9, 9});
  CHECK(parse_task("reverse") == SyntheticTask::Reverse);
  CHECK_THROWS_AS(parse_task("sort"), ContractError);
}

TEST_CASE("cipher permutation is a bijection fixing reserved ids") {
  const auto perm = cipher_permutation(40, 7);
  REQUIRE(perm.size() == 44);
  for (TokenId r = 0; r < 4; ++r) CHECK(perm[r] == r);
  std::vector<bool> seen(44, false);
  for (TokenId p : perm) seen[p] = true;
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  CHECK(perm == cipher_permutation(40, 7));
}

TEST_CASE("corpus generation is deterministic and well-formed") {
  const auto a = small_corpus(SyntheticTask::Cipher, 50);
  const auto b = small_corpus(SyntheticTask::Cipher, 50);
  REQUIRE(a.size() == 50);
  const auto perm = cipher_permutation(8, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.pairs[i].src == b.pairs[i].src);
    CHECK(a.pairs[i].tgt == task_image(SyntheticTask::Cipher, a.pairs[i].src, perm));
    CHECK(a.pairs[i].src.size() >= 2);
    CHECK(a.pairs[i].src.size() <= 5);
    for (std::size_t t = 1; t < a.pairs[i].src.size(); ++t) CHECK(a.pairs[i].src[t] != a.pairs[i].src[t - 1]);
  }
  const auto c = small_corpus(SyntheticTask::Cipher, 50, 4);
  bool differs = false;
  for (std::size_t i = 0; i < 50; ++i) differs |= c.pairs[i].src != a.pairs[i].src;
  CHECK(differs);

  SyntheticSpec bad;
  bad.min_len = 6;
  bad.max_len = 5;
  CHECK_THROWS_AS(gen_synthetic_corpus(bad), ContractError);
  CHECK(gen_synthetic_corpus(SyntheticSpec{SyntheticTask::Copy, 5, 0}).empty());
}

TEST_CASE("dev split") {
  const auto corpus = small_corpus(SyntheticTask::Copy, 40);
  const auto split = split_dev(corpus, 0.05, 9);
  CHECK(split.dev.size() == 2);
  CHECK(split.train.size() == 38);
  const auto again = split_dev(corpus, 0.05, 9);
  CHECK(again.dev.pairs[0].src == split.dev.pairs[0].src);
  CHECK(split_dev(small_corpus(SyntheticTask::Copy, 2), 0.01, 1).dev.size() == 1);
}

TEST_CASE("corpus files round-trip with provenance") {
  TempDir dir("corpus");
  const auto vocab = Vocabulary::synthetic(8);
  auto corpus = small_corpus(SyntheticTask::Reverse, 10);
  corpus.provenance = Provenance::Distilled;
  write_corpus(dir / "c", corpus, vocab);
  const auto back = read_corpus(dir / "c", vocab);
  CHECK(back.provenance == Provenance::Distilled);
  REQUIRE(back.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(back.pairs[i].tgt == corpus.pairs[i].tgt);

  spit(dir / "e.src", "w1 w2\n\n");
  spit(dir / "e.tgt", "w2 w1\nw3\n");
  CHECK_THROWS_AS(read_corpus(dir / "e", vocab), EmptySequenceError);
  spit(dir / "m.src", "w1\nw2\n");
  spit(dir / "m.tgt", "w1\n");
  CHECK_THROWS_AS(read_corpus(dir / "m", vocab), FormatError);
}

TEST_CASE("train config parsing") {
  const auto c = parse_train_config("# comment\nseed = 9\nd_model = 16\nmode = both\nalpha = 1.5\n");
  CHECK(c.seed == 9);
  CHECK(c.model.d_model == 16);
  CHECK(c.mode.sim);
  CHECK(c.mode.rec);
  CHECK(c.weights.alpha == real(1.5));
  CHECK(c.adam_beta1 == real(0.9));
  CHECK(c.adam_beta2 == real(0.98));
  CHECK(c.adam_eps == real(1e-9));
  CHECK_THROWS_AS(parse_train_config("seed = x\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("nonsense = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("seed\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("batch_size = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("mode = sim\nmode = universal\n"), ConfigError);
  CHECK_THROWS_AS(parse_loss_mode("everything"), ConfigError);

  TrainConfig odd;
  odd.base_lr = real(0.7);
  odd.dev_fraction = 0.1;
  odd.mode = parse_loss_mode("universal");
  const auto text = format_train_config(odd);
  CHECK(format_train_config(parse_train_config(text)) == text);
}

TEST_CASE("learning-rate schedule closed form") {
  CHECK_THROWS_AS(learning_rate(0, 1, 10, 16), ContractError);
  for (std::size_t step : {1u, 5u, 10u, 11u, 400u}) {
    const double expect = 2.0 * std::min(1.0 / std::sqrt(double(step)), step * std::pow(10.0, -1.5)) / 4.0;
    CHECK(learning_rate(step, 2, 10, 16) == doctest::Approx(expect).epsilon(1e-12));
  }
  // The peak sits at the end of warmup.
  CHECK(learning_rate(10, 1, 10, 16) > learning_rate(9, 1, 10, 16));
  CHECK(learning_rate(10, 1, 10, 16) > learning_rate(11, 1, 10, 16));
}

TEST_CASE("Adam first step moves each weight by the learning rate") {
  Tensor w = Tensor::from({3}, {1, 2, 3}, true);
  Tensor idle = Tensor::from({1}, {5}, true);
  Adam adam({w, idle}, {});
  const std::vector<real> g{real(0.5), real(-2), 0};
  w.accumulate_grad(g);
  adam.step(0.1);
  CHECK(w.data()[0] == doctest::Approx(0.9));
  CHECK(w.data()[1] == doctest::Approx(2.1));
  CHECK(w.data()[2] == 3);
  CHECK(idle.data()[0] == 5);
  CHECK(adam.steps_taken() == 1);
}

TEST_CASE("checkpoint serialization") {
  Rng rng(1);
  const Transformer model = Transformer::create(ModelKind::Nat, tiny_config(), rng);
  TempDir dir("ckpt");
  save_checkpoint(model.params(), dir / "a.bin");
  save_checkpoint(load_checkpoint(dir / "a.bin"), dir / "b.bin");
  const std::string bytes = slurp(dir / "a.bin");
  CHECK(bytes == slurp(dir / "b.bin"));

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_params(bad), FormatError);
  }
  SUBCASE("truncation") {
    CHECK_THROWS_AS(deserialize_params(bytes.substr(0, bytes.size() - 3)), FormatError);
  }
  SUBCASE("trailing bytes") {
    CHECK_THROWS_AS(deserialize_params(bytes + "x"), FormatError);
  }
  SUBCASE("duplicate names") {
    ModelParams p;
    p.add("w", Tensor::zeros({2}));
    std::string one = serialize_params(p);
    // Double the count and append the same record again.
    std::string record = one.substr(12);
    one[8] = 2;
    CHECK_THROWS_AS(deserialize_params(one + record), FormatError);
  }
  SUBCASE("model with configuration sidecar") {
    save_model(model, dir / "m.ckpt");
    const Transformer back = load_model(dir / "m.ckpt");
    CHECK(back.kind() == ModelKind::Nat);
    CHECK(back.config().d_model == 8);
    const std::vector<TokenId> src{4, 5, 6};
    const auto x = nat_forward(src, 3, model).logits;
    const auto y = nat_forward(src, 3, back).logits;
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.data()[i] == y.data()[i]);
  }
}

TEST_CASE("teacher training contracts") {
  const auto corpus = small_corpus(SyntheticTask::Copy, 24);
  const auto split = split_dev(corpus, 0.2, 1);

  SUBCASE("zero steps returns the initialization") {
    auto config = tiny_train_config(0);
    const auto r = train_teacher(split.train, split.dev, config);
    Rng init = make_rng(derive_seed(config.seed, 1));
    const auto fresh = Transformer::create(ModelKind::Teacher, config.model, init);
    CHECK(serialize_params(r.model.params()) == serialize_params(fresh.params()));
  }
  SUBCASE("same seed gives identical logs and parameters") {
    auto run = [&] {
      std::ostringstream log;
      TrainCallbacks cb;
      cb.on_step = [&](const StepLog& s) { log << s.step << ' ' << s.loss.total << ' ' << s.lr << '\n'; };
      cb.on_eval = [&](const EvalLog& e) { log << "eval " << e.step << ' ' << e.dev_loss << '\n'; };
      auto r = train_teacher(split.train, split.dev, tiny_train_config(6), cb);
      return std::make_pair(log.str(), serialize_params(r.model.params()));
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first.find("eval 6") != std::string::npos);
  }
  SUBCASE("divergence is reported with its step") {
    auto config = tiny_train_config(20);
    config.base_lr = real(1e30);
    CHECK_THROWS_AS(train_teacher(split.train, split.dev, config), TrainingError);
  }
}

TEST_CASE("NAT training refuses ground truth unless allowed") {
  const auto corpus = small_corpus(SyntheticTask::Copy, 12);
  const auto split = split_dev(corpus, 0.2, 1);
  auto config = tiny_train_config(2);
  config.mode = LossMode::both();
  CHECK_THROWS_AS(train_nat(split.train, split.dev, config), ContractError);
  const auto r = train_nat(split.train, split.dev, config, true);
  CHECK(r.backward.target_embedding().same_storage(r.nat.source_embedding()));
  CHECK(std::isfinite(r.best_dev_ce));
}
