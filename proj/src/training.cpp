#include "natreg/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "natreg/checkpoint.hpp"
#include "natreg/errors.hpp"
#include "natreg/inference.hpp"
#include "natreg/optim.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kDropoutStream = 3;
constexpr std::size_t kEvalChunk = 64;

// Endless stream of shuffled minibatches, reshuffled every epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : order_(n), batch_size_(std::min(batch_size, n)), rng_(make_rng(seed)) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_size_ > order_.size()) reshuffle();
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_size_));
    pos_ += batch_size_;
    return batch;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
  Rng rng_;
};

AdamSettings adam_settings(const TrainConfig& c) {
  return {static_cast<double>(c.adam_beta1), static_cast<double>(c.adam_beta2), static_cast<double>(c.adam_eps)};
}

void check_finite(const LossBreakdown& b, std::size_t step) {
  if (!std::isfinite(b.total) || !std::isfinite(b.l_ce) || !std::isfinite(b.l_sim) || !std::isfinite(b.l_rec)) {
    throw TrainingError("non-finite training loss", static_cast<long>(step));
  }
}

std::vector<SentencePair> gather(const ParallelCorpus& corpus, std::span<const std::size_t> index) {
  std::vector<SentencePair> out;
  out.reserve(index.size());
  for (auto i : index) out.push_back(corpus.pairs[i]);
  return out;
}

// Mean of a per-sentence-averaged loss over fixed-size chunks of a corpus.
template <class ChunkLoss>
double chunked_mean(const ParallelCorpus& dev, ChunkLoss&& chunk_loss) {
  if (dev.empty()) return 0;
  NoGradScope no_grad;
  double total = 0;
  for (std::size_t begin = 0; begin < dev.size(); begin += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, dev.size() - begin);
    std::span<const SentencePair> chunk(dev.pairs.data() + begin, n);
    total += chunk_loss(chunk) * static_cast<double>(n);
  }
  return total / static_cast<double>(dev.size());
}

void split_sides(std::span<const SentencePair> pairs, std::vector<std::vector<TokenId>>& src,
                 std::vector<std::vector<TokenId>>& tgt) {
  src.clear();
  tgt.clear();
  for (const auto& p : pairs) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
}

}  // namespace

Tensor teacher_loss(const Transformer& teacher, std::span<const SentencePair> pairs, const ForwardContext& ctx) {
  if (pairs.empty()) throw ContractError("teacher_loss: empty batch");
  std::vector<std::vector<TokenId>> src, in;
  std::vector<TokenId> targets;
  for (const auto& p : pairs) {
    src.push_back(p.src);
    std::vector<TokenId> prefix{kBosId};
    prefix.insert(prefix.end(), p.tgt.begin(), p.tgt.end());
    in.push_back(std::move(prefix));
    targets.insert(targets.end(), p.tgt.begin(), p.tgt.end());
    targets.push_back(kEosId);
  }
  const TokenBatch src_batch = TokenBatch::from(src);
  Tensor enc = teacher.encode(src_batch, ctx);
  Tensor logits = teacher.decode_at(TokenBatch::from(in), enc, src_batch.layout, {}, ctx);
  return scale(cross_entropy(logits, targets), real(1) / static_cast<real>(pairs.size()));
}

double teacher_dev_loss(const Transformer& teacher, const ParallelCorpus& dev) {
  return chunked_mean(dev, [&](std::span<const SentencePair> chunk) {
    return static_cast<double>(teacher_loss(teacher, chunk).item());
  });
}

double next_token_accuracy(const Transformer& teacher, const ParallelCorpus& corpus) {
  NoGradScope no_grad;
  std::size_t correct = 0, total = 0;
  for (std::size_t begin = 0; begin < corpus.size(); begin += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, corpus.size() - begin);
    std::vector<std::vector<TokenId>> src, in;
    std::vector<TokenId> targets;
    for (std::size_t i = begin; i < begin + n; ++i) {
      const auto& p = corpus.pairs[i];
      src.push_back(p.src);
      std::vector<TokenId> prefix{kBosId};
      prefix.insert(prefix.end(), p.tgt.begin(), p.tgt.end());
      in.push_back(std::move(prefix));
      targets.insert(targets.end(), p.tgt.begin(), p.tgt.end());
      targets.push_back(kEosId);
    }
    const TokenBatch src_batch = TokenBatch::from(src);
    Tensor logits = teacher.decode_at(TokenBatch::from(in), teacher.encode(src_batch), src_batch.layout);
    const std::size_t v = logits.cols();
    for (std::size_t r = 0; r < targets.size(); ++r) {
      if (static_cast<TokenId>(argmax(logits.data().subspan(r * v, v))) == targets[r]) ++correct;
    }
    total += targets.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

TeacherTrainResult train_teacher(const ParallelCorpus& train, const ParallelCorpus& dev,
                                 const TrainConfig& config, const TrainCallbacks& callbacks,
                                 const std::optional<std::filesystem::path>& checkpoint) {
  config.validate();
  if (train.empty()) throw ContractError("train_teacher: empty training corpus");
  train.validate();
  Rng init_rng = make_rng(derive_seed(config.seed, kInitStream));
  Rng dropout_rng = make_rng(derive_seed(config.seed, kDropoutStream));
  Transformer model = Transformer::create(ModelKind::Teacher, config.model, init_rng);

  TeacherTrainResult result{model, 0, 0};
  if (config.max_steps == 0) {
    result.best_dev_loss = teacher_dev_loss(model, dev);
    return result;
  }
  Adam adam(model.params().unique_tensors(), adam_settings(config));
  BatchSampler sampler(train.size(), config.batch_size, derive_seed(config.seed, kShuffleStream));
  ModelParams best = model.params().clone();
  double best_loss = std::numeric_limits<double>::infinity();
  const ForwardContext ctx{true, &dropout_rng, nullptr, false};

  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    const auto batch = gather(train, sampler.next());
    Tape tape;
    StepLog log{step, learning_rate(step, config.base_lr, config.warmup_steps, config.model.d_model), {}};
    {
      TapeScope scope(tape);
      Tensor loss = teacher_loss(model, batch, ctx);
      log.loss.l_ce = log.loss.total = loss.item();
      check_finite(log.loss, step);
      tape.backward(loss);
    }
    adam.step(log.lr);
    adam.zero_grad();
    if (callbacks.on_step) callbacks.on_step(log);

    if (step % config.eval_interval == 0 || step == config.max_steps) {
      EvalLog eval{step, dev.empty() ? log.loss.total : teacher_dev_loss(model, dev), false};
      if (eval.dev_loss < best_loss) {
        best_loss = eval.dev_loss;
        best = model.params().clone();
        result.best_step = step;
        eval.improved = true;
      }
      if (checkpoint) {
        Transformer snapshot = Transformer::from_params(ModelKind::Teacher, config.model, best);
        save_model(snapshot, *checkpoint);
      }
      if (callbacks.on_eval) callbacks.on_eval(eval);
    }
  }
  model.params().assign_values(best);
  result.model = model;
  result.best_dev_loss = best_loss;
  return result;
}

ParallelCorpus distill(const Transformer& teacher, const ParallelCorpus& corpus, std::size_t beam,
                       const std::function<void(std::size_t)>& on_drop) {
  if (beam == 0) throw ContractError("distill: beam must be at least 1");
  ParallelCorpus out;
  out.provenance = Provenance::Distilled;
  out.pairs.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto tgt = beam_search(corpus.pairs[i].src, teacher, beam);
    if (tgt.empty()) {
      if (on_drop) on_drop(i);
      continue;
    }
    out.pairs.push_back({corpus.pairs[i].src, std::move(tgt)});
  }
  return out;
}

double nat_dev_loss(const Transformer& nat, const ParallelCorpus& dev) {
  std::vector<std::vector<TokenId>> src, tgt;
  return chunked_mean(dev, [&](std::span<const SentencePair> chunk) {
    split_sides(chunk, src, tgt);
    return static_cast<double>(
        joint_loss(src, tgt, nat, nullptr, {}, LossMode::base()).breakdown.l_ce);
  });
}

NatTrainResult train_nat(const ParallelCorpus& train, const ParallelCorpus& dev, const TrainConfig& config,
                         bool allow_raw, const TrainCallbacks& callbacks,
                         const std::optional<std::filesystem::path>& checkpoint) {
  config.validate();
  if (train.empty()) throw ContractError("train_nat: empty training corpus");
  if (train.provenance != Provenance::Distilled && !allow_raw) {
    throw ContractError("train_nat expects a distilled corpus (pass allow_raw to train on ground truth)");
  }
  train.validate();
  Rng init_rng = make_rng(derive_seed(config.seed, kInitStream));
  Rng dropout_rng = make_rng(derive_seed(config.seed, kDropoutStream));
  Transformer nat = Transformer::create(ModelKind::Nat, config.model, init_rng);
  Transformer backward = Transformer::create_backward(config.model, nat.source_embedding(), init_rng);

  NatTrainResult result{nat, backward, 0, 0};
  if (config.max_steps == 0) {
    result.best_dev_ce = nat_dev_loss(nat, dev);
    return result;
  }
  const ModelParams joint = nat.params().merged(backward.params(), "nat.", "backward.");
  Adam adam(joint.unique_tensors(), adam_settings(config));
  BatchSampler sampler(train.size(), config.batch_size, derive_seed(config.seed, kShuffleStream));
  ModelParams best_nat = nat.params().clone();
  ModelParams best_backward = backward.params().clone();
  double best_loss = std::numeric_limits<double>::infinity();
  const ForwardContext ctx{true, &dropout_rng, nullptr, false};
  const Transformer* backward_ptr = config.mode.rec ? &backward : nullptr;
  std::vector<std::vector<TokenId>> src, tgt;

  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    const auto batch = gather(train, sampler.next());
    split_sides(batch, src, tgt);
    Tape tape;
    StepLog log{step, learning_rate(step, config.base_lr, config.warmup_steps, config.model.d_model), {}};
    {
      TapeScope scope(tape);
      JointLoss loss = joint_loss(src, tgt, nat, backward_ptr, config.weights, config.mode, ctx);
      log.loss = loss.breakdown;
      check_finite(log.loss, step);
      tape.backward(loss.total);
    }
    adam.step(log.lr);
    adam.zero_grad();
    if (callbacks.on_step) callbacks.on_step(log);

    if (step % config.eval_interval == 0 || step == config.max_steps) {
      EvalLog eval{step, dev.empty() ? log.loss.l_ce : nat_dev_loss(nat, dev), false};
      if (eval.dev_loss < best_loss) {
        best_loss = eval.dev_loss;
        best_nat = nat.params().clone();
        best_backward = backward.params().clone();
        result.best_step = step;
        eval.improved = true;
      }
      if (checkpoint) {
        save_model(Transformer::from_params(ModelKind::Nat, config.model, best_nat), *checkpoint);
        save_model(Transformer::from_params(ModelKind::Backward, config.model, best_backward),
                   with_suffix(*checkpoint, ".backward"));
      }
      if (callbacks.on_eval) callbacks.on_eval(eval);
    }
  }
  nat.params().assign_values(best_nat);
  backward.params().assign_values(best_backward);
  result.nat = nat;
  result.backward = backward;
  result.best_dev_ce = best_loss;
  return result;
}

NATREG_NAMESPACE_END
