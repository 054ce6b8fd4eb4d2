#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "natreg/config.hpp"
#include "natreg/corpus.hpp"

NATREG_NAMESPACE_BEGIN

/// One optimizer step. Teacher runs report their loss in l_ce and total.
struct StepLog {
  std::size_t step = 0;
  double lr = 0;
  LossBreakdown loss;
};

struct EvalLog {
  std::size_t step = 0;
  double dev_loss = 0;
  bool improved = false;
};

struct TrainCallbacks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EvalLog&)> on_eval;
};

/// Mean over sentences of the teacher-forced NLL of [y, EOS] given [BOS, y].
Tensor teacher_loss(const Transformer& teacher, std::span<const SentencePair> pairs,
                    const ForwardContext& ctx = {});

/// Mean per-sentence teacher loss over a corpus, without gradients.
double teacher_dev_loss(const Transformer& teacher, const ParallelCorpus& dev);

/// Fraction of teacher-forced target positions (EOS included) whose argmax
/// prediction is correct.
double next_token_accuracy(const Transformer& teacher, const ParallelCorpus& corpus);

struct TeacherTrainResult {
  Transformer model;
  double best_dev_loss = 0;
  std::size_t best_step = 0;
};

/// Adam under the warmup/inverse-square-root schedule. Every eval_interval
/// steps and after the last step the dev loss is measured; the returned model
/// holds the best parameters seen (the initialization when max_steps is 0).
/// When checkpoint is set, the best model so far is saved at every evaluation.
/// A non-finite loss raises TrainingError.
TeacherTrainResult train_teacher(const ParallelCorpus& train, const ParallelCorpus& dev,
                                 const TrainConfig& config, const TrainCallbacks& callbacks = {},
                                 const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Replaces each target with the teacher's beam-search output. Pairs whose
/// output is empty are dropped and reported through on_drop (source index).
ParallelCorpus distill(const Transformer& teacher, const ParallelCorpus& corpus, std::size_t beam = 4,
                       const std::function<void(std::size_t)>& on_drop = {});

struct NatTrainResult {
  Transformer nat;
  Transformer backward;
  double best_dev_ce = 0;
  std::size_t best_step = 0;
};

/// Mean per-sentence NAT cross-entropy at reference lengths, without gradients.
double nat_dev_loss(const Transformer& nat, const ParallelCorpus& dev);

/// Joint optimization of the NAT and backward models with one optimizer over
/// the union of their parameters. Refuses a ground-truth corpus unless
/// allow_raw is set. Model selection uses the dev cross-entropy.
NatTrainResult train_nat(const ParallelCorpus& train, const ParallelCorpus& dev, const TrainConfig& config,
                         bool allow_raw = false, const TrainCallbacks& callbacks = {},
                         const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

NATREG_NAMESPACE_END
