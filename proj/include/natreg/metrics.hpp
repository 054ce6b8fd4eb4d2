#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "natreg/corpus.hpp"

NATREG_NAMESPACE_BEGIN

using Sentence = std::vector<TokenId>;

struct BleuOptions {
  /// Add-one smoothing on n ≥ 2 precisions whose match count is zero.
  bool smooth = true;
};

/// Summed corpus statistics behind BLEU-4.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

BleuStats bleu_stats(std::span<const Sentence> hypotheses, std::span<const Sentence> references);
double bleu_from_stats(const BleuStats& stats, const BleuOptions& options = {});

/// Corpus BLEU-4 on a 0–100 scale with clipped n-gram counts and the brevity
/// penalty. Throws ContractError when the counts differ.
double bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references,
            const BleuOptions& options = {});

struct RepetitionStats {
  double mean_dedup_ops = 0;
  double pct_with_repeats = 0;
};

RepetitionStats repetition_stats(std::span<const Sentence> hypotheses);

/// Mean over sentences of the fraction of distinct expected target tokens
/// that occur in the hypothesis. Expected tokens come from task_image.
double coverage_ratio(std::span<const Sentence> hypotheses, std::span<const Sentence> sources,
                      SyntheticTask task, std::span<const TokenId> permutation);

/// Infers the cipher permutation from aligned source/reference pairs.
/// Tokens never seen map to themselves. Throws ContractError if the pairs are
/// not a position-wise substitution.
std::vector<TokenId> infer_permutation(std::span<const Sentence> sources, std::span<const Sentence> references,
                                       std::size_t vocab_size);

struct EvalReport {
  double bleu = 0;
  double per_sentence_dedup_ops = 0;
  double pct_sentences_with_repeats = 0;
  std::optional<double> coverage_ratio;
  std::size_t sentences = 0;
};

/// Flat `key = value` block with stable key order.
std::string format_report(const EvalReport& report);
/// One `metric=<key> value=<v>` line per metric.
std::string format_report_lines(const EvalReport& report);

NATREG_NAMESPACE_END
