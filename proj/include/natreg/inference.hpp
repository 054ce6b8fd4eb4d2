#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "natreg/nat_model.hpp"

NATREG_NAMESPACE_BEGIN

/// One decoded sequence. tokens never contain PAD or BOS.
struct Candidate {
  std::size_t length = 0;
  std::vector<TokenId> tokens;
  real nat_logprob = 0;
  std::optional<real> teacher_score;
};

/// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax(std::span<const real> row);

/// Single parallel pass at target length t_y.
Candidate decode_parallel(std::span<const TokenId> src_ids, std::size_t t_y, const Transformer& nat);

/// Candidates for one source at several lengths. The source is encoded once
/// and all lengths are decoded in one packed pass; results follow `lengths`.
std::vector<Candidate> decode_parallel_lengths(std::span<const TokenId> src_ids,
                                               std::span<const std::size_t> lengths,
                                               const Transformer& nat);

/// Default decoding bound for an autoregressive model: 2·T_x + 10, capped by
/// the positional table.
std::size_t default_max_decode_length(std::size_t t_x, const Transformer& teacher);

/// Greedy autoregressive decoding; stops at EOS or max_len tokens. EOS is
/// not part of the result.
std::vector<TokenId> greedy_decode(std::span<const TokenId> src_ids, const Transformer& teacher,
                                   std::size_t max_len = 0);

/// Beam search ranked by log-likelihood per generated token (EOS counted).
/// Hypotheses are pruned by cumulative log-likelihood, ties broken by the
/// lexicographically smaller token sequence. max_len 0 selects the default.
std::vector<TokenId> beam_search(std::span<const TokenId> src_ids, const Transformer& teacher,
                                 std::size_t beam, std::size_t max_len = 0);

/// Teacher-forced log-likelihood of each candidate followed by EOS.
/// Normalized scores divide by the candidate length. Returns the candidates
/// sorted by descending score (ties: shorter first, then token order).
std::vector<Candidate> rescore(std::vector<Candidate> candidates, std::span<const TokenId> src_ids,
                               const Transformer& teacher, bool normalized = true);

struct NpdResult {
  Candidate best;
  std::vector<Candidate> all;  // in ascending candidate-length order
};

/// Noisy parallel decoding. With half_window 0 the single candidate at the
/// predicted length is returned and the teacher is not consulted (it may be
/// null). Otherwise every candidate is rescored by the teacher.
NpdResult translate_npd(std::span<const TokenId> src_ids, const LengthRule& rule, const Transformer& nat,
                        const Transformer* teacher, bool normalized = true);

struct DedupResult {
  std::vector<TokenId> tokens;
  std::size_t n_ops = 0;
};

/// Collapses every run of equal adjacent tokens to one occurrence; each
/// removed token counts as one operation.
DedupResult dedup_postprocess(std::span<const TokenId> tokens);

/// Same operation over string tokens.
std::pair<std::vector<std::string>, std::size_t> dedup_postprocess(std::span<const std::string> tokens);

struct LatencyReport {
  double mean_ms = 0;
  double stddev_ms = 0;
  std::size_t sentences = 0;
  std::size_t warmup_sentences = 0;
};

/// Per-sentence wall time of decode_fn, sequential, one sentence at a time.
/// A warm-up pass over the first few sentences runs first and is not timed.
LatencyReport measure_latency(std::span<const std::vector<TokenId>> sources,
                              const std::function<void(std::span<const TokenId>)>& decode_fn,
                              std::size_t warmup = 8);

NATREG_NAMESPACE_END
