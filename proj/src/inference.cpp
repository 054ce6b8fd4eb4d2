#include "natreg/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "natreg/errors.hpp"
#include "natreg/vocabulary.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated tokens, EOS included once finished
  double logprob = 0;
  bool finished = false;
};

double normalized(const Hypothesis& h) {
  return h.logprob / static_cast<double>(std::max<std::size_t>(1, h.tokens.size()));
}

void check_teacher(const Transformer& teacher) {
  if (teacher.kind() != ModelKind::Teacher) throw ContractError("expected an autoregressive teacher model");
}

// Last-position log-probabilities for every prefix, one row per prefix.
std::vector<std::vector<real>> next_token_logprobs(const Transformer& teacher, const Tensor& enc,
                                                   const PackedLayout& enc_layout,
                                                   const std::vector<std::vector<TokenId>>& prefixes) {
  const TokenBatch batch = TokenBatch::from(prefixes);
  const std::vector<std::size_t> enc_index(prefixes.size(), 0);
  Tensor logp = log_softmax_rows(teacher.decode_at(batch, enc, enc_layout, enc_index));
  const std::size_t v = logp.cols();
  std::vector<std::vector<real>> rows;
  rows.reserve(prefixes.size());
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const std::size_t r = batch.layout.offsets[i] + batch.layout.lengths[i] - 1;
    auto data = logp.data().subspan(r * v, v);
    rows.emplace_back(data.begin(), data.end());
  }
  return rows;
}

}  // namespace

// Ids below this (PAD, BOS, EOS) are never emitted: NAT targets carry no
// markers, and an EOS inside a fixed-length output would vanish on detokenizing.
constexpr std::size_t kFirstOutputId = kUnkId;
static_assert(kPadId < kUnkId && kBosId < kUnkId && kEosId < kUnkId);

std::size_t argmax(std::span<const real> row) {
  if (row.empty()) throw ContractError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

std::vector<Candidate> decode_parallel_lengths(std::span<const TokenId> src_ids,
                                               std::span<const std::size_t> lengths,
                                               const Transformer& nat) {
  if (nat.kind() != ModelKind::Nat) throw ContractError("decode_parallel needs a NAT model");
  if (lengths.empty()) return {};
  for (auto len : lengths) {
    if (len == 0) throw ContractError("decode_parallel: target length must be at least 1");
  }
  NoGradScope no_grad;
  const TokenBatch src = TokenBatch::single(src_ids);
  Tensor enc = nat.encode(src);
  std::vector<Tensor> inputs;
  for (auto len : lengths) inputs.push_back(uniform_map_inputs(src_ids, len, nat.source_embedding()));
  const PackedLayout layout =
      PackedLayout::from_lengths(std::vector<std::size_t>(lengths.begin(), lengths.end()));
  const std::vector<std::size_t> enc_index(lengths.size(), 0);
  auto out = nat.decode_nat(concat_rows(inputs), layout, enc, src.layout, enc_index);
  Tensor logp = log_softmax_rows(out.logits);
  const std::size_t v = logp.cols();

  std::vector<Candidate> result;
  for (std::size_t c = 0; c < lengths.size(); ++c) {
    Candidate cand;
    cand.length = lengths[c];
    for (std::size_t t = 0; t < lengths[c]; ++t) {
      auto row = logp.data().subspan((layout.offsets[c] + t) * v, v);
      // PAD and BOS never appear in an output; scores keep the full softmax.
      const std::size_t id = argmax(row.subspan(kFirstOutputId)) + kFirstOutputId;
      cand.tokens.push_back(static_cast<TokenId>(id));
      cand.nat_logprob += row[id];
    }
    result.push_back(std::move(cand));
  }
  return result;
}

Candidate decode_parallel(std::span<const TokenId> src_ids, std::size_t t_y, const Transformer& nat) {
  const std::size_t lengths[] = {t_y};
  return std::move(decode_parallel_lengths(src_ids, lengths, nat).front());
}

std::size_t default_max_decode_length(std::size_t t_x, const Transformer& teacher) {
  // One position goes to BOS.
  return std::min(2 * t_x + 10, teacher.config().max_len - 1);
}

std::vector<TokenId> greedy_decode(std::span<const TokenId> src_ids, const Transformer& teacher,
                                   std::size_t max_len) {
  check_teacher(teacher);
  if (src_ids.empty()) throw EmptySequenceError("greedy_decode: empty source");
  if (max_len == 0) max_len = default_max_decode_length(src_ids.size(), teacher);
  NoGradScope no_grad;
  const TokenBatch src = TokenBatch::single(src_ids);
  Tensor enc = teacher.encode(src);
  std::vector<TokenId> prefix{kBosId};
  while (prefix.size() <= max_len) {
    auto row = next_token_logprobs(teacher, enc, src.layout, {prefix}).front();
    // PAD and BOS are never emitted.
    row[kPadId] = row[kBosId] = -std::numeric_limits<real>::infinity();
    const auto id = static_cast<TokenId>(argmax(row));
    if (id == kEosId) break;
    prefix.push_back(id);
  }
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<TokenId> beam_search(std::span<const TokenId> src_ids, const Transformer& teacher,
                                 std::size_t beam, std::size_t max_len) {
  check_teacher(teacher);
  if (beam == 0) throw ContractError("beam size must be at least 1");
  if (src_ids.empty()) throw EmptySequenceError("beam_search: empty source");
  if (max_len == 0) max_len = default_max_decode_length(src_ids.size(), teacher);
  NoGradScope no_grad;
  const TokenBatch src = TokenBatch::single(src_ids);
  Tensor enc = teacher.encode(src);

  auto by_score = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.tokens < b.tokens;
  };

  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    for (const auto& h : alive) {
      std::vector<TokenId> p{kBosId};
      p.insert(p.end(), h.tokens.begin(), h.tokens.end());
      prefixes.push_back(std::move(p));
    }
    const auto rows = next_token_logprobs(teacher, enc, src.layout, prefixes);
    std::vector<Hypothesis> expanded;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      for (std::size_t id = 0; id < rows[i].size(); ++id) {
        const auto tok = static_cast<TokenId>(id);
        if (tok == kPadId || tok == kBosId) continue;
        Hypothesis h = alive[i];
        h.tokens.push_back(tok);
        h.logprob += rows[i][id];
        h.finished = tok == kEosId;
        expanded.push_back(std::move(h));
      }
    }
    const std::size_t keep = std::min(beam, expanded.size());
    std::partial_sort(expanded.begin(), expanded.begin() + static_cast<std::ptrdiff_t>(keep), expanded.end(),
                      by_score);
    alive.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      (expanded[i].finished ? finished : alive).push_back(std::move(expanded[i]));
    }
  }
  // Hypotheses cut off by max_len compete unfinished.
  for (auto& h : alive) finished.push_back(std::move(h));

  const Hypothesis* best = nullptr;
  for (const auto& h : finished) {
    if (best == nullptr || normalized(h) > normalized(*best) ||
        (normalized(h) == normalized(*best) && h.tokens < best->tokens)) {
      best = &h;
    }
  }
  std::vector<TokenId> out = best->tokens;
  if (!out.empty() && out.back() == kEosId) out.pop_back();
  return out;
}

std::vector<Candidate> rescore(std::vector<Candidate> candidates, std::span<const TokenId> src_ids,
                               const Transformer& teacher, bool normalized_scores) {
  check_teacher(teacher);
  if (candidates.empty()) throw ContractError("rescore: empty candidate list");
  NoGradScope no_grad;
  const TokenBatch src = TokenBatch::single(src_ids);
  Tensor enc = teacher.encode(src);

  std::vector<std::vector<TokenId>> inputs;
  std::vector<TokenId> targets;
  for (const auto& c : candidates) {
    std::vector<TokenId> in{kBosId};
    in.insert(in.end(), c.tokens.begin(), c.tokens.end());
    inputs.push_back(std::move(in));
    targets.insert(targets.end(), c.tokens.begin(), c.tokens.end());
    targets.push_back(kEosId);
  }
  const TokenBatch batch = TokenBatch::from(inputs);
  const std::vector<std::size_t> enc_index(candidates.size(), 0);
  Tensor logp = log_softmax_rows(teacher.decode_at(batch, enc, src.layout, enc_index));
  const std::size_t v = logp.cols();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    double ll = 0;
    for (std::size_t t = 0; t < batch.layout.lengths[c]; ++t) {
      const std::size_t r = batch.layout.offsets[c] + t;
      ll += logp.data()[r * v + static_cast<std::size_t>(targets[r])];
    }
    const double len = static_cast<double>(std::max<std::size_t>(1, candidates[c].tokens.size()));
    candidates[c].teacher_score = static_cast<real>(normalized_scores ? ll / len : ll);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (*a.teacher_score != *b.teacher_score) return *a.teacher_score > *b.teacher_score;
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
    return a.tokens < b.tokens;
  });
  return candidates;
}

NpdResult translate_npd(std::span<const TokenId> src_ids, const LengthRule& rule, const Transformer& nat,
                        const Transformer* teacher, bool normalized_scores) {
  if (src_ids.empty()) throw EmptySequenceError("translate_npd: empty source");
  const auto lengths = length_candidates(src_ids.size(), rule);
  NpdResult result;
  result.all = decode_parallel_lengths(src_ids, lengths, nat);
  if (rule.half_window == 0) {
    result.best = result.all.front();
    return result;
  }
  if (teacher == nullptr) throw ContractError("noisy parallel decoding needs a teacher for rescoring");
  auto ranked = rescore(result.all, src_ids, *teacher, normalized_scores);
  result.best = ranked.front();
  // Copy the scores back into length order.
  for (auto& c : result.all) {
    for (const auto& r : ranked) {
      if (r.length == c.length) c.teacher_score = r.teacher_score;
    }
  }
  return result;
}

DedupResult dedup_postprocess(std::span<const TokenId> tokens) {
  DedupResult r;
  for (TokenId t : tokens) {
    if (!r.tokens.empty() && r.tokens.back() == t) {
      ++r.n_ops;
    } else {
      r.tokens.push_back(t);
    }
  }
  return r;
}

std::pair<std::vector<std::string>, std::size_t> dedup_postprocess(std::span<const std::string> tokens) {
  std::pair<std::vector<std::string>, std::size_t> r{{}, 0};
  for (const auto& t : tokens) {
    if (!r.first.empty() && r.first.back() == t) {
      ++r.second;
    } else {
      r.first.push_back(t);
    }
  }
  return r;
}

LatencyReport measure_latency(std::span<const std::vector<TokenId>> sources,
                              const std::function<void(std::span<const TokenId>)>& decode_fn,
                              std::size_t warmup) {
  if (sources.empty()) throw ContractError("measure_latency: empty corpus");
  using Clock = std::chrono::steady_clock;
  LatencyReport report;
  report.warmup_sentences = std::min(warmup, sources.size());
  for (std::size_t i = 0; i < report.warmup_sentences; ++i) decode_fn(sources[i]);

  std::vector<double> ms;
  ms.reserve(sources.size());
  for (const auto& s : sources) {
    const auto t0 = Clock::now();
    decode_fn(s);
    ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  double sum = 0;
  for (double x : ms) sum += x;
  report.sentences = ms.size();
  report.mean_ms = sum / static_cast<double>(ms.size());
  double var = 0;
  for (double x : ms) var += (x - report.mean_ms) * (x - report.mean_ms);
  report.stddev_ms = std::sqrt(var / static_cast<double>(ms.size()));
  return report;
}

NATREG_NAMESPACE_END
