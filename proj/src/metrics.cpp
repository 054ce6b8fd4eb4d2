#include "natreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "natreg/errors.hpp"
#include "natreg/inference.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

using NGram = std::vector<TokenId>;

std::map<NGram, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[NGram(s.begin() + i, s.begin() + i + n)];
  return counts;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

BleuStats bleu_stats(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                        std::to_string(references.size()) + " references");
  }
  BleuStats st;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    st.hyp_length += hyp.size();
    st.ref_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = ngram_counts(hyp, n);
      const auto r = ngram_counts(ref, n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        if (it != r.end()) st.matches[n - 1] += std::min(count, it->second);
        st.totals[n - 1] += count;
      }
    }
  }
  return st;
}

double bleu_from_stats(const BleuStats& st, const BleuOptions& options) {
  if (st.hyp_length == 0) return 0.0;
  double log_precision = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = static_cast<double>(st.matches[n]);
    double t = static_cast<double>(st.totals[n]);
    if (st.matches[n] == 0) {
      if (n == 0 || !options.smooth) return 0.0;
      m += 1;
      t += 1;
    }
    log_precision += std::log(m / t) / 4;
  }
  const double c = static_cast<double>(st.hyp_length);
  const double r = static_cast<double>(st.ref_length);
  const double bp = c < r ? std::exp(1 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_precision);
}

double bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references,
            const BleuOptions& options) {
  return bleu_from_stats(bleu_stats(hypotheses, references), options);
}

RepetitionStats repetition_stats(std::span<const Sentence> hypotheses) {
  RepetitionStats r;
  if (hypotheses.empty()) return r;
  std::size_t ops = 0, with_repeats = 0;
  for (const auto& h : hypotheses) {
    const auto n = dedup_postprocess(h).n_ops;
    ops += n;
    if (n > 0) ++with_repeats;
  }
  const auto count = static_cast<double>(hypotheses.size());
  r.mean_dedup_ops = static_cast<double>(ops) / count;
  r.pct_with_repeats = 100.0 * static_cast<double>(with_repeats) / count;
  return r;
}

double coverage_ratio(std::span<const Sentence> hypotheses, std::span<const Sentence> sources,
                      SyntheticTask task, std::span<const TokenId> permutation) {
  if (hypotheses.size() != sources.size()) throw ContractError("coverage_ratio: hypothesis/source counts differ");
  if (hypotheses.empty()) return 0.0;
  double sum = 0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto expected = task_image(task, sources[s], permutation);
    const std::set<TokenId> want(expected.begin(), expected.end());
    if (want.empty()) continue;
    const std::set<TokenId> have(hypotheses[s].begin(), hypotheses[s].end());
    std::size_t hit = 0;
    for (TokenId t : want) hit += have.count(t);
    sum += static_cast<double>(hit) / static_cast<double>(want.size());
  }
  return sum / static_cast<double>(sources.size());
}

std::vector<TokenId> infer_permutation(std::span<const Sentence> sources, std::span<const Sentence> references,
                                       std::size_t vocab_size) {
  if (sources.size() != references.size()) throw ContractError("infer_permutation: counts differ");
  std::vector<TokenId> perm(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) perm[i] = static_cast<TokenId>(i);
  std::vector<bool> fixed(vocab_size, false);
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (sources[s].size() != references[s].size()) {
      throw ContractError("infer_permutation: line " + std::to_string(s + 1) + " is not a substitution");
    }
    for (std::size_t i = 0; i < sources[s].size(); ++i) {
      const auto a = static_cast<std::size_t>(sources[s][i]);
      if (a >= vocab_size) throw ContractError("infer_permutation: token outside vocabulary");
      if (fixed[a] && perm[a] != references[s][i]) {
        throw ContractError("infer_permutation: inconsistent mapping on line " + std::to_string(s + 1));
      }
      perm[a] = references[s][i];
      fixed[a] = true;
    }
  }
  return perm;
}

std::string format_report(const EvalReport& r) {
  std::string out;
  out += "bleu = " + fixed2(r.bleu) + "\n";
  out += "sentences = " + std::to_string(r.sentences) + "\n";
  out += "per_sentence_dedup_ops = " + fixed4(r.per_sentence_dedup_ops) + "\n";
  out += "pct_sentences_with_repeats = " + fixed2(r.pct_sentences_with_repeats) + "\n";
  if (r.coverage_ratio) out += "coverage_ratio = " + fixed4(*r.coverage_ratio) + "\n";
  return out;
}

std::string format_report_lines(const EvalReport& r) {
  std::string out;
  out += "metric=bleu value=" + fixed2(r.bleu) + "\n";
  out += "metric=per_sentence_dedup_ops value=" + fixed4(r.per_sentence_dedup_ops) + "\n";
  out += "metric=pct_sentences_with_repeats value=" + fixed2(r.pct_sentences_with_repeats) + "\n";
  if (r.coverage_ratio) out += "metric=coverage_ratio value=" + fixed4(*r.coverage_ratio) + "\n";
  return out;
}

NATREG_NAMESPACE_END
