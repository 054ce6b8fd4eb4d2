#include "natreg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "natreg/errors.hpp"
#include "natreg/rng.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

constexpr std::uint64_t kLengthStream = 11;
constexpr std::uint64_t kTokenStream = 12;
constexpr std::uint64_t kCipherStream = 13;

std::vector<std::string> read_text_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

std::string_view provenance_name(Provenance p) {
  return p == Provenance::Distilled ? "distilled" : "ground_truth";
}

Provenance parse_provenance(std::string_view name) {
  if (name == "distilled") return Provenance::Distilled;
  if (name == "ground_truth") return Provenance::GroundTruth;
  throw FormatError("unknown provenance '" + std::string(name) + "'");
}

void ParallelCorpus::validate() const {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].src.empty() || pairs[i].tgt.empty()) {
      throw EmptySequenceError("pair " + std::to_string(i) + " has an empty side");
    }
  }
}

std::string_view task_name(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::Copy: return "copy";
    case SyntheticTask::Reverse: return "reverse";
    case SyntheticTask::Cipher: return "cipher";
  }
  return "copy";
}

SyntheticTask parse_task(std::string_view name) {
  if (name == "copy") return SyntheticTask::Copy;
  if (name == "reverse") return SyntheticTask::Reverse;
  if (name == "cipher") return SyntheticTask::Cipher;
  throw ContractError("unknown task '" + std::string(name) + "' (expected copy, reverse, or cipher)");
}

std::vector<TokenId> cipher_permutation(std::size_t vocab_size, std::uint64_t seed) {
  std::vector<TokenId> perm(kReservedTokens + vocab_size);
  std::iota(perm.begin(), perm.end(), TokenId(0));
  Rng rng = make_rng(derive_seed(seed, kCipherStream));
  std::shuffle(perm.begin() + kReservedTokens, perm.end(), rng);
  return perm;
}

std::vector<TokenId> task_image(SyntheticTask task, std::span<const TokenId> src,
                                std::span<const TokenId> permutation) {
  std::vector<TokenId> out(src.begin(), src.end());
  switch (task) {
    case SyntheticTask::Copy:
      break;
    case SyntheticTask::Reverse:
      std::reverse(out.begin(), out.end());
      break;
    case SyntheticTask::Cipher:
      for (auto& id : out) {
        if (id < 0 || static_cast<std::size_t>(id) >= permutation.size()) {
          throw ContractError("token id " + std::to_string(id) + " outside the cipher alphabet");
        }
        id = permutation[static_cast<std::size_t>(id)];
      }
      break;
  }
  return out;
}

ParallelCorpus gen_synthetic_corpus(const SyntheticSpec& spec, std::size_t model_max_len) {
  if (spec.min_len < 1 || spec.min_len > spec.max_len || spec.max_len + 2 > model_max_len) {
    throw ContractError("length range [" + std::to_string(spec.min_len) + ", " +
                        std::to_string(spec.max_len) + "] must lie within [1, " +
                        std::to_string(model_max_len - 2) + "]");
  }
  if (spec.vocab_size < 1 || (spec.distinct_neighbors && spec.vocab_size < 2 && spec.max_len > 1)) {
    throw ContractError("vocabulary too small for the requested corpus");
  }
  const auto perm = cipher_permutation(spec.vocab_size, spec.seed);
  Rng len_rng = make_rng(derive_seed(spec.seed, kLengthStream));
  Rng tok_rng = make_rng(derive_seed(spec.seed, kTokenStream));
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<TokenId> tok_dist(
      static_cast<TokenId>(kReservedTokens), static_cast<TokenId>(kReservedTokens + spec.vocab_size - 1));

  ParallelCorpus corpus;
  corpus.pairs.reserve(spec.n_pairs);
  for (std::size_t n = 0; n < spec.n_pairs; ++n) {
    const std::size_t len = len_dist(len_rng);
    std::vector<TokenId> src;
    src.reserve(len);
    while (src.size() < len) {
      const TokenId id = tok_dist(tok_rng);
      if (spec.distinct_neighbors && !src.empty() && src.back() == id) continue;
      src.push_back(id);
    }
    auto tgt = task_image(spec.task, src, perm);
    corpus.pairs.push_back({std::move(src), std::move(tgt)});
  }
  return corpus;
}

CorpusSplit split_dev(const ParallelCorpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("dev fraction must be in [0,1)");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_dev = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(corpus.size())));
  if (fraction > 0.0 && corpus.size() >= 2) n_dev = std::clamp<std::size_t>(n_dev, 1, corpus.size() - 1);
  CorpusSplit split;
  split.train.provenance = split.dev.provenance = corpus.provenance;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& part = i < n_dev ? split.dev : split.train;
    part.pairs.push_back(corpus.pairs[order[i]]);
  }
  return split;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, std::string_view suffix) {
  std::filesystem::path p = prefix;
  p += suffix;
  return p;
}

std::vector<std::vector<TokenId>> read_lines(const std::filesystem::path& path,
                                             const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> out;
  for (const auto& line : read_text_lines(path)) out.push_back(tokenize(line, vocab));
  return out;
}

ParallelCorpus read_corpus(const std::filesystem::path& prefix, const Vocabulary& vocab) {
  const auto src_path = with_suffix(prefix, ".src");
  const auto tgt_path = with_suffix(prefix, ".tgt");
  const auto src = read_lines(src_path, vocab);
  const auto tgt = read_lines(tgt_path, vocab);
  if (src.size() != tgt.size()) {
    throw FormatError(src_path.string() + " has " + std::to_string(src.size()) + " lines but " +
                      tgt_path.string() + " has " + std::to_string(tgt.size()));
  }
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].empty() || tgt[i].empty()) {
      throw EmptySequenceError(prefix.string() + ": empty sentence on line " + std::to_string(i + 1));
    }
    corpus.pairs.push_back({src[i], tgt[i]});
  }
  const auto prov_path = with_suffix(prefix, ".provenance");
  if (std::filesystem::exists(prov_path)) {
    const auto lines = read_text_lines(prov_path);
    if (lines.empty()) throw FormatError(prov_path.string() + " is empty");
    corpus.provenance = parse_provenance(lines.front());
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& prefix, const ParallelCorpus& corpus,
                  const Vocabulary& vocab) {
  std::ofstream src(with_suffix(prefix, ".src"));
  std::ofstream tgt(with_suffix(prefix, ".tgt"));
  std::ofstream prov(with_suffix(prefix, ".provenance"));
  if (!src || !tgt || !prov) throw FormatError("cannot write corpus " + prefix.string());
  for (const auto& p : corpus.pairs) {
    src << detokenize(p.src, vocab) << '\n';
    tgt << detokenize(p.tgt, vocab) << '\n';
  }
  prov << provenance_name(corpus.provenance) << '\n';
}

NATREG_NAMESPACE_END
