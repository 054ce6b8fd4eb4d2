#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "natreg/vocabulary.hpp"

NATREG_NAMESPACE_BEGIN

enum class Provenance { GroundTruth, Distilled };

std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);

struct SentencePair {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  Provenance provenance = Provenance::GroundTruth;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
  /// Throws EmptySequenceError if any side of any pair is empty.
  void validate() const;
};

enum class SyntheticTask { Copy, Reverse, Cipher };

std::string_view task_name(SyntheticTask task);
/// Throws ContractError on an unknown name.
SyntheticTask parse_task(std::string_view name);

struct SyntheticSpec {
  SyntheticTask task = SyntheticTask::Copy;
  std::size_t vocab_size = 20;  // content tokens, reserved ids excluded
  std::size_t n_pairs = 1000;
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  std::uint64_t seed = 1;
  /// Sample sources without equal adjacent tokens, so any repeat in a
  /// hypothesis is a model error.
  bool distinct_neighbors = true;
};

/// Permutation π over token ids used by the cipher task. Reserved ids map to
/// themselves; content ids are shuffled by a generator seeded from `seed`.
std::vector<TokenId> cipher_permutation(std::size_t vocab_size, std::uint64_t seed);

/// Expected target of src under a deterministic task. `permutation` is only
/// read for Cipher.
std::vector<TokenId> task_image(SyntheticTask task, std::span<const TokenId> src,
                                std::span<const TokenId> permutation);

/// Deterministic given spec. Throws ContractError on an invalid length range.
ParallelCorpus gen_synthetic_corpus(const SyntheticSpec& spec, std::size_t model_max_len = 64);

struct CorpusSplit {
  ParallelCorpus train;
  ParallelCorpus dev;
};

/// Seeded shuffle, then the first ceil(fraction·N) pairs (at least one when
/// N ≥ 2) form the dev set. Relative order inside each part follows the shuffle.
CorpusSplit split_dev(const ParallelCorpus& corpus, double fraction, std::uint64_t seed);

/// Reads `prefix.src` / `prefix.tgt`; `prefix.provenance` is consulted when
/// present. Empty lines raise EmptySequenceError naming the line.
ParallelCorpus read_corpus(const std::filesystem::path& prefix, const Vocabulary& vocab);
void write_corpus(const std::filesystem::path& prefix, const ParallelCorpus& corpus,
                  const Vocabulary& vocab);

/// Reads one tokenized sentence per line, keeping empty lines as empty sequences.
std::vector<std::vector<TokenId>> read_lines(const std::filesystem::path& path,
                                             const Vocabulary& vocab);

std::filesystem::path with_suffix(const std::filesystem::path& prefix, std::string_view suffix);

NATREG_NAMESPACE_END
