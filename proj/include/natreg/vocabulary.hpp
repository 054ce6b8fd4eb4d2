#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "natreg/ops.hpp"

NATREG_NAMESPACE_BEGIN

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr std::size_t kReservedTokens = 4;

/// Bidirectional token↔id map. Ids 0..3 are PAD, BOS, EOS, UNK; regular
/// tokens follow in insertion order.
class Vocabulary {
 public:
  Vocabulary();

  /// Vocabulary of n synthetic tokens named w0..w{n-1}.
  static Vocabulary synthetic(std::size_t n_tokens);
  /// One token per line; line k (0-based) receives id k + 4.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Adds a token if new; returns its id either way.
  TokenId add(std::string_view token);
  TokenId id(std::string_view token) const;  // UNK when absent
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const noexcept { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Whitespace tokenization; unknown tokens map to UNK. With append_eos the
/// EOS id is appended.
std::vector<TokenId> tokenize(std::string_view line, const Vocabulary& vocab, bool append_eos = false);

/// Space-joined tokens, skipping PAD/BOS/EOS.
std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

NATREG_NAMESPACE_END
