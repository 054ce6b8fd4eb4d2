#include "natreg/vocabulary.hpp"

#include <fstream>
#include <sstream>

#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

namespace {
const char* const kReservedNames[] = {"<pad>", "<s>", "</s>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const char* name : kReservedNames) {
    ids_.emplace(name, static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(name);
  }
}

Vocabulary Vocabulary::synthetic(std::size_t n_tokens) {
  Vocabulary v;
  for (std::size_t i = 0; i < n_tokens; ++i) v.add("w" + std::to_string(i));
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.find_first_of(" \t") != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed token line");
    }
    if (v.contains(line)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": duplicate token '" + line + "'");
    }
    v.add(line);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write vocabulary " + path.string());
  for (std::size_t i = kReservedTokens; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

TokenId Vocabulary::add(std::string_view token) {
  auto it = ids_.find(std::string(token));
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

std::vector<TokenId> tokenize(std::string_view line, const Vocabulary& vocab, bool append_eos) {
  std::vector<TokenId> ids;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) ids.push_back(vocab.id(tok));
  if (append_eos) ids.push_back(kEosId);
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

NATREG_NAMESPACE_END
