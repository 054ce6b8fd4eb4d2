#pragma once

// Shared fixtures for the test binaries. Compiled against whichever precision
// the including target selects.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "natreg/nat_model.hpp"
#include "natreg/rng.hpp"
#include "natreg/vocabulary.hpp"

namespace natreg_test {

using namespace natreg;

inline ModelConfig tiny_config(std::size_t vocab = 12, std::size_t d_model = 8) {
  ModelConfig c;
  c.d_model = d_model;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 2 * d_model;
  c.dropout = 0;
  c.max_len = 24;
  c.src_vocab_size = vocab;
  c.tgt_vocab_size = vocab;
  return c;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<real> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<real>(dist(rng));
  return Tensor::from(std::move(shape), std::move(data));
}

inline std::vector<TokenId> random_ids(std::size_t n, std::size_t vocab, Rng& rng) {
  std::uniform_int_distribution<TokenId> dist(static_cast<TokenId>(kReservedTokens),
                                              static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = dist(rng);
  return ids;
}

/// Fresh scratch directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("natreg_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace natreg_test
