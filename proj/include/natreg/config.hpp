#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "natreg/losses.hpp"

NATREG_NAMESPACE_BEGIN

/// Optimizer, schedule, batching, and objective settings for one training run.
struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;
  std::size_t max_steps = 1000;
  real base_lr = 1;
  std::size_t warmup_steps = 200;
  real adam_beta1 = real(0.9);
  real adam_beta2 = real(0.98);
  real adam_eps = real(1e-9);
  std::size_t eval_interval = 100;
  double dev_fraction = 0.05;
  LossWeights weights;
  LossMode mode;
  ModelConfig model;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Parsed `key = value` lines. Blank lines and lines starting with '#' are
/// skipped; a repeated key or a line without '=' is a ConfigError.
std::map<std::string, std::string> parse_key_values(std::string_view text);

/// Overlays the keys of `text` onto `base`. Unknown keys are errors.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
/// Every key in canonical order; parse_train_config(format(c)) == c.
std::string format_train_config(const TrainConfig& config);

std::string format_model_config(const ModelConfig& config);
ModelConfig parse_model_config(std::string_view text);

/// Applies one key to a config. Returns false when the key is unknown.
bool apply_train_key(TrainConfig& config, std::string_view key, std::string_view value);

/// Named ablation arms: base, sim, rec, both, universal.
LossMode parse_loss_mode(std::string_view name);
std::string_view loss_mode_name(const LossMode& mode);

NATREG_NAMESPACE_END
