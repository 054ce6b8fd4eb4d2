#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace natreg::cli {

/// Record of one CLI stage: written with status "running" before the stage
/// starts and rewritten with the final status and artifacts afterwards.
class RunManifest {
 public:
  RunManifest(std::filesystem::path path, std::string stage, std::vector<std::string> argv);

  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void set_config(std::string key, std::string value) { config_[std::move(key)] = std::move(value); }
  void add_artifact(std::string role, const std::filesystem::path& path);

  void begin();
  void finish(bool ok, const std::string& error = {});

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  void write() const;

  std::filesystem::path path_;
  std::string stage_;
  std::vector<std::string> argv_;
  std::uint64_t seed_ = 0;
  std::map<std::string, std::string> config_;
  std::map<std::string, std::string> artifacts_;
  std::string started_at_;
  std::string finished_at_;
  std::string status_ = "pending";
  std::string error_;
};

std::string utc_timestamp();

}  // namespace natreg::cli
