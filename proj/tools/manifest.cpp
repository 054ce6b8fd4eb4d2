#include "manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <json.hpp>

#ifndef NATREG_BUILD_ID
#define NATREG_BUILD_ID "unknown"
#endif

namespace natreg::cli {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest::RunManifest(std::filesystem::path path, std::string stage, std::vector<std::string> argv)
    : path_(std::move(path)), stage_(std::move(stage)), argv_(std::move(argv)) {}

void RunManifest::add_artifact(std::string role, const std::filesystem::path& path) {
  artifacts_[std::move(role)] = path.string();
}

void RunManifest::begin() {
  started_at_ = utc_timestamp();
  status_ = "running";
  write();
}

void RunManifest::finish(bool ok, const std::string& error) {
  finished_at_ = utc_timestamp();
  status_ = ok ? "ok" : "failed";
  error_ = error;
  write();
}

void RunManifest::write() const {
  nlohmann::ordered_json j;
  j["stage"] = stage_;
  j["build_id"] = NATREG_BUILD_ID;
  j["argv"] = argv_;
  j["seed"] = seed_;
  j["config"] = config_;
  j["artifacts"] = artifacts_;
  j["started_at"] = started_at_;
  j["finished_at"] = finished_at_;
  j["status"] = status_;
  if (!error_.empty()) j["error"] = error_;
  std::ofstream out(path_);
  if (out) out << j.dump(2) << '\n';
}

}  // namespace natreg::cli
