#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "corde/command.hpp"
#include "corde/rod.hpp"
#include "corde/scene.hpp"

namespace corde {

struct SessionRecord {
  std::uint64_t id = 0;
  std::uint64_t apply_step = 0;
  Command command;
};

/// Newline-delimited JSON:
///   {"type":"session","protocol_version":1,"scene":{...}}
///   {"type":"command","id":7,"apply_step":1200,"command":"grab",...}   (one per command)
///   {"type":"end","step":5000,"checksum":...}
struct SessionLog {
  nlohmann::json scene;
  std::vector<SessionRecord> commands;
  std::optional<std::uint64_t> end_step;
  std::optional<double> checksum;
};

/// Thread-safe appender; every record is flushed as it is written.
class SessionWriter {
 public:
  SessionWriter(const std::filesystem::path& path, const nlohmann::json& scene);
  void append(const SessionRecord& record);
  void finish(std::uint64_t step, double checksum);

 private:
  std::mutex mutex_;
  std::ofstream out_;
  bool finished_ = false;
};

/// Throws std::runtime_error with file:line on malformed records.
SessionLog read_session(const std::filesystem::path& path);

/// Weighted sum of all point coordinates; a compact fingerprint of a configuration.
double configuration_checksum(std::span<const RodState> rods);

/// Rebuilds the recorded scene and steps it to the end step, applying each command at its
/// recorded step. Scene-relative paths resolve against `base_dir`.
World replay_session(const SessionLog& log, const std::filesystem::path& base_dir = ".");

}  // namespace corde
