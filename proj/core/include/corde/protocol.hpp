#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "corde/command.hpp"
#include "corde/engine.hpp"

namespace corde {

inline constexpr int kProtocolVersion = 1;

/// Malformed or rejected message. `code` is one of: bad_message, bad_command,
/// not_controller, protocol_version, rejected.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// Command fields as they appear on the wire and in session logs, e.g.
/// {"command": "grab", "rod": 0, "index": 5, "target": [x, y, z]}.
nlohmann::json command_to_json(const Command& command);
/// Throws ProtocolError("bad_command", ...) on missing or mistyped fields.
Command command_from_json(const nlohmann::json& j);

nlohmann::json hello_message(const World& world, std::size_t stride);
/// Positions at indices 0, stride, 2*stride, ... of every rod.
nlohmann::json state_frame_message(const Snapshot& snapshot, std::size_t stride,
                                   bool include_frames);
nlohmann::json ack_message(const nlohmann::json& id, std::uint64_t apply_step);
nlohmann::json error_message(const std::string& code, const std::string& message);

}  // namespace corde
