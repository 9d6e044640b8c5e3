#include "corde/command.hpp"

namespace corde {

std::string to_string(CommandKind kind) {
  switch (kind) {
    case CommandKind::kInsertVelocity:
      return "insert_velocity";
    case CommandKind::kRotateVelocity:
      return "rotate_velocity";
    case CommandKind::kGrab:
      return "grab";
    case CommandKind::kRelease:
      return "release";
    case CommandKind::kSetParams:
      return "set_params";
  }
  return "unknown";
}

std::optional<CommandKind> command_kind_from_string(const std::string& name) {
  if (name == "insert_velocity") return CommandKind::kInsertVelocity;
  if (name == "rotate_velocity") return CommandKind::kRotateVelocity;
  if (name == "grab") return CommandKind::kGrab;
  if (name == "release") return CommandKind::kRelease;
  if (name == "set_params") return CommandKind::kSetParams;
  return std::nullopt;
}

}  // namespace corde
