#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "corde/math.hpp"

namespace corde {

enum class CommandKind { kInsertVelocity, kRotateVelocity, kGrab, kRelease, kSetParams };

/// Steering input applied at a time-step boundary.
struct Command {
  CommandKind kind = CommandKind::kInsertVelocity;
  std::uint32_t rod = 0;
  std::uint32_t index = 0;     // grab / release
  double value = 0;            // insertion speed [m/s] or axial rotation rate [rad/s]
  Vec3 target = Vec3::Zero();  // grab target
  std::optional<double> dt;
  std::optional<int> iterations;
  std::optional<int> batch;

  static Command insert_velocity(std::uint32_t rod, double v) {
    Command c;
    c.kind = CommandKind::kInsertVelocity;
    c.rod = rod;
    c.value = v;
    return c;
  }
  static Command rotate_velocity(std::uint32_t rod, double w) {
    Command c;
    c.kind = CommandKind::kRotateVelocity;
    c.rod = rod;
    c.value = w;
    return c;
  }
  static Command grab(std::uint32_t rod, std::uint32_t index, const Vec3& target) {
    Command c;
    c.kind = CommandKind::kGrab;
    c.rod = rod;
    c.index = index;
    c.target = target;
    return c;
  }
  static Command release(std::uint32_t rod, std::uint32_t index) {
    Command c;
    c.kind = CommandKind::kRelease;
    c.rod = rod;
    c.index = index;
    return c;
  }
};

std::string to_string(CommandKind kind);
std::optional<CommandKind> command_kind_from_string(const std::string& name);

}  // namespace corde
