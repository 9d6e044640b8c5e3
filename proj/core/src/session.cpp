#include "corde/session.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include "corde/protocol.hpp"

namespace corde {

using nlohmann::json;

SessionWriter::SessionWriter(const std::filesystem::path& path, const json& scene)
    : out_(path) {
  if (!out_) throw std::runtime_error("cannot open session log for writing: " + path.string());
  json header = {{"type", "session"}, {"protocol_version", kProtocolVersion}, {"scene", scene}};
  out_ << header.dump() << '\n' << std::flush;
}

void SessionWriter::append(const SessionRecord& record) {
  std::lock_guard lock(mutex_);
  if (finished_) throw std::logic_error("session log already finished");
  json j = command_to_json(record.command);
  j["type"] = "command";
  j["id"] = record.id;
  j["apply_step"] = record.apply_step;
  out_ << j.dump() << '\n' << std::flush;
}

void SessionWriter::finish(std::uint64_t step, double checksum) {
  std::lock_guard lock(mutex_);
  if (finished_) return;
  finished_ = true;
  json j = {{"type", "end"}, {"step", step}, {"checksum", checksum}};
  out_ << j.dump() << '\n' << std::flush;
}

SessionLog read_session(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("replay file missing: " + path.string());
  SessionLog log;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      fail("invalid JSON");
    }
    const std::string type = j.value("type", "");
    if (type == "session") {
      if (header) fail("duplicate session header");
      if (j.value("protocol_version", -1) != kProtocolVersion) fail("unsupported protocol version");
      log.scene = j.at("scene");
      header = true;
    } else if (type == "command") {
      if (!header) fail("command before session header");
      if (log.end_step) fail("command after end record");
      SessionRecord r;
      try {
        r.id = j.at("id").get<std::uint64_t>();
        r.apply_step = j.at("apply_step").get<std::uint64_t>();
        r.command = command_from_json(j);
      } catch (const std::exception& e) {
        fail(e.what());
      }
      if (!log.commands.empty() && r.apply_step < log.commands.back().apply_step) {
        fail("apply steps must be non-decreasing");
      }
      log.commands.push_back(r);
    } else if (type == "end") {
      if (!header) fail("end before session header");
      log.end_step = j.at("step").get<std::uint64_t>();
      log.checksum = j.at("checksum").get<double>();
    } else {
      fail("unknown record type '" + type + "'");
    }
  }
  if (!header) throw std::runtime_error(path.string() + ": missing session header");
  return log;
}

double configuration_checksum(std::span<const RodState> rods) {
  double sum = 0;
  for (const auto& rod : rods) {
    for (std::size_t i = 0; i < rod.num_points(); ++i) {
      const Vec3& x = rod.positions[i];
      const double w = 1.0 + static_cast<double>(i % 7) / 7.0;
      sum += w * (x.x() + 2.0 * x.y() + 3.0 * x.z());
    }
  }
  return sum;
}

World replay_session(const SessionLog& log, const std::filesystem::path& base_dir) {
  const SceneConfig scene = parse_scene(log.scene, base_dir);
  if (scene.world.broadphase_once_per_epoch) {
    throw std::runtime_error("replay requires broadphase.once_per_epoch to be off");
  }
  World world = build_world(scene);
  const std::uint64_t end = log.end_step.value_or(
      log.commands.empty() ? world.step_index() : log.commands.back().apply_step + 1);
  std::size_t next = 0;
  while (world.step_index() < end) {
    std::vector<Command> due;
    while (next < log.commands.size() && log.commands[next].apply_step <= world.step_index()) {
      due.push_back(log.commands[next++].command);
    }
    world.stage_commands(std::move(due));
    world.step();
  }
  return world;
}

}  // namespace corde
