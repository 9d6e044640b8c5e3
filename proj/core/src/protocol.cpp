#include "corde/protocol.hpp"

namespace corde {

using nlohmann::json;

namespace {

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ProtocolError("bad_command", std::string("missing field '") + key + "'");
  return *it;
}

std::uint32_t index_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_number_integer() || v.get<long long>() < 0 ||
      v.get<long long>() > static_cast<long long>(UINT32_MAX)) {
    throw ProtocolError("bad_command", std::string("'") + key + "' must be a non-negative integer");
  }
  return v.get<std::uint32_t>();
}

double number_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_number()) throw ProtocolError("bad_command", std::string("'") + key + "' must be a number");
  return v.get<double>();
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

json command_to_json(const Command& c) {
  json j;
  j["command"] = to_string(c.kind);
  switch (c.kind) {
    case CommandKind::kInsertVelocity:
    case CommandKind::kRotateVelocity:
      j["rod"] = c.rod;
      j["value"] = c.value;
      break;
    case CommandKind::kGrab:
      j["rod"] = c.rod;
      j["index"] = c.index;
      j["target"] = vec_json(c.target);
      break;
    case CommandKind::kRelease:
      j["rod"] = c.rod;
      j["index"] = c.index;
      break;
    case CommandKind::kSetParams:
      if (c.dt) j["dt"] = *c.dt;
      if (c.iterations) j["iterations"] = *c.iterations;
      if (c.batch) j["batch"] = *c.batch;
      break;
  }
  return j;
}

Command command_from_json(const json& j) {
  if (!j.is_object()) throw ProtocolError("bad_command", "command must be an object");
  const json& name = field(j, "command");
  if (!name.is_string()) throw ProtocolError("bad_command", "'command' must be a string");
  const auto kind = command_kind_from_string(name.get<std::string>());
  if (!kind) throw ProtocolError("bad_command", "unknown command '" + name.get<std::string>() + "'");
  Command c;
  c.kind = *kind;
  switch (c.kind) {
    case CommandKind::kInsertVelocity:
    case CommandKind::kRotateVelocity:
      c.rod = index_field(j, "rod");
      c.value = number_field(j, "value");
      break;
    case CommandKind::kGrab: {
      c.rod = index_field(j, "rod");
      c.index = index_field(j, "index");
      const json& t = field(j, "target");
      if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number() ||
          !t[2].is_number()) {
        throw ProtocolError("bad_command", "'target' must be [x, y, z]");
      }
      c.target = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
      break;
    }
    case CommandKind::kRelease:
      c.rod = index_field(j, "rod");
      c.index = index_field(j, "index");
      break;
    case CommandKind::kSetParams:
      if (j.contains("dt")) c.dt = number_field(j, "dt");
      if (j.contains("iterations")) c.iterations = static_cast<int>(index_field(j, "iterations"));
      if (j.contains("batch")) c.batch = static_cast<int>(index_field(j, "batch"));
      if (!c.dt && !c.iterations && !c.batch) {
        throw ProtocolError("bad_command", "set_params needs dt, iterations or batch");
      }
      break;
  }
  return c;
}

json hello_message(const World& world, std::size_t stride) {
  json rods = json::array();
  for (std::size_t r = 0; r < world.num_rods(); ++r) {
    rods.push_back({{"points", world.rods()[r].num_points()}, {"radius", world.params()[r].radius}});
  }
  return {{"type", "hello"},
          {"protocol_version", kProtocolVersion},
          {"scene",
           {{"rods", rods},
            {"mesh", world.mesh() != nullptr},
            {"dt", world.config().dt},
            {"step_index", world.step_index()}}},
          {"stride", stride}};
}

json state_frame_message(const Snapshot& snap, std::size_t stride, bool include_frames) {
  if (stride == 0) stride = 1;
  json rods = json::array();
  for (std::size_t r = 0; r < snap.positions.size(); ++r) {
    json pos = json::array();
    for (std::size_t i = 0; i < snap.positions[r].size(); i += stride) {
      pos.push_back(vec_json(snap.positions[r][i]));
    }
    json rod = {{"positions", pos}};
    if (include_frames) {
      json frames = json::array();
      for (std::size_t i = 0; i < snap.frames[r].size(); i += stride) {
        const Quat& q = snap.frames[r][i];
        frames.push_back({q.w(), q.x(), q.y(), q.z()});
      }
      rod["frames"] = frames;
    }
    rods.push_back(rod);
  }
  return {{"type", "state_frame"},
          {"sequence", snap.sequence},
          {"step_index", snap.step_index},
          {"stride", stride},
          {"rods", rods}};
}

json ack_message(const json& id, std::uint64_t apply_step) {
  return {{"type", "ack"}, {"id", id}, {"apply_step", apply_step}};
}

json error_message(const std::string& code, const std::string& message) {
  return {{"type", "error"}, {"code", code}, {"message", message}};
}

}  // namespace corde
