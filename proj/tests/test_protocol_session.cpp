#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "corde/protocol.hpp"
#include "corde/session.hpp"

using namespace corde;
using nlohmann::json;

namespace {

std::string protocol_code(const json& j) {
  try {
    command_from_json(j);
  } catch (const ProtocolError& e) {
    return e.code() + ": " + e.what();
  }
  return "";
}

SceneConfig chain_scene() {
  return parse_scene(json::parse(R"({
    "rods": [{"points": 24, "length": 0.1, "clamp": {"base": true}}],
    "gravity": [0, 0, -9.81],
    "engine": {"steps_per_epoch": 10}
  })"));
}

std::filesystem::path temp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("corde_session_" + name);
}

}  // namespace

TEST(Protocol, CommandsRoundTrip) {
  Command p;
  p.kind = CommandKind::kSetParams;
  p.dt = 5e-5;
  p.batch = 4;
  for (const Command& c : {Command::insert_velocity(1, -0.02), Command::rotate_velocity(0, 3.5),
                           Command::grab(2, 17, Vec3(0.1, -0.2, 0.3)), Command::release(2, 17), p}) {
    const Command back = command_from_json(command_to_json(c));
    EXPECT_EQ(back.kind, c.kind);
    EXPECT_EQ(back.rod, c.rod);
    EXPECT_EQ(back.index, c.index);
    EXPECT_EQ(back.value, c.value);
    EXPECT_EQ(back.target, c.target);
    EXPECT_EQ(back.dt, c.dt);
    EXPECT_EQ(back.iterations, c.iterations);
    EXPECT_EQ(back.batch, c.batch);
  }
  EXPECT_EQ(command_to_json(Command::grab(0, 5, Vec3(1, 2, 3))),
            json::parse(R"({"command": "grab", "rod": 0, "index": 5, "target": [1.0, 2.0, 3.0]})"));
}

TEST(Protocol, MalformedCommands) {
  EXPECT_EQ(protocol_code(json::parse(R"({"rod": 0})")), "bad_command: missing field 'command'");
  EXPECT_EQ(protocol_code(json::parse(R"({"command": "teleport"})")),
            "bad_command: unknown command 'teleport'");
  EXPECT_EQ(protocol_code(json::parse(R"({"command": "grab", "rod": 0, "index": -1, "target": [0, 0, 0]})")),
            "bad_command: 'index' must be a non-negative integer");
  EXPECT_EQ(protocol_code(json::parse(R"({"command": "grab", "rod": 0, "index": 1, "target": [0, 0]})")),
            "bad_command: 'target' must be [x, y, z]");
  EXPECT_EQ(protocol_code(json::parse(R"({"command": "insert_velocity", "rod": 0, "value": "fast"})")),
            "bad_command: 'value' must be a number");
  EXPECT_EQ(protocol_code(json::parse(R"({"command": "set_params"})")),
            "bad_command: set_params needs dt, iterations or batch");
  EXPECT_EQ(protocol_code(json::parse("[1, 2]")), "bad_command: command must be an object");
}

TEST(Protocol, StateFrameStride) {
  Snapshot snap;
  snap.sequence = 9;
  snap.step_index = 120;
  snap.positions.resize(1);
  snap.frames.resize(1);
  for (int i = 0; i < 512; ++i) snap.positions[0].push_back(Vec3(i, 0, 0));
  for (int i = 0; i < 511; ++i) snap.frames[0].push_back(Quat::Identity());
  const json f4 = state_frame_message(snap, 4, false);
  EXPECT_EQ(f4["type"], "state_frame");
  EXPECT_EQ(f4["sequence"], 9);
  EXPECT_EQ(f4["step_index"], 120);
  const auto& pos = f4["rods"][0]["positions"];
  ASSERT_EQ(pos.size(), 128u);
  for (std::size_t k = 0; k < pos.size(); ++k) EXPECT_EQ(pos[k][0].get<double>(), double(4 * k));
  EXPECT_FALSE(f4["rods"][0].contains("frames"));
  const json f1 = state_frame_message(snap, 1, true);
  EXPECT_EQ(f1["rods"][0]["positions"].size(), 512u);
  EXPECT_EQ(f1["rods"][0]["frames"].size(), 511u);
  EXPECT_EQ(f1["rods"][0]["frames"][0], json::array({1.0, 0.0, 0.0, 0.0}));
}

TEST(Protocol, HelloDescribesScene) {
  const World world = build_world(chain_scene());
  const json h = hello_message(world, 2);
  EXPECT_EQ(h["type"], "hello");
  EXPECT_EQ(h["protocol_version"], kProtocolVersion);
  EXPECT_EQ(h["stride"], 2);
  EXPECT_EQ(h["scene"]["rods"][0]["points"], 24);
  EXPECT_EQ(h["scene"]["mesh"], false);
  EXPECT_EQ(ack_message(7, 30), json::parse(R"({"type": "ack", "id": 7, "apply_step": 30})"));
  EXPECT_EQ(error_message("rejected", "x")["code"], "rejected");
}

TEST(Session, WriteReadRoundTrip) {
  const auto path = temp("roundtrip.ndjson");
  const json scene = scene_to_json(chain_scene());
  {
    SessionWriter w(path, scene);
    w.append({1, 10, Command::grab(0, 23, Vec3(0.1, 0, 0.01))});
    w.append({2, 40, Command::release(0, 23)});
    w.finish(100, 1.25);
    EXPECT_THROW(w.append({3, 50, Command::release(0, 1)}), std::logic_error);
  }
  const SessionLog log = read_session(path);
  EXPECT_EQ(log.scene, scene);
  ASSERT_EQ(log.commands.size(), 2u);
  EXPECT_EQ(log.commands[0].id, 1u);
  EXPECT_EQ(log.commands[0].apply_step, 10u);
  EXPECT_EQ(log.commands[0].command.kind, CommandKind::kGrab);
  EXPECT_EQ(log.commands[1].command.kind, CommandKind::kRelease);
  EXPECT_EQ(log.end_step, std::optional<std::uint64_t>(100));
  EXPECT_EQ(log.checksum, std::optional<double>(1.25));
  std::filesystem::remove(path);
}

TEST(Session, MalformedRecordsNameTheLine) {
  EXPECT_THROW(read_session(temp("absent.ndjson")), std::runtime_error);
  const auto path = temp("bad.ndjson");
  auto message = [&](const std::string& body) {
    std::ofstream(path) << body;
    try {
      read_session(path);
    } catch (const std::runtime_error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string header = R"({"type":"session","protocol_version":1,"scene":{}})";
  EXPECT_EQ(message(header + "\n{oops\n"), path.string() + ":2: invalid JSON");
  EXPECT_EQ(message(R"({"type":"command","id":1,"apply_step":0,"command":"release","rod":0,"index":0})"),
            path.string() + ":1: command before session header");
  EXPECT_EQ(message(header + "\n" +
                    R"({"type":"command","id":1,"apply_step":5,"command":"release","rod":0,"index":0})" + "\n" +
                    R"({"type":"command","id":2,"apply_step":4,"command":"release","rod":0,"index":0})"),
            path.string() + ":3: apply steps must be non-decreasing");
  EXPECT_EQ(message(R"({"type":"session","protocol_version":9,"scene":{}})"),
            path.string() + ":1: unsupported protocol version");
  EXPECT_EQ(message(header + "\n" + R"({"type":"note"})"), path.string() + ":2: unknown record type 'note'");
  EXPECT_EQ(message(""), path.string() + ": missing session header");
  std::filesystem::remove(path);
}

TEST(Session, ChecksumFormula) {
  RodState rod = init_rod({9, 0.8, Vec3::Zero(), Vec3::UnitX()});
  rod.positions[8] = Vec3(1, 2, 3);
  // weights 1 + (i mod 7) / 7, coordinate weights (1, 2, 3)
  double expected = 0;
  for (int i = 0; i < 8; ++i) expected += (1.0 + (i % 7) / 7.0) * (0.1 * i);
  expected += (1.0 + 1.0 / 7.0) * (1 + 4 + 9);
  std::vector<RodState> rods{rod};
  EXPECT_NEAR(configuration_checksum(rods), expected, 1e-13);
}

TEST(Session, ReplayReproducesEngineRunBitwise) {
  const SceneConfig scene = chain_scene();
  const auto path = temp("replay.ndjson");
  Engine engine(build_world(scene), make_plan(scene));
  {
    SessionWriter w(path, scene_to_json(scene));
    auto record = [&](const Command& c, std::uint64_t step) {
      const CommandAck ack = engine.schedule_command(c, step);
      w.append({ack.id, ack.apply_step, c});
    };
    record(Command::grab(0, 23, Vec3(0.1, 0.0, 0.02)), 15);
    record(Command::grab(0, 23, Vec3(0.08, 0.01, 0.03)), 90);
    record(Command::release(0, 23), 160);
    for (int e = 0; e < 25; ++e) engine.run_epoch();
    w.finish(engine.world().step_index(), configuration_checksum(engine.world().rods()));
  }
  const SessionLog log = read_session(path);
  const World replayed = replay_session(log);
  EXPECT_EQ(replayed.step_index(), 250u);
  ASSERT_EQ(replayed.rods()[0].positions.size(), engine.world().rods()[0].positions.size());
  for (std::size_t i = 0; i < replayed.rods()[0].positions.size(); ++i) {
    EXPECT_EQ(replayed.rods()[0].positions[i], engine.world().rods()[0].positions[i]) << i;
  }
  EXPECT_EQ(configuration_checksum(replayed.rods()), *log.checksum);
  std::filesystem::remove(path);
}

TEST(Session, ReplayRejectsEpochBroadphaseCache) {
  SceneConfig scene = chain_scene();
  scene.world.broadphase_once_per_epoch = true;
  SessionLog log;
  log.scene = scene_to_json(scene);
  log.end_step = 10;
  EXPECT_THROW(replay_session(log), std::runtime_error);
}
