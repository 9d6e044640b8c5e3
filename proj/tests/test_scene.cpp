#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "corde/scene.hpp"

using namespace corde;
using nlohmann::json;

namespace {

std::string scene_error(const json& j, const std::filesystem::path& base = ".") {
  try {
    parse_scene(j, base);
  } catch (const SceneError& e) {
    return e.what();
  }
  return "";
}

json minimal() { return json::parse(R"({"rods": [{"points": 8, "length": 0.07}]})"); }

}  // namespace

TEST(Scene, MinimalSceneGetsDefaults) {
  const SceneConfig c = parse_scene(minimal());
  ASSERT_EQ(c.rods.size(), 1u);
  EXPECT_EQ(c.rods[0].points, 8u);
  EXPECT_DOUBLE_EQ(c.rods[0].params.radius, RodParams{}.radius);
  EXPECT_DOUBLE_EQ(c.world.dt, WorldConfig{}.dt);
  EXPECT_EQ(c.engine.backend, Backend::kSerial);
  EXPECT_FALSE(c.mesh.has_value());
  EXPECT_EQ(c.coupling.mode, CouplingMode::kNone);
}

TEST(Scene, EchoRoundTrips) {
  json j = json::parse(R"({
    "rods": [{"points": 12, "length": 0.2, "radius": 0.0007, "axis": [0, 1, 0],
              "intrinsic_strain": [1, 0, 0.5], "clamp": {"base": true},
              "insertion": {"enabled": true, "velocity": 0.02}}],
    "gravity": [0, 0, -1], "dt": 5e-5,
    "solver": {"iterations": 4, "friction": 0.25},
    "mesh": {"tube": {"sides": 6, "rings": 20}},
    "engine": {"backend": "parallel", "blocks": 3, "steps_per_epoch": 4, "epochs": 7},
    "seed": 42
  })");
  const json echo = scene_to_json(parse_scene(j));
  EXPECT_EQ(scene_to_json(parse_scene(echo)), echo);
  EXPECT_EQ(echo["engine"]["blocks"], 3);
  EXPECT_EQ(echo["seed"], 42);
  EXPECT_DOUBLE_EQ(echo["rods"][0]["radius"].get<double>(), 0.0007);
}

TEST(Scene, ErrorsNameTheField) {
  json j = minimal();
  j["rods"][0]["lenght"] = 0.1;
  EXPECT_EQ(scene_error(j), "rods[0].lenght: unknown field");

  j = minimal();
  j["rods"][0]["radius"] = -1;
  EXPECT_EQ(scene_error(j), "rods[0].radius: must be positive");

  j = minimal();
  j["rods"][0]["axis"] = json::array({1, 0});
  EXPECT_EQ(scene_error(j), "rods[0].axis: expected [x, y, z]");

  j = minimal();
  j["solver"] = {{"iterations", 0}};
  EXPECT_EQ(scene_error(j), "solver.iterations: must be >= 1");

  j = minimal();
  j["coupling"] = {{"mode", "v7"}};
  EXPECT_NE(scene_error(j).find("coupling.mode"), std::string::npos);

  j = minimal();
  j["engine"] = {{"backend", "gpu"}};
  EXPECT_EQ(scene_error(j).rfind("engine.backend: ", 0), 0u);

  j = minimal();
  j["rods"][0]["placement"] = "tube";
  EXPECT_EQ(scene_error(j), "rods[0].placement: tube placement needs mesh.tube");

  EXPECT_EQ(scene_error(json::parse("{}")), "rods: at least one rod is required");
  EXPECT_EQ(scene_error(json::parse("[]")), "<root>: expected an object");
}

TEST(Scene, LoadReportsMissingAndInvalidFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "corde_scene_test";
  std::filesystem::create_directories(dir);
  EXPECT_THROW(load_scene(dir / "nope.json"), std::runtime_error);
  std::ofstream(dir / "broken.json") << "{\"rods\": [";
  EXPECT_THROW(load_scene(dir / "broken.json"), std::runtime_error);

  json j = minimal();
  j["mesh"] = {{"path", "missing.obj"}};
  std::ofstream(dir / "mesh_missing.json") << j.dump();
  const SceneConfig c = load_scene(dir / "mesh_missing.json");
  EXPECT_EQ(c.base_dir, dir);
  try {
    build_mesh(c);
    FAIL() << "expected a missing mesh error";
  } catch (const std::runtime_error& e) {
    EXPECT_EQ(std::string(e.what()), "mesh file not found: " + (dir / "missing.obj").string());
  }
  std::filesystem::remove_all(dir);
}

TEST(Scene, TubePlacementPutsTipAtArc) {
  json j = json::parse(R"({
    "rods": [{"points": 41, "length": 0.2, "placement": "tube", "tip_arc": 0.25}],
    "mesh": {"tube": {"sides": 8, "rings": 40}}
  })");
  const SceneConfig c = parse_scene(j);
  const World world = build_world(c);
  const TubePath path(*c.mesh->tube);
  EXPECT_LT((world.rods()[0].positions.back() - path.point(0.25)).norm(), 1e-12);
  ASSERT_NE(world.mesh(), nullptr);
  EXPECT_EQ(world.mesh()->stats().triangles, 8u * 40u * 2u);
}

TEST(Scene, CouplingBuildsBindingsWithStride) {
  json j = json::parse(R"({
    "rods": [{"points": 21, "length": 0.1}, {"points": 21, "length": 0.1, "origin": [0, 0.002, 0]}],
    "coupling": {"mode": "v2", "stride": 4}
  })");
  const World world = build_world(parse_scene(j));
  const auto bindings = world.bindings();
  ASSERT_EQ(bindings.size(), 6u);  // 0, 4, ..., 20
  for (std::size_t k = 0; k < bindings.size(); ++k) {
    EXPECT_EQ(bindings[k].a, (PointRef{0, std::uint32_t(4 * k)}));
    EXPECT_EQ(bindings[k].b, (PointRef{1, std::uint32_t(4 * k)}));
    EXPECT_EQ(bindings[k].mode, BindingMode::kBidirectional);
  }
  j["coupling"]["mode"] = "v0";
  EXPECT_TRUE(build_world(parse_scene(j)).bindings().empty());
}

TEST(Scene, ClampsAndPlan) {
  json j = minimal();
  j["rods"][0]["clamp"] = {{"base", true}};
  j["engine"] = {{"backend", "parallel"}, {"blocks", 2}, {"steps_per_epoch", 3}};
  const SceneConfig c = parse_scene(j);
  const World world = build_world(c);
  EXPECT_EQ(world.rods()[0].pinned_points[0], 1);
  EXPECT_EQ(world.rods()[0].pinned_points[7], 0);
  const EpochPlan plan = make_plan(c);
  EXPECT_EQ(plan.backend, Backend::kParallel);
  EXPECT_EQ(plan.blocks, 2u);
  EXPECT_EQ(plan.steps_per_epoch, 3u);
}

TEST(Scene, SeededPerturbationIsReproducible) {
  json j = minimal();
  j["perturbation"] = 0.01;
  j["seed"] = 7;
  const World a = build_world(parse_scene(j));
  const World b = build_world(parse_scene(j));
  EXPECT_EQ(a.rods()[0].velocities, b.rods()[0].velocities);
  j["seed"] = 8;
  EXPECT_NE(a.rods()[0].velocities, build_world(parse_scene(j)).rods()[0].velocities);
}
