#include <gtest/gtest.h>

#include "corde/world.hpp"

using namespace corde;

namespace {

World free_world(std::size_t points = 16, double length = 0.1) {
  WorldConfig cfg;
  cfg.gravity = Vec3::Zero();
  cfg.dt = 1e-4;
  return World({init_rod({points, length, Vec3::Zero(), Vec3::UnitX()})}, {RodParams{}}, cfg);
}

std::shared_ptr<const TriMeshBvh> floor_mesh() {
  TriMesh floor;
  floor.vertices = {Vec3(-1, -1, 0), Vec3(1, -1, 0), Vec3(1, 1, 0), Vec3(-1, 1, 0)};
  floor.triangles = {{0, 1, 2}, {0, 2, 3}};
  return std::make_shared<const TriMeshBvh>(TriMeshBvh::build(floor));
}

}  // namespace

TEST(WorldCommands, ValidationMessages) {
  World world = free_world();
  auto message = [&](const Command& c) {
    try {
      world.validate_command(c);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(message(Command::grab(0, 16, Vec3::Zero())), "index out of range");
  EXPECT_EQ(message(Command::grab(1, 0, Vec3::Zero())), "rod index out of range");
  EXPECT_EQ(message(Command::release(0, 99)), "index out of range");
  EXPECT_EQ(message(Command::insert_velocity(0, 0.01)), "rod has no insertion driver");
  EXPECT_EQ(message(Command::grab(0, 3, Vec3(0, std::nan(""), 0))), "grab target must be finite");
  Command params;
  params.kind = CommandKind::kSetParams;
  params.dt = -1.0;
  EXPECT_EQ(message(params), "dt must be positive");
  params.dt.reset();
  params.iterations = 0;
  EXPECT_EQ(message(params), "iterations must be >= 1");
  EXPECT_EQ(message(Command::grab(0, 15, Vec3::Zero())), "");
}

TEST(WorldCommands, GrabPullsPointToTargetAndReleaseFrees) {
  World world = free_world();
  const Vec3 target = world.rods()[0].positions[15] + Vec3(0, 0, 0.005);
  world.apply_command(Command::grab(0, 15, target));
  ASSERT_EQ(world.grabs().size(), 1u);
  for (int i = 0; i < 3000; ++i) world.step();
  EXPECT_LT((world.rods()[0].positions[15] - target).norm(), 1e-5);
  EXPECT_LT(world.max_strain(), 1e-4);
  // A second grab of the same point retargets instead of duplicating.
  world.apply_command(Command::grab(0, 15, target + Vec3(0, 0.001, 0)));
  EXPECT_EQ(world.grabs().size(), 1u);
  world.apply_command(Command::release(0, 15));
  EXPECT_TRUE(world.grabs().empty());
}

TEST(WorldCommands, SetParamsChangesStepAndBatch) {
  World world = free_world();
  Command c;
  c.kind = CommandKind::kSetParams;
  c.dt = 2e-4;
  c.iterations = 3;
  c.batch = 7;
  world.apply_command(c);
  EXPECT_DOUBLE_EQ(world.config().dt, 2e-4);
  EXPECT_EQ(world.config().solver.iterations, 3);
  EXPECT_EQ(world.take_requested_batch(), std::optional<int>(7));
  EXPECT_FALSE(world.take_requested_batch().has_value());
  world.step();
  EXPECT_DOUBLE_EQ(world.time(), 2e-4);
}

TEST(WorldPhases, OrderFollowsConfiguration) {
  World world = free_world();
  world.config().solver.iterations = 2;
  auto phases = world.step_phases();
  std::vector<Phase> kinds;
  for (const auto& p : phases) kinds.push_back(p.phase);
  const std::vector<Phase> expected{
      Phase::kPrepareDetect, Phase::kSelfPairsSegmentTerms, Phase::kGatherIntegrateVelocity,
      Phase::kDistanceEven,  Phase::kDistanceOdd,           Phase::kContacts,
      Phase::kDistanceEven,  Phase::kDistanceOdd,           Phase::kContacts,
      Phase::kIntegratePositions, Phase::kEndStep};
  EXPECT_EQ(kinds, expected);
  EXPECT_TRUE(phases.back().single);

  world.config().self_collision = true;
  world.apply_command(Command::grab(0, 0, Vec3::Zero()));
  std::size_t self = 0, grabs = 0;
  for (const auto& p : world.step_phases()) {
    self += p.phase == Phase::kSelfContacts;
    grabs += p.phase == Phase::kBindingsDominantGrabs;
    if (p.phase == Phase::kSelfContacts) EXPECT_TRUE(p.single);
  }
  EXPECT_EQ(self, 2u);
  EXPECT_EQ(grabs, 2u);
}

TEST(WorldDriver, HeldPointsFollowTheDriver) {
  World world = free_world(21, 0.2);
  InsertionDriver d;
  d.enabled = true;
  d.axis = Vec3::UnitX();
  d.depth = 0.05;
  d.velocity = 0.1;
  world.set_driver(0, d);
  const Vec3 base = world.rods()[0].positions[0];
  for (int i = 0; i < 1000; ++i) world.step();
  // 1000 steps of 1e-4 s at 0.1 m/s.
  EXPECT_NEAR(world.rods()[0].positions[0].x() - base.x(), 0.01, 1e-12);
  EXPECT_NEAR(world.driver(0).depth, 0.06, 1e-12);
  world.apply_command(Command::insert_velocity(0, -0.2));
  world.step();
  EXPECT_NEAR(world.driver(0).depth, 0.06 - 2e-5, 1e-12);
}

TEST(WorldBindings, DuplicatePointsRejected) {
  WorldConfig cfg;
  World world({init_rod({4, 0.03, Vec3::Zero(), Vec3::UnitX()}),
               init_rod({4, 0.03, Vec3(0, 0.01, 0), Vec3::UnitX()})},
              {RodParams{}, RodParams{}}, cfg);
  std::vector<BindingConstraint> b{{{0, 1}, {1, 1}, BindingMode::kOneWay},
                                   {{0, 2}, {1, 1}, BindingMode::kOneWay}};
  EXPECT_THROW(world.set_bindings(b), std::invalid_argument);
  b.pop_back();
  EXPECT_NO_THROW(world.set_bindings(b));
}

TEST(WorldContact, RodRestsOnFloor) {
  WorldConfig cfg;
  cfg.gravity = Vec3(0, 0, -9.81);
  cfg.dt = 1e-4;
  RodParams p;
  World world({init_rod({20, 0.1, Vec3(-0.05, 0, 0.01), Vec3::UnitX()})}, {p}, cfg, floor_mesh());
  for (int i = 0; i < 8000; ++i) world.step();
  for (const auto& x : world.rods()[0].positions) {
    EXPECT_GT(x.z(), p.radius - 2e-4);
    EXPECT_LT(x.z(), p.radius + 1e-4);
  }
  EXPECT_EQ(world.mesh_contact_count(), 20u);
  EXPECT_LT(world.kinetic_energy(), 1e-8);
}

TEST(WorldConstruction, RejectsMismatchedParams) {
  EXPECT_THROW(World({init_rod({4, 0.03, Vec3::Zero(), Vec3::UnitX()})}, {}, WorldConfig{}),
               std::invalid_argument);
  WorldConfig bad;
  bad.dt = 0;
  EXPECT_THROW(World({init_rod({4, 0.03, Vec3::Zero(), Vec3::UnitX()})}, {RodParams{}}, bad),
               std::invalid_argument);
}
