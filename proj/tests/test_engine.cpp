#include <atomic>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "corde/engine.hpp"

using namespace corde;

namespace {

World chain_world(std::size_t rods = 1, std::size_t points = 64) {
  WorldConfig cfg;
  cfg.gravity = Vec3(0, 0, -9.81);
  cfg.dt = 1e-4;
  std::vector<RodState> states;
  for (std::size_t r = 0; r < rods; ++r) {
    states.push_back(init_rod({points, 0.2, Vec3(0, 0.01 * double(r), 0), Vec3::UnitX()}));
    states.back().pinned_points[0] = 1;
    states.back().pinned_frames[0] = 1;
  }
  return World(std::move(states), std::vector<RodParams>(rods), cfg);
}

}  // namespace

TEST(Partition, BalancedBlocks) {
  const BlockPartition p = partition_blocks(1030, 512);
  ASSERT_EQ(p.block_count(), 3u);
  EXPECT_EQ(p.ranges[0].size(), 344u);
  EXPECT_EQ(p.ranges[1].size(), 343u);
  EXPECT_EQ(p.ranges[2].size(), 343u);
  EXPECT_EQ(p.ranges[2].end, 1030u);
  EXPECT_EQ(partition_blocks(512, 512).block_count(), 1u);
  EXPECT_EQ(partition_blocks(513, 512).block_count(), 2u);
  EXPECT_EQ(p.block_of(343), 0u);
  EXPECT_EQ(p.block_of(344), 1u);
  EXPECT_EQ(p.block_of(1029), 2u);
  const auto pairs = p.boundary_pairs();
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0], std::make_pair(std::size_t{343}, std::size_t{344}));
  EXPECT_EQ(partition_into(10, 4).ranges.back().end, 10u);
  EXPECT_EQ(partition_into(3, 8).block_count(), 3u);
  EXPECT_THROW(partition_blocks(10, 0), std::invalid_argument);
}

TEST(Mailbox, ArrivalOrderAndBoundaries) {
  Mailbox box;
  box.reset_boundary(5);
  const auto a = box.post(Command::insert_velocity(0, 1));
  const auto b = box.post(Command::insert_velocity(0, 2));
  const auto later = box.post_at(Command::insert_velocity(0, 3), 9);
  EXPECT_LT(a.id, b.id);
  EXPECT_EQ(a.apply_step, 5u);
  EXPECT_EQ(later.apply_step, 9u);
  auto first = box.drain(5);
  ASSERT_EQ(first.size(), 2u);
  EXPECT_EQ(first[0].command.value, 1);
  EXPECT_EQ(first[1].command.value, 2);
  EXPECT_EQ(box.next_boundary(), 6u);
  EXPECT_TRUE(box.drain(8).empty());
  auto due = box.drain(9);
  ASSERT_EQ(due.size(), 1u);
  EXPECT_EQ(due[0].command.value, 3);
  EXPECT_EQ(box.generation(), 3u);
  // Scheduling into the past lands on the next boundary.
  EXPECT_EQ(box.post_at(Command::insert_velocity(0, 4), 2).apply_step, 10u);
}

TEST(Mailbox, ConcurrentProducersKeepPerProducerOrder) {
  Mailbox box;
  std::vector<std::thread> producers;
  for (int t = 0; t < 4; ++t) {
    producers.emplace_back([&box, t] {
      for (int i = 0; i < 250; ++i) box.post(Command::grab(t, i, Vec3::Zero()));
    });
  }
  for (auto& p : producers) p.join();
  const auto all = box.drain(0);
  ASSERT_EQ(all.size(), 1000u);
  std::vector<int> last(4, -1);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i > 0) EXPECT_LT(all[i - 1].id, all[i].id);
    const auto& c = all[i].command;
    EXPECT_EQ(int(c.index), last[c.rod] + 1);
    last[c.rod] = int(c.index);
  }
}

TEST(SnapshotBuffer, ReadersNeverSeeTornFrames) {
  const std::size_t n = 200;
  SnapshotBuffer buffer({n});
  EXPECT_FALSE(buffer.read().has_value());
  std::vector<RodState> rods{init_rod({n, 1.0, Vec3::Zero(), Vec3::UnitX()})};
  std::atomic<bool> done{false};
  std::atomic<int> checked{0}, torn{0};
  std::thread reader([&] {
    std::uint64_t last = 0;
    while (!done.load()) {
      auto s = buffer.read();
      if (!s) continue;
      EXPECT_GE(s->sequence, last);
      last = s->sequence;
      const double v = s->positions[0][0].y();
      for (const auto& x : s->positions[0]) torn += x.y() != v;
      EXPECT_EQ(double(s->step_index), v);
      ++checked;
    }
  });
  for (std::uint64_t step = 1; step <= 20000; ++step) {
    for (auto& x : rods[0].positions) x.y() = double(step);
    buffer.publish(step, rods);
  }
  done = true;
  reader.join();
  EXPECT_GT(checked.load(), 0);
  EXPECT_EQ(torn.load(), 0);
  EXPECT_EQ(buffer.read()->step_index, 20000u);
}

TEST(Engine, ParallelMatchesSerialBitwise) {
  auto run = [](Backend backend, std::size_t blocks) {
    EpochPlan plan;
    plan.backend = backend;
    plan.blocks = blocks;
    plan.steps_per_epoch = 25;
    Engine engine(chain_world(3, 50), plan);
    engine.post_command(Command::grab(1, 49, Vec3(0.2, 0.01, 0.02)));
    for (int e = 0; e < 8; ++e) engine.run_epoch();
    std::vector<Vec3> out;
    for (const auto& rod : engine.world().rods()) {
      out.insert(out.end(), rod.positions.begin(), rod.positions.end());
    }
    return out;
  };
  const auto serial = run(Backend::kSerial, 1);
  for (std::size_t blocks : {2u, 3u, 5u}) {
    const auto parallel = run(Backend::kParallel, blocks);
    ASSERT_EQ(parallel.size(), serial.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
      ASSERT_EQ(parallel[i], serial[i]) << "blocks " << blocks << " element " << i;
    }
  }
}

TEST(Engine, CommandsApplyAtAckedBoundary) {
  EpochPlan plan;
  plan.steps_per_epoch = 10;
  Engine engine(chain_world(), plan);
  engine.run_epoch();
  const CommandAck ack = engine.post_command(Command::grab(0, 63, Vec3(0.2, 0, 0.01)));
  EXPECT_EQ(ack.apply_step, 10u);
  EXPECT_TRUE(engine.world().grabs().empty());
  engine.run_epoch();
  EXPECT_EQ(engine.world().grabs().size(), 1u);
  EXPECT_THROW(engine.post_command(Command::grab(0, 64, Vec3::Zero())), std::invalid_argument);
  const auto scheduled = engine.schedule_command(Command::release(0, 63), 25);
  EXPECT_EQ(scheduled.apply_step, 25u);
  engine.run_epoch(5);
  EXPECT_EQ(engine.world().grabs().size(), 1u);
  engine.run_epoch(1);
  EXPECT_TRUE(engine.world().grabs().empty());
}

TEST(Engine, BatchSizeCommand) {
  Engine engine(chain_world(), EpochPlan{});
  Command c;
  c.kind = CommandKind::kSetParams;
  c.batch = 3;
  engine.post_command(c);
  EXPECT_EQ(engine.run_epoch().steps, 10u);  // applied inside this epoch
  EXPECT_EQ(engine.run_epoch().steps, 3u);
  EXPECT_EQ(engine.world().step_index(), 13u);
  EXPECT_EQ(engine.read_snapshot()->step_index, 13u);
}

TEST(Engine, WorkerFailureReportsStepAndBlock) {
  for (Backend backend : {Backend::kSerial, Backend::kParallel}) {
    EpochPlan plan;
    plan.backend = backend;
    plan.blocks = backend == Backend::kSerial ? 1 : 4;
    plan.steps_per_epoch = 5;
    Engine engine(chain_world(1, 64), plan);
    engine.run_epoch();
    engine.world().rods()[0].positions[60].x() = std::numeric_limits<double>::quiet_NaN();
    try {
      engine.run_epoch();
      FAIL() << "expected an engine error";
    } catch (const EngineError& e) {
      EXPECT_EQ(e.step(), 5u);
      if (backend == Backend::kParallel) EXPECT_EQ(e.block(), 3u);
      EXPECT_NE(std::string(e.what()).find("aborted at step 5"), std::string::npos);
    }
  }
}

TEST(Engine, SkippedBarrierIsDetected) {
  EpochPlan plan;
  plan.backend = Backend::kParallel;
  plan.blocks = 4;
  plan.steps_per_epoch = 2;
  plan.validate_barriers = true;
  Engine engine(chain_world(1, 64), plan);
  engine.run_epoch();
  EXPECT_EQ(engine.barrier_violations(), 0u);
  engine.inject_barrier_fault(BarrierFault{2, 0, std::chrono::milliseconds(50)});
  engine.run_epoch();
  EXPECT_GT(engine.barrier_violations(), 0u);
}

TEST(Engine, HaloViewsOnlyWithinRods) {
  World world = chain_world(2, 10);
  const BlockPartition p = partition_into(world.num_elements(), 4);  // 5,5,5,5
  const auto views = halo_exchange(p, world);
  ASSERT_EQ(views.size(), 4u);
  EXPECT_FALSE(views[0].left.has_value());
  ASSERT_TRUE(views[0].right.has_value());
  EXPECT_EQ(views[0].right->point, (PointRef{0, 5}));
  EXPECT_EQ(views[0].right->position, world.rods()[0].positions[5]);
  EXPECT_TRUE(views[0].right->frame.has_value());
  ASSERT_TRUE(views[1].left.has_value());
  EXPECT_EQ(views[1].left->point, (PointRef{0, 4}));
  EXPECT_FALSE(views[1].right.has_value());  // next block starts rod 1
  EXPECT_FALSE(views[2].left.has_value());
  EXPECT_FALSE(views[3].right.has_value());
}

TEST(Engine, PlanValidationAndNames) {
  EpochPlan plan;
  plan.steps_per_epoch = 0;
  EXPECT_THROW(plan.validate(), std::invalid_argument);
  EXPECT_EQ(backend_from_string("parallel"), Backend::kParallel);
  EXPECT_EQ(to_string(Backend::kSerial), "serial");
  EXPECT_THROW(backend_from_string("gpu"), std::invalid_argument);
}

TEST(Metrics, CsvFormat) {
  std::ostringstream out;
  write_metrics_header(out);
  write_metrics_row(out, {3, 1000, 10, 20, 4});
  EXPECT_EQ(out.str(), "epoch,wall_ns,steps,barrier_wait_ns,contacts\n3,1000,10,20,4\n");
}
