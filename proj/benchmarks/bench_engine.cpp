#include <benchmark/benchmark.h>

#include "corde/engine.hpp"

using namespace corde;

namespace {

World pendulum(std::size_t n) {
  WorldConfig cfg;
  cfg.gravity = Vec3(0, 0, -9.81);
  cfg.dt = 1e-4;
  RodState rod = init_rod({n, 0.5, Vec3::Zero(), Vec3::UnitX()});
  rod.pinned_points[0] = 1;
  return World({rod}, {RodParams{}}, cfg);
}

}  // namespace

// Args: points, steps per epoch, blocks (0 = serial).
static void BM_EngineEpoch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  EpochPlan plan;
  plan.steps_per_epoch = static_cast<std::size_t>(state.range(1));
  plan.backend = state.range(2) == 0 ? Backend::kSerial : Backend::kParallel;
  plan.blocks = state.range(2) == 0 ? 1 : static_cast<std::size_t>(state.range(2));
  Engine engine(pendulum(n), plan);
  for (auto _ : state) engine.run_epoch();
  const auto steps = state.iterations() * state.range(1);
  state.SetItemsProcessed(steps * state.range(0));
  state.counters["time_per_step"] =
      benchmark::Counter(double(steps), benchmark::Counter::kIsRate | benchmark::Counter::kInvert);
}
BENCHMARK(BM_EngineEpoch)
    ->ArgsProduct({{128, 512, 2048}, {1, 10}, {0}})
    ->ArgsProduct({{2048}, {1, 10}, {2, 4}})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();

static void BM_SnapshotPublish(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<RodState> rods{init_rod({n, 0.5, Vec3::Zero(), Vec3::UnitX()})};
  SnapshotBuffer buffer({n});
  std::uint64_t step = 0;
  for (auto _ : state) buffer.publish(++step, rods);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SnapshotPublish)->Arg(512)->Arg(4096);

static void BM_MailboxPostDrain(benchmark::State& state) {
  Mailbox box;
  std::uint64_t step = 0;
  for (auto _ : state) {
    for (int i = 0; i < 8; ++i) box.post(Command::insert_velocity(0, 0.01 * i));
    benchmark::DoNotOptimize(box.drain(step++));
  }
}
BENCHMARK(BM_MailboxPostDrain);
