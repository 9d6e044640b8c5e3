#include <random>

#include <benchmark/benchmark.h>

#include "corde/constraints.hpp"
#include "corde/rod.hpp"

using namespace corde;

namespace {

RodState wavy_rod(std::size_t n) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = 0.002 * double(i);
    pts.emplace_back(s, 0.004 * std::sin(40 * s), 0.003 * std::cos(25 * s));
  }
  return rod_from_polyline(pts);
}

}  // namespace

static void BM_ElasticForces(benchmark::State& state) {
  const RodState rod = wavy_rod(static_cast<std::size_t>(state.range(0)));
  RodParams params;
  ForceTorqueBuffer buffer;
  buffer.resize(rod.num_points());
  for (auto _ : state) {
    buffer.clear();
    elastic_forces_torques(rod, params, buffer);
    benchmark::DoNotOptimize(buffer.forces.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ElasticForces)->RangeMultiplier(4)->Range(128, 8192);

static void BM_DistanceSweep(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  RodParams params;
  std::vector<RodState> rods{wavy_rod(n)};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 0.1);
  for (auto& v : rods[0].velocities) v = Vec3(g(rng), g(rng), g(rng));
  std::vector<MassProperties> masses{lump_masses(rods[0], params)};
  ConstraintSet set;
  set.distance = make_distance_constraints(rods, std::span<const RodParams>(&params, 1));
  SolverConfig cfg;
  cfg.iterations = 1;
  for (auto _ : state) {
    iterate_constraints(rods, masses, set, cfg, 1e-4);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DistanceSweep)->RangeMultiplier(4)->Range(128, 8192);

static void BM_Darboux(benchmark::State& state) {
  const Quat q = Quat(Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()));
  const Quat next = q * Quat(Eigen::AngleAxisd(0.01, Vec3::UnitX()));
  const Vec4 dq = quat_spatial_derivative(q, next, 0.002);
  for (auto _ : state) {
    benchmark::DoNotOptimize(darboux_strains(q, dq));
  }
}
BENCHMARK(BM_Darboux);
