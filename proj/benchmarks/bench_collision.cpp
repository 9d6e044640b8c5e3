#include <random>

#include <benchmark/benchmark.h>

#include "corde/collision.hpp"
#include "corde/tube.hpp"

using namespace corde;

namespace {

const TriMeshBvh& tube_tree() {
  static const TriMeshBvh tree = TriMeshBvh::build(make_tube_mesh(TubeSpec{}));
  return tree;
}

std::vector<Vec3> probes_near_wall(std::size_t count) {
  const TubePath path(TubeSpec{});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> s(0.0, path.length());
  std::uniform_real_distribution<double> r(0.0, 0.0049);
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double a = s(rng);
    out.push_back(path.point(a) + r(rng) * path.normal(a));
  }
  return out;
}

}  // namespace

static void BM_BvhBuild(benchmark::State& state) {
  TubeSpec spec;
  spec.rings = static_cast<std::size_t>(state.range(0));
  const TriMesh mesh = make_tube_mesh(spec);
  for (auto _ : state) {
    benchmark::DoNotOptimize(TriMeshBvh::build(mesh));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(mesh.triangles.size()));
}
BENCHMARK(BM_BvhBuild)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

static void BM_DetectPoint(benchmark::State& state) {
  const TriMeshBvh& tree = tube_tree();
  const auto probes = probes_near_wall(1024);
  QueryScratch scratch;
  std::size_t k = 0, hits = 0;
  for (auto _ : state) {
    hits += detect_point(tree, probes[k++ & 1023], 1e-3, scratch).has_value();
  }
  state.counters["hit_rate"] = double(hits) / double(state.iterations());
}
BENCHMARK(BM_DetectPoint);

static void BM_DetectBruteForce(benchmark::State& state) {
  const TriMeshBvh& tree = tube_tree();
  const auto probes = probes_near_wall(64);
  const auto& mesh = tree.mesh();
  std::size_t k = 0;
  for (auto _ : state) {
    const Vec3& c = probes[k++ & 63];
    std::size_t hits = 0;
    for (const auto& t : mesh.triangles) {
      hits += sphere_triangle(c, 1e-3, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]])
                  .has_value();
    }
    benchmark::DoNotOptimize(hits);
  }
}
BENCHMARK(BM_DetectBruteForce)->Unit(benchmark::kMicrosecond);

static void BM_SelfCollisionPairs(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 0.05 * double(i);
    pts.emplace_back(0.01 * std::cos(t), 0.01 * std::sin(t), 0.0004 * t);  // tight coil
  }
  std::vector<RodState> rods{rod_from_polyline(pts)};
  std::vector<RodParams> params(1);
  const SelfCollisionConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(self_collision_pairs(rods, params, cfg));
  }
}
BENCHMARK(BM_SelfCollisionPairs)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);
