#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "corde/collision.hpp"
#include "corde/tube.hpp"

using namespace corde;

namespace {

Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-1, 1);
  return scale * Vec3(u(rng), u(rng), u(rng));
}

// Nearest point by dense barycentric sampling; only ever an upper bound on the distance.
double sampled_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const int n = 200;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; i + j <= n; ++j) {
      const double s = double(i) / n, t = double(j) / n;
      best = std::min(best, (a + s * (b - a) + t * (c - a) - p).norm());
    }
  }
  return best;
}

TriMesh random_soup(std::mt19937_64& rng, std::size_t triangles) {
  TriMesh mesh;
  for (std::size_t t = 0; t < triangles; ++t) {
    const Vec3 base = random_vec(rng, 1.0);
    const auto first = static_cast<std::uint32_t>(mesh.vertices.size());
    for (int k = 0; k < 3; ++k) mesh.vertices.push_back(base + random_vec(rng, 0.05));
    mesh.triangles.push_back({first, first + 1, first + 2});
  }
  return mesh;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("corde_test_" + name);
}

}  // namespace

TEST(ClosestPoint, NoSampleIsCloser) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 60; ++i) {
    const Vec3 a = random_vec(rng, 1), b = random_vec(rng, 1), c = random_vec(rng, 1);
    const Vec3 p = random_vec(rng, 2);
    const Vec3 q = closest_point_on_triangle(p, a, b, c);
    const double d = (q - p).norm();
    EXPECT_LE(d, sampled_distance(p, a, b, c) + 1e-12);
    // q lies in the triangle's plane and inside it.
    const Vec3 n = (b - a).cross(c - a);
    EXPECT_NEAR((q - a).dot(n.normalized()), 0.0, 1e-12);
    EXPECT_GE(sampled_distance(q, a, b, c), 0.0);
    EXPECT_LT(sampled_distance(q, a, b, c), 0.02 * std::max({(b - a).norm(), (c - a).norm(), (c - b).norm()}));
  }
}

TEST(SphereTriangle, FaceHitDepthAndNormal) {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  const auto hit = sphere_triangle(Vec3(0.2, 0.2, 0.03), 0.05, a, b, c);
  ASSERT_TRUE(hit.has_value());
  EXPECT_NEAR(hit->depth, 0.02, 1e-15);
  EXPECT_LT((hit->normal - Vec3::UnitZ()).norm(), 1e-15);
  // The normal follows the side the centre is on.
  const auto below = sphere_triangle(Vec3(0.2, 0.2, -0.03), 0.05, a, b, c);
  ASSERT_TRUE(below.has_value());
  EXPECT_LT((below->normal + Vec3::UnitZ()).norm(), 1e-15);
}

TEST(SphereTriangle, MissesAndDegenerates) {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  EXPECT_FALSE(sphere_triangle(Vec3(0.2, 0.2, 0.06), 0.05, a, b, c).has_value());
  EXPECT_FALSE(sphere_triangle(Vec3(-0.1, -0.1, 0.0), 0.05, a, b, c).has_value());
  EXPECT_FALSE(sphere_triangle(Vec3(0.5, 0, 0), 0.1, a, b, Vec3(2, 0, 0)).has_value());
  // Near an edge but off the face: reaches the edge.
  EXPECT_TRUE(sphere_triangle(Vec3(0.5, -0.03, 0.0), 0.05, a, b, c).has_value());
}

TEST(Aggregate, MaxDepthAndWeightedNormal) {
  std::vector<SphereHit> hits(2);
  hits[0].normal = Vec3::UnitX();
  hits[0].depth = 0.003;
  hits[1].normal = Vec3::UnitY();
  hits[1].depth = 0.001;
  const AggregatedContact c = aggregate_response(hits);
  EXPECT_DOUBLE_EQ(c.depth, 0.003);
  EXPECT_LT((c.normal - Vec3(3, 1, 0).normalized()).norm(), 1e-15);
}

TEST(Bvh, InvariantsOnRandomSoup) {
  std::mt19937_64 rng(33);
  const TriMeshBvh bvh = TriMeshBvh::build(random_soup(rng, 777));
  const auto nodes = bvh.nodes();
  std::vector<int> seen(777, 0);
  std::size_t leaves = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].valid) continue;
    if (nodes[i].count > 0) {
      ++leaves;
      EXPECT_LE(nodes[i].count, TriMeshBvh::kMaxLeafTriangles);
      for (std::size_t k = 0; k < nodes[i].count; ++k) {
        const auto t = bvh.leaf_triangles()[nodes[i].first + k];
        ++seen[t];
        EXPECT_TRUE(nodes[i].box.contains(bvh.mesh().triangle_bounds(t)));
      }
    } else {
      for (std::size_t child : {2 * i + 1, 2 * i + 2}) {
        ASSERT_LT(child, nodes.size());
        ASSERT_TRUE(nodes[child].valid);
        EXPECT_TRUE(nodes[i].box.contains(nodes[child].box));
      }
    }
  }
  for (int count : seen) EXPECT_EQ(count, 1);
  EXPECT_EQ(bvh.stats().leaves, leaves);
  EXPECT_EQ(bvh.stats().triangles, 777u);
}

TEST(Bvh, BroadphaseMatchesBruteForce) {
  std::mt19937_64 rng(34);
  const TriMeshBvh bvh = TriMeshBvh::build(random_soup(rng, 500));
  std::vector<std::uint32_t> found;
  for (int q = 0; q < 200; ++q) {
    const Vec3 c = random_vec(rng, 1.1);
    const double r = 0.02 + 0.1 * (q % 5);
    found.clear();
    const std::size_t stack = bvh.broadphase(c, r, found);
    EXPECT_LE(stack, bvh.stats().max_depth + 1);
    std::sort(found.begin(), found.end());
    EXPECT_TRUE(std::adjacent_find(found.begin(), found.end()) == found.end());
    // Every triangle whose box touches the query box must be reported.
    const Aabb query = Aabb::around_sphere(c, r);
    for (std::uint32_t t = 0; t < 500; ++t) {
      if (bvh.mesh().triangle_bounds(t).intersects(query)) {
        EXPECT_TRUE(std::binary_search(found.begin(), found.end(), t)) << "triangle " << t;
      }
    }
    // And the narrow phase over candidates equals the narrow phase over everything.
    QueryScratch scratch;
    const auto tree_hit = detect_point(bvh, c, r, scratch);
    std::vector<SphereHit> hits;
    for (std::uint32_t t = 0; t < 500; ++t) {
      const auto& tri = bvh.mesh().triangles[t];
      const auto& v = bvh.mesh().vertices;
      if (auto h = sphere_triangle(c, r, v[tri[0]], v[tri[1]], v[tri[2]])) hits.push_back(*h);
    }
    ASSERT_EQ(tree_hit.has_value(), !hits.empty());
    if (tree_hit) EXPECT_NEAR(tree_hit->depth, aggregate_response(hits).depth, 1e-15);
  }
}

TEST(Bvh, EmptyMeshRejected) {
  EXPECT_THROW(TriMeshBvh::build(TriMesh{}), std::invalid_argument);
}

TEST(MeshIo, RoundTripAndErrors) {
  std::mt19937_64 rng(1);
  const TriMesh mesh = random_soup(rng, 20);
  const auto path = temp_file("roundtrip.obj");
  save_mesh(mesh, path);
  const TriMesh back = load_mesh(path);
  ASSERT_EQ(back.vertices.size(), mesh.vertices.size());
  ASSERT_EQ(back.triangles, mesh.triangles);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    EXPECT_EQ(back.vertices[i], mesh.vertices[i]);  // written with round-trip precision
  }

  const auto slashes = temp_file("slashes.obj");
  std::ofstream(slashes) << "# comment\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\n";
  EXPECT_EQ(load_mesh(slashes).triangles.size(), 1u);

  const auto quad = temp_file("quad.obj");
  std::ofstream(quad) << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
  EXPECT_THROW(load_mesh(quad), std::runtime_error);

  const auto bad = temp_file("bad.obj");
  std::ofstream(bad) << "v 0 0 0\nv 1 0 0\nf 1 2 9\n";
  EXPECT_THROW(load_mesh(bad), std::exception);

  EXPECT_THROW(load_mesh(temp_file("does_not_exist.obj")), std::runtime_error);
  for (const auto& p : {path, slashes, quad, bad}) std::filesystem::remove(p);
}

TEST(Tube, MeshSurroundsCentreline) {
  TubeSpec spec;
  spec.sides = 12;
  spec.rings = 50;
  const TriMesh mesh = make_tube_mesh(spec);
  EXPECT_EQ(mesh.triangles.size(), 12u * 50u * 2u);
  const TubePath path(spec);
  EXPECT_NEAR(path.length(), 0.15 + 0.12 * std::numbers::pi / 2 + 0.25, 1e-12);
  // A sphere on the centreline is clear of the wall; one pushed to the wall is not.
  const TriMeshBvh bvh = TriMeshBvh::build(mesh);
  QueryScratch scratch;
  for (double s : {0.05, 0.2, 0.3, 0.5}) {
    EXPECT_FALSE(detect_point(bvh, path.point(s), 1e-3, scratch).has_value()) << s;
    const Vec3 near_wall = path.point(s) + 0.0048 * path.normal(s);
    const auto hit = detect_point(bvh, near_wall, 1e-3, scratch);
    ASSERT_TRUE(hit.has_value()) << s;
    EXPECT_GT(hit->normal.dot(-path.normal(s)), 0.9);  // pushes back toward the axis
  }
  EXPECT_NEAR(path.tangent(0.1).dot(Vec3::UnitX()), 1.0, 1e-12);
  EXPECT_LT((path.point(-0.1) - Vec3(-0.1, 0, 0)).norm(), 1e-15);
}

TEST(Tube, CentrelinePointsSpacing) {
  const TubePath path(TubeSpec{});
  const auto pts = centreline_points(path, 40, 0.01, 0.3);
  ASSERT_EQ(pts.size(), 40u);
  EXPECT_LT((pts.back() - path.point(0.3)).norm(), 1e-12);
  EXPECT_LT((pts.front() - path.point(0.3 - 0.39)).norm(), 1e-12);
}

TEST(SelfCollision, PairsMatchBruteForce) {
  std::mt19937_64 rng(12);
  // A crumpled rod and a second straight rod crossing through it.
  std::vector<Vec3> pts;
  Vec3 x = Vec3::Zero();
  for (int i = 0; i < 80; ++i) {
    pts.push_back(x);
    x += (Vec3(0.3, 0, 0) + random_vec(rng, 1.0)).normalized() * 2e-3;
  }
  std::vector<RodState> rods{rod_from_polyline(pts),
                             init_rod({60, 0.12, Vec3(0.02, -0.06, 0), Vec3::UnitY()})};
  std::vector<RodParams> params(2);
  params[1].radius = 2e-3;
  SelfCollisionConfig cfg;
  cfg.group_size = 4;
  cfg.neighbor_exclusion = 2;
  const auto pairs = self_collision_pairs(rods, params, cfg);

  using Key = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::uint32_t>;
  std::set<Key> got, want;
  for (const auto& c : pairs) {
    got.insert({c.a.rod, c.a.index, c.b.rod, c.b.index});
    EXPECT_NEAR((rods[c.a.rod].positions[c.a.index] - rods[c.b.rod].positions[c.b.index]).norm(),
                c.min_distance - c.depth, 1e-15);
  }
  for (std::uint32_t ra = 0; ra < 2; ++ra) {
    for (std::uint32_t rb = ra; rb < 2; ++rb) {
      for (std::uint32_t i = 0; i < rods[ra].num_points(); ++i) {
        for (std::uint32_t j = 0; j < rods[rb].num_points(); ++j) {
          if (ra == rb && j / cfg.group_size <= i / cfg.group_size + cfg.neighbor_exclusion) continue;
          const double d = (rods[ra].positions[i] - rods[rb].positions[j]).norm();
          if (d < params[ra].radius + params[rb].radius) want.insert({ra, i, rb, j});
        }
      }
    }
  }
  EXPECT_FALSE(want.empty());
  EXPECT_EQ(got, want);
}

TEST(SelfCollision, GroupSpheresContainTheirPoints) {
  std::vector<RodState> rods{init_rod({23, 0.1, Vec3::Zero(), Vec3::UnitX()})};
  std::vector<RodParams> params(1);
  const auto groups = group_spheres(rods, params, SelfCollisionConfig{});
  ASSERT_EQ(groups.size(), 6u);
  EXPECT_EQ(groups.back().count, 3u);
  for (const auto& g : groups) {
    for (std::uint32_t i = g.first; i < g.first + g.count; ++i) {
      EXPECT_LE((rods[0].positions[i] - g.center).norm(), g.radius);
    }
  }
}

TEST(SelfCollision, ConfigValidation) {
  SelfCollisionConfig cfg;
  cfg.group_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SelfCollisionConfig{};
  cfg.sphere_radius = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(DetectAll, PinnedPointsSkipMeshContacts) {
  TriMesh floor;
  floor.vertices = {Vec3(-1, -1, 0), Vec3(1, -1, 0), Vec3(0, 1, 0)};
  floor.triangles = {{0, 1, 2}};
  const TriMeshBvh bvh = TriMeshBvh::build(floor);
  std::vector<RodState> rods{init_rod({5, 0.04, Vec3(0, 0, 5e-4), Vec3::UnitX()})};
  std::vector<RodParams> params(1);
  rods[0].pinned_points[0] = 1;
  const ContactSet set = detect_all(rods, params, &bvh, DetectOptions{});
  ASSERT_EQ(set.mesh.size(), 4u);
  for (const auto& c : set.mesh) {
    EXPECT_NE(c.point.index, 0u);
    EXPECT_NEAR(c.depth, 5e-4, 1e-15);
  }
}
