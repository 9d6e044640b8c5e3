#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "corde/constraints.hpp"
#include "corde/math.hpp"
#include "corde/rod.hpp"

namespace corde {

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    min = min.cwiseMin(b.min);
    max = max.cwiseMax(b.max);
  }
  bool intersects(const Aabb& b) const {
    return (min.array() <= b.max.array()).all() && (b.min.array() <= max.array()).all();
  }
  bool contains(const Aabb& b) const {
    return (min.array() <= b.min.array()).all() && (b.max.array() <= max.array()).all();
  }
  static Aabb around_sphere(const Vec3& c, double r) {
    return {c - Vec3::Constant(r), c + Vec3::Constant(r)};
  }
};

using Triangle = std::array<std::uint32_t, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  Aabb triangle_bounds(std::size_t t) const;
  Vec3 centroid(std::size_t t) const;
  /// Throws std::invalid_argument if a face references a missing vertex.
  void validate() const;
};

/// Reads `v x y z` and `f a b c` records (1-based indices, `a/b/c` forms accepted).
/// Polygons with more than three vertices are rejected.
TriMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path);
void write_mesh(const TriMesh& mesh, std::ostream& out);

/// Balanced AABB tree over a triangle mesh, stored as an implicit array
/// (children of node i at 2i+1 and 2i+2).
class TriMeshBvh {
 public:
  static constexpr std::size_t kStackCapacity = 32;
  static constexpr std::size_t kMaxLeafTriangles = 2;

  struct Node {
    Aabb box;
    std::uint32_t first = 0;  // into leaf_triangles(), leaves only
    std::uint8_t count = 0;   // triangles in a leaf, 0 for internal nodes
    bool valid = false;
  };

  struct Stats {
    std::size_t triangles = 0;
    std::size_t nodes = 0;
    std::size_t leaves = 0;
    std::size_t max_depth = 0;
    double triangles_per_leaf = 0;
  };

  /// Longest-axis median split on triangle centroids. Throws on an empty mesh.
  static TriMeshBvh build(TriMesh mesh);

  const TriMesh& mesh() const { return mesh_; }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const std::uint32_t> leaf_triangles() const { return leaf_triangles_; }
  const Stats& stats() const { return stats_; }

  /// Appends every triangle stored in a leaf whose box overlaps the sphere's AABB.
  /// Returns the stack high-water mark. Throws std::logic_error on stack overflow.
  std::size_t broadphase(const Vec3& center, double radius,
                         std::vector<std::uint32_t>& candidates) const;

 private:
  void build_node(std::size_t node, std::size_t begin, std::size_t end, std::size_t depth,
                  std::vector<std::uint32_t>& order, const std::vector<Vec3>& centroids);

  TriMesh mesh_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> leaf_triangles_;
  Stats stats_;
};

struct SphereHit {
  Vec3 normal = Vec3::UnitY();
  double depth = 0;
  std::uint32_t triangle = 0;
};

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Sphere against one triangle. The returned normal is the face normal oriented toward the
/// sphere centre. Degenerate triangles never report a hit.
std::optional<SphereHit> sphere_triangle(const Vec3& center, double radius, const Vec3& a,
                                         const Vec3& b, const Vec3& c);

struct AggregatedContact {
  Vec3 normal = Vec3::UnitY();
  double depth = 0;
};

/// Depth-weighted average of hit normals; depth is the maximum. Requires at least one hit.
AggregatedContact aggregate_response(std::span<const SphereHit> hits);

/// Scratch space owned by one querying thread.
struct QueryScratch {
  std::vector<std::uint32_t> candidates;
  std::vector<SphereHit> hits;
  std::size_t stack_high_water = 0;
  std::size_t degenerate_skipped = 0;
};

/// Broad phase, narrow phase and aggregation for one point.
std::optional<AggregatedContact> detect_point(const TriMeshBvh& tree, const Vec3& center,
                                              double radius, QueryScratch& scratch);
/// Narrow phase and aggregation over a precomputed candidate list.
std::optional<AggregatedContact> detect_point_cached(const TriMeshBvh& tree, const Vec3& center,
                                                     double radius,
                                                     std::span<const std::uint32_t> candidates,
                                                     QueryScratch& scratch);

struct SelfCollisionConfig {
  std::size_t group_size = 4;
  /// Broad-phase sphere radius; 0 selects 0.6 * group_size * rest length per rod.
  double sphere_radius = 0;
  std::size_t neighbor_exclusion = 2;
  double friction = 0.0;

  void validate() const;
};

struct GroupSphere {
  std::uint32_t rod = 0;
  std::uint32_t group = 0;  // group index within the rod
  std::uint32_t first = 0;
  std::uint32_t count = 0;
  Vec3 center = Vec3::Zero();
  double radius = 0;
};

/// Bounding spheres for consecutive groups of points, rod-major order.
std::vector<GroupSphere> group_spheres(std::span<const RodState> rods,
                                       std::span<const RodParams> params,
                                       const SelfCollisionConfig& config);
void update_group_sphere(GroupSphere& g, const RodState& rod, const RodParams& params,
                         const SelfCollisionConfig& config);

/// Pairs (ga, gb) with ga in [begin, end) and gb > ga, expanded to point pairs.
void collect_self_pairs(std::span<const GroupSphere> groups, std::size_t begin, std::size_t end,
                        std::span<const RodState> rods, std::span<const RodParams> params,
                        const SelfCollisionConfig& config, std::vector<SelfContact>& out);

std::vector<SelfContact> self_collision_pairs(std::span<const RodState> rods,
                                              std::span<const RodParams> params,
                                              const SelfCollisionConfig& config);

struct ContactSet {
  std::vector<ContactConstraint> mesh;
  std::vector<SelfContact> self;
  std::size_t stack_high_water = 0;
};

struct DetectOptions {
  bool self_collision = false;
  SelfCollisionConfig self;
  double friction = 0.3;
  double restitution = 0.0;
};

/// Mesh contacts for every free point, plus self/inter-rod pairs when enabled.
ContactSet detect_all(std::span<const RodState> rods, std::span<const RodParams> params,
                      const TriMeshBvh* tree, const DetectOptions& options);

}  // namespace corde
