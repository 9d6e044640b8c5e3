#include "corde/collision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace corde {

namespace {

std::size_t tree_depth(std::size_t count) {
  std::size_t depth = 1;
  while (count > TriMeshBvh::kMaxLeafTriangles) {
    count = (count + 1) / 2;
    ++depth;
  }
  return depth;
}

bool degenerate(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e0 = b - a;
  const Vec3 e1 = c - a;
  const double scale = e0.squaredNorm() + e1.squaredNorm();
  return e0.cross(e1).norm() <= 1e-12 * scale || scale == 0.0;
}

}  // namespace

Aabb TriMesh::triangle_bounds(std::size_t t) const {
  Aabb box;
  for (auto v : triangles[t]) box.expand(vertices[v]);
  return box;
}

Vec3 TriMesh::centroid(std::size_t t) const {
  const auto& tri = triangles[t];
  return (vertices[tri[0]] + vertices[tri[1]] + vertices[tri[2]]) / 3.0;
}

void TriMesh::validate() const {
  for (const auto& tri : triangles) {
    for (auto v : tri) {
      if (v >= vertices.size()) throw std::invalid_argument("mesh face references missing vertex");
    }
  }
}

TriMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh file: " + path.string());
  TriMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad vertex");
      }
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string token;
      while (ss >> token) {
        const long v = std::stol(token.substr(0, token.find('/')));
        if (v <= 0) {
          throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                   ": only positive face indices are supported");
        }
        idx.push_back(static_cast<std::uint32_t>(v - 1));
      }
      if (idx.size() != 3) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                 ": faces must be triangles");
      }
      mesh.triangles.push_back({idx[0], idx[1], idx[2]});
    }
  }
  mesh.validate();
  return mesh;
}

void write_mesh(const TriMesh& mesh, std::ostream& out) {
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write mesh file: " + path.string());
  write_mesh(mesh, out);
  if (!out) throw std::runtime_error("failed writing mesh file: " + path.string());
}

TriMeshBvh TriMeshBvh::build(TriMesh mesh) {
  if (mesh.triangles.empty()) throw std::invalid_argument("cannot build a tree over an empty mesh");
  mesh.validate();
  TriMeshBvh tree;
  tree.mesh_ = std::move(mesh);
  const std::size_t n = tree.mesh_.triangles.size();
  const std::size_t depth = tree_depth(n);
  tree.nodes_.assign((std::size_t{1} << depth) - 1, Node{});
  tree.leaf_triangles_.reserve(n);

  std::vector<Vec3> centroids(n);
  for (std::size_t t = 0; t < n; ++t) centroids[t] = tree.mesh_.centroid(t);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  tree.build_node(0, 0, n, 1, order, centroids);

  tree.stats_.triangles = n;
  tree.stats_.triangles_per_leaf =
      static_cast<double>(n) / static_cast<double>(std::max<std::size_t>(tree.stats_.leaves, 1));
  return tree;
}

void TriMeshBvh::build_node(std::size_t node, std::size_t begin, std::size_t end,
                            std::size_t depth, std::vector<std::uint32_t>& order,
                            const std::vector<Vec3>& centroids) {
  Node& out = nodes_[node];
  out.valid = true;
  for (std::size_t i = begin; i < end; ++i) out.box.expand(mesh_.triangle_bounds(order[i]));
  ++stats_.nodes;
  stats_.max_depth = std::max(stats_.max_depth, depth);

  const std::size_t count = end - begin;
  if (count <= kMaxLeafTriangles) {
    out.first = static_cast<std::uint32_t>(leaf_triangles_.size());
    out.count = static_cast<std::uint8_t>(count);
    leaf_triangles_.insert(leaf_triangles_.end(), order.begin() + begin, order.begin() + end);
    ++stats_.leaves;
    return;
  }

  Aabb centroid_box;
  for (std::size_t i = begin; i < end; ++i) centroid_box.expand(centroids[order[i]]);
  const Vec3 extent = centroid_box.max - centroid_box.min;
  int axis = 0;
  if (extent.y() > extent[axis]) axis = 1;
  if (extent.z() > extent[axis]) axis = 2;

  const std::size_t mid = begin + (count + 1) / 2;
  std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = centroids[a][axis];
                     const double cb = centroids[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  build_node(2 * node + 1, begin, mid, depth + 1, order, centroids);
  build_node(2 * node + 2, mid, end, depth + 1, order, centroids);
}

std::size_t TriMeshBvh::broadphase(const Vec3& center, double radius,
                                   std::vector<std::uint32_t>& candidates) const {
  const Aabb query = Aabb::around_sphere(center, radius);
  std::array<std::uint32_t, kStackCapacity> stack;
  std::size_t top = 0;
  std::size_t high_water = 0;
  stack[top++] = 0;
  high_water = 1;
  while (top > 0) {
    const std::uint32_t index = stack[--top];
    const Node& node = nodes_[index];
    if (!node.box.intersects(query)) continue;
    if (node.count > 0) {
      for (std::uint32_t k = 0; k < node.count; ++k) {
        candidates.push_back(leaf_triangles_[node.first + k]);
      }
      continue;
    }
    if (top + 2 > kStackCapacity) throw std::logic_error("AABB traversal stack overflow");
    const std::uint32_t left = 2 * index + 1;
    const std::uint32_t right = left + 1;
    if (right < nodes_.size() && nodes_[right].valid) stack[top++] = right;
    if (left < nodes_.size() && nodes_[left].valid) stack[top++] = left;
    high_water = std::max(high_water, top);
  }
  return high_water;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

std::optional<SphereHit> sphere_triangle(const Vec3& center, double radius, const Vec3& a,
                                         const Vec3& b, const Vec3& c) {
  if (degenerate(a, b, c)) return std::nullopt;
  const Vec3 closest = closest_point_on_triangle(center, a, b, c);
  const double dist = (center - closest).norm();
  if (!(dist < radius)) return std::nullopt;
  Vec3 n = (b - a).cross(c - a).normalized();
  if ((center - a).dot(n) < 0.0) n = -n;
  SphereHit hit;
  hit.normal = n;
  hit.depth = radius - dist;
  return hit;
}

AggregatedContact aggregate_response(std::span<const SphereHit> hits) {
  if (hits.empty()) throw std::invalid_argument("aggregate_response: no contacts");
  Vec3 sum = Vec3::Zero();
  double total = 0;
  std::size_t deepest = 0;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    sum += hits[k].depth * hits[k].normal;
    total += hits[k].depth;
    if (hits[k].depth > hits[deepest].depth) deepest = k;
  }
  AggregatedContact out;
  out.depth = hits[deepest].depth;
  const double norm = sum.norm();
  out.normal = norm > 1e-12 * total && norm > 0.0 ? Vec3(sum / norm) : hits[deepest].normal;
  return out;
}

std::optional<AggregatedContact> detect_point_cached(const TriMeshBvh& tree, const Vec3& center,
                                                     double radius,
                                                     std::span<const std::uint32_t> candidates,
                                                     QueryScratch& scratch) {
  const TriMesh& mesh = tree.mesh();
  scratch.hits.clear();
  for (std::uint32_t t : candidates) {
    const auto& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    if (degenerate(a, b, c)) {
      ++scratch.degenerate_skipped;
      continue;
    }
    if (auto hit = sphere_triangle(center, radius, a, b, c)) {
      hit->triangle = t;
      scratch.hits.push_back(*hit);
    }
  }
  if (scratch.hits.empty()) return std::nullopt;
  return aggregate_response(scratch.hits);
}

std::optional<AggregatedContact> detect_point(const TriMeshBvh& tree, const Vec3& center,
                                              double radius, QueryScratch& scratch) {
  scratch.candidates.clear();
  scratch.stack_high_water =
      std::max(scratch.stack_high_water, tree.broadphase(center, radius, scratch.candidates));
  return detect_point_cached(tree, center, radius, scratch.candidates, scratch);
}

void SelfCollisionConfig::validate() const {
  if (group_size < 1) throw std::invalid_argument("self collision group size must be >= 1");
  if (sphere_radius < 0.0) throw std::invalid_argument("self collision sphere radius must be >= 0");
  if (friction < 0.0) throw std::invalid_argument("self collision friction must be >= 0");
}

void update_group_sphere(GroupSphere& g, const RodState& rod, const RodParams& params,
                         const SelfCollisionConfig& config) {
  Vec3 c = Vec3::Zero();
  for (std::uint32_t k = 0; k < g.count; ++k) c += rod.positions[g.first + k];
  c /= static_cast<double>(g.count);
  double extent = 0;
  for (std::uint32_t k = 0; k < g.count; ++k) {
    extent = std::max(extent, (rod.positions[g.first + k] - c).norm());
  }
  double rho = config.sphere_radius;
  if (rho == 0.0) {
    rho = 0.6 * static_cast<double>(config.group_size) * rod.total_rest_length() /
          static_cast<double>(rod.num_frames());
  }
  g.center = c;
  g.radius = std::max(rho, extent + params.radius);
}

std::vector<GroupSphere> group_spheres(std::span<const RodState> rods,
                                       std::span<const RodParams> params,
                                       const SelfCollisionConfig& config) {
  config.validate();
  std::vector<GroupSphere> out;
  for (std::size_t r = 0; r < rods.size(); ++r) {
    const std::size_t n = rods[r].num_points();
    for (std::size_t first = 0, g = 0; first < n; first += config.group_size, ++g) {
      GroupSphere s;
      s.rod = static_cast<std::uint32_t>(r);
      s.group = static_cast<std::uint32_t>(g);
      s.first = static_cast<std::uint32_t>(first);
      s.count = static_cast<std::uint32_t>(std::min(config.group_size, n - first));
      update_group_sphere(s, rods[r], params[r], config);
      out.push_back(s);
    }
  }
  return out;
}

void collect_self_pairs(std::span<const GroupSphere> groups, std::size_t begin, std::size_t end,
                        std::span<const RodState> rods, std::span<const RodParams> params,
                        const SelfCollisionConfig& config, std::vector<SelfContact>& out) {
  for (std::size_t ga = begin; ga < end; ++ga) {
    const GroupSphere& a = groups[ga];
    const RodState& rod_a = rods[a.rod];
    const double ra = params[a.rod].radius;
    for (std::size_t gb = ga + 1; gb < groups.size(); ++gb) {
      const GroupSphere& b = groups[gb];
      if (a.rod == b.rod && b.group - a.group <= config.neighbor_exclusion) continue;
      const double reach = a.radius + b.radius;
      if ((a.center - b.center).squaredNorm() >= reach * reach) continue;
      const RodState& rod_b = rods[b.rod];
      const double min_distance = ra + params[b.rod].radius;
      for (std::uint32_t i = a.first; i < a.first + a.count; ++i) {
        for (std::uint32_t j = b.first; j < b.first + b.count; ++j) {
          const Vec3 d = rod_a.positions[i] - rod_b.positions[j];
          const double dist = d.norm();
          if (!(dist < min_distance) || dist == 0.0) continue;
          SelfContact c;
          c.a = {a.rod, i};
          c.b = {b.rod, j};
          c.normal = d / dist;
          c.depth = min_distance - dist;
          c.min_distance = min_distance;
          c.friction = config.friction;
          out.push_back(c);
        }
      }
    }
  }
}

std::vector<SelfContact> self_collision_pairs(std::span<const RodState> rods,
                                              std::span<const RodParams> params,
                                              const SelfCollisionConfig& config) {
  const auto groups = group_spheres(rods, params, config);
  std::vector<SelfContact> out;
  collect_self_pairs(groups, 0, groups.size(), rods, params, config, out);
  return out;
}

ContactSet detect_all(std::span<const RodState> rods, std::span<const RodParams> params,
                      const TriMeshBvh* tree, const DetectOptions& options) {
  ContactSet set;
  if (tree != nullptr) {
    QueryScratch scratch;
    for (std::size_t r = 0; r < rods.size(); ++r) {
      const RodState& rod = rods[r];
      for (std::size_t i = 0; i < rod.num_points(); ++i) {
        if (rod.pinned_points[i]) continue;
        const auto hit = detect_point(*tree, rod.positions[i], params[r].radius, scratch);
        if (!hit) continue;
        ContactConstraint c;
        c.point = {static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(i)};
        c.normal = hit->normal;
        c.depth = hit->depth;
        c.friction = options.friction;
        c.restitution = options.restitution;
        c.initial_normal_velocity = rod.velocities[i].dot(hit->normal);
        set.mesh.push_back(c);
      }
    }
    set.stack_high_water = scratch.stack_high_water;
  }
  if (options.self_collision) set.self = self_collision_pairs(rods, params, options.self);
  return set;
}

}  // namespace corde
