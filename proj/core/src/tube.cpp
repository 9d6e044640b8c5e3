#include "corde/tube.hpp"

#include <cmath>
#include <stdexcept>

namespace corde {

void TubeSpec::validate() const {
  if (!(radius > 0.0)) throw std::invalid_argument("tube radius must be positive");
  if (entry_length < 0.0 || tail_length < 0.0) {
    throw std::invalid_argument("tube section lengths must be >= 0");
  }
  if (!(bend_radius > radius)) throw std::invalid_argument("bend radius must exceed tube radius");
  if (bend_angle < 0.0) throw std::invalid_argument("bend angle must be >= 0");
  if (sides < 3) throw std::invalid_argument("tube needs at least 3 sides");
  if (rings < 1) throw std::invalid_argument("tube needs at least 1 ring");
  if (!(length() > 0.0)) throw std::invalid_argument("tube length must be positive");
}

TubePath::TubePath(const TubeSpec& spec) : spec_(spec) { spec_.validate(); }

Vec3 TubePath::point(double s) const {
  const double a = spec_.entry_length;
  const double arc = spec_.bend_radius * spec_.bend_angle;
  if (s <= a) return Vec3(s, 0, 0);
  if (s <= a + arc) {
    const double phi = (s - a) / spec_.bend_radius;
    return Vec3(a + spec_.bend_radius * std::sin(phi),
                spec_.bend_radius * (1.0 - std::cos(phi)), 0);
  }
  const Vec3 end = point(a + arc);
  return end + (s - a - arc) * tangent(a + arc);
}

Vec3 TubePath::tangent(double s) const {
  const double a = spec_.entry_length;
  const double phi = std::clamp((s - a) / spec_.bend_radius, 0.0, spec_.bend_angle);
  return Vec3(std::cos(phi), std::sin(phi), 0);
}

Vec3 TubePath::normal(double s) const {
  const Vec3 t = tangent(s);
  return Vec3(-t.y(), t.x(), 0);
}

TriMesh make_tube_mesh(const TubeSpec& spec) {
  const TubePath path(spec);
  TriMesh mesh;
  const std::size_t sides = spec.sides;
  const std::size_t rings = spec.rings;
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (std::size_t k = 0; k <= rings; ++k) {
    const double s = path.length() * static_cast<double>(k) / static_cast<double>(rings);
    const Vec3 c = path.point(s);
    const Vec3 n = path.normal(s);
    const Vec3 b = Vec3::UnitZ();
    for (std::size_t j = 0; j < sides; ++j) {
      const double theta = two_pi * static_cast<double>(j) / static_cast<double>(sides);
      mesh.vertices.push_back(c + spec.radius * (std::cos(theta) * n + std::sin(theta) * b));
    }
  }
  for (std::size_t k = 0; k < rings; ++k) {
    for (std::size_t j = 0; j < sides; ++j) {
      const auto v = [&](std::size_t ring, std::size_t side) {
        return static_cast<std::uint32_t>(ring * sides + side % sides);
      };
      // Wound so the face normals point into the lumen.
      mesh.triangles.push_back({v(k, j), v(k, j + 1), v(k + 1, j)});
      mesh.triangles.push_back({v(k, j + 1), v(k + 1, j + 1), v(k + 1, j)});
    }
  }
  return mesh;
}

std::vector<Vec3> centreline_points(const TubePath& path, std::size_t count, double spacing,
                                    double tip_arc) {
  if (count < 2) throw std::invalid_argument("centreline_points: need at least 2 points");
  if (!(spacing > 0.0)) throw std::invalid_argument("centreline_points: spacing must be positive");
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double s = tip_arc - spacing * static_cast<double>(count - 1 - i);
    out.push_back(path.point(s));
  }
  return out;
}

}  // namespace corde
