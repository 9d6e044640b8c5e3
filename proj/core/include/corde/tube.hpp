#pragma once

#include <cstddef>
#include <vector>

#include "corde/collision.hpp"
#include "corde/math.hpp"

namespace corde {

/// Curved vessel stand-in: a straight entry run along +x from the origin, a circular bend
/// in the xy-plane, then a straight tail.
struct TubeSpec {
  double radius = 5.0e-3;
  double entry_length = 0.15;
  double bend_radius = 0.12;
  double bend_angle = 1.5707963267948966;  // [rad]
  double tail_length = 0.25;
  std::size_t sides = 32;
  std::size_t rings = 400;

  double length() const { return entry_length + bend_radius * bend_angle + tail_length; }
  void validate() const;
};

class TubePath {
 public:
  explicit TubePath(const TubeSpec& spec);

  const TubeSpec& spec() const { return spec_; }
  double length() const { return spec_.length(); }
  /// Centreline point at arc length s; s < 0 continues straight back along -x.
  Vec3 point(double s) const;
  Vec3 tangent(double s) const;
  /// Unit normal in the bend plane, perpendicular to the tangent.
  Vec3 normal(double s) const;

 private:
  TubeSpec spec_;
};

/// Open-ended tube surface with `sides * rings * 2` triangles.
TriMesh make_tube_mesh(const TubeSpec& spec);

/// Points spaced `spacing` apart along the centreline, the last one at arc length
/// `tip_arc`. Points before the entry lie on the -x axis.
std::vector<Vec3> centreline_points(const TubePath& path, std::size_t count, double spacing,
                                    double tip_arc);

}  // namespace corde
