#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "corde/math.hpp"
#include "corde/rod.hpp"

namespace corde {

/// Addresses one mass point in a multi-rod scene.
struct PointRef {
  std::uint32_t rod = 0;
  std::uint32_t index = 0;
  friend bool operator==(const PointRef&, const PointRef&) = default;
};

struct DistanceConstraint {
  std::uint32_t rod = 0;
  std::uint32_t segment = 0;  // joins points segment and segment+1
  double rest_length = 0;
};

/// Aggregated contact of one mass point against the environment mesh.
struct ContactConstraint {
  PointRef point;
  Vec3 normal = Vec3::UnitY();
  double depth = 0;
  double friction = 0;
  double restitution = 0;
  double initial_normal_velocity = 0;
  // Accumulated over the sweeps of one time-step.
  double normal_impulse = 0;
  Vec3 tangent_impulse = Vec3::Zero();
};

/// Point-point contact between two parts of the same rod or two different rods.
/// `normal` points from b to a.
struct SelfContact {
  PointRef a;
  PointRef b;
  Vec3 normal = Vec3::UnitX();
  double depth = 0;
  double min_distance = 0;
  double friction = 0;
  double normal_impulse = 0;
  Vec3 tangent_impulse = Vec3::Zero();
};

enum class BindingMode { kOneWay, kBidirectional };

/// Zero-length link between two points. In one-way mode `a` is the dominant side.
struct BindingConstraint {
  PointRef a;
  PointRef b;
  BindingMode mode = BindingMode::kBidirectional;
};

/// Pulls a point toward a fixed world-space target (infinite-mass anchor).
struct GrabConstraint {
  PointRef point;
  Vec3 target = Vec3::Zero();
};

struct ConstraintSet {
  std::vector<DistanceConstraint> distance;
  std::vector<ContactConstraint> contacts;
  std::vector<SelfContact> self_pairs;
  std::vector<BindingConstraint> bindings;
  std::vector<GrabConstraint> grabs;

  bool empty() const {
    return distance.empty() && contacts.empty() && self_pairs.empty() && bindings.empty() &&
           grabs.empty();
  }
  /// Throws std::invalid_argument on out-of-range indices, non-unit normals or negative
  /// depths / friction.
  void validate(std::span<const RodState> rods) const;
};

struct SolverConfig {
  int iterations = 10;
  double position_bias = 0.2;   // contacts and grabs
  double distance_bias = 1.0;   // distance and binding links, on predicted positions
  double restitution = 0.0;
  double friction = 0.3;

  void validate() const;
};

struct ImpulsePair {
  Vec3 on_a = Vec3::Zero();
  Vec3 on_b = Vec3::Zero();
  bool applied = false;
};

/// Velocity-level distance correction between two points with inverse masses wa, wb.
/// The impulse acts along the predicted separation pb - pa + dt (vb - va) and removes the
/// fraction `beta` of its length error.
ImpulsePair distance_impulse(const Vec3& pa, const Vec3& pb, const Vec3& va, const Vec3& vb,
                             double wa, double wb, double rest_length, double dt, double beta);

/// Single-point contact with Coulomb friction. Updates the accumulated impulses in
/// `contact` and returns the impulse to apply to the point.
Vec3 contact_impulse(const Vec3& velocity, double inv_mass, ContactConstraint& contact,
                     double dt, double beta);

/// Zero-rest-length link on predicted positions. In one-way mode the point `a` is treated as
/// infinite mass.
ImpulsePair binding_impulse(const Vec3& pa, const Vec3& pb, const Vec3& va, const Vec3& vb,
                            double wa, double wb, double dt, double beta, BindingMode mode);

/// Point-point non-penetration with friction; updates accumulators in `pair`.
ImpulsePair self_contact_impulse(const Vec3& va, const Vec3& vb, double wa, double wb,
                                 SelfContact& pair, double dt, double beta);

// In-place solves shared by the serial sweep and the block engine.
void solve_distance(RodState& rod, const MassProperties& mass, std::size_t segment,
                    double rest_length, double dt, double beta);
void solve_contact(std::span<RodState> rods, std::span<const MassProperties> masses,
                   ContactConstraint& contact, double dt, double beta);
void solve_self_contact(std::span<RodState> rods, std::span<const MassProperties> masses,
                        SelfContact& pair, double dt, double beta);
void solve_binding(std::span<RodState> rods, std::span<const MassProperties> masses,
                   const BindingConstraint& binding, double dt, double beta);
void solve_grab(std::span<RodState> rods, std::span<const MassProperties> masses,
                const GrabConstraint& grab, double dt, double beta);

/// Distance constraints for every segment of every inextensible rod.
std::vector<DistanceConstraint> make_distance_constraints(std::span<const RodState> rods,
                                                          std::span<const RodParams> params);

/// `iterations` sweeps: distance (even segments, then odd), contacts, self contacts, then
/// bindings and grabs. Deterministic for identical inputs.
void iterate_constraints(std::span<RodState> rods, std::span<const MassProperties> masses,
                         ConstraintSet& set, const SolverConfig& config, double dt);

/// max |len - rest| / rest over all segments.
double max_segment_strain(const RodState& rod);

}  // namespace corde
