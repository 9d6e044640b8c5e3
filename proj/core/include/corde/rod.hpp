#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "corde/math.hpp"

namespace corde {

/// Cross-section factor used in the bend and twist stiffnesses.
enum class CrossSection {
  kAreaSquared,  // pi r^2 / 4, pi r^2 / 2 (literal form)
  kBeamTheory,   // pi r^4 / 4, pi r^4 / 2
};

struct RodParams {
  double radius = 1.0e-3;            // [m]
  double stretch_modulus = 1.0e5;    // E_s [Pa]
  double bend_modulus = 1.0e4;       // E_b [Pa]
  double shear_modulus = 5.0e3;      // G [Pa]
  double linear_density = 3.14e-3;   // [kg/m]
  double penalty_stiffness = 0.1;    // K_p [N]
  double damping_translational = 0;  // [N s/m]
  double damping_rotational = 0;     // [N m s]
  bool extensible = false;
  CrossSection cross_section = CrossSection::kBeamTheory;
  /// Rest bend/twist strains, one per frame. Empty means straight.
  std::vector<Vec3> intrinsic_strains;

  double stretch_stiffness() const;  // K_s = E_s pi r^2
  Vec3 bend_twist_stiffness() const; // (K1, K2, K3)
  Vec3 intrinsic_strain(std::size_t frame) const;

  /// Throws std::invalid_argument on non-positive moduli, radius or density.
  void validate() const;
};

/// Full dynamic state of one rod: N mass points and N-1 material frames.
struct RodState {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::vector<Quat> frames;
  std::vector<Vec3> angular_velocities;  // body frame
  std::vector<double> rest_lengths;
  /// Kinematic flags. A pinned point or frame keeps its prescribed velocity
  /// and is treated as infinite mass by forces and constraints.
  std::vector<std::uint8_t> pinned_points;
  std::vector<std::uint8_t> pinned_frames;

  std::size_t num_points() const { return positions.size(); }
  std::size_t num_frames() const { return frames.size(); }
  double total_rest_length() const;

  /// Throws std::invalid_argument when array sizes or rest lengths are inconsistent.
  void validate() const;
};

/// Lumped masses and diagonal body inertias derived from params and rest lengths.
/// Pinning is not folded in here; callers check RodState's pinned flags.
struct MassProperties {
  std::vector<double> mass;
  std::vector<double> inv_mass;
  std::vector<Vec3> inertia;
  std::vector<Vec3> inv_inertia;
};

MassProperties lump_masses(const RodState& state, const RodParams& params);

struct RodInit {
  std::size_t points = 2;
  double length = 1.0;
  Vec3 origin = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
};

/// Straight rod along `axis` with d3 aligned to it and zero velocities.
RodState init_rod(const RodInit& init);

/// Rod through the given points (rest lengths = current segment lengths) with frames
/// parallel-transported along the polyline, so the twist is zero.
RodState rod_from_polyline(std::span<const Vec3> points);

/// Unit tangent of a segment. Throws std::domain_error for coincident points.
Vec3 segment_tangent(const Vec3& r_i, const Vec3& r_next);

/// Returns `next` negated if it lies in the opposite hemisphere of `q`.
Quat hemisphere_aligned(const Quat& q, const Quat& next);

/// Finite difference (next - q) / length in quaternion space.
/// `next` is expected to be hemisphere-aligned already.
Vec4 quat_spatial_derivative(const Quat& q, const Quat& next, double length);

/// Body-frame Darboux strains from the skew-symmetric B_k matrix form.
Vec3 darboux_strains(const Quat& q, const Vec4& q_prime);
/// Same strains as the vector part of 2 conj(q) * q'.
Vec3 darboux_strains_product(const Quat& q, const Vec4& q_prime);

/// The constant 4x4 matrices with u_k = 2 (B_k q) . q'.
const Mat4& darboux_matrix(int k);

struct StrainSample {
  double stretch = 1.0;        // v3
  Vec3 bend_twist = Vec3::Zero();  // u
  Vec3 tangent = Vec3::UnitZ();
};

/// Stretch and tangent of segment j; bend/twist of the element between frames j and j+1
/// (zero for the last frame).
StrainSample strain_at(const RodState& state, std::size_t j);

/// Length between the centres of frames j and j+1.
inline double bend_element_length(const RodState& state, std::size_t j) {
  return 0.5 * (state.rest_lengths[j] + state.rest_lengths[j + 1]);
}

enum EnergyTerm : unsigned {
  kStretch = 1u << 0,
  kBend = 1u << 1,
  kPenalty = 1u << 2,
  kAllTerms = kStretch | kBend | kPenalty,
};

struct ElasticEnergies {
  double stretch = 0;
  double bend = 0;
  double penalty = 0;
  double total() const { return stretch + bend + penalty; }
};

/// Discrete stretch, bend/twist and parallel-constraint penalty energies.
/// The stretch term is zero for inextensible rods.
ElasticEnergies elastic_energies(const RodState& state, const RodParams& params,
                                 unsigned terms = kAllTerms);

/// Per-mass-point forces and per-frame generalized forces / torques.
struct ForceTorqueBuffer {
  std::vector<Vec3> forces;
  std::vector<Vec4> quat_forces;   // projected onto the tangent of the unit sphere
  std::vector<Vec3> body_torques;

  void resize(std::size_t points);
  void clear();
};

/// Intermediate per-segment results. Each entry is written by exactly one segment so the
/// gather step can sum neighbours in a fixed order.
struct SegmentTerms {
  std::vector<Vec3> segment_force;    // force on point j+1; point j receives the negative
  std::vector<Vec4> penalty_grad;     // dE_p/dq_j
  std::vector<Vec4> bend_grad_left;   // dV_b/dq_j of the element (j, j+1)
  std::vector<Vec4> bend_grad_right;  // dV_b/dq_{j+1} of the element (j, j+1)
  std::vector<Vec3> damping_torque;   // world torque on frame j+1; frame j gets the negative

  void resize(std::size_t points);
};

/// Evaluates segment/element terms for segments [begin, end).
void compute_segment_terms(const RodState& state, const RodParams& params, std::size_t begin,
                           std::size_t end, SegmentTerms& terms, unsigned energy_terms = kAllTerms);

/// Sums segment terms into point forces and frame torques for points/frames [begin, end).
/// Adds to the buffer. Throws std::runtime_error on a non-finite result.
void gather_forces_torques(const RodState& state, const SegmentTerms& terms, std::size_t begin,
                           std::size_t end, ForceTorqueBuffer& buffer);

/// f = -dV/dr, generalized quaternion force = -dV/dq (projected), plus viscous damping.
void elastic_forces_torques(const RodState& state, const RodParams& params,
                            ForceTorqueBuffer& buffer, unsigned energy_terms = kAllTerms);

/// Body torque equivalent of a tangent-space quaternion force: 1/2 vec(conj(q) * F).
Vec3 body_torque_from_quat_force(const Quat& q, const Vec4& quat_force);

void add_gravity(const RodState& state, const MassProperties& mass, const Vec3& gravity,
                 std::size_t begin, std::size_t end, ForceTorqueBuffer& buffer);

/// v += dt f / m, w += dt I^-1 (tau - w x I w), over points/frames [begin, end).
void integrate_velocities(RodState& state, const MassProperties& mass,
                          const ForceTorqueBuffer& buffer, double dt, std::size_t begin,
                          std::size_t end);
void integrate_velocities(RodState& state, const MassProperties& mass,
                          const ForceTorqueBuffer& buffer, double dt);

/// r += dt v, q = normalize(q + dt/2 q * (0, w)), over points/frames [begin, end).
void integrate_positions(RodState& state, double dt, std::size_t begin, std::size_t end);
void integrate_positions(RodState& state, double dt);

/// Kinetic energy of points and frames.
double kinetic_energy(const RodState& state, const MassProperties& mass);

}  // namespace corde
