#include "corde/rod.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace corde {

namespace {

Mat4 make_darboux_matrix(int k) {
  // Rows/cols ordered (w, x, y, z). (B_k q) . p equals the k-th vector component
  // of conj(q) * p.
  Mat4 b = Mat4::Zero();
  switch (k) {
    case 0:
      b(1, 0) = 1;
      b(0, 1) = -1;
      b(2, 3) = 1;
      b(3, 2) = -1;
      break;
    case 1:
      b(2, 0) = 1;
      b(0, 2) = -1;
      b(3, 1) = 1;
      b(1, 3) = -1;
      break;
    default:
      b(3, 0) = 1;
      b(0, 3) = -1;
      b(1, 2) = 1;
      b(2, 1) = -1;
      break;
  }
  return b;
}

const Mat4 kDarboux[3] = {make_darboux_matrix(0), make_darboux_matrix(1),
                          make_darboux_matrix(2)};

bool finite(const Vec3& v) { return v.allFinite(); }

}  // namespace

double RodParams::stretch_stiffness() const {
  return stretch_modulus * std::numbers::pi * radius * radius;
}

Vec3 RodParams::bend_twist_stiffness() const {
  const double r2 = radius * radius;
  const double area_factor = cross_section == CrossSection::kBeamTheory ? r2 * r2 : r2;
  const double bend = bend_modulus * std::numbers::pi * area_factor / 4.0;
  const double twist = shear_modulus * std::numbers::pi * area_factor / 2.0;
  return {bend, bend, twist};
}

Vec3 RodParams::intrinsic_strain(std::size_t frame) const {
  return frame < intrinsic_strains.size() ? intrinsic_strains[frame] : Vec3::Zero();
}

void RodParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string("rod parameter '") + name + "' must be positive");
    }
  };
  positive(radius, "radius");
  positive(stretch_modulus, "stretch_modulus");
  positive(bend_modulus, "bend_modulus");
  positive(shear_modulus, "shear_modulus");
  positive(linear_density, "linear_density");
  if (penalty_stiffness < 0.0) throw std::invalid_argument("penalty_stiffness must be >= 0");
  if (damping_translational < 0.0 || damping_rotational < 0.0) {
    throw std::invalid_argument("damping coefficients must be >= 0");
  }
}

double RodState::total_rest_length() const {
  double total = 0;
  for (double l : rest_lengths) total += l;
  return total;
}

void RodState::validate() const {
  const std::size_t n = positions.size();
  if (n < 2) throw std::invalid_argument("a rod needs at least 2 points");
  if (velocities.size() != n || pinned_points.size() != n) {
    throw std::invalid_argument("per-point arrays must have N entries");
  }
  if (frames.size() != n - 1 || angular_velocities.size() != n - 1 ||
      rest_lengths.size() != n - 1 || pinned_frames.size() != n - 1) {
    throw std::invalid_argument("per-frame arrays must have N-1 entries");
  }
  for (double l : rest_lengths) {
    if (!(l > 0.0)) throw std::invalid_argument("rest lengths must be positive");
  }
}

MassProperties lump_masses(const RodState& state, const RodParams& params) {
  const std::size_t n = state.num_points();
  MassProperties m;
  m.mass.assign(n, 0.0);
  m.inv_mass.assign(n, 0.0);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double half = 0.5 * params.linear_density * state.rest_lengths[j];
    m.mass[j] += half;
    m.mass[j + 1] += half;
  }
  for (std::size_t i = 0; i < n; ++i) {
    m.inv_mass[i] = 1.0 / m.mass[i];
  }
  const double r2 = params.radius * params.radius;
  m.inertia.resize(n - 1);
  m.inv_inertia.resize(n - 1);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double ms = params.linear_density * state.rest_lengths[j];
    m.inertia[j] = Vec3(0.25 * ms * r2, 0.25 * ms * r2, 0.5 * ms * r2);
    m.inv_inertia[j] = m.inertia[j].cwiseInverse();
  }
  return m;
}

RodState init_rod(const RodInit& init) {
  if (init.points < 2) throw std::invalid_argument("init_rod: need at least 2 points");
  if (!(init.length > 0.0)) throw std::invalid_argument("init_rod: length must be positive");
  if (init.axis.norm() == 0.0) throw std::invalid_argument("init_rod: zero axis");
  const Vec3 axis = init.axis.normalized();
  const std::size_t n = init.points;
  const double l = init.length / static_cast<double>(n - 1);
  const Quat frame = Quat::FromTwoVectors(Vec3::UnitZ(), axis).normalized();

  RodState s;
  s.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.positions[i] = init.origin + axis * (l * i);
  s.velocities.assign(n, Vec3::Zero());
  s.frames.assign(n - 1, frame);
  s.angular_velocities.assign(n - 1, Vec3::Zero());
  s.rest_lengths.assign(n - 1, l);
  s.pinned_points.assign(n, 0);
  s.pinned_frames.assign(n - 1, 0);
  return s;
}

RodState rod_from_polyline(std::span<const Vec3> points) {
  const std::size_t n = points.size();
  if (n < 2) throw std::invalid_argument("rod_from_polyline: need at least 2 points");
  RodState s;
  s.positions.assign(points.begin(), points.end());
  s.velocities.assign(n, Vec3::Zero());
  s.angular_velocities.assign(n - 1, Vec3::Zero());
  s.pinned_points.assign(n, 0);
  s.pinned_frames.assign(n - 1, 0);
  Vec3 previous = Vec3::UnitZ();
  Quat frame = Quat::Identity();
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const Vec3 d = points[j + 1] - points[j];
    const double len = d.norm();
    if (!(len > 0.0)) throw std::invalid_argument("rod_from_polyline: coincident points");
    const Vec3 t = d / len;
    frame = (Quat::FromTwoVectors(previous, t) * frame).normalized();
    previous = t;
    s.frames.push_back(frame);
    s.rest_lengths.push_back(len);
  }
  return s;
}

Vec3 segment_tangent(const Vec3& r_i, const Vec3& r_next) {
  const Vec3 d = r_next - r_i;
  const double len = d.norm();
  if (len == 0.0) throw std::domain_error("segment_tangent: degenerate segment");
  return d / len;
}

Quat hemisphere_aligned(const Quat& q, const Quat& next) {
  if (q.coeffs().dot(next.coeffs()) < 0.0) return Quat(-next.coeffs());
  return next;
}

Vec4 quat_spatial_derivative(const Quat& q, const Quat& next, double length) {
  return (to_vec4(next) - to_vec4(q)) / length;
}

const Mat4& darboux_matrix(int k) { return kDarboux[k]; }

Vec3 darboux_strains(const Quat& q, const Vec4& q_prime) {
  const Vec4 qv = to_vec4(q);
  return {2.0 * (kDarboux[0] * qv).dot(q_prime), 2.0 * (kDarboux[1] * qv).dot(q_prime),
          2.0 * (kDarboux[2] * qv).dot(q_prime)};
}

Vec3 darboux_strains_product(const Quat& q, const Vec4& q_prime) {
  const Quat prod = q.conjugate() * to_quat(q_prime);
  return 2.0 * prod.vec();
}

StrainSample strain_at(const RodState& state, std::size_t j) {
  StrainSample s;
  const Vec3 d = state.positions[j + 1] - state.positions[j];
  s.stretch = d.norm() / state.rest_lengths[j];
  s.tangent = segment_tangent(state.positions[j], state.positions[j + 1]);
  if (j + 2 < state.num_points()) {
    const Quat next = hemisphere_aligned(state.frames[j], state.frames[j + 1]);
    s.bend_twist = darboux_strains(
        state.frames[j],
        quat_spatial_derivative(state.frames[j], next, bend_element_length(state, j)));
  }
  return s;
}

ElasticEnergies elastic_energies(const RodState& state, const RodParams& params,
                                 unsigned terms) {
  ElasticEnergies e;
  const std::size_t n = state.num_points();
  const double ks = params.stretch_stiffness();
  const Vec3 kb = params.bend_twist_stiffness();
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double l = state.rest_lengths[j];
    const Vec3 d = state.positions[j + 1] - state.positions[j];
    if ((terms & kStretch) && params.extensible) {
      const double dv = d.norm() / l - 1.0;
      e.stretch += 0.5 * ks * dv * dv * l;
    }
    if (terms & kPenalty) {
      const Vec3 diff = segment_tangent(state.positions[j], state.positions[j + 1]) -
                        director3(state.frames[j]);
      e.penalty += 0.5 * params.penalty_stiffness * diff.squaredNorm() * l;
    }
    if ((terms & kBend) && j + 2 < n) {
      const double lb = bend_element_length(state, j);
      const Quat next = hemisphere_aligned(state.frames[j], state.frames[j + 1]);
      const Vec3 u =
          darboux_strains(state.frames[j], quat_spatial_derivative(state.frames[j], next, lb));
      const Vec3 du = u - params.intrinsic_strain(j);
      e.bend += 0.5 * kb.dot(du.cwiseProduct(du)) * lb;
    }
  }
  return e;
}

void ForceTorqueBuffer::resize(std::size_t points) {
  forces.assign(points, Vec3::Zero());
  quat_forces.assign(points > 0 ? points - 1 : 0, Vec4::Zero());
  body_torques.assign(points > 0 ? points - 1 : 0, Vec3::Zero());
}

void ForceTorqueBuffer::clear() {
  for (auto& f : forces) f.setZero();
  for (auto& f : quat_forces) f.setZero();
  for (auto& t : body_torques) t.setZero();
}

void SegmentTerms::resize(std::size_t points) {
  const std::size_t segs = points > 0 ? points - 1 : 0;
  segment_force.assign(segs, Vec3::Zero());
  penalty_grad.assign(segs, Vec4::Zero());
  bend_grad_left.assign(segs, Vec4::Zero());
  bend_grad_right.assign(segs, Vec4::Zero());
  damping_torque.assign(segs, Vec3::Zero());
}

void compute_segment_terms(const RodState& state, const RodParams& params, std::size_t begin,
                           std::size_t end, SegmentTerms& terms, unsigned energy_terms) {
  const std::size_t n = state.num_points();
  end = std::min(end, n - 1);
  const double ks = params.stretch_stiffness();
  const Vec3 kb = params.bend_twist_stiffness();
  const double kp = params.penalty_stiffness;
  const bool stretch = (energy_terms & kStretch) && params.extensible;
  const bool penalty = (energy_terms & kPenalty) != 0;
  const bool bend = (energy_terms & kBend) != 0;

  for (std::size_t j = begin; j < end; ++j) {
    const double l = state.rest_lengths[j];
    const Vec3 d = state.positions[j + 1] - state.positions[j];
    const double len = d.norm();
    if (len == 0.0) {
      throw std::runtime_error("degenerate segment " + std::to_string(j));
    }
    const Vec3 t = d / len;
    Vec3 force = Vec3::Zero();
    if (stretch) force -= ks * (len / l - 1.0) * t;

    Vec4 pgrad = Vec4::Zero();
    if (penalty) {
      const Quat& q = state.frames[j];
      const Vec3 d3 = director3(q);
      const Vec3 diff = t - d3;
      force -= (kp * l / len) * (diff - t * t.dot(diff));
      pgrad = kp * l * director3_jacobian(q).transpose() * (d3 - t);
    }
    if (params.damping_translational > 0.0) {
      force -= params.damping_translational * (state.velocities[j + 1] - state.velocities[j]);
    }
    terms.segment_force[j] = force;
    terms.penalty_grad[j] = pgrad;

    Vec4 left = Vec4::Zero();
    Vec4 right = Vec4::Zero();
    Vec3 damping = Vec3::Zero();
    if (j + 2 < n) {
      const Quat& q = state.frames[j];
      const bool flip = q.coeffs().dot(state.frames[j + 1].coeffs()) < 0.0;
      const Vec4 qv = to_vec4(q);
      const Vec4 pv = flip ? Vec4(-to_vec4(state.frames[j + 1])) : to_vec4(state.frames[j + 1]);
      if (bend) {
        const double lb = bend_element_length(state, j);
        const Vec3 uhat = params.intrinsic_strain(j);
        const double scale = 2.0 / lb;
        for (int k = 0; k < 3; ++k) {
          const Vec4 bq = kDarboux[k] * qv;
          const double u = scale * bq.dot(pv);
          const double e = kb[k] * (u - uhat[k]) * lb;
          left += e * scale * (kDarboux[k].transpose() * pv);
          right += e * scale * bq;
        }
        if (flip) right = -right;
      }
      if (params.damping_rotational > 0.0) {
        const Vec3 w0 = q * state.angular_velocities[j];
        const Vec3 w1 = state.frames[j + 1] * state.angular_velocities[j + 1];
        damping = -params.damping_rotational * (w1 - w0);
      }
    }
    terms.bend_grad_left[j] = left;
    terms.bend_grad_right[j] = right;
    terms.damping_torque[j] = damping;
  }
}

Vec3 body_torque_from_quat_force(const Quat& q, const Vec4& quat_force) {
  return 0.5 * (q.conjugate() * to_quat(quat_force)).vec();
}

void gather_forces_torques(const RodState& state, const SegmentTerms& terms, std::size_t begin,
                           std::size_t end, ForceTorqueBuffer& buffer) {
  const std::size_t n = state.num_points();
  const std::size_t point_end = std::min(end, n);
  for (std::size_t i = begin; i < point_end; ++i) {
    Vec3 f = Vec3::Zero();
    if (i > 0) f += terms.segment_force[i - 1];
    if (i + 1 < n) f -= terms.segment_force[i];
    buffer.forces[i] += f;
    if (!finite(buffer.forces[i])) {
      throw std::runtime_error("non-finite force at point " + std::to_string(i));
    }
  }
  const std::size_t frame_end = std::min(end, n - 1);
  for (std::size_t j = begin; j < frame_end; ++j) {
    const Quat& q = state.frames[j];
    const Vec4 qv = to_vec4(q);
    Vec4 grad = terms.penalty_grad[j];
    if (j + 2 < n) grad += terms.bend_grad_left[j];
    if (j > 0) grad += terms.bend_grad_right[j - 1];
    Vec4 f4 = -grad;
    f4 -= qv * qv.dot(f4);
    Vec3 damping = Vec3::Zero();
    if (j > 0) damping += terms.damping_torque[j - 1];
    if (j + 2 < n) damping -= terms.damping_torque[j];
    buffer.quat_forces[j] += f4;
    buffer.body_torques[j] += body_torque_from_quat_force(q, f4) + q.conjugate() * damping;
    if (!buffer.quat_forces[j].allFinite() || !finite(buffer.body_torques[j])) {
      throw std::runtime_error("non-finite torque at frame " + std::to_string(j));
    }
  }
}

void elastic_forces_torques(const RodState& state, const RodParams& params,
                            ForceTorqueBuffer& buffer, unsigned energy_terms) {
  SegmentTerms terms;
  terms.resize(state.num_points());
  compute_segment_terms(state, params, 0, state.num_points(), terms, energy_terms);
  gather_forces_torques(state, terms, 0, state.num_points(), buffer);
}

void add_gravity(const RodState& state, const MassProperties& mass, const Vec3& gravity,
                 std::size_t begin, std::size_t end, ForceTorqueBuffer& buffer) {
  end = std::min(end, state.num_points());
  for (std::size_t i = begin; i < end; ++i) {
    if (!state.pinned_points[i]) buffer.forces[i] += mass.mass[i] * gravity;
  }
}

void integrate_velocities(RodState& state, const MassProperties& mass,
                          const ForceTorqueBuffer& buffer, double dt, std::size_t begin,
                          std::size_t end) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_velocities: dt must be positive");
  const std::size_t n = state.num_points();
  const std::size_t point_end = std::min(end, n);
  for (std::size_t i = begin; i < point_end; ++i) {
    if (state.pinned_points[i]) continue;
    state.velocities[i] += (dt * mass.inv_mass[i]) * buffer.forces[i];
  }
  const std::size_t frame_end = std::min(end, n - 1);
  for (std::size_t j = begin; j < frame_end; ++j) {
    if (state.pinned_frames[j]) continue;
    Vec3& w = state.angular_velocities[j];
    const Vec3 iw = mass.inertia[j].cwiseProduct(w);
    w += dt * mass.inv_inertia[j].cwiseProduct(buffer.body_torques[j] - w.cross(iw));
  }
}

void integrate_velocities(RodState& state, const MassProperties& mass,
                          const ForceTorqueBuffer& buffer, double dt) {
  integrate_velocities(state, mass, buffer, dt, 0, state.num_points());
}

void integrate_positions(RodState& state, double dt, std::size_t begin, std::size_t end) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_positions: dt must be positive");
  const std::size_t n = state.num_points();
  const std::size_t point_end = std::min(end, n);
  for (std::size_t i = begin; i < point_end; ++i) state.positions[i] += dt * state.velocities[i];
  const std::size_t frame_end = std::min(end, n - 1);
  for (std::size_t j = begin; j < frame_end; ++j) {
    Quat& q = state.frames[j];
    const Vec3& w = state.angular_velocities[j];
    const Quat spin = q * Quat(0.0, w.x(), w.y(), w.z());
    q.coeffs() += (0.5 * dt) * spin.coeffs();
    q.normalize();
  }
}

void integrate_positions(RodState& state, double dt) {
  integrate_positions(state, dt, 0, state.num_points());
}

double kinetic_energy(const RodState& state, const MassProperties& mass) {
  double e = 0;
  for (std::size_t i = 0; i < state.num_points(); ++i) {
    e += 0.5 * mass.mass[i] * state.velocities[i].squaredNorm();
  }
  for (std::size_t j = 0; j < state.num_frames(); ++j) {
    const Vec3& w = state.angular_velocities[j];
    e += 0.5 * w.dot(mass.inertia[j].cwiseProduct(w));
  }
  return e;
}

}  // namespace corde
