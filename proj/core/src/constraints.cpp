#include "corde/constraints.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace corde {

namespace {

void check_point(std::span<const RodState> rods, const PointRef& p, const char* what) {
  if (p.rod >= rods.size() || p.index >= rods[p.rod].num_points()) {
    throw std::invalid_argument(std::string(what) + ": point index out of range");
  }
}

void check_unit(const Vec3& n, const char* what) {
  if (std::abs(n.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(what) + ": normal is not unit length");
  }
}

double inv_mass_of(std::span<const RodState> rods, std::span<const MassProperties> masses,
                   const PointRef& p) {
  return rods[p.rod].pinned_points[p.index] ? 0.0 : masses[p.rod].inv_mass[p.index];
}

/// Friction against the current accumulated normal impulse, clamped to the cone.
Vec3 friction_increment(const Vec3& tangential_velocity, double effective_mass, double mu,
                        double normal_impulse, Vec3& accumulated) {
  const Vec3 previous = accumulated;
  Vec3 next = previous - effective_mass * tangential_velocity;
  const double limit = mu * normal_impulse;
  const double magnitude = next.norm();
  if (magnitude > limit) next *= magnitude > 0.0 ? limit / magnitude : 0.0;
  accumulated = next;
  return next - previous;
}

}  // namespace

void ConstraintSet::validate(std::span<const RodState> rods) const {
  for (const auto& d : distance) {
    if (d.rod >= rods.size() || d.segment + 1 >= rods[d.rod].num_points()) {
      throw std::invalid_argument("distance constraint: segment out of range");
    }
  }
  for (const auto& c : contacts) {
    check_point(rods, c.point, "contact");
    check_unit(c.normal, "contact");
    if (c.depth < 0.0) throw std::invalid_argument("contact: negative depth");
    if (c.friction < 0.0) throw std::invalid_argument("contact: negative friction");
  }
  for (const auto& s : self_pairs) {
    check_point(rods, s.a, "self contact");
    check_point(rods, s.b, "self contact");
    check_unit(s.normal, "self contact");
    if (s.depth < 0.0) throw std::invalid_argument("self contact: negative depth");
    if (s.friction < 0.0) throw std::invalid_argument("self contact: negative friction");
  }
  for (const auto& b : bindings) {
    check_point(rods, b.a, "binding");
    check_point(rods, b.b, "binding");
  }
  for (const auto& g : grabs) check_point(rods, g.point, "grab");
}

void SolverConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("solver iterations must be >= 1");
  if (position_bias < 0.0 || position_bias > 1.0) {
    throw std::invalid_argument("position bias must be in [0, 1]");
  }
  if (distance_bias <= 0.0 || distance_bias > 1.0) {
    throw std::invalid_argument("distance bias must be in (0, 1]");
  }
  if (friction < 0.0) throw std::invalid_argument("friction must be >= 0");
  if (restitution < 0.0) throw std::invalid_argument("restitution must be >= 0");
}

ImpulsePair distance_impulse(const Vec3& pa, const Vec3& pb, const Vec3& va, const Vec3& vb,
                             double wa, double wb, double rest_length, double dt, double beta) {
  ImpulsePair out;
  // Separation the points would reach at the end of the step with current velocities.
  const Vec3 d = pb - pa + dt * (vb - va);
  const double len = d.norm();
  const double w = wa + wb;
  if (len == 0.0 || w == 0.0) return out;
  const Vec3 n = d / len;
  const double c = len - rest_length;
  const double lambda = -beta * c / (dt * w);
  out.on_a = -lambda * n;
  out.on_b = lambda * n;
  out.applied = true;
  return out;
}

Vec3 contact_impulse(const Vec3& velocity, double inv_mass, ContactConstraint& contact,
                     double dt, double beta) {
  if (inv_mass == 0.0) return Vec3::Zero();
  const double m = 1.0 / inv_mass;
  const Vec3& n = contact.normal;
  const double target =
      -contact.restitution * std::min(contact.initial_normal_velocity, 0.0) +
      beta * contact.depth / dt;
  const double previous = contact.normal_impulse;
  contact.normal_impulse = std::max(0.0, previous + m * (target - velocity.dot(n)));
  const Vec3 normal_part = (contact.normal_impulse - previous) * n;

  const Vec3 v = velocity + inv_mass * normal_part;
  const Vec3 vt = v - n * v.dot(n);
  const Vec3 tangent_part =
      friction_increment(vt, m, contact.friction, contact.normal_impulse, contact.tangent_impulse);
  return normal_part + tangent_part;
}

ImpulsePair binding_impulse(const Vec3& pa, const Vec3& pb, const Vec3& va, const Vec3& vb,
                            double wa, double wb, double dt, double beta, BindingMode mode) {
  ImpulsePair out;
  if (mode == BindingMode::kOneWay) wa = 0.0;
  const double w = wa + wb;
  if (w == 0.0) return out;
  const Vec3 lambda = -beta * (pb - pa + dt * (vb - va)) / (dt * w);
  if (mode == BindingMode::kBidirectional) out.on_a = -lambda;
  out.on_b = lambda;
  out.applied = true;
  return out;
}

ImpulsePair self_contact_impulse(const Vec3& va, const Vec3& vb, double wa, double wb,
                                 SelfContact& pair, double dt, double beta) {
  ImpulsePair out;
  const double w = wa + wb;
  if (w == 0.0) return out;
  const Vec3& n = pair.normal;
  const Vec3 rel = va - vb;
  const double target = beta * pair.depth / dt;
  const double previous = pair.normal_impulse;
  pair.normal_impulse = std::max(0.0, previous + (target - rel.dot(n)) / w);
  const Vec3 normal_part = (pair.normal_impulse - previous) * n;

  const Vec3 rel_after = rel + w * normal_part;
  const Vec3 vt = rel_after - n * rel_after.dot(n);
  const Vec3 tangent_part =
      friction_increment(vt, 1.0 / w, pair.friction, pair.normal_impulse, pair.tangent_impulse);
  const Vec3 total = normal_part + tangent_part;
  out.on_a = total;
  out.on_b = -total;
  out.applied = true;
  return out;
}

void solve_distance(RodState& rod, const MassProperties& mass, std::size_t segment,
                    double rest_length, double dt, double beta) {
  const std::size_t a = segment;
  const std::size_t b = segment + 1;
  const double wa = rod.pinned_points[a] ? 0.0 : mass.inv_mass[a];
  const double wb = rod.pinned_points[b] ? 0.0 : mass.inv_mass[b];
  const ImpulsePair imp = distance_impulse(rod.positions[a], rod.positions[b], rod.velocities[a],
                                           rod.velocities[b], wa, wb, rest_length, dt, beta);
  if (!imp.applied) return;
  rod.velocities[a] += wa * imp.on_a;
  rod.velocities[b] += wb * imp.on_b;
}

void solve_contact(std::span<RodState> rods, std::span<const MassProperties> masses,
                   ContactConstraint& contact, double dt, double beta) {
  RodState& rod = rods[contact.point.rod];
  const double w = inv_mass_of(rods, masses, contact.point);
  Vec3& v = rod.velocities[contact.point.index];
  v += w * contact_impulse(v, w, contact, dt, beta);
}

void solve_self_contact(std::span<RodState> rods, std::span<const MassProperties> masses,
                        SelfContact& pair, double dt, double beta) {
  const double wa = inv_mass_of(rods, masses, pair.a);
  const double wb = inv_mass_of(rods, masses, pair.b);
  Vec3& va = rods[pair.a.rod].velocities[pair.a.index];
  Vec3& vb = rods[pair.b.rod].velocities[pair.b.index];
  const ImpulsePair imp = self_contact_impulse(va, vb, wa, wb, pair, dt, beta);
  if (!imp.applied) return;
  va += wa * imp.on_a;
  vb += wb * imp.on_b;
}

void solve_binding(std::span<RodState> rods, std::span<const MassProperties> masses,
                   const BindingConstraint& binding, double dt, double beta) {
  const double wa = inv_mass_of(rods, masses, binding.a);
  const double wb = inv_mass_of(rods, masses, binding.b);
  RodState& ra = rods[binding.a.rod];
  RodState& rb = rods[binding.b.rod];
  Vec3& va = ra.velocities[binding.a.index];
  Vec3& vb = rb.velocities[binding.b.index];
  const ImpulsePair imp =
      binding_impulse(ra.positions[binding.a.index], rb.positions[binding.b.index], va, vb, wa,
                      wb, dt, beta, binding.mode);
  if (!imp.applied) return;
  if (binding.mode == BindingMode::kBidirectional) va += wa * imp.on_a;
  vb += wb * imp.on_b;
}

void solve_grab(std::span<RodState> rods, std::span<const MassProperties> masses,
                const GrabConstraint& grab, double dt, double beta) {
  const double w = inv_mass_of(rods, masses, grab.point);
  RodState& rod = rods[grab.point.rod];
  const ImpulsePair imp =
      binding_impulse(grab.target, rod.positions[grab.point.index], Vec3::Zero(),
                      rod.velocities[grab.point.index], 0.0, w, dt, beta, BindingMode::kOneWay);
  if (imp.applied) rod.velocities[grab.point.index] += w * imp.on_b;
}

std::vector<DistanceConstraint> make_distance_constraints(std::span<const RodState> rods,
                                                          std::span<const RodParams> params) {
  std::vector<DistanceConstraint> out;
  for (std::size_t r = 0; r < rods.size(); ++r) {
    if (params[r].extensible) continue;
    for (std::size_t j = 0; j + 1 < rods[r].num_points(); ++j) {
      out.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(j),
                     rods[r].rest_lengths[j]});
    }
  }
  return out;
}

void iterate_constraints(std::span<RodState> rods, std::span<const MassProperties> masses,
                         ConstraintSet& set, const SolverConfig& config, double dt) {
  config.validate();
  const double beta = config.position_bias;
  const double link = config.distance_bias;
  for (int it = 0; it < config.iterations; ++it) {
    for (unsigned color = 0; color < 2; ++color) {
      for (const auto& d : set.distance) {
        if ((d.segment & 1u) != color) continue;
        solve_distance(rods[d.rod], masses[d.rod], d.segment, d.rest_length, dt, link);
      }
    }
    for (auto& c : set.contacts) solve_contact(rods, masses, c, dt, beta);
    for (auto& s : set.self_pairs) solve_self_contact(rods, masses, s, dt, beta);
    for (const auto& b : set.bindings) solve_binding(rods, masses, b, dt, link);
    for (const auto& g : set.grabs) solve_grab(rods, masses, g, dt, beta);
  }
}

double max_segment_strain(const RodState& rod) {
  double worst = 0;
  for (std::size_t j = 0; j + 1 < rod.num_points(); ++j) {
    const double len = (rod.positions[j + 1] - rod.positions[j]).norm();
    worst = std::max(worst, std::abs(len - rod.rest_lengths[j]) / rod.rest_lengths[j]);
  }
  return worst;
}

}  // namespace corde
