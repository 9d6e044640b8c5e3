#include "corde/world.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace corde {

World::World(std::vector<RodState> rods, std::vector<RodParams> params, WorldConfig config,
             std::shared_ptr<const TriMeshBvh> mesh)
    : rods_(std::move(rods)),
      params_(std::move(params)),
      config_(std::move(config)),
      mesh_(std::move(mesh)) {
  if (rods_.empty()) throw std::invalid_argument("world needs at least one rod");
  if (rods_.size() != params_.size()) {
    throw std::invalid_argument("one parameter set per rod is required");
  }
  if (!(config_.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  config_.solver.validate();
  config_.self.validate();

  offsets_.push_back(0);
  for (std::size_t r = 0; r < rods_.size(); ++r) {
    rods_[r].validate();
    params_[r].validate();
    masses_.push_back(lump_masses(rods_[r], params_[r]));
    offsets_.push_back(offsets_.back() + rods_[r].num_points());

    const std::size_t n = rods_[r].num_points();
    ForceTorqueBuffer buffer;
    buffer.resize(n);
    buffers_.push_back(std::move(buffer));
    SegmentTerms terms;
    terms.resize(n);
    terms_.push_back(std::move(terms));
    contacts_.emplace_back(n);
    cached_candidates_.emplace_back(n);

    std::vector<double> arc(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) arc[i] = arc[i - 1] + rods_[r].rest_lengths[i - 1];
    arc_from_base_.push_back(std::move(arc));
  }
  drivers_.assign(rods_.size(), InsertionDriver{});
  rod_acceleration_.assign(rods_.size(), Vec3::Zero());

  if (config_.self_collision) {
    groups_ = group_spheres(rods_, params_, config_.self);
    for (const auto& g : groups_) group_first_global_.push_back(offsets_[g.rod] + g.first);
  }
  prepare_blocks(1);
}

void World::set_driver(std::size_t rod, const InsertionDriver& driver) {
  if (rod >= rods_.size()) throw std::invalid_argument("driver: rod index out of range");
  drivers_[rod] = driver;
  if (driver.enabled) drivers_[rod].axis.normalize();
}

void World::set_bindings(std::vector<BindingConstraint> bindings) {
  std::unordered_set<std::size_t> used;
  ConstraintSet probe;
  probe.bindings = bindings;
  probe.validate(rods_);
  for (const auto& b : bindings) {
    if (!used.insert(global_index(b.a)).second || !used.insert(global_index(b.b)).second) {
      throw std::invalid_argument("each point may appear in at most one binding");
    }
  }
  bindings_ = std::move(bindings);
  binding_dominant_delta_.assign(bindings_.size(), Vec3::Zero());
}

void World::set_rod_acceleration(std::size_t rod, const Vec3& a) {
  if (rod >= rods_.size()) throw std::invalid_argument("acceleration: rod index out of range");
  rod_acceleration_[rod] = a;
}

void World::validate_command(const Command& c) const {
  auto check_rod = [&] {
    if (c.rod >= rods_.size()) throw std::invalid_argument("rod index out of range");
  };
  switch (c.kind) {
    case CommandKind::kInsertVelocity:
    case CommandKind::kRotateVelocity:
      check_rod();
      if (!drivers_[c.rod].enabled) throw std::invalid_argument("rod has no insertion driver");
      if (!std::isfinite(c.value)) throw std::invalid_argument("velocity must be finite");
      break;
    case CommandKind::kGrab:
      check_rod();
      if (c.index >= rods_[c.rod].num_points()) throw std::invalid_argument("index out of range");
      if (!c.target.allFinite()) throw std::invalid_argument("grab target must be finite");
      break;
    case CommandKind::kRelease:
      check_rod();
      if (c.index >= rods_[c.rod].num_points()) throw std::invalid_argument("index out of range");
      break;
    case CommandKind::kSetParams:
      if (c.dt && !(*c.dt > 0.0)) throw std::invalid_argument("dt must be positive");
      if (c.iterations && *c.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
      if (c.batch && *c.batch < 1) throw std::invalid_argument("batch must be >= 1");
      break;
  }
}

void World::apply_command(const Command& c) {
  validate_command(c);
  switch (c.kind) {
    case CommandKind::kInsertVelocity:
      drivers_[c.rod].velocity = c.value;
      break;
    case CommandKind::kRotateVelocity:
      drivers_[c.rod].rotation_rate = c.value;
      break;
    case CommandKind::kGrab: {
      const PointRef p{c.rod, c.index};
      auto it = std::find_if(grabs_.begin(), grabs_.end(),
                             [&](const GrabConstraint& g) { return g.point == p; });
      if (it != grabs_.end()) {
        it->target = c.target;
      } else {
        grabs_.push_back({p, c.target});
      }
      break;
    }
    case CommandKind::kRelease: {
      const PointRef p{c.rod, c.index};
      std::erase_if(grabs_, [&](const GrabConstraint& g) { return g.point == p; });
      break;
    }
    case CommandKind::kSetParams:
      if (c.dt) config_.dt = *c.dt;
      if (c.iterations) config_.solver.iterations = *c.iterations;
      if (c.batch) requested_batch_ = *c.batch;
      break;
  }
}

std::vector<PhaseDesc> World::step_phases() const {
  std::vector<PhaseDesc> phases;
  phases.push_back({Phase::kPrepareDetect, false});
  phases.push_back({Phase::kSelfPairsSegmentTerms, false});
  phases.push_back({Phase::kGatherIntegrateVelocity, false});
  const bool bidirectional =
      std::any_of(bindings_.begin(), bindings_.end(),
                  [](const BindingConstraint& b) { return b.mode == BindingMode::kBidirectional; });
  for (int it = 0; it < config_.solver.iterations; ++it) {
    phases.push_back({Phase::kDistanceEven, false});
    phases.push_back({Phase::kDistanceOdd, false});
    phases.push_back({Phase::kContacts, false});
    if (config_.self_collision) phases.push_back({Phase::kSelfContacts, true});
    if (!bindings_.empty()) phases.push_back({Phase::kBindingsDependent, false});
    if (bidirectional || !grabs_.empty()) phases.push_back({Phase::kBindingsDominantGrabs, false});
  }
  phases.push_back({Phase::kIntegratePositions, false});
  phases.push_back({Phase::kEndStep, true});
  return phases;
}

void World::prepare_blocks(std::size_t blocks) {
  if (blocks == 0) throw std::invalid_argument("block count must be >= 1");
  if (blocks_.size() < blocks) blocks_.resize(blocks);
  active_blocks_ = blocks;
  for (auto& b : blocks_) b.self_pairs.clear();
}

template <typename Fn>
void World::for_each_rod_range(std::size_t begin, std::size_t end, Fn&& fn) {
  for (std::size_t r = 0; r < rods_.size(); ++r) {
    const std::size_t lo = std::max(begin, offsets_[r]);
    const std::size_t hi = std::min(end, offsets_[r + 1]);
    if (lo < hi) fn(r, lo - offsets_[r], hi - offsets_[r]);
  }
}

void World::run_phase(Phase phase, std::size_t block, std::size_t begin, std::size_t end) {
  switch (phase) {
    case Phase::kBeginStep:
      begin_step();
      break;
    case Phase::kPrepareDetect:
      prepare_detect(block, begin, end);
      break;
    case Phase::kSelfPairsSegmentTerms:
      self_pairs_segment_terms(block, begin, end);
      break;
    case Phase::kGatherIntegrateVelocity:
      gather_integrate_velocity(begin, end);
      break;
    case Phase::kDistanceEven:
      distance_color(0, begin, end);
      break;
    case Phase::kDistanceOdd:
      distance_color(1, begin, end);
      break;
    case Phase::kContacts:
      contacts(begin, end);
      break;
    case Phase::kSelfContacts:
      self_contacts();
      break;
    case Phase::kBindingsDependent:
      bindings_dependent(begin, end);
      break;
    case Phase::kBindingsDominantGrabs:
      bindings_dominant_grabs(begin, end);
      break;
    case Phase::kIntegratePositions:
      integrate_positions_range(begin, end);
      break;
    case Phase::kEndStep:
      ++step_;
      time_ += config_.dt;
      epoch_start_ = false;
      break;
  }
}

void World::begin_step() {
  for (const auto& c : staged_) apply_command(c);
  staged_.clear();
  for (auto& d : drivers_) {
    if (d.enabled) d.depth += d.velocity * config_.dt;
  }
}

void World::prepare_detect(std::size_t block, std::size_t begin, std::size_t end) {
  QueryScratch& scratch = blocks_[block].query;
  for_each_rod_range(begin, end, [&](std::size_t r, std::size_t lo, std::size_t hi) {
    RodState& rod = rods_[r];
    const RodParams& params = params_[r];
    const std::size_t n = rod.num_points();
    const InsertionDriver& driver = drivers_[r];
    if (driver.enabled) {
      const double total = arc_from_base_[r].back();
      for (std::size_t i = lo; i < hi; ++i) {
        const double s = driver.depth - (total - arc_from_base_[r][i]);
        const bool held = i == 0 || s < 0.0;
        rod.pinned_points[i] = held;
        if (held) rod.velocities[i] = driver.velocity * driver.axis;
        if (i + 1 < n) {
          rod.pinned_frames[i] = held;
          if (held) rod.angular_velocities[i] = Vec3(0, 0, driver.rotation_rate);
        }
      }
    }

    ForceTorqueBuffer& buffer = buffers_[r];
    for (std::size_t i = lo; i < hi; ++i) {
      buffer.forces[i].setZero();
      if (i + 1 < n) {
        buffer.quat_forces[i].setZero();
        buffer.body_torques[i].setZero();
      }
    }
    add_gravity(rod, masses_[r], config_.gravity + rod_acceleration_[r], lo, hi, buffer);

    if (mesh_) {
      const bool cached = config_.broadphase_once_per_epoch;
      for (std::size_t i = lo; i < hi; ++i) {
        PointContact& slot = contacts_[r][i];
        slot.active = false;
        if (rod.pinned_points[i]) continue;
        std::optional<AggregatedContact> hit;
        if (cached) {
          auto& candidates = cached_candidates_[r][i];
          if (epoch_start_) {
            candidates.clear();
            scratch.stack_high_water = std::max(
                scratch.stack_high_water,
                mesh_->broadphase(rod.positions[i], params.radius + config_.broadphase_margin,
                                  candidates));
          }
          hit = detect_point_cached(*mesh_, rod.positions[i], params.radius, candidates, scratch);
        } else {
          hit = detect_point(*mesh_, rod.positions[i], params.radius, scratch);
        }
        if (!hit) continue;
        slot.active = true;
        ContactConstraint& c = slot.contact;
        c = ContactConstraint{};
        c.point = {static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(i)};
        c.normal = hit->normal;
        c.depth = hit->depth;
        c.friction = config_.solver.friction;
        c.restitution = config_.solver.restitution;
        c.initial_normal_velocity = rod.velocities[i].dot(hit->normal);
      }
    }
  });

  if (config_.self_collision) {
    const auto first = std::lower_bound(group_first_global_.begin(), group_first_global_.end(), begin);
    const auto last = std::lower_bound(group_first_global_.begin(), group_first_global_.end(), end);
    for (auto it = first; it != last; ++it) {
      GroupSphere& g = groups_[static_cast<std::size_t>(it - group_first_global_.begin())];
      update_group_sphere(g, rods_[g.rod], params_[g.rod], config_.self);
    }
  }
}

void World::self_pairs_segment_terms(std::size_t block, std::size_t begin, std::size_t end) {
  if (config_.self_collision) {
    auto& out = blocks_[block].self_pairs;
    out.clear();
    const auto first = std::lower_bound(group_first_global_.begin(), group_first_global_.end(), begin);
    const auto last = std::lower_bound(group_first_global_.begin(), group_first_global_.end(), end);
    collect_self_pairs(groups_, static_cast<std::size_t>(first - group_first_global_.begin()),
                       static_cast<std::size_t>(last - group_first_global_.begin()), rods_,
                       params_, config_.self, out);
  }
  for_each_rod_range(begin, end, [&](std::size_t r, std::size_t lo, std::size_t hi) {
    compute_segment_terms(rods_[r], params_[r], lo, hi, terms_[r]);
  });
}

void World::gather_integrate_velocity(std::size_t begin, std::size_t end) {
  for_each_rod_range(begin, end, [&](std::size_t r, std::size_t lo, std::size_t hi) {
    gather_forces_torques(rods_[r], terms_[r], lo, hi, buffers_[r]);
    integrate_velocities(rods_[r], masses_[r], buffers_[r], config_.dt, lo, hi);
  });
}

void World::distance_color(unsigned color, std::size_t begin, std::size_t end) {
  const double dt = config_.dt;
  const double beta = config_.solver.distance_bias;
  for_each_rod_range(begin, end, [&](std::size_t r, std::size_t lo, std::size_t hi) {
    if (params_[r].extensible) return;
    RodState& rod = rods_[r];
    const std::size_t seg_end = std::min(hi, rod.num_points() - 1);
    std::size_t j = lo + ((lo & 1u) != color ? 1 : 0);
    for (; j < seg_end; j += 2) {
      solve_distance(rod, masses_[r], j, rod.rest_lengths[j], dt, beta);
    }
  });
}

void World::contacts(std::size_t begin, std::size_t end) {
  if (!mesh_) return;
  const double dt = config_.dt;
  const double beta = config_.solver.position_bias;
  for_each_rod_range(begin, end, [&](std::size_t r, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      PointContact& slot = contacts_[r][i];
      if (slot.active) solve_contact(rods_, masses_, slot.contact, dt, beta);
    }
  });
}

void World::self_contacts() {
  const double dt = config_.dt;
  const double beta = config_.solver.position_bias;
  for (std::size_t b = 0; b < active_blocks_; ++b) {
    for (auto& pair : blocks_[b].self_pairs) solve_self_contact(rods_, masses_, pair, dt, beta);
  }
}

void World::bindings_dependent(std::size_t begin, std::size_t end) {
  const double dt = config_.dt;
  const double beta = config_.solver.distance_bias;
  for (std::size_t k = 0; k < bindings_.size(); ++k) {
    const BindingConstraint& b = bindings_[k];
    const std::size_t gb = global_index(b.b);
    if (gb < begin || gb >= end) continue;
    RodState& ra = rods_[b.a.rod];
    RodState& rb = rods_[b.b.rod];
    const double wa = ra.pinned_points[b.a.index] ? 0.0 : masses_[b.a.rod].inv_mass[b.a.index];
    const double wb = rb.pinned_points[b.b.index] ? 0.0 : masses_[b.b.rod].inv_mass[b.b.index];
    const ImpulsePair imp = binding_impulse(ra.positions[b.a.index], rb.positions[b.b.index],
                                            ra.velocities[b.a.index], rb.velocities[b.b.index],
                                            wa, wb, dt, beta, b.mode);
    binding_dominant_delta_[k].setZero();
    if (!imp.applied) continue;
    rb.velocities[b.b.index] += wb * imp.on_b;
    if (b.mode == BindingMode::kBidirectional) binding_dominant_delta_[k] = wa * imp.on_a;
  }
}

void World::bindings_dominant_grabs(std::size_t begin, std::size_t end) {
  for (std::size_t k = 0; k < bindings_.size(); ++k) {
    const BindingConstraint& b = bindings_[k];
    if (b.mode != BindingMode::kBidirectional) continue;
    const std::size_t ga = global_index(b.a);
    if (ga < begin || ga >= end) continue;
    rods_[b.a.rod].velocities[b.a.index] += binding_dominant_delta_[k];
  }
  const double dt = config_.dt;
  const double beta = config_.solver.position_bias;
  for (const auto& g : grabs_) {
    const std::size_t gi = global_index(g.point);
    if (gi < begin || gi >= end) continue;
    solve_grab(rods_, masses_, g, dt, beta);
  }
}

void World::integrate_positions_range(std::size_t begin, std::size_t end) {
  for_each_rod_range(begin, end, [&](std::size_t r, std::size_t lo, std::size_t hi) {
    integrate_positions(rods_[r], config_.dt, lo, hi);
  });
}

void World::step() {
  prepare_blocks(1);
  epoch_start_ = true;
  run_phase(Phase::kBeginStep, 0, 0, num_elements());
  for (const auto& p : step_phases()) run_phase(p.phase, 0, 0, num_elements());
}

std::size_t World::mesh_contact_count() const {
  std::size_t n = 0;
  for (const auto& rod : contacts_) {
    for (const auto& slot : rod) n += slot.active ? 1 : 0;
  }
  return n;
}

std::size_t World::self_contact_count() const {
  std::size_t n = 0;
  for (std::size_t b = 0; b < active_blocks_; ++b) n += blocks_[b].self_pairs.size();
  return n;
}

std::size_t World::stack_high_water() const {
  std::size_t h = 0;
  for (const auto& b : blocks_) h = std::max(h, b.query.stack_high_water);
  return h;
}

ElasticEnergies World::elastic_energy() const {
  ElasticEnergies total;
  for (std::size_t r = 0; r < rods_.size(); ++r) {
    const auto e = elastic_energies(rods_[r], params_[r]);
    total.stretch += e.stretch;
    total.bend += e.bend;
    total.penalty += e.penalty;
  }
  return total;
}

double World::kinetic_energy() const {
  double e = 0;
  for (std::size_t r = 0; r < rods_.size(); ++r) e += corde::kinetic_energy(rods_[r], masses_[r]);
  return e;
}

double World::max_strain() const {
  double s = 0;
  for (const auto& rod : rods_) s = std::max(s, max_segment_strain(rod));
  return s;
}

}  // namespace corde
