#include "corde/scene.hpp"

#include <fstream>
#include <random>
#include <set>

namespace corde {

namespace {

using nlohmann::json;

/// Walks one JSON object, tracking which keys were consumed so unknown fields can be
/// reported with their full path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SceneError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json* get(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) throw SceneError(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void positive(const std::string& key, double& out) {
    number(key, out);
    if (!(out > 0.0)) throw SceneError(at(key), "must be positive");
  }
  void non_negative(const std::string& key, double& out) {
    number(key, out);
    if (!(out >= 0.0)) throw SceneError(at(key), "must be >= 0");
  }
  void count(const std::string& key, std::size_t& out, std::size_t min_value = 0) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) {
        throw SceneError(at(key), "expected a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
    if (out < min_value) throw SceneError(at(key), "must be >= " + std::to_string(min_value));
  }
  void integer(const std::string& key, int& out, int min_value) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) throw SceneError(at(key), "expected an integer");
      out = v->get<int>();
    }
    if (out < min_value) throw SceneError(at(key), "must be >= " + std::to_string(min_value));
  }
  void boolean(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) throw SceneError(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) throw SceneError(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void vec3(const std::string& key, Vec3& out) {
    if (const json* v = get(key)) {
      if (!v->is_array() || v->size() != 3) throw SceneError(at(key), "expected [x, y, z]");
      for (int c = 0; c < 3; ++c) {
        if (!(*v)[c].is_number()) throw SceneError(at(key) + "[" + std::to_string(c) + "]", "expected a number");
        out[c] = (*v)[c].get<double>();
      }
      if (!out.allFinite()) throw SceneError(at(key), "must be finite");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw SceneError(at(it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

CouplingMode coupling_from_string(const std::string& s, const std::string& path) {
  if (s == "v0" || s == "none") return CouplingMode::kNone;
  if (s == "v1" || s == "one_way") return CouplingMode::kOneWay;
  if (s == "v2" || s == "bidirectional") return CouplingMode::kBidirectional;
  throw SceneError(path, "unknown coupling mode '" + s + "' (expected v0, v1 or v2)");
}

RodConfig parse_rod(const json& j, const std::string& path, std::size_t& copies, Vec3& spacing) {
  Reader r(j, path);
  RodConfig c;
  r.count("count", copies, 1);
  r.vec3("spacing", spacing);
  r.count("points", c.points, 2);
  r.positive("length", c.length);
  RodParams& p = c.params;
  r.positive("radius", p.radius);
  r.positive("stretch_modulus", p.stretch_modulus);
  r.positive("bend_modulus", p.bend_modulus);
  r.positive("shear_modulus", p.shear_modulus);
  r.positive("density", p.linear_density);
  r.non_negative("penalty_stiffness", p.penalty_stiffness);
  r.boolean("extensible", p.extensible);
  std::string section = p.cross_section == CrossSection::kBeamTheory ? "beam_theory" : "area_squared";
  r.string("cross_section", section);
  if (section == "beam_theory") {
    p.cross_section = CrossSection::kBeamTheory;
  } else if (section == "area_squared") {
    p.cross_section = CrossSection::kAreaSquared;
  } else {
    throw SceneError(r.at("cross_section"), "expected beam_theory or area_squared");
  }
  if (const json* d = r.get("damping")) {
    Reader dr(*d, r.at("damping"));
    dr.non_negative("translational", p.damping_translational);
    dr.non_negative("rotational", p.damping_rotational);
    dr.finish();
  }
  r.vec3("intrinsic_strain", c.intrinsic_strain);
  std::string placement = c.placement == Placement::kLine ? "line" : "tube";
  r.string("placement", placement);
  if (placement == "line") {
    c.placement = Placement::kLine;
  } else if (placement == "tube") {
    c.placement = Placement::kTube;
  } else {
    throw SceneError(r.at("placement"), "expected line or tube");
  }
  r.vec3("origin", c.origin);
  r.vec3("axis", c.axis);
  if (c.axis.norm() == 0.0) throw SceneError(r.at("axis"), "must be non-zero");
  r.number("tip_arc", c.tip_arc);
  if (const json* cl = r.get("clamp")) {
    Reader cr(*cl, r.at("clamp"));
    cr.boolean("base", c.clamp_base);
    cr.boolean("tip", c.clamp_tip);
    cr.finish();
  }
  if (const json* ins = r.get("insertion")) {
    Reader ir(*ins, r.at("insertion"));
    ir.boolean("enabled", c.insertion.enabled);
    ir.number("velocity", c.insertion.velocity);
    ir.number("rotation_rate", c.insertion.rotation_rate);
    ir.finish();
  }
  r.vec3("acceleration", c.acceleration);
  r.finish();
  return c;
}

TubeSpec parse_tube(const json& j, const std::string& path) {
  Reader r(j, path);
  TubeSpec t;
  r.positive("radius", t.radius);
  r.non_negative("entry_length", t.entry_length);
  r.positive("bend_radius", t.bend_radius);
  r.non_negative("bend_angle", t.bend_angle);
  r.non_negative("tail_length", t.tail_length);
  r.count("sides", t.sides, 3);
  r.count("rings", t.rings, 1);
  r.finish();
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw SceneError(path, e.what());
  }
  return t;
}

}  // namespace

std::string to_string(CouplingMode mode) {
  switch (mode) {
    case CouplingMode::kNone:
      return "v0";
    case CouplingMode::kOneWay:
      return "v1";
    case CouplingMode::kBidirectional:
      return "v2";
  }
  return "v0";
}

SceneConfig parse_scene(const json& j, const std::filesystem::path& base_dir) {
  Reader r(j, "");
  SceneConfig c;
  c.base_dir = base_dir;

  if (const json* rods = r.get("rods")) {
    if (!rods->is_array()) throw SceneError("rods", "expected an array");
    for (std::size_t i = 0; i < rods->size(); ++i) {
      std::size_t copies = 1;
      Vec3 spacing = Vec3::Zero();
      RodConfig rod = parse_rod((*rods)[i], "rods[" + std::to_string(i) + "]", copies, spacing);
      for (std::size_t k = 0; k < copies; ++k) {
        RodConfig copy = rod;
        copy.origin += spacing * static_cast<double>(k);
        c.rods.push_back(copy);
      }
    }
  }
  if (const json* m = r.get("mesh")) {
    Reader mr(*m, "mesh");
    MeshConfig mesh;
    std::string p;
    if (mr.has("path")) {
      mr.string("path", p);
      mesh.path = p;
    }
    if (const json* t = mr.get("tube")) mesh.tube = parse_tube(*t, "mesh.tube");
    mr.finish();
    if (!mesh.path && !mesh.tube) throw SceneError("mesh", "needs a path or a tube");
    c.mesh = mesh;
  }
  r.vec3("gravity", c.world.gravity);
  r.positive("dt", c.world.dt);
  if (const json* s = r.get("solver")) {
    Reader sr(*s, "solver");
    sr.integer("iterations", c.world.solver.iterations, 1);
    sr.non_negative("position_bias", c.world.solver.position_bias);
    sr.positive("distance_bias", c.world.solver.distance_bias);
    sr.non_negative("friction", c.world.solver.friction);
    sr.non_negative("restitution", c.world.solver.restitution);
    sr.finish();
    if (c.world.solver.position_bias > 1.0) throw SceneError("solver.position_bias", "must be <= 1");
    if (c.world.solver.distance_bias > 1.0) throw SceneError("solver.distance_bias", "must be <= 1");
  }
  if (const json* s = r.get("self_collision")) {
    Reader sr(*s, "self_collision");
    SelfCollisionConfig& sc = c.world.self;
    sr.boolean("enabled", c.world.self_collision);
    sr.count("group_size", sc.group_size, 1);
    sr.non_negative("sphere_radius", sc.sphere_radius);
    sr.count("neighbor_exclusion", sc.neighbor_exclusion);
    sr.non_negative("friction", sc.friction);
    sr.finish();
  }
  if (const json* b = r.get("broadphase")) {
    Reader br(*b, "broadphase");
    br.boolean("once_per_epoch", c.world.broadphase_once_per_epoch);
    br.non_negative("margin", c.world.broadphase_margin);
    br.finish();
  }
  if (const json* cp = r.get("coupling")) {
    Reader cr(*cp, "coupling");
    std::string mode = to_string(c.coupling.mode);
    cr.string("mode", mode);
    c.coupling.mode = coupling_from_string(mode, "coupling.mode");
    cr.count("rod_a", c.coupling.rod_a);
    cr.count("rod_b", c.coupling.rod_b);
    cr.count("stride", c.coupling.stride, 1);
    cr.finish();
  }
  if (const json* e = r.get("engine")) {
    Reader er(*e, "engine");
    std::string backend = to_string(c.engine.backend);
    er.string("backend", backend);
    try {
      c.engine.backend = backend_from_string(backend);
    } catch (const std::invalid_argument& ex) {
      throw SceneError("engine.backend", ex.what());
    }
    er.count("blocks", c.engine.blocks, 1);
    er.count("steps_per_epoch", c.engine.steps_per_epoch, 1);
    er.count("epochs", c.engine.epochs);
    er.boolean("validate_barriers", c.engine.validate_barriers);
    er.finish();
  }
  if (r.has("replay")) {
    std::string p;
    r.string("replay", p);
    c.replay = p;
  }
  if (const json* s = r.get("seed")) {
    if (!s->is_number_integer() || s->get<long long>() < 0) {
      throw SceneError("seed", "expected a non-negative integer");
    }
    c.seed = s->get<std::uint64_t>();
  }
  r.non_negative("perturbation", c.perturbation);
  r.finish();

  if (c.rods.empty() && !c.replay) throw SceneError("rods", "at least one rod is required");
  for (std::size_t i = 0; i < c.rods.size(); ++i) {
    if (c.rods[i].placement == Placement::kTube && (!c.mesh || !c.mesh->tube)) {
      throw SceneError("rods[" + std::to_string(i) + "].placement", "tube placement needs mesh.tube");
    }
  }
  if (c.coupling.mode != CouplingMode::kNone) {
    if (c.coupling.rod_a >= c.rods.size()) throw SceneError("coupling.rod_a", "rod index out of range");
    if (c.coupling.rod_b >= c.rods.size()) throw SceneError("coupling.rod_b", "rod index out of range");
    if (c.coupling.rod_a == c.coupling.rod_b) throw SceneError("coupling.rod_b", "must differ from rod_a");
  }
  return c;
}

SceneConfig load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_scene(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

json scene_to_json(const SceneConfig& c) {
  json j;
  json rods = json::array();
  for (const auto& rod : c.rods) {
    const RodParams& p = rod.params;
    json r;
    r["points"] = rod.points;
    r["length"] = rod.length;
    r["radius"] = p.radius;
    r["stretch_modulus"] = p.stretch_modulus;
    r["bend_modulus"] = p.bend_modulus;
    r["shear_modulus"] = p.shear_modulus;
    r["density"] = p.linear_density;
    r["penalty_stiffness"] = p.penalty_stiffness;
    r["extensible"] = p.extensible;
    r["cross_section"] = p.cross_section == CrossSection::kBeamTheory ? "beam_theory" : "area_squared";
    r["damping"] = {{"translational", p.damping_translational}, {"rotational", p.damping_rotational}};
    r["intrinsic_strain"] = vec_json(rod.intrinsic_strain);
    r["placement"] = rod.placement == Placement::kLine ? "line" : "tube";
    r["origin"] = vec_json(rod.origin);
    r["axis"] = vec_json(rod.axis);
    r["tip_arc"] = rod.tip_arc;
    r["clamp"] = {{"base", rod.clamp_base}, {"tip", rod.clamp_tip}};
    r["insertion"] = {{"enabled", rod.insertion.enabled},
                      {"velocity", rod.insertion.velocity},
                      {"rotation_rate", rod.insertion.rotation_rate}};
    r["acceleration"] = vec_json(rod.acceleration);
    rods.push_back(r);
  }
  j["rods"] = rods;
  if (c.mesh) {
    json m = json::object();
    if (c.mesh->path) m["path"] = c.mesh->path->generic_string();
    if (c.mesh->tube) {
      const TubeSpec& t = *c.mesh->tube;
      m["tube"] = {{"radius", t.radius},           {"entry_length", t.entry_length},
                   {"bend_radius", t.bend_radius}, {"bend_angle", t.bend_angle},
                   {"tail_length", t.tail_length}, {"sides", t.sides},
                   {"rings", t.rings}};
    }
    j["mesh"] = m;
  }
  const WorldConfig& w = c.world;
  j["gravity"] = vec_json(w.gravity);
  j["dt"] = w.dt;
  j["solver"] = {{"iterations", w.solver.iterations},
                 {"position_bias", w.solver.position_bias},
                 {"distance_bias", w.solver.distance_bias},
                 {"friction", w.solver.friction},
                 {"restitution", w.solver.restitution}};
  j["self_collision"] = {{"enabled", w.self_collision},
                         {"group_size", w.self.group_size},
                         {"sphere_radius", w.self.sphere_radius},
                         {"neighbor_exclusion", w.self.neighbor_exclusion},
                         {"friction", w.self.friction}};
  j["broadphase"] = {{"once_per_epoch", w.broadphase_once_per_epoch},
                     {"margin", w.broadphase_margin}};
  j["coupling"] = {{"mode", to_string(c.coupling.mode)},
                   {"rod_a", c.coupling.rod_a},
                   {"rod_b", c.coupling.rod_b},
                   {"stride", c.coupling.stride}};
  j["engine"] = {{"backend", to_string(c.engine.backend)},
                 {"blocks", c.engine.blocks},
                 {"steps_per_epoch", c.engine.steps_per_epoch},
                 {"epochs", c.engine.epochs},
                 {"validate_barriers", c.engine.validate_barriers}};
  if (c.replay) j["replay"] = c.replay->generic_string();
  j["seed"] = c.seed;
  j["perturbation"] = c.perturbation;
  return j;
}

std::shared_ptr<const TriMeshBvh> build_mesh(const SceneConfig& config) {
  if (!config.mesh) return nullptr;
  TriMesh mesh;
  if (config.mesh->path) {
    const auto path = config.resolve(*config.mesh->path);
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("mesh file not found: " + path.string());
    }
    mesh = load_mesh(path);
  } else {
    mesh = make_tube_mesh(*config.mesh->tube);
  }
  return std::make_shared<const TriMeshBvh>(TriMeshBvh::build(std::move(mesh)));
}

World build_world(const SceneConfig& config, std::shared_ptr<const TriMeshBvh> mesh) {
  if (config.rods.empty()) throw std::invalid_argument("scene has no rods");
  if (!mesh) mesh = build_mesh(config);
  std::optional<TubePath> tube;
  if (config.mesh && config.mesh->tube) tube.emplace(*config.mesh->tube);

  std::vector<RodState> rods;
  std::vector<RodParams> params;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  for (const auto& rc : config.rods) {
    RodState state;
    if (rc.placement == Placement::kTube) {
      const double spacing = rc.length / static_cast<double>(rc.points - 1);
      const auto pts = centreline_points(*tube, rc.points, spacing, rc.tip_arc);
      state = rod_from_polyline(pts);
    } else {
      state = init_rod({rc.points, rc.length, rc.origin, rc.axis});
    }
    const std::size_t n = state.num_points();
    if (rc.clamp_base) {
      state.pinned_points[0] = 1;
      state.pinned_frames[0] = 1;
    }
    if (rc.clamp_tip) {
      state.pinned_points[n - 1] = 1;
      state.pinned_frames[n - 2] = 1;
    }
    if (config.perturbation > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 dv(jitter(rng), jitter(rng), jitter(rng));
        if (!state.pinned_points[i]) state.velocities[i] = config.perturbation * dv;
      }
    }
    RodParams p = rc.params;
    if (rc.intrinsic_strain != Vec3::Zero()) p.intrinsic_strains.assign(n - 1, rc.intrinsic_strain);
    rods.push_back(std::move(state));
    params.push_back(std::move(p));
  }

  World world(std::move(rods), std::move(params), config.world, mesh);
  for (std::size_t r = 0; r < config.rods.size(); ++r) {
    const RodConfig& rc = config.rods[r];
    if (rc.acceleration != Vec3::Zero()) world.set_rod_acceleration(r, rc.acceleration);
    if (!rc.insertion.enabled) continue;
    InsertionDriver d;
    d.enabled = true;
    d.velocity = rc.insertion.velocity;
    d.rotation_rate = rc.insertion.rotation_rate;
    if (rc.placement == Placement::kTube) {
      d.entry = tube->point(0.0);
      d.axis = tube->tangent(0.0);
      d.depth = rc.tip_arc;
    } else {
      d.axis = rc.axis.normalized();
      d.entry = rc.origin + rc.length * d.axis;
      d.depth = 0.0;
    }
    world.set_driver(r, d);
  }
  if (config.coupling.mode != CouplingMode::kNone) {
    const auto mode = config.coupling.mode == CouplingMode::kOneWay ? BindingMode::kOneWay
                                                                    : BindingMode::kBidirectional;
    const auto a = static_cast<std::uint32_t>(config.coupling.rod_a);
    const auto b = static_cast<std::uint32_t>(config.coupling.rod_b);
    const std::size_t n = std::min(config.rods[a].points, config.rods[b].points);
    std::vector<BindingConstraint> bindings;
    for (std::size_t i = 0; i < n; i += config.coupling.stride) {
      bindings.push_back({{a, static_cast<std::uint32_t>(i)}, {b, static_cast<std::uint32_t>(i)}, mode});
    }
    world.set_bindings(std::move(bindings));
  }
  return world;
}

EpochPlan make_plan(const SceneConfig& config) {
  EpochPlan plan;
  plan.backend = config.engine.backend;
  plan.blocks = config.engine.blocks;
  plan.steps_per_epoch = config.engine.steps_per_epoch;
  plan.validate_barriers = config.engine.validate_barriers;
  return plan;
}

}  // namespace corde
