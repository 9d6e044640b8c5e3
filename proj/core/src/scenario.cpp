#include "corde/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "corde/session.hpp"

namespace corde {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool self_collision_on(const World& w) { return w.config().self_collision; }

MetricsRow make_row(const Engine& engine, const EpochMetrics& m) {
  const World& w = engine.world();
  MetricsRow row;
  row.epoch = m.epoch;
  row.step = w.step_index();
  row.time = w.time();
  row.wall_ns = m.wall_ns;
  row.barrier_wait_ns = m.barrier_wait_ns;
  row.max_strain = w.max_strain();
  row.mesh_contacts = w.mesh_contact_count();
  row.self_contacts = w.self_contact_count();
  const ElasticEnergies e = w.elastic_energy();
  row.stretch_energy = e.stretch;
  row.bend_energy = e.bend;
  row.penalty_energy = e.penalty;
  row.kinetic_energy = w.kinetic_energy();
  row.min_clearance = self_collision_on(w)
                          ? min_point_clearance(w.rods(), w.config().self.neighbor_exclusion)
                          : std::numeric_limits<double>::quiet_NaN();
  return row;
}

}  // namespace

const char* MetricsTable::header() {
  return "epoch,step,time,wall_ns,barrier_wait_ns,max_strain,mesh_contacts,self_contacts,"
         "stretch_energy,bend_energy,penalty_energy,kinetic_energy,min_clearance";
}

void MetricsTable::write_csv(std::ostream& out) const {
  out << header() << '\n';
  for (const auto& r : rows_) {
    out << r.epoch << ',' << r.step << ',' << fmt(r.time) << ',' << r.wall_ns << ','
        << r.barrier_wait_ns << ',' << fmt(r.max_strain) << ',' << r.mesh_contacts << ','
        << r.self_contacts << ',' << fmt(r.stretch_energy) << ',' << fmt(r.bend_energy) << ','
        << fmt(r.penalty_energy) << ',' << fmt(r.kinetic_energy) << ',' << fmt(r.min_clearance)
        << '\n';
  }
}

void export_metrics(const MetricsTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics file: " + path.string());
  table.write_csv(out);
  out.flush();
  if (!out) throw std::runtime_error("error while writing metrics file: " + path.string());
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"free_space",        "insertion",
                                              "pair_insertion_v0", "pair_insertion_v1",
                                              "pair_insertion_v2", "knot_replay"};
  return names;
}

SceneConfig prepare_scenario(const std::string& name, SceneConfig c, const RunOptions& o) {
  const auto& names = scenario_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown scenario '" + name + "' (expected one of: " + list + ")");
  }
  if (name == "free_space") {
    for (auto& rod : c.rods) rod.clamp_base = true;
  } else if (name == "insertion" || name.rfind("pair_insertion_", 0) == 0) {
    if (!c.mesh) throw std::invalid_argument(name + " scenario needs a mesh");
    for (auto& rod : c.rods) {
      if (rod.placement == Placement::kTube) rod.insertion.enabled = true;
    }
    if (name != "insertion") {
      if (c.rods.size() < 2) throw std::invalid_argument(name + " scenario needs two rods");
      const char v = name.back();
      c.coupling.mode = v == '0' ? CouplingMode::kNone
                                 : (v == '1' ? CouplingMode::kOneWay : CouplingMode::kBidirectional);
    }
  } else if (name == "knot_replay") {
    if (o.replay) c.replay = *o.replay;
    if (!c.replay) throw std::invalid_argument("knot_replay needs a replay file");
    const auto path = c.resolve(*c.replay);
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("replay file missing: " + path.string());
    }
  }
  if (o.backend) c.engine.backend = *o.backend;
  if (o.blocks) c.engine.blocks = *o.blocks;
  if (o.steps_per_epoch) c.engine.steps_per_epoch = *o.steps_per_epoch;
  if (o.epochs) c.engine.epochs = *o.epochs;
  if (o.iterations) c.world.solver.iterations = *o.iterations;
  if (c.engine.blocks < 1) throw std::invalid_argument("blocks must be >= 1");
  if (c.engine.steps_per_epoch < 1) throw std::invalid_argument("steps per epoch must be >= 1");
  if (c.world.solver.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  return c;
}

ScenarioResult run_scenario(const std::string& name, const SceneConfig& config,
                            const RunOptions& options) {
  const SceneConfig cfg = prepare_scenario(name, config, options);
  std::optional<SessionLog> log;
  SceneConfig scene = cfg;
  if (name == "knot_replay") {
    const auto path = cfg.resolve(*cfg.replay);
    log = read_session(path);
    if (!log->end_step) throw std::runtime_error(path.string() + ": session has no end record");
    const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
    scene = parse_scene(log->scene, dir);
    scene.engine = cfg.engine;
  }

  Engine engine(build_world(scene), make_plan(scene));
  std::uint64_t total = scene.engine.epochs * scene.engine.steps_per_epoch;
  if (log) {
    for (const auto& r : log->commands) engine.schedule_command(r.command, r.apply_step);
    total = *log->end_step;
  }
  if (options.max_steps) total = std::min(total, *options.max_steps);

  ScenarioResult result;
  result.min_clearance = std::numeric_limits<double>::infinity();
  const std::size_t s = scene.engine.steps_per_epoch;
  while (engine.world().step_index() < total) {
    const std::size_t n = static_cast<std::size_t>(
        std::min<std::uint64_t>(s, total - engine.world().step_index()));
    const EpochMetrics m = engine.run_epoch(n);
    const MetricsRow row = make_row(engine, m);
    result.wall_ns += m.wall_ns;
    if (!std::isnan(row.min_clearance)) {
      result.min_clearance = std::min(result.min_clearance, row.min_clearance);
    }
    result.metrics.append(row);
  }
  if (!self_collision_on(engine.world())) result.min_clearance = std::numeric_limits<double>::quiet_NaN();
  result.steps = engine.world().step_index();
  result.final_rods.assign(engine.world().rods().begin(), engine.world().rods().end());
  result.checksum = configuration_checksum(result.final_rods);
  if (log) result.recorded_checksum = log->checksum;
  return result;
}

double min_point_clearance(std::span<const RodState> rods, std::size_t exclusion) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < rods.size(); ++a) {
    for (std::size_t b = a; b < rods.size(); ++b) {
      for (std::size_t i = 0; i < rods[a].num_points(); ++i) {
        const std::size_t j0 = a == b ? i + exclusion + 1 : 0;
        for (std::size_t j = j0; j < rods[b].num_points(); ++j) {
          best = std::min(best, (rods[a].positions[i] - rods[b].positions[j]).squaredNorm());
        }
      }
    }
  }
  return std::sqrt(best);
}

// ---------------------------------------------------------------------------------------

BenchMatrix load_bench_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open bench matrix: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
  }
  BenchMatrix m;
  auto sizes = [&](const char* key, std::vector<std::size_t>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.empty()) throw SceneError(key, "expected a non-empty array");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number_unsigned() || x.get<std::size_t>() == 0) {
        throw SceneError(key, "expected positive integers");
      }
      out.push_back(x.get<std::size_t>());
    }
  };
  auto scalar = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number_unsigned()) throw SceneError(key, "expected a non-negative integer");
    out = j.at(key).get<std::size_t>();
  };
  if (!j.is_object()) throw SceneError("<root>", "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::vector<std::string> known{"points", "steps_per_epoch", "backends",
                                                "blocks", "epochs",          "repeats"};
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw SceneError(it.key(), "unknown field");
    }
  }
  sizes("points", m.points);
  sizes("steps_per_epoch", m.steps_per_epoch);
  scalar("blocks", m.blocks);
  scalar("epochs", m.epochs);
  scalar("repeats", m.repeats);
  if (j.contains("backends")) {
    m.backends.clear();
    for (const auto& b : j.at("backends")) {
      if (!b.is_string()) throw SceneError("backends", "expected strings");
      try {
        m.backends.push_back(backend_from_string(b.get<std::string>()));
      } catch (const std::invalid_argument& e) {
        throw SceneError("backends", e.what());
      }
    }
  }
  if (m.epochs == 0) throw SceneError("epochs", "must be >= 1");
  if (m.repeats == 0) throw SceneError("repeats", "must be >= 1");
  return m;
}

BenchRow bench_point(Backend backend, std::size_t points, std::size_t steps_per_epoch,
                     std::size_t blocks, std::size_t epochs, std::size_t repeats) {
  if (blocks == 0) blocks = (points + 511) / 512;
  if (backend == Backend::kSerial) blocks = 1;
  SceneConfig scene;
  RodConfig rod;
  rod.points = points;
  rod.length = 2.0e-3 * static_cast<double>(points - 1);
  rod.clamp_base = true;
  scene.rods.push_back(rod);
  scene.engine.backend = backend;
  scene.engine.blocks = blocks;
  scene.engine.steps_per_epoch = steps_per_epoch;

  BenchRow row;
  row.backend = to_string(backend);
  row.points = points;
  row.steps_per_epoch = steps_per_epoch;
  row.blocks = blocks;
  row.steps = epochs * steps_per_epoch;
  row.wall_ns = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t r = 0; r < repeats; ++r) {
    Engine engine(build_world(scene), make_plan(scene));
    engine.run_epoch();  // warm-up: first touch of buffers and worker start-up
    std::uint64_t total = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
      const auto start = std::chrono::steady_clock::now();
      engine.run_epoch();
      total += static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                              std::chrono::steady_clock::now() - start)
                                              .count());
    }
    row.wall_ns = std::min(row.wall_ns, total);
  }
  row.ns_per_step = static_cast<double>(row.wall_ns) / static_cast<double>(row.steps);
  return row;
}

std::vector<BenchRow> bench_suite(const BenchMatrix& m) {
  std::vector<BenchRow> rows;
  for (Backend b : m.backends) {
    for (std::size_t n : m.points) {
      for (std::size_t s : m.steps_per_epoch) {
        rows.push_back(bench_point(b, n, s, m.blocks, m.epochs, m.repeats));
      }
    }
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << "backend,points,steps_per_epoch,blocks,steps,wall_ns,ns_per_step\n";
  for (const auto& r : rows) {
    out << r.backend << ',' << r.points << ',' << r.steps_per_epoch << ',' << r.blocks << ','
        << r.steps << ',' << r.wall_ns << ',' << fmt(r.ns_per_step) << '\n';
  }
}

}  // namespace corde
