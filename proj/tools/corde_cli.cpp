// corde: command-line front end for the rod engine.
//
//   corde simulate --config scene.json --scenario free_space --out metrics.csv
//   corde bench --matrix matrix.json --out bench.csv
//   corde serve --port 8765 --config scene.json
//   corde replay --log session.ndjson
//   corde make-tube --out tube.obj
//   corde record-knot --config knot.json --out knot_session.ndjson

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <thread>

#include "CLI11.hpp"

#include "corde/scenario.hpp"
#include "corde/service.hpp"
#include "corde/session.hpp"

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted.store(true); }

int cmd_simulate(const std::string& config_path, const std::string& scenario, const std::string& backend,
                 std::optional<std::size_t> blocks, std::optional<std::size_t> steps,
                 std::optional<std::size_t> batch, std::optional<int> iters,
                 const std::string& replay, const std::string& out) {
  corde::RunOptions opts;
  if (!backend.empty()) opts.backend = corde::backend_from_string(backend);
  opts.blocks = blocks;
  opts.steps_per_epoch = steps;
  opts.epochs = batch;
  opts.iterations = iters;
  if (!replay.empty()) opts.replay = replay;

  const corde::SceneConfig scene = corde::load_scene(config_path);
  const corde::ScenarioResult result = corde::run_scenario(scenario, scene, opts);
  if (!out.empty()) corde::export_metrics(result.metrics, out);

  double max_strain = 0;
  for (const auto& row : result.metrics.rows()) max_strain = std::max(max_strain, row.max_strain);
  std::printf("scenario      %s\n", scenario.c_str());
  std::printf("steps         %llu\n", static_cast<unsigned long long>(result.steps));
  std::printf("wall          %.3f ms (%.2f us/step)\n", result.wall_ns * 1e-6,
              result.steps ? result.wall_ns * 1e-3 / result.steps : 0.0);
  std::printf("max strain    %.3e\n", max_strain);
  if (!std::isnan(result.min_clearance)) std::printf("min clearance %.6e\n", result.min_clearance);
  std::printf("checksum      %.17g\n", result.checksum);
  if (result.recorded_checksum) {
    std::printf("recorded      %.17g (|diff| %.3e)\n", *result.recorded_checksum,
                std::abs(*result.recorded_checksum - result.checksum));
  }
  return 0;
}

int cmd_bench(const std::string& matrix_path, const std::string& out) {
  const corde::BenchMatrix matrix =
      matrix_path.empty() ? corde::BenchMatrix{} : corde::load_bench_matrix(matrix_path);
  const auto rows = corde::bench_suite(matrix);
  if (out.empty()) {
    corde::write_bench_csv(rows, std::cout);
    return 0;
  }
  std::ofstream file(out);
  if (!file) throw std::runtime_error("cannot write " + out);
  corde::write_bench_csv(rows, file);
  if (!file) throw std::runtime_error("write failed: " + out);
  return 0;
}

int cmd_serve(const std::string& config_path, corde::ServiceOptions options, double duration) {
  corde::SimService service(corde::load_scene(config_path), std::move(options));
  service.start();
  std::fprintf(stderr, "serving on port %u (Ctrl-C to stop)\n", service.port());
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_interrupted.load() && service.failure().empty()) {
    if (duration > 0 && std::chrono::steady_clock::now() - start >= std::chrono::duration<double>(duration)) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  service.stop();
  std::fprintf(stderr, "stopped at step %llu, checksum %.17g\n",
               static_cast<unsigned long long>(service.step_index()), service.final_checksum());
  if (!service.failure().empty()) {
    std::fprintf(stderr, "engine failure: %s\n", service.failure().c_str());
    return 1;
  }
  return 0;
}

int cmd_replay(const std::string& log_path) {
  const corde::SessionLog log = corde::read_session(log_path);
  const corde::World world = corde::replay_session(log, std::filesystem::path(log_path).parent_path());
  const double checksum = corde::configuration_checksum(world.rods());
  std::printf("steps     %llu\n", static_cast<unsigned long long>(world.step_index()));
  std::printf("commands  %zu\n", log.commands.size());
  std::printf("checksum  %.17g\n", checksum);
  if (log.checksum) {
    const double diff = std::abs(*log.checksum - checksum);
    std::printf("recorded  %.17g (|diff| %.3e)\n", *log.checksum, diff);
    if (diff > 1e-6 * std::max(1.0, std::abs(*log.checksum))) {
      std::fprintf(stderr, "error: replay diverged from the recording\n");
      return 1;
    }
  }
  return 0;
}

int cmd_make_tube(const std::string& out, const corde::TubeSpec& spec) {
  spec.validate();
  const corde::TriMesh mesh = corde::make_tube_mesh(spec);
  corde::save_mesh(mesh, out);
  std::printf("%zu triangles -> %s\n", mesh.triangles.size(), out.c_str());
  return 0;
}

// Scripted stand-in for a hand-steered knot session: both strands are held at the bottom
// while their top ends are carried around each other, twisting the pair into a braid.
// The result is an ordinary session log, as the service would have written it.
int cmd_record_knot(const std::string& config_path, const std::string& out, double turns,
                    std::uint64_t steps, std::uint64_t interval, double sink) {
  const corde::SceneConfig scene = corde::load_scene(config_path);
  if (scene.rods.size() != 2) throw std::runtime_error("record-knot needs a scene with two rods");
  if (scene.world.broadphase_once_per_epoch) {
    throw std::runtime_error("record-knot needs broadphase.once_per_epoch off");
  }
  if (interval == 0) throw std::runtime_error("interval must be positive");
  corde::SceneConfig logged = scene;
  if (logged.mesh && logged.mesh->path) logged.mesh->path = std::filesystem::absolute(scene.resolve(*logged.mesh->path));

  corde::Engine engine(corde::build_world(scene), corde::make_plan(scene));
  corde::SessionWriter log(out, corde::scene_to_json(logged));

  const auto& rods = engine.world().rods();
  const corde::Vec3 bottom0 = rods[0].positions.front();
  const corde::Vec3 bottom1 = rods[1].positions.front();
  const corde::Vec3 top0 = rods[0].positions.back();
  const corde::Vec3 top1 = rods[1].positions.back();
  const auto tip0 = static_cast<std::uint32_t>(rods[0].num_points() - 1);
  const auto tip1 = static_cast<std::uint32_t>(rods[1].num_points() - 1);
  const corde::Vec3 centre = 0.5 * (top0 + top1);
  const corde::Vec3 axis = (centre - 0.5 * (bottom0 + bottom1)).normalized();

  std::uint64_t id = 0;
  auto emit = [&](const corde::Command& c, std::uint64_t step) {
    engine.schedule_command(c, step);
    log.append({++id, step, c});
  };
  emit(corde::Command::grab(0, 0, bottom0), 0);
  emit(corde::Command::grab(1, 0, bottom1), 0);
  // Twisting over the first 80% of the run, then hold still so the braid settles.
  const std::uint64_t wind = steps * 4 / 5;
  for (std::uint64_t step = 0; step <= wind; step += interval) {
    const double f = static_cast<double>(step) / static_cast<double>(wind);
    const double angle = 2.0 * std::numbers::pi * turns * f;
    const Eigen::AngleAxisd rot(angle, axis);
    const corde::Vec3 drop = -sink * f * axis;
    emit(corde::Command::grab(0, tip0, centre + rot * (top0 - centre) + drop), step);
    emit(corde::Command::grab(1, tip1, centre + rot * (top1 - centre) + drop), step);
  }
  while (engine.world().step_index() < steps) {
    engine.run_epoch(static_cast<std::size_t>(
        std::min<std::uint64_t>(engine.plan().steps_per_epoch, steps - engine.world().step_index())));
  }
  const double checksum = corde::configuration_checksum(engine.world().rods());
  log.finish(engine.world().step_index(), checksum);
  const double clearance = corde::min_point_clearance(engine.world().rods(),
                                                      engine.world().config().self.neighbor_exclusion);
  std::printf("%llu commands, %llu steps, final clearance %.4e, checksum %.17g -> %s\n",
              static_cast<unsigned long long>(id), static_cast<unsigned long long>(steps), clearance,
              checksum, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inextensible Cosserat rod engine"};
  app.require_subcommand(1);

  std::string config, scenario, backend, out, replay, matrix, log_path;
  std::optional<std::size_t> blocks, steps, batch;
  std::optional<int> iters;

  auto* sim = app.add_subcommand("simulate", "Run a scripted scenario and export per-epoch metrics");
  sim->add_option("--config", config, "Scene file (JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("--scenario", scenario, "free_space | insertion | pair_insertion_v0|v1|v2 | knot_replay")
      ->required();
  sim->add_option("--backend", backend, "serial | parallel")->check(CLI::IsMember({"serial", "parallel"}));
  sim->add_option("--blocks", blocks, "Number of blocks for the parallel backend");
  sim->add_option("--steps", steps, "Time-steps per epoch (S)");
  sim->add_option("--batch", batch, "Number of epochs to run");
  sim->add_option("--iters", iters, "Constraint solver iterations per step");
  sim->add_option("--replay", replay, "Session log for knot_replay");
  sim->add_option("--out", out, "Metrics CSV");

  auto* bench = app.add_subcommand("bench", "Time the pendulum over a matrix of sizes and batch lengths");
  bench->add_option("--matrix", matrix, "Matrix file (JSON); built-in matrix if omitted")->check(CLI::ExistingFile);
  bench->add_option("--out", out, "CSV output (stdout if omitted)");

  corde::ServiceOptions service;
  double duration = 0;
  double pacing_us = -1;
  std::string record;
  auto* serve = app.add_subcommand("serve", "Serve a scene over WebSocket for interactive steering");
  serve->add_option("--config", config, "Scene file (JSON)")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", service.port, "TCP port (0 picks one)")->capture_default_str();
  serve->add_option("--address", service.address, "Listen address")->capture_default_str();
  serve->add_option("--stride", service.stride, "Default position decimation")->capture_default_str();
  serve->add_flag("--frames", service.include_frames, "Include material frames in state frames");
  serve->add_option("--rate", service.frame_rate, "State frames per second per client")->capture_default_str();
  serve->add_option("--controllers", service.max_controllers, "Clients allowed to steer (1 or 2)")
      ->check(CLI::Range(1, 2))
      ->capture_default_str();
  serve->add_option("--pacing-us", pacing_us, "Minimum wall time per step in us (default: dt)");
  serve->add_option("--record", record, "Write the session log here");
  serve->add_option("--duration", duration, "Stop after this many seconds (0 = until Ctrl-C)");

  auto* rep = app.add_subcommand("replay", "Replay a session log headless and compare checksums");
  rep->add_option("--log", log_path, "Session log (NDJSON)")->required()->check(CLI::ExistingFile);

  corde::TubeSpec tube;
  auto* mk = app.add_subcommand("make-tube", "Write the procedural vessel mesh as OBJ");
  mk->add_option("--out", out, "OBJ output")->required();
  mk->add_option("--radius", tube.radius)->capture_default_str();
  mk->add_option("--sides", tube.sides)->capture_default_str();
  mk->add_option("--rings", tube.rings)->capture_default_str();

  double turns = 2.0, sink = 0.02;
  std::uint64_t knot_steps = 20000, interval = 20;
  auto* knot = app.add_subcommand("record-knot", "Write a scripted braid session log for knot_replay");
  knot->add_option("--config", config, "Two-rod scene (JSON)")->required()->check(CLI::ExistingFile);
  knot->add_option("--out", out, "Session log (NDJSON)")->required();
  knot->add_option("--turns", turns, "Turns of the top ends around each other")->capture_default_str();
  knot->add_option("--steps", knot_steps, "Length of the session in time-steps")->capture_default_str();
  knot->add_option("--interval", interval, "Steps between grab target updates")->capture_default_str();
  knot->add_option("--sink", sink, "How far the top ends are lowered [m]")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return cmd_simulate(config, scenario, backend, blocks, steps, batch, iters, replay, out);
    if (*bench) return cmd_bench(matrix, out);
    if (*serve) {
      if (pacing_us >= 0) {
        service.step_pacing = std::chrono::nanoseconds(static_cast<std::int64_t>(pacing_us * 1e3));
      }
      if (!record.empty()) service.session_log = record;
      return cmd_serve(config, service, duration);
    }
    if (*rep) return cmd_replay(log_path);
    if (*knot) return cmd_record_knot(config, out, turns, knot_steps, interval, sink);
    if (*mk) return cmd_make_tube(out, tube);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
