#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "corde/engine.hpp"
#include "corde/scene.hpp"

namespace corde {

struct MetricsRow {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double time = 0;
  std::uint64_t wall_ns = 0;
  std::uint64_t barrier_wait_ns = 0;
  double max_strain = 0;
  std::size_t mesh_contacts = 0;
  std::size_t self_contacts = 0;
  double stretch_energy = 0;
  double bend_energy = 0;
  double penalty_energy = 0;
  double kinetic_energy = 0;
  /// Smallest distance between non-neighbouring points; NaN when self collision is off.
  double min_clearance = 0;
};

/// Append-only per-epoch metrics with a fixed CSV header.
class MetricsTable {
 public:
  static const char* header();

  void append(const MetricsRow& row) { rows_.push_back(row); }
  const std::vector<MetricsRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  void write_csv(std::ostream& out) const;

 private:
  std::vector<MetricsRow> rows_;
};

/// Writes the table; throws std::runtime_error if the file cannot be written.
void export_metrics(const MetricsTable& table, const std::filesystem::path& path);

/// Command-line style overrides on top of a scene.
struct RunOptions {
  std::optional<Backend> backend;
  std::optional<std::size_t> blocks;
  std::optional<std::size_t> steps_per_epoch;
  std::optional<std::size_t> epochs;
  std::optional<int> iterations;
  std::optional<std::filesystem::path> replay;
  /// Stop after this many time-steps even if the scenario would run longer.
  std::optional<std::uint64_t> max_steps;
};

struct ScenarioResult {
  MetricsTable metrics;
  std::vector<RodState> final_rods;
  std::uint64_t steps = 0;
  std::uint64_t wall_ns = 0;
  double checksum = 0;
  std::optional<double> recorded_checksum;
  /// Minimum over all epochs; NaN when self collision is off.
  double min_clearance = 0;
};

/// free_space, insertion, pair_insertion_v0, pair_insertion_v1, pair_insertion_v2,
/// knot_replay.
const std::vector<std::string>& scenario_names();

/// Applies the scenario's fixed settings (clamps, coupling mode) and the overrides.
SceneConfig prepare_scenario(const std::string& name, SceneConfig config, const RunOptions& options);

ScenarioResult run_scenario(const std::string& name, const SceneConfig& config,
                            const RunOptions& options = {});

/// Smallest distance between points of different rods, or of the same rod more than
/// `exclusion` indices apart.
double min_point_clearance(std::span<const RodState> rods, std::size_t exclusion);

/// Benchmark matrix, e.g.
///   {"points": [128, 512, 3072], "steps_per_epoch": [1, 10], "backends": ["serial"],
///    "blocks": 0, "epochs": 20, "repeats": 3}
/// blocks 0 selects ceil(N / 512). Writes one row per configuration.
struct BenchRow {
  std::string backend;
  std::size_t points = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t blocks = 0;
  std::size_t steps = 0;
  std::uint64_t wall_ns = 0;
  double ns_per_step = 0;
};

struct BenchMatrix {
  std::vector<std::size_t> points{128, 512, 1024, 2048, 3072};
  std::vector<std::size_t> steps_per_epoch{1, 10, 20};
  std::vector<Backend> backends{Backend::kSerial, Backend::kParallel};
  std::size_t blocks = 0;
  std::size_t epochs = 20;
  std::size_t repeats = 3;
};

BenchMatrix load_bench_matrix(const std::filesystem::path& path);
/// Free-space pendulum of N points, timed as the best of `repeats` runs.
BenchRow bench_point(Backend backend, std::size_t points, std::size_t steps_per_epoch,
                     std::size_t blocks, std::size_t epochs, std::size_t repeats);
std::vector<BenchRow> bench_suite(const BenchMatrix& matrix);
void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out);

}  // namespace corde
