#pragma once

#include <atomic>
#include <barrier>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "corde/command.hpp"
#include "corde/world.hpp"

namespace corde {

struct BlockRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Contiguous element ranges, one per worker.
struct BlockPartition {
  std::size_t cap = 512;
  std::vector<BlockRange> ranges;

  std::size_t block_count() const { return ranges.size(); }
  /// (last element of block k, first element of block k+1).
  std::vector<std::pair<std::size_t, std::size_t>> boundary_pairs() const;
  std::size_t block_of(std::size_t element) const;
};

/// ceil(n / cap) balanced blocks whose sizes differ by at most one.
BlockPartition partition_blocks(std::size_t n, std::size_t cap);
/// Exactly `blocks` balanced blocks (clamped to n).
BlockPartition partition_into(std::size_t n, std::size_t blocks);

enum class Backend { kSerial, kParallel };

struct EpochPlan {
  std::size_t steps_per_epoch = 10;
  Backend backend = Backend::kSerial;
  std::size_t blocks = 1;
  /// Per-phase generation checks on halo reads.
  bool validate_barriers = false;

  void validate() const;
};

/// Fault injection used by tests: every worker skips the barrier that follows
/// `skip_after_phase` (counted from the start of the epoch) and `slow_block` sleeps
/// during that phase.
struct BarrierFault {
  std::size_t skip_after_phase = 0;
  std::size_t slow_block = 0;
  std::chrono::milliseconds delay{50};
};

struct CommandAck {
  std::uint64_t id = 0;
  std::uint64_t apply_step = 0;
};

struct PendingCommand {
  std::uint64_t id = 0;
  std::uint64_t apply_step = 0;
  Command command;
  /// Held back until the boundary of this step (replay).
  std::optional<std::uint64_t> scheduled;
};

/// Multi-producer / single-consumer command queue. Commands are drained at a step
/// boundary; an ack reports that boundary's step index.
class Mailbox {
 public:
  CommandAck post(const Command& command);
  /// Queues a command for the boundary of `step`, or the next boundary if that has passed.
  CommandAck post_at(const Command& command, std::uint64_t step);
  /// Removes and returns the commands due at the boundary of `step`, in arrival order.
  std::vector<PendingCommand> drain(std::uint64_t step);
  std::uint64_t generation() const;
  /// Step index at which the next drain happens.
  std::uint64_t next_boundary() const;
  void reset_boundary(std::uint64_t step);

 private:
  mutable std::mutex mutex_;
  std::deque<PendingCommand> pending_;
  std::uint64_t next_id_ = 1;
  std::uint64_t next_boundary_ = 0;
  std::uint64_t generation_ = 0;
};

struct Snapshot {
  std::uint64_t sequence = 0;
  std::uint64_t step_index = 0;
  std::vector<std::vector<Vec3>> positions;
  std::vector<std::vector<Quat>> frames;
};

/// Single writer, many readers. Two slots written alternately; a reader copies the latest
/// completed slot and retries if the writer wrapped around onto it meanwhile.
class SnapshotBuffer {
 public:
  explicit SnapshotBuffer(std::vector<std::size_t> rod_points);

  void publish(std::uint64_t step, std::span<const RodState> rods);
  /// Empty optional only before the first publish.
  std::optional<Snapshot> read() const;
  std::uint64_t retries() const { return retries_.load(std::memory_order_relaxed); }

 private:
  struct Slot {
    std::atomic<std::uint64_t> step{0};
    std::unique_ptr<std::atomic<double>[]> data;
  };

  std::vector<std::size_t> rod_points_;
  std::size_t doubles_ = 0;
  Slot slots_[2];
  std::atomic<std::uint64_t> sequence_{0};  // 2k+1 while writing publish k, 2k+2 when done
  std::uint64_t publishes_ = 0;
  mutable std::atomic<std::uint64_t> retries_{0};
};

struct ElementView {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  std::optional<Quat> frame;
  Vec3 angular_velocity = Vec3::Zero();
  PointRef point;
};

/// Neighbouring boundary elements of one block: the last element of the previous block
/// and the first element of the next, when they belong to the same rod.
struct BoundaryView {
  std::optional<ElementView> left;
  std::optional<ElementView> right;
};

std::vector<BoundaryView> halo_exchange(const BlockPartition& partition, const World& world);

struct EpochMetrics {
  std::uint64_t epoch = 0;
  std::uint64_t wall_ns = 0;
  std::size_t steps = 0;
  std::uint64_t barrier_wait_ns = 0;
  std::size_t contacts = 0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpochMetrics& m);

class EngineError : public std::runtime_error {
 public:
  EngineError(const std::string& what, std::uint64_t step, std::size_t block)
      : std::runtime_error(what), step_(step), block_(block) {}
  std::uint64_t step() const { return step_; }
  std::size_t block() const { return block_; }

 private:
  std::uint64_t step_;
  std::size_t block_;
};

/// Runs a World in epochs of S time-steps, either on the calling thread (serial) or on
/// one persistent worker per block with barriers between phases.
class Engine {
 public:
  Engine(World world, EpochPlan plan);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  EpochMetrics run_epoch();
  /// Runs an epoch of exactly `steps` time-steps.
  EpochMetrics run_epoch(std::size_t steps);

  /// Validated against the world, then queued for the next step boundary.
  CommandAck post_command(const Command& command);
  CommandAck schedule_command(const Command& command, std::uint64_t step);
  std::optional<Snapshot> read_snapshot() const { return snapshots_.read(); }
  const SnapshotBuffer& snapshots() const { return snapshots_; }

  /// Only valid while no epoch is running.
  const World& world() const { return world_; }
  World& world() { return world_; }
  const BlockPartition& partition() const { return partition_; }
  const EpochPlan& plan() const { return plan_; }
  std::uint64_t epochs_run() const { return epoch_; }

  void inject_barrier_fault(std::optional<BarrierFault> fault) { fault_ = fault; }
  /// Minimum wall time per time-step; the stepping thread sleeps to keep this pace.
  void set_step_pacing(std::chrono::nanoseconds period) { pacing_ = period; }

  /// Stale halo reads detected by generation checks since construction.
  std::uint64_t barrier_violations() const {
    return violations_.load(std::memory_order_relaxed);
  }

 private:
  void run_serial_epoch(std::size_t steps);
  void run_parallel_epoch(std::size_t steps);
  void worker_main(std::size_t block);
  void worker_epoch(std::size_t block, std::size_t steps);
  void drain_commands();
  void check_halo(std::size_t block, std::uint64_t phase);

  World world_;
  EpochPlan plan_;
  BlockPartition partition_;
  Mailbox mailbox_;
  SnapshotBuffer snapshots_;
  std::uint64_t epoch_ = 0;
  std::optional<BarrierFault> fault_;
  std::chrono::nanoseconds pacing_{0};
  std::chrono::steady_clock::time_point epoch_started_;
  std::atomic<std::uint64_t> violations_{0};

  // Parallel backend.
  std::vector<std::thread> workers_;
  std::unique_ptr<std::barrier<>> barrier_;
  std::mutex control_mutex_;
  std::condition_variable control_cv_;
  std::uint64_t epoch_ticket_ = 0;
  std::size_t epoch_steps_ = 0;
  std::size_t workers_done_ = 0;
  bool shutdown_ = false;
  std::vector<std::uint64_t> wait_ns_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> phases_done_;
  std::atomic<bool> aborted_{false};
  std::mutex error_mutex_;
  std::exception_ptr error_;
  std::uint64_t error_step_ = 0;
  std::size_t error_block_ = 0;
};

std::string to_string(Backend backend);
Backend backend_from_string(const std::string& name);

}  // namespace corde
