#include "corde/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <sstream>

namespace corde {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t elapsed_ns(Clock::time_point start) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count());
}

}  // namespace

BlockPartition partition_into(std::size_t n, std::size_t blocks) {
  if (n == 0) throw std::invalid_argument("partition needs at least one element");
  if (blocks == 0) throw std::invalid_argument("partition needs at least one block");
  blocks = std::min(blocks, n);
  BlockPartition p;
  const std::size_t base = n / blocks;
  const std::size_t extra = n % blocks;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < blocks; ++k) {
    const std::size_t size = base + (k < extra ? 1 : 0);
    p.ranges.push_back({begin, begin + size});
    begin += size;
  }
  p.cap = base + (extra > 0 ? 1 : 0);
  return p;
}

BlockPartition partition_blocks(std::size_t n, std::size_t cap) {
  if (cap < 2) throw std::invalid_argument("block cap must be >= 2");
  BlockPartition p = partition_into(n, (n + cap - 1) / cap);
  p.cap = cap;
  return p;
}

std::vector<std::pair<std::size_t, std::size_t>> BlockPartition::boundary_pairs() const {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t k = 0; k + 1 < ranges.size(); ++k) {
    pairs.emplace_back(ranges[k].end - 1, ranges[k + 1].begin);
  }
  return pairs;
}

std::size_t BlockPartition::block_of(std::size_t element) const {
  auto it = std::upper_bound(ranges.begin(), ranges.end(), element,
                             [](std::size_t e, const BlockRange& r) { return e < r.end; });
  if (it == ranges.end()) throw std::out_of_range("element outside partition");
  return static_cast<std::size_t>(it - ranges.begin());
}

void EpochPlan::validate() const {
  if (steps_per_epoch < 1) throw std::invalid_argument("steps_per_epoch must be >= 1");
  if (blocks < 1) throw std::invalid_argument("blocks must be >= 1");
}

std::string to_string(Backend backend) {
  return backend == Backend::kSerial ? "serial" : "parallel";
}

Backend backend_from_string(const std::string& name) {
  if (name == "serial") return Backend::kSerial;
  if (name == "parallel") return Backend::kParallel;
  throw std::invalid_argument("unknown backend '" + name + "' (expected serial or parallel)");
}

// ---------------------------------------------------------------------------------------

CommandAck Mailbox::post(const Command& command) {
  std::lock_guard lock(mutex_);
  PendingCommand p{next_id_++, next_boundary_, command, std::nullopt};
  pending_.push_back(p);
  return {p.id, p.apply_step};
}

CommandAck Mailbox::post_at(const Command& command, std::uint64_t step) {
  std::lock_guard lock(mutex_);
  PendingCommand p{next_id_++, std::max(step, next_boundary_), command, step};
  pending_.push_back(p);
  return {p.id, p.apply_step};
}

std::vector<PendingCommand> Mailbox::drain(std::uint64_t step) {
  std::lock_guard lock(mutex_);
  std::vector<PendingCommand> out;
  std::deque<PendingCommand> later;
  for (auto& p : pending_) {
    if (p.scheduled && *p.scheduled > step) {
      later.push_back(p);
    } else {
      p.apply_step = step;
      out.push_back(p);
    }
  }
  pending_.swap(later);
  next_boundary_ = step + 1;
  ++generation_;
  return out;
}

std::uint64_t Mailbox::generation() const {
  std::lock_guard lock(mutex_);
  return generation_;
}

std::uint64_t Mailbox::next_boundary() const {
  std::lock_guard lock(mutex_);
  return next_boundary_;
}

void Mailbox::reset_boundary(std::uint64_t step) {
  std::lock_guard lock(mutex_);
  next_boundary_ = step;
}

// ---------------------------------------------------------------------------------------

SnapshotBuffer::SnapshotBuffer(std::vector<std::size_t> rod_points)
    : rod_points_(std::move(rod_points)) {
  for (std::size_t n : rod_points_) doubles_ += 3 * n + 4 * (n - 1);
  for (auto& slot : slots_) slot.data.reset(new std::atomic<double>[doubles_]);
}

void SnapshotBuffer::publish(std::uint64_t step, std::span<const RodState> rods) {
  const std::uint64_t k = publishes_++;
  Slot& slot = slots_[k % 2];
  sequence_.store(2 * k + 1, std::memory_order_relaxed);
  std::atomic_thread_fence(std::memory_order_release);
  slot.step.store(step, std::memory_order_relaxed);
  std::size_t o = 0;
  for (const auto& rod : rods) {
    for (const auto& x : rod.positions) {
      for (int c = 0; c < 3; ++c) slot.data[o++].store(x[c], std::memory_order_relaxed);
    }
    for (const auto& q : rod.frames) {
      const Vec4 v = to_vec4(q);
      for (int c = 0; c < 4; ++c) slot.data[o++].store(v[c], std::memory_order_relaxed);
    }
  }
  sequence_.store(2 * k + 2, std::memory_order_release);
}

std::optional<Snapshot> SnapshotBuffer::read() const {
  for (;;) {
    const std::uint64_t s1 = sequence_.load(std::memory_order_acquire);
    if (s1 == 0) return std::nullopt;
    if (s1 == 1) {
      retries_.fetch_add(1, std::memory_order_relaxed);
      continue;
    }
    // Latest completed publish.
    const std::uint64_t p = (s1 % 2 == 0) ? s1 / 2 - 1 : (s1 - 1) / 2 - 1;
    const Slot& slot = slots_[p % 2];
    Snapshot snap;
    snap.sequence = p + 1;
    snap.step_index = slot.step.load(std::memory_order_relaxed);
    std::size_t o = 0;
    for (std::size_t n : rod_points_) {
      std::vector<Vec3> xs(n);
      for (auto& x : xs) {
        for (int c = 0; c < 3; ++c) x[c] = slot.data[o++].load(std::memory_order_relaxed);
      }
      std::vector<Quat> qs(n - 1);
      for (auto& q : qs) {
        Vec4 v;
        for (int c = 0; c < 4; ++c) v[c] = slot.data[o++].load(std::memory_order_relaxed);
        q = to_quat(v);
      }
      snap.positions.push_back(std::move(xs));
      snap.frames.push_back(std::move(qs));
    }
    std::atomic_thread_fence(std::memory_order_acquire);
    const std::uint64_t s2 = sequence_.load(std::memory_order_relaxed);
    // Slot p % 2 is rewritten by publish p + 2, which starts at sequence 2p + 5.
    if (s2 < 2 * p + 5) return snap;
    retries_.fetch_add(1, std::memory_order_relaxed);
  }
}

// ---------------------------------------------------------------------------------------

std::vector<BoundaryView> halo_exchange(const BlockPartition& partition, const World& world) {
  std::vector<BoundaryView> views(partition.block_count());
  auto locate = [&](std::size_t g) {
    std::size_t r = 0;
    while (world.rod_offset(r + 1) <= g) ++r;
    return PointRef{static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(g - world.rod_offset(r))};
  };
  auto view = [&](const PointRef& p) {
    const RodState& rod = world.rods()[p.rod];
    ElementView v;
    v.point = p;
    v.position = rod.positions[p.index];
    v.velocity = rod.velocities[p.index];
    if (p.index < rod.num_frames()) {
      v.frame = rod.frames[p.index];
      v.angular_velocity = rod.angular_velocities[p.index];
    }
    return v;
  };
  for (std::size_t k = 0; k + 1 < partition.block_count(); ++k) {
    const PointRef last = locate(partition.ranges[k].end - 1);
    const PointRef first = locate(partition.ranges[k + 1].begin);
    if (last.rod != first.rod) continue;
    views[k].right = view(first);
    views[k + 1].left = view(last);
  }
  return views;
}

void write_metrics_header(std::ostream& out) {
  out << "epoch,wall_ns,steps,barrier_wait_ns,contacts\n";
}

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << m.epoch << ',' << m.wall_ns << ',' << m.steps << ',' << m.barrier_wait_ns << ','
      << m.contacts << '\n';
}

// ---------------------------------------------------------------------------------------

namespace {

std::vector<std::size_t> rod_sizes(const World& world) {
  std::vector<std::size_t> sizes;
  for (const auto& rod : world.rods()) sizes.push_back(rod.num_points());
  return sizes;
}

}  // namespace

Engine::Engine(World world, EpochPlan plan)
    : world_(std::move(world)), plan_(plan), snapshots_(rod_sizes(world_)) {
  plan_.validate();
  const std::size_t blocks = plan_.backend == Backend::kSerial ? 1 : plan_.blocks;
  partition_ = partition_into(world_.num_elements(), blocks);
  mailbox_.reset_boundary(world_.step_index());
  snapshots_.publish(world_.step_index(), world_.rods());

  if (plan_.backend == Backend::kParallel) {
    const std::size_t b = partition_.block_count();
    barrier_ = std::make_unique<std::barrier<>>(static_cast<std::ptrdiff_t>(b));
    wait_ns_.assign(b, 0);
    phases_done_.reset(new std::atomic<std::uint64_t>[b]);
    for (std::size_t k = 0; k < b; ++k) phases_done_[k].store(0);
    for (std::size_t k = 0; k < b; ++k) workers_.emplace_back([this, k] { worker_main(k); });
  }
}

Engine::~Engine() {
  {
    std::lock_guard lock(control_mutex_);
    shutdown_ = true;
  }
  control_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

CommandAck Engine::post_command(const Command& command) {
  world_.validate_command(command);
  return mailbox_.post(command);
}

CommandAck Engine::schedule_command(const Command& command, std::uint64_t step) {
  world_.validate_command(command);
  return mailbox_.post_at(command, step);
}

void Engine::drain_commands() {
  std::vector<Command> commands;
  for (auto& p : mailbox_.drain(world_.step_index())) commands.push_back(p.command);
  world_.stage_commands(std::move(commands));
}

EpochMetrics Engine::run_epoch() {
  if (auto batch = world_.take_requested_batch()) {
    plan_.steps_per_epoch = static_cast<std::size_t>(*batch);
  }
  return run_epoch(plan_.steps_per_epoch);
}

EpochMetrics Engine::run_epoch(std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("epoch needs at least one step");
  const auto start = Clock::now();
  epoch_started_ = start;
  world_.set_epoch_start(true);
  world_.prepare_blocks(partition_.block_count());

  EpochMetrics m;
  m.epoch = epoch_;
  m.steps = steps;
  if (plan_.backend == Backend::kSerial) {
    run_serial_epoch(steps);
  } else {
    run_parallel_epoch(steps);
    for (auto& w : wait_ns_) {
      m.barrier_wait_ns += w;
      w = 0;
    }
  }
  m.wall_ns = elapsed_ns(start);
  m.contacts = world_.mesh_contact_count() + world_.self_contact_count();
  ++epoch_;
  return m;
}

void Engine::run_serial_epoch(std::size_t steps) {
  const std::size_t n = world_.num_elements();
  for (std::size_t s = 0; s < steps; ++s) {
    const std::uint64_t step = world_.step_index();
    try {
      drain_commands();
      world_.run_phase(Phase::kBeginStep, 0, 0, n);
      for (const auto& p : world_.step_phases()) world_.run_phase(p.phase, 0, 0, n);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "epoch " << epoch_ << " aborted at step " << step << " (block 0): " << e.what();
      throw EngineError(msg.str(), step, 0);
    }
    snapshots_.publish(world_.step_index(), world_.rods());
    if (pacing_.count() > 0) std::this_thread::sleep_until(epoch_started_ + pacing_ * (s + 1));
  }
}

void Engine::run_parallel_epoch(std::size_t steps) {
  {
    std::lock_guard lock(control_mutex_);
    for (std::size_t k = 0; k < partition_.block_count(); ++k) phases_done_[k].store(0);
    aborted_.store(false);
    error_ = nullptr;
    epoch_steps_ = steps;
    workers_done_ = 0;
    ++epoch_ticket_;
  }
  control_cv_.notify_all();
  std::unique_lock lock(control_mutex_);
  control_cv_.wait(lock, [&] { return workers_done_ == partition_.block_count(); });
  if (error_) {
    std::string what = "unknown worker failure";
    try {
      std::rethrow_exception(error_);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    std::ostringstream msg;
    msg << "epoch " << epoch_ << " aborted at step " << error_step_ << " (block " << error_block_
        << "): " << what;
    throw EngineError(msg.str(), error_step_, error_block_);
  }
}

void Engine::worker_main(std::size_t block) {
  std::uint64_t seen = 0;
  for (;;) {
    std::size_t steps = 0;
    {
      std::unique_lock lock(control_mutex_);
      control_cv_.wait(lock, [&] { return shutdown_ || epoch_ticket_ != seen; });
      if (shutdown_) return;
      seen = epoch_ticket_;
      steps = epoch_steps_;
    }
    worker_epoch(block, steps);
    {
      std::lock_guard lock(control_mutex_);
      ++workers_done_;
    }
    control_cv_.notify_all();
  }
}

void Engine::check_halo(std::size_t block, std::uint64_t phase) {
  // Every neighbour must have finished the previous phase before this block reads its
  // boundary elements.
  auto check = [&](std::size_t nb) {
    if (phases_done_[nb].load(std::memory_order_acquire) < phase) {
      violations_.fetch_add(1, std::memory_order_relaxed);
    }
  };
  if (block > 0) check(block - 1);
  if (block + 1 < partition_.block_count()) check(block + 1);
}

void Engine::worker_epoch(std::size_t block, std::size_t steps) {
  const BlockRange range = partition_.ranges[block];
  const std::size_t n = world_.num_elements();
  std::uint64_t phase = 0;
  std::size_t step_in_epoch = 0;

  auto run = [&](Phase ph, bool single) {
    if (plan_.validate_barriers && phase > 0) check_halo(block, phase);
    if (fault_ && block == fault_->slow_block && phase == fault_->skip_after_phase) {
      std::this_thread::sleep_for(fault_->delay);
    }
    if (!aborted_.load(std::memory_order_acquire) && (!single || block == 0)) {
      try {
        if (single) {
          world_.run_phase(ph, block, 0, n);
        } else {
          world_.run_phase(ph, block, range.begin, range.end);
        }
        if (ph == Phase::kEndStep) {
          snapshots_.publish(world_.step_index(), world_.rods());
          if (pacing_.count() > 0) {
            std::this_thread::sleep_until(epoch_started_ + pacing_ * (step_in_epoch + 1));
          }
        }
      } catch (...) {
        std::lock_guard lock(error_mutex_);
        if (!error_) {
          error_ = std::current_exception();
          error_step_ = world_.step_index();
          error_block_ = block;
        }
        aborted_.store(true, std::memory_order_release);
      }
    }
    phases_done_[block].store(phase + 1, std::memory_order_release);
    const bool skip = fault_ && phase == fault_->skip_after_phase;
    if (!skip) {
      const auto start = Clock::now();
      barrier_->arrive_and_wait();
      wait_ns_[block] += elapsed_ns(start);
    }
    ++phase;
  };

  for (std::size_t s = 0; s < steps; ++s) {
    step_in_epoch = s;
    if (block == 0 && !aborted_.load(std::memory_order_acquire)) drain_commands();
    run(Phase::kBeginStep, true);
    for (const auto& p : world_.step_phases()) run(p.phase, p.single);
  }
}

}  // namespace corde
