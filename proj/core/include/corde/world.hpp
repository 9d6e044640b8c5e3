#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "corde/collision.hpp"
#include "corde/command.hpp"
#include "corde/constraints.hpp"
#include "corde/rod.hpp"

namespace corde {

struct WorldConfig {
  Vec3 gravity = Vec3(0, -9.81, 0);
  double dt = 1e-4;
  SolverConfig solver;
  bool self_collision = false;
  SelfCollisionConfig self;
  /// Runs the AABB broad phase once per epoch with inflated query spheres and reuses the
  /// candidates for the remaining steps of the epoch.
  bool broadphase_once_per_epoch = false;
  double broadphase_margin = 2e-3;
};

/// Scripted insertion: points behind the entry plane are held on the entry axis and move
/// with the driver; they are released once they cross it.
struct InsertionDriver {
  bool enabled = false;
  Vec3 entry = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  double depth = 0;          // how far the tip is past the entry [m]
  double velocity = 0;       // [m/s]
  double rotation_rate = 0;  // about the axis [rad/s]
};

struct PointContact {
  bool active = false;
  ContactConstraint contact;
};

/// One block-local phase of a time-step. Phases with `single` set run once over the
/// whole scene; all others run per element range.
enum class Phase : std::uint8_t {
  kBeginStep,
  kPrepareDetect,
  kSelfPairsSegmentTerms,
  kGatherIntegrateVelocity,
  kDistanceEven,
  kDistanceOdd,
  kContacts,
  kSelfContacts,
  kBindingsDependent,
  kBindingsDominantGrabs,
  kIntegratePositions,
  kEndStep,
};

struct PhaseDesc {
  Phase phase;
  bool single;
};

/// Scene state plus the per-phase kernels of one time-step:
///   begin -> drivers, gravity, collision detection -> elastic terms -> velocity update
///   -> constraint sweeps -> position update -> end.
class World {
 public:
  World(std::vector<RodState> rods, std::vector<RodParams> params, WorldConfig config,
        std::shared_ptr<const TriMeshBvh> mesh = nullptr);

  std::size_t num_rods() const { return rods_.size(); }
  /// Total mass points over all rods; the element index space of the block engine.
  std::size_t num_elements() const { return offsets_.back(); }
  std::size_t rod_offset(std::size_t rod) const { return offsets_[rod]; }
  std::size_t global_index(const PointRef& p) const { return offsets_[p.rod] + p.index; }

  std::span<const RodState> rods() const { return rods_; }
  std::span<RodState> rods() { return rods_; }
  std::span<const RodParams> params() const { return params_; }
  std::span<const MassProperties> masses() const { return masses_; }
  const WorldConfig& config() const { return config_; }
  WorldConfig& config() { return config_; }
  const TriMeshBvh* mesh() const { return mesh_.get(); }
  std::uint64_t step_index() const { return step_; }
  double time() const { return time_; }

  void set_driver(std::size_t rod, const InsertionDriver& driver);
  const InsertionDriver& driver(std::size_t rod) const { return drivers_[rod]; }
  /// Throws std::invalid_argument if a point appears in more than one binding.
  void set_bindings(std::vector<BindingConstraint> bindings);
  std::span<const BindingConstraint> bindings() const { return bindings_; }
  std::span<const GrabConstraint> grabs() const { return grabs_; }
  /// Per-rod acceleration added to gravity for free points.
  void set_rod_acceleration(std::size_t rod, const Vec3& a);

  /// Throws std::invalid_argument describing why the command cannot apply.
  void validate_command(const Command& command) const;
  void apply_command(const Command& command);

  /// Phases of one time-step, in order. Depends on the solver iteration count.
  std::vector<PhaseDesc> step_phases() const;
  /// Sets up per-block scratch; `blocks` is 1 for the serial backend.
  void prepare_blocks(std::size_t blocks);
  /// Runs one phase for `block` over global element range [begin, end).
  void run_phase(Phase phase, std::size_t block, std::size_t begin, std::size_t end);
  /// Commands to apply in the next kBeginStep.
  void stage_commands(std::vector<Command> commands) { staged_ = std::move(commands); }
  void set_epoch_start(bool value) { epoch_start_ = value; }
  /// Batch size requested through a set_params command, consumed by the engine.
  std::optional<int> take_requested_batch() {
    auto b = requested_batch_;
    requested_batch_.reset();
    return b;
  }

  /// Runs one full time-step on the calling thread.
  void step();

  std::size_t mesh_contact_count() const;
  std::size_t self_contact_count() const;
  std::size_t stack_high_water() const;
  const std::vector<SelfContact>& self_pairs(std::size_t block) const {
    return blocks_[block].self_pairs;
  }
  std::span<const PointContact> point_contacts(std::size_t rod) const { return contacts_[rod]; }

  ElasticEnergies elastic_energy() const;
  double kinetic_energy() const;
  double max_strain() const;

 private:
  struct BlockScratch {
    QueryScratch query;
    std::vector<SelfContact> self_pairs;
  };

  template <typename Fn>
  void for_each_rod_range(std::size_t begin, std::size_t end, Fn&& fn);

  void begin_step();
  void prepare_detect(std::size_t block, std::size_t begin, std::size_t end);
  void self_pairs_segment_terms(std::size_t block, std::size_t begin, std::size_t end);
  void gather_integrate_velocity(std::size_t begin, std::size_t end);
  void distance_color(unsigned color, std::size_t begin, std::size_t end);
  void contacts(std::size_t begin, std::size_t end);
  void self_contacts();
  void bindings_dependent(std::size_t begin, std::size_t end);
  void bindings_dominant_grabs(std::size_t begin, std::size_t end);
  void integrate_positions_range(std::size_t begin, std::size_t end);

  std::vector<RodState> rods_;
  std::vector<RodParams> params_;
  std::vector<MassProperties> masses_;
  WorldConfig config_;
  std::shared_ptr<const TriMeshBvh> mesh_;
  std::vector<std::size_t> offsets_;

  std::vector<InsertionDriver> drivers_;
  std::vector<Vec3> rod_acceleration_;
  std::vector<BindingConstraint> bindings_;
  std::vector<Vec3> binding_dominant_delta_;
  std::vector<GrabConstraint> grabs_;
  std::vector<Command> staged_;

  std::vector<ForceTorqueBuffer> buffers_;
  std::vector<SegmentTerms> terms_;
  std::vector<std::vector<PointContact>> contacts_;
  std::vector<std::vector<std::vector<std::uint32_t>>> cached_candidates_;
  std::vector<GroupSphere> groups_;
  std::vector<std::size_t> group_first_global_;
  std::vector<BlockScratch> blocks_;

  std::uint64_t step_ = 0;
  double time_ = 0;
  bool epoch_start_ = true;
  std::size_t active_blocks_ = 1;
  std::optional<int> requested_batch_;
  std::vector<std::vector<double>> arc_from_base_;
};

}  // namespace corde
