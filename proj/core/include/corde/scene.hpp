#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corde/engine.hpp"
#include "corde/tube.hpp"
#include "corde/world.hpp"

namespace corde {

/// Raised for schema violations; the message starts with the offending field path.
class SceneError : public std::runtime_error {
 public:
  SceneError(const std::string& path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class Placement { kLine, kTube };
enum class CouplingMode { kNone, kOneWay, kBidirectional };  // v0, v1, v2

struct InsertionConfig {
  bool enabled = false;
  double velocity = 0.05;    // [m/s]
  double rotation_rate = 0;  // [rad/s]
};

struct RodConfig {
  std::size_t points = 64;
  double length = 0.1;
  RodParams params;
  /// Uniform rest bend/twist strain applied to every frame.
  Vec3 intrinsic_strain = Vec3::Zero();
  Placement placement = Placement::kLine;
  Vec3 origin = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  /// For tube placement: arc length of the tip along the tube centreline.
  double tip_arc = 0;
  bool clamp_base = false;
  bool clamp_tip = false;
  InsertionConfig insertion;
  Vec3 acceleration = Vec3::Zero();
};

struct MeshConfig {
  /// Triangle mesh file, relative paths resolved against the scene file's directory.
  std::optional<std::filesystem::path> path;
  /// Centreline used to place rods and, without `path`, to generate the mesh.
  std::optional<TubeSpec> tube;
};

struct CouplingConfig {
  CouplingMode mode = CouplingMode::kNone;
  std::size_t rod_a = 0;  // dominant side in one-way mode
  std::size_t rod_b = 1;
  std::size_t stride = 1;
};

struct EngineConfig {
  Backend backend = Backend::kSerial;
  std::size_t blocks = 1;
  std::size_t steps_per_epoch = 10;
  std::size_t epochs = 100;
  bool validate_barriers = false;
};

struct SceneConfig {
  std::vector<RodConfig> rods;
  std::optional<MeshConfig> mesh;
  WorldConfig world;
  CouplingConfig coupling;
  EngineConfig engine;
  std::optional<std::filesystem::path> replay;
  std::uint64_t seed = 0;
  /// Amplitude of a seeded random initial velocity [m/s]; 0 disables it.
  double perturbation = 0;
  std::filesystem::path base_dir = ".";

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
  }
};

SceneConfig parse_scene(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
SceneConfig load_scene(const std::filesystem::path& path);
/// Full config with every default filled in; parse_scene(scene_to_json(c)) == c.
nlohmann::json scene_to_json(const SceneConfig& config);

std::string to_string(CouplingMode mode);

/// Loads the mesh (throws std::runtime_error naming the path if it is missing) or
/// generates it from the tube spec.
std::shared_ptr<const TriMeshBvh> build_mesh(const SceneConfig& config);
World build_world(const SceneConfig& config, std::shared_ptr<const TriMeshBvh> mesh = nullptr);
EpochPlan make_plan(const SceneConfig& config);

}  // namespace corde
