#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "corde/engine.hpp"
#include "corde/scene.hpp"

namespace corde {

struct ServiceOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  std::size_t stride = 1;
  bool include_frames = false;
  double frame_rate = 60.0;  // state frames per second per client
  /// Clients allowed to steer at once. With 2, each controller owns the points it grabs.
  std::size_t max_controllers = 1;
  /// Minimum wall time per time-step; dt gives real-time stepping, 0 runs flat out.
  std::optional<std::chrono::nanoseconds> step_pacing;
  std::optional<std::filesystem::path> session_log;
};

/// Runs a scene continuously and exposes it over WebSocket (JSON messages) plus two
/// HTTP routes: GET /mesh.obj and GET /scene.json.
class SimService {
 public:
  SimService(SceneConfig scene, ServiceOptions options);
  ~SimService();
  SimService(const SimService&) = delete;
  SimService& operator=(const SimService&) = delete;

  /// Binds the listening socket (throws std::runtime_error on failure) and starts the
  /// network and stepping threads.
  void start();
  /// Stops stepping, closes connections and writes the session log's end record.
  void stop();
  /// Blocks until stop() is called from another thread or the engine fails.
  void wait();

  unsigned short port() const;
  std::uint64_t step_index() const;
  /// Final configuration checksum written at stop(); 0 before.
  double final_checksum() const;
  /// Engine state; only valid after stop().
  const World& world() const;
  /// Non-empty if the stepping thread stopped because of an engine error.
  std::string failure() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace corde
