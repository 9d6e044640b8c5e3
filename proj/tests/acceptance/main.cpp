// Runs the acceptance criteria and prints one line per criterion.
//
//   corde_acceptance [--only 1,2,9] [--scenes DIR] [--scratch DIR] [--force-timing]
//
// Exit status: 0 when nothing failed, 1 when something failed, 77 when every selected
// criterion was skipped.

#include <chrono>
#include <cstdio>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "criteria.hpp"

using namespace corde::acceptance;

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string only;
  Context ctx;
  ctx.scenes = CORDE_SCENES_DIR;
  ctx.scratch = std::filesystem::temp_directory_path();
  ctx.hardware_threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_option("--scenes", ctx.scenes, "Directory with the bundled scenes");
  app.add_option("--scratch", ctx.scratch, "Writable directory for session logs");
  app.add_flag("--force-timing", ctx.force_timing, "Run timing criteria regardless of the thread count");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) selected.insert(std::stoi(item));
  }

  int passed = 0, failed = 0, skipped = 0;
  for (const auto& c : all_criteria()) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run(ctx);
    } catch (const std::exception& e) {
      out = {Status::kFail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = out.status == Status::kPass ? "PASS" : (out.status == Status::kFail ? "FAIL" : "SKIP");
    std::printf("[%s] %2d %-26s %s (%.1f s)\n", tag, c.id, c.title.c_str(), out.detail.c_str(), secs);
    std::fflush(stdout);
    passed += out.status == Status::kPass;
    failed += out.status == Status::kFail;
    skipped += out.status == Status::kSkip;
  }
  std::printf("%d passed, %d failed, %d skipped\n", passed, failed, skipped);
  if (failed > 0) return 1;
  if (passed == 0 && skipped > 0) return 77;
  return 0;
}
