#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace corde::acceptance {

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status = Status::kFail;
  std::string detail;
};

struct Context {
  std::filesystem::path scenes;
  std::filesystem::path scratch;  // writable directory for session logs
  unsigned hardware_threads = 1;
  /// Run timing criteria even without enough hardware threads (results are informative only).
  bool force_timing = false;
};

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome(const Context&)> run;
};

const std::vector<Criterion>& all_criteria();

}  // namespace corde::acceptance
