#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

namespace devae::acceptance {

/// One PASS/FAIL line per criterion plus a tally. Exit status is 0 once every
/// criterion has been evaluated; --strict turns any FAIL into exit status 1.
class Verdicts {
 public:
  void record(int id, bool pass, std::string_view what, const std::string& detail, double seconds) {
    std::printf("criterion %d: %s  %.*s  [%s] (%.1f s)\n", id, pass ? "PASS" : "FAIL", static_cast<int>(what.size()),
                what.data(), detail.c_str(), seconds);
    std::fflush(stdout);
    ++(pass ? passed_ : failed_);
  }

  int finish(bool strict) const {
    std::printf("summary: %d passed, %d failed\n", passed_, failed_);
    return strict && failed_ > 0 ? 1 : 0;
  }

 private:
  int passed_ = 0;
  int failed_ = 0;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

}  // namespace devae::acceptance
