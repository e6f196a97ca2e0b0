#pragma once

#include <cstdint>

namespace dim3d {

// Thread-local tally of floating-point multiply/add operations executed by
// the numeric kernels. Transcendentals (exp, log, sqrt, sigmoid) are not
// counted; the analytic cost model excludes them too, so the two sides stay
// comparable. Counting is per kernel invocation with the actual loop trip
// counts, not per scalar instruction.
struct FlopCounter {
  static uint64_t& value() {
    thread_local uint64_t count = 0;
    return count;
  }
  static void add(uint64_t n) { value() += n; }
  static void reset() { value() = 0; }
  static uint64_t read() { return value(); }
};

}  // namespace dim3d
