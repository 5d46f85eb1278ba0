#pragma once

#include <cstdint>
#include <ostream>

namespace lfc {

struct SelftestOptions {
  std::uint64_t seed = 1;
  bool inject_gradient_bug = false;
};

// Runs the built-in oracle suites (representation round trips, gradient
// checks, coder and codec round trips, BD metrics), printing one line per
// suite with its timing. Returns the number of failed suites.
int run_selftest(std::ostream& out, const SelftestOptions& options);

}  // namespace lfc
