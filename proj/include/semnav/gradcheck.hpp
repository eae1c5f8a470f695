#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "semnav/model.hpp"

namespace semnav {

struct GradCheckEntry {
  std::string name;           // parameter tensor
  double max_rel_err = 0.0;   // worst sampled element
  int samples = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;  // one per parameter, name-sorted
  double max_rel_err = 0.0;
  bool pass(double tol = 1e-3) const { return max_rel_err < tol; }
};

// Central-finite-difference audit of the backward pass on a narrow
// (hidden = 8) model driving every parameter group: a full encode with
// masked history and panorama inputs, all three generation heads, the word,
// pairing, and value heads.  A weighted-aggregation model covers the weight
// encoder; a sampled-patch model contributes the patch-position table.
// `corrupt`, when given, runs right after the analytic backward pass (test
// hook for proving the audit catches a broken gradient).
GradCheckReport run_gradcheck(
    std::uint64_t seed, int samples_per_tensor = 4, double fd_step = 1e-4,
    const std::function<void(ParameterStore&)>& corrupt = nullptr);

// One line per parameter plus a verdict footer.
void print_gradcheck(std::ostream& out, const GradCheckReport& report,
                     double tol = 1e-3);

}  // namespace semnav
