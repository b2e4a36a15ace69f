#pragma once

#include <cstdint>
#include <map>

#include "conseg/types.hpp"

namespace conseg {

// Basis used when counting class occurrences in a sample. The segment
// basis is the default for replay selection; image/pixel exist for the
// ablation axis.
enum class CountBasis { segment, image, pixel };

CountBasis parse_count_basis(const std::string& s);
std::string to_string(CountBasis basis);

// Ordered map keyed by class id so every iteration (and serialization) is
// deterministic.
using ClassCounts = std::map<std::uint32_t, std::int64_t>;

// Normalized per-class frequency vector. An empty weights map is the
// all-zero distribution (degenerate but valid: its L1 discrepancy to any
// proper distribution is 1).
struct ClassDistribution {
  std::map<std::uint32_t, double> weights;

  double at(std::uint32_t id) const {
    auto it = weights.find(id);
    return it == weights.end() ? 0.0 : it->second;
  }
  bool is_zero() const { return weights.empty(); }
};

// Per-class occurrence counts of one sample. Segment basis counts one per
// segment except stuff classes cap at 1 per image; image basis counts
// presence; pixel basis counts true mask cells.
ClassCounts segment_counts(const Sample& sample, CountBasis basis);

void add_counts(ClassCounts& into, const ClassCounts& from);

// count / total per class; zero-count entries are dropped. All-zero or
// empty input yields the all-zero distribution.
ClassDistribution make_distribution(const ClassCounts& counts);

// Σ_c |a(c) − b(c)| over the union of supports; in [0, 2] for proper
// distributions.
double l1_discrepancy(const ClassDistribution& a, const ClassDistribution& b);

}  // namespace conseg
