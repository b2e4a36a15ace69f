#pragma once

#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "conseg/mat.hpp"
#include "conseg/model.hpp"
#include "conseg/types.hpp"

namespace conseg {

// Sentinel for "no object" entries in an assignment vector. It sorts after
// every real column index, so lexicographic tie-breaking prefers matching
// earlier rows.
inline constexpr std::size_t kNoMatch = std::numeric_limits<std::size_t>::max();

// Query→label assignment with no-object padding.
struct AssignmentResult {
  std::vector<std::size_t> assigned_label;  // per query; kNoMatch = no object
  Mat target_onehot;                        // n_queries×(K+1) reordered one-hot targets
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (query, label)

  bool is_matched(std::size_t query) const { return assigned_label[query] != kNoMatch; }
  std::size_t n_queries() const { return assigned_label.size(); }
};

// Minimum-cost injective assignment covering min(n, m) pairs. Returns one
// column (or kNoMatch) per row. Among cost-optimal assignments the
// lexicographically smallest assignment vector wins.
std::vector<std::size_t> hungarian(const Mat& cost);

// Matching cost between query i's prediction and a candidate label:
// −class_weight·p(class) + mask_weight·(bce + dice).
double match_cost(const ForwardTrace& trace, std::size_t query, const Segment& label,
                  double class_weight = 2.0, double mask_weight = 5.0);

AssignmentResult assign_labels(const ForwardTrace& trace, const std::vector<Segment>& labels,
                               double class_weight = 2.0, double mask_weight = 5.0);

// Appends confident predictions of the frozen previous model to the
// current annotations. Pixels already covered by current ground truth are
// cleared from a pseudo mask before its area test.
std::vector<Segment> merge_pseudo_labels(const std::vector<Segment>& current_gt,
                                         const std::vector<PredictedSegment>& prev_predictions,
                                         double confidence_threshold, std::size_t min_area);

}  // namespace conseg
