#include "conseg/matching.hpp"

#include <cmath>

#include "conseg/mask_math.hpp"

namespace conseg {

namespace {

// Minimum total cost of a complete matching of all rows (requires
// rows <= cols). Potentials-based shortest augmenting path; handles
// negative costs.
double complete_matching_value(const Mat& a) {
  const std::size_t n = a.rows(), m = a.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) total += a(p[j] - 1, j - 1);
  }
  return total;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

double assignment_value(const Mat& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  if (a.rows() <= a.cols()) return complete_matching_value(a);
  return complete_matching_value(transpose(a));
}

// Optimal value of the remaining problem: rows [first_row, n) against the
// still-unused columns.
double completion_value(const Mat& cost, std::size_t first_row, const std::vector<char>& used) {
  const std::size_t n = cost.rows(), m = cost.cols();
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < m; ++c) {
    if (!used[c]) cols.push_back(c);
  }
  if (first_row >= n || cols.empty()) return 0.0;
  Mat sub(n - first_row, cols.size());
  for (std::size_t i = first_row; i < n; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) sub(i - first_row, j) = cost(i, cols[j]);
  }
  return assignment_value(sub);
}

}  // namespace

std::vector<std::size_t> hungarian(const Mat& cost) {
  for (double v : cost.data()) {
    if (!std::isfinite(v)) throw ConfigError("hungarian: costs must be finite");
  }
  const std::size_t n = cost.rows(), m = cost.cols();
  std::vector<std::size_t> sigma(n, kNoMatch);
  if (n == 0 || m == 0) return sigma;

  // Fix rows in order to the smallest column that still completes to the
  // optimal total; this yields the lexicographically smallest optimal
  // assignment vector (kNoMatch sorts last).
  const double best = assignment_value(cost);
  const double eps = 1e-9 * std::max(1.0, std::fabs(best));
  std::vector<char> used(m, 0);
  double fixed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t c = 0; c < m && !placed; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      const double rest = completion_value(cost, i + 1, used);
      if (fixed + cost(i, c) + rest <= best + eps) {
        sigma[i] = c;
        fixed += cost(i, c);
        placed = true;
      } else {
        used[c] = 0;
      }
    }
    // No column works: an optimal solution leaves this row unmatched.
  }
  return sigma;
}

double match_cost(const ForwardTrace& trace, std::size_t query, const Segment& label,
                  double class_weight, double mask_weight) {
  const std::size_t col = trace.column_of(label.cls.id);
  const auto pred = trace.mask.row(query);
  const double class_term = -class_weight * trace.prob(query, col);
  const double mask_term = mask_bce(pred, label.mask) + mask_dice(pred, label.mask);
  return class_term + mask_weight * mask_term;
}

AssignmentResult assign_labels(const ForwardTrace& trace, const std::vector<Segment>& labels,
                               double class_weight, double mask_weight) {
  if (labels.size() > trace.n_queries) {
    throw ConfigError("assign_labels: more labels than queries");
  }
  AssignmentResult result;
  result.assigned_label.assign(trace.n_queries, kNoMatch);
  result.target_onehot = Mat(trace.n_queries, trace.n_classes + 1);

  if (!labels.empty()) {
    Mat cost(trace.n_queries, labels.size());
    for (std::size_t i = 0; i < trace.n_queries; ++i) {
      for (std::size_t j = 0; j < labels.size(); ++j) {
        cost(i, j) = match_cost(trace, i, labels[j], class_weight, mask_weight);
      }
    }
    result.assigned_label = hungarian(cost);
  }

  for (std::size_t i = 0; i < trace.n_queries; ++i) {
    const std::size_t j = result.assigned_label[i];
    if (j == kNoMatch) {
      result.target_onehot(i, trace.no_object_column()) = 1.0;
    } else {
      result.target_onehot(i, trace.column_of(labels[j].cls.id)) = 1.0;
      result.matches.emplace_back(i, j);
    }
  }
  return result;
}

std::vector<Segment> merge_pseudo_labels(const std::vector<Segment>& current_gt,
                                         const std::vector<PredictedSegment>& prev_predictions,
                                         double confidence_threshold, std::size_t min_area) {
  std::vector<Segment> out = current_gt;
  for (const PredictedSegment& pred : prev_predictions) {
    if (pred.confidence < confidence_threshold) continue;
    Mask mask = pred.segment.mask;
    // Current annotations are exact; they win any overlap.
    for (const Segment& gt : current_gt) {
      for (std::size_t p = 0; p < mask.cells.size(); ++p) {
        if (gt.mask.cells[p]) mask.cells[p] = 0;
      }
    }
    if (mask.area() < min_area) continue;
    out.push_back(Segment{pred.segment.cls, std::move(mask)});
  }
  return out;
}

}  // namespace conseg
