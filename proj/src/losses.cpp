#include "conseg/losses.hpp"

#include <cmath>
#include <iostream>

#include "conseg/mask_math.hpp"

namespace conseg {

std::vector<std::size_t> backtrace_past(const AssignmentResult& assignment,
                                        const std::vector<Segment>& labels,
                                        const std::set<std::uint32_t>& past_classes) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.n_queries(); ++i) {
    const std::size_t j = assignment.assigned_label[i];
    if (j == kNoMatch) continue;
    if (past_classes.count(labels[j].cls.id)) out.push_back(i);
  }
  return out;
}

LossValue distillation_loss(const ForwardTrace& current, const ForwardTrace& frozen,
                            std::span<const std::size_t> past_queries) {
  if (current.n_queries != frozen.n_queries || current.dim != frozen.dim ||
      current.layers.size() != frozen.layers.size()) {
    throw ConfigError("distillation_loss: trace shapes differ");
  }
  LossValue loss;
  if (past_queries.empty()) return loss;

  const std::size_t s_count = current.layers.size();
  loss.grads.d_query_features.assign(s_count, Mat(current.n_queries, current.dim));
  const double denom =
      static_cast<double>(s_count) * static_cast<double>(past_queries.size()) *
      static_cast<double>(current.dim);
  double sum = 0.0;
  for (std::size_t s = 1; s <= s_count; ++s) {
    const Mat& cur = current.query_features(s);
    const Mat& ref = frozen.query_features(s);
    Mat& grad = loss.grads.d_query_features[s - 1];
    for (std::size_t i : past_queries) {
      for (std::size_t c = 0; c < current.dim; ++c) {
        const double diff = cur(i, c) - ref(i, c);
        sum += diff * diff;
        grad(i, c) = 2.0 * diff / denom;
      }
    }
  }
  loss.value = sum / denom;
  return loss;
}

LossValue bag1_loss(const AssignmentResult& assignment, const ForwardTrace& trace) {
  LossValue loss;
  loss.grads.d_prob = Mat(trace.n_queries, trace.n_classes + 1);
  const double inv_nq = 1.0 / static_cast<double>(trace.n_queries);
  for (std::size_t i = 0; i < trace.n_queries; ++i) {
    if (!assignment.is_matched(i)) continue;
    const auto target = assignment.target_onehot.row(i);
    for (std::size_t j = 0; j <= trace.n_classes; ++j) {
      if (target[j] == 0.0) continue;
      const double p = trace.prob(i, j);
      loss.value -= inv_nq * clamped_log(p);
      if (p >= kLogClamp) loss.grads.d_prob(i, j) -= inv_nq / p;
    }
  }
  return loss;
}

double no_object_weight(const NoObjectCounts& counts) {
  if (counts.regular == 0) return 0.0;  // no carriers for the no-object term
  return static_cast<double>(counts.replay + counts.regular) /
         static_cast<double>(counts.regular);
}

LossValue bag2_loss(const AssignmentResult& assignment, const ForwardTrace& trace,
                    const NoObjectCounts& counts) {
  if (counts.regular == 0 && counts.replay > 0) {
    std::cerr << "[warn] bag2: batch has replay no-object queries but no regular ones; "
                 "the imbalance persists for this batch\n";
  }
  LossValue loss;
  loss.grads.d_prob = Mat(trace.n_queries, trace.n_classes + 1);
  const double inv_nq = 1.0 / static_cast<double>(trace.n_queries);
  const double w_no = no_object_weight(counts);
  const std::size_t no_col = trace.no_object_column();
  for (std::size_t i = 0; i < trace.n_queries; ++i) {
    if (assignment.is_matched(i)) {
      const auto target = assignment.target_onehot.row(i);
      for (std::size_t j = 0; j <= trace.n_classes; ++j) {
        if (target[j] == 0.0) continue;
        const double p = trace.prob(i, j);
        loss.value -= inv_nq * clamped_log(p);
        if (p >= kLogClamp) loss.grads.d_prob(i, j) -= inv_nq / p;
      }
    } else if (counts.regular > 0) {
      const double p = trace.prob(i, no_col);
      loss.value -= inv_nq * w_no * clamped_log(p);
      if (p >= kLogClamp) loss.grads.d_prob(i, no_col) -= inv_nq * w_no / p;
    }
  }
  return loss;
}

NoObjectCounts count_no_object(std::span<const AssignmentResult> assignments,
                               std::span<const SampleKind> kinds) {
  if (assignments.size() != kinds.size()) {
    throw ConfigError("count_no_object: assignments/kinds size mismatch");
  }
  NoObjectCounts counts;
  for (std::size_t s = 0; s < assignments.size(); ++s) {
    std::int64_t unmatched = 0;
    for (std::size_t i = 0; i < assignments[s].n_queries(); ++i) {
      if (!assignments[s].is_matched(i)) ++unmatched;
    }
    (kinds[s] == SampleKind::replay ? counts.replay : counts.regular) += unmatched;
  }
  return counts;
}

LossValue mask_loss(const ForwardTrace& trace, const AssignmentResult& assignment,
                    const std::vector<Segment>& labels) {
  LossValue loss;
  loss.grads.d_mask = Mat(trace.n_queries, trace.n_pixels);
  if (assignment.matches.empty()) return loss;

  const double inv_m = 1.0 / static_cast<double>(assignment.matches.size());
  for (const auto& [query, label] : assignment.matches) {
    const auto pred = trace.mask.row(query);
    const Mask& target = labels[label].mask;
    loss.value += inv_m * (mask_bce(pred, target) + mask_dice(pred, target));
    auto grad = loss.grads.d_mask.row(query);
    mask_bce_grad(pred, target, inv_m, grad);
    mask_dice_grad(pred, target, inv_m, grad);
  }
  return loss;
}

double total_loss(double bag1, double bag2, double mask, double dist, const LossWeights& w) {
  const double total = w.alpha * (bag1 + bag2) + w.beta * mask + w.gamma * dist;
  if (!std::isfinite(total)) throw NumericError("total_loss: non-finite loss");
  return total;
}

}  // namespace conseg
