#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "conseg/matching.hpp"
#include "conseg/model.hpp"

namespace conseg {

struct LossWeights {
  double alpha = 2.0;  // classification pair
  double beta = 5.0;   // mask loss
  double gamma = 5.0;  // distillation
};

// No-object query counts over a batch, partitioned by sample kind.
struct NoObjectCounts {
  std::int64_t replay = 0;
  std::int64_t regular = 0;
};

// Scalar plus exact gradients w.r.t. the trace outputs it touched.
struct LossValue {
  double value = 0.0;
  TraceGrads grads;
};

// Query indices whose assigned label carries a past class: the lineage to
// retrace for selective distillation.
std::vector<std::size_t> backtrace_past(const AssignmentResult& assignment,
                                        const std::vector<Segment>& labels,
                                        const std::set<std::uint32_t>& past_classes);

// Mean squared difference between current and frozen per-layer query
// features over the selected queries. Gradients flow only into the
// current trace and only into the selected rows.
LossValue distillation_loss(const ForwardTrace& current, const ForwardTrace& frozen,
                            std::span<const std::size_t> past_queries);

// Foreground-only negative log-likelihood (replay samples): no-object
// labeled queries contribute exactly zero.
LossValue bag1_loss(const AssignmentResult& assignment, const ForwardTrace& trace);

double no_object_weight(const NoObjectCounts& counts);

// Regular-image counterpart: matched terms as above plus no-object terms
// up-weighted by (replay+regular)/regular to cancel the bias bag1
// introduces. With regular == 0 the no-object term has no carriers.
LossValue bag2_loss(const AssignmentResult& assignment, const ForwardTrace& trace,
                    const NoObjectCounts& counts);

NoObjectCounts count_no_object(std::span<const AssignmentResult> assignments,
                               std::span<const SampleKind> kinds);

// Mean of bce + dice over matched (query, label) pairs; zero if nothing
// matched.
LossValue mask_loss(const ForwardTrace& trace, const AssignmentResult& assignment,
                    const std::vector<Segment>& labels);

// alpha·(bag1 + bag2) + beta·mask + gamma·dist
double total_loss(double bag1, double bag2, double mask, double dist, const LossWeights& w);

}  // namespace conseg
