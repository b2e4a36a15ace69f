#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "conseg/model.hpp"
#include "conseg/types.hpp"

namespace conseg {

// Per-class accumulators merged across images. PQ follows the usual
// convention: same-class pairs with IoU > 0.5 are true positives, and
// classes absent from both predictions and ground truth stay out of the
// aggregate mean.
struct PqStats {
  double iou_sum = 0.0;
  std::int64_t tp = 0, fp = 0, fn = 0;
};

struct IouStats {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;
};

class MetricAccumulator {
 public:
  // Predictions of the same stuff class are unioned into one segment
  // before matching. Throws logic_error if two predictions claim the same
  // ground-truth segment above the IoU threshold (the metric's uniqueness
  // premise; never resolved silently).
  void add_image(const std::vector<Segment>& preds, const std::vector<Segment>& gts);

  std::map<std::uint32_t, double> class_pq() const;
  std::map<std::uint32_t, double> class_iou() const;

 private:
  std::map<std::uint32_t, PqStats> pq_;
  std::map<std::uint32_t, IouStats> iou_;
};

struct PqResult {
  std::map<std::uint32_t, double> per_class;
  double mean = 0.0;  // over classes with any gt or prediction
};

// Single-image convenience wrappers.
PqResult panoptic_quality(const std::vector<Segment>& preds, const std::vector<Segment>& gts);
PqResult miou(const std::vector<Segment>& preds, const std::vector<Segment>& gts);

// Resolves overlapping predictions by per-pixel ownership: the
// highest-confidence segment covering a pixel keeps it (ties to the lower
// query index). Output masks are globally disjoint; empty results are
// dropped.
std::vector<Segment> resolve_overlaps(const std::vector<PredictedSegment>& preds, std::size_t h,
                                      std::size_t w);

struct MetricReport {
  int step = 0;
  std::map<std::uint32_t, double> per_class_pq;
  std::map<std::uint32_t, double> per_class_iou;
  double base_pq = 0.0;                // mean over first-step classes
  std::optional<double> inc_pq;        // mean over later-step classes, absent at step 1
  double all_pq = 0.0;                 // mean over all seen classes
  double avg_pq = 0.0;                 // mean of all_pq over steps so far
  double base_iou = 0.0;
  std::optional<double> inc_iou;
  double all_iou = 0.0;
};

// Splits per-class scores into base / incremental / all means and folds in
// the running history of all-class scores.
MetricReport continual_aggregate(const std::map<std::uint32_t, double>& class_pq,
                                 const std::map<std::uint32_t, double>& class_iou,
                                 const Task& task, int step,
                                 const std::vector<double>& all_pq_history);

}  // namespace conseg
