#include "conseg/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace conseg {

namespace {

struct IouParts {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;
  double value() const {
    return union_ == 0 ? 0.0 : static_cast<double>(intersection) / static_cast<double>(union_);
  }
};

IouParts mask_iou(const Mask& a, const Mask& b) {
  if (a.h != b.h || a.w != b.w) throw ConfigError("iou: mask dimensions differ");
  IouParts out;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    const bool pa = a.cells[i] != 0, pb = b.cells[i] != 0;
    out.intersection += (pa && pb) ? 1 : 0;
    out.union_ += (pa || pb) ? 1 : 0;
  }
  return out;
}

// Union of predicted segments per stuff class; thing segments pass through.
std::vector<Segment> union_stuff(const std::vector<Segment>& preds) {
  std::vector<Segment> out;
  std::map<std::uint32_t, std::size_t> stuff_slot;
  for (const Segment& seg : preds) {
    if (seg.cls.kind != ClassKind::stuff) {
      out.push_back(seg);
      continue;
    }
    auto it = stuff_slot.find(seg.cls.id);
    if (it == stuff_slot.end()) {
      stuff_slot[seg.cls.id] = out.size();
      out.push_back(seg);
    } else {
      Mask& m = out[it->second].mask;
      for (std::size_t i = 0; i < m.cells.size(); ++i) {
        if (seg.mask.cells[i]) m.cells[i] = 1;
      }
    }
  }
  return out;
}

}  // namespace

void MetricAccumulator::add_image(const std::vector<Segment>& preds,
                                  const std::vector<Segment>& gts) {
  for (const Segment& p : preds) {
    for (const Segment& g : gts) {
      if (p.mask.h != g.mask.h || p.mask.w != g.mask.w) {
        throw ConfigError("metrics: prediction/ground-truth dimensions differ");
      }
    }
  }
  const std::vector<Segment> merged = union_stuff(preds);

  // Group by class.
  std::map<std::uint32_t, std::vector<const Segment*>> preds_by, gts_by;
  for (const Segment& p : merged) preds_by[p.cls.id].push_back(&p);
  for (const Segment& g : gts) gts_by[g.cls.id].push_back(&g);

  std::set<std::uint32_t> class_ids;
  for (const auto& [id, v] : preds_by) class_ids.insert(id);
  for (const auto& [id, v] : gts_by) class_ids.insert(id);

  for (std::uint32_t cid : class_ids) {
    const auto& cp = preds_by[cid];
    const auto& cg = gts_by[cid];

    // Semantic IoU accumulators: union of predictions vs union of gts.
    std::int64_t inter = 0, uni = 0;
    if (!cp.empty() || !cg.empty()) {
      const Segment* any = cp.empty() ? cg.front() : cp.front();
      const std::size_t cells = any->mask.cells.size();
      for (std::size_t i = 0; i < cells; ++i) {
        bool in_pred = false, in_gt = false;
        for (const Segment* p : cp) in_pred = in_pred || p->mask.cells[i];
        for (const Segment* g : cg) in_gt = in_gt || g->mask.cells[i];
        inter += (in_pred && in_gt) ? 1 : 0;
        uni += (in_pred || in_gt) ? 1 : 0;
      }
    }
    iou_[cid].intersection += inter;
    iou_[cid].union_ += uni;

    // PQ matching at IoU > 0.5. Uniqueness is a theorem for disjoint
    // segments; a double match means the inputs were invalid.
    std::vector<char> gt_matched(cg.size(), 0), pred_matched(cp.size(), 0);
    PqStats& stats = pq_[cid];
    for (std::size_t pi = 0; pi < cp.size(); ++pi) {
      for (std::size_t gi = 0; gi < cg.size(); ++gi) {
        const double v = mask_iou(cp[pi]->mask, cg[gi]->mask).value();
        if (v > 0.5) {
          if (pred_matched[pi] || gt_matched[gi]) {
            throw std::logic_error("panoptic matching: non-unique match above IoU 0.5");
          }
          pred_matched[pi] = 1;
          gt_matched[gi] = 1;
          stats.iou_sum += v;
          stats.tp += 1;
        }
      }
    }
    for (char m : pred_matched) stats.fp += m ? 0 : 1;
    for (char m : gt_matched) stats.fn += m ? 0 : 1;
  }
}

std::map<std::uint32_t, double> MetricAccumulator::class_pq() const {
  std::map<std::uint32_t, double> out;
  for (const auto& [cid, s] : pq_) {
    const double denom = static_cast<double>(s.tp) + 0.5 * static_cast<double>(s.fp) +
                         0.5 * static_cast<double>(s.fn);
    if (denom > 0.0) out[cid] = s.iou_sum / denom;
  }
  return out;
}

std::map<std::uint32_t, double> MetricAccumulator::class_iou() const {
  std::map<std::uint32_t, double> out;
  for (const auto& [cid, s] : iou_) {
    if (s.union_ > 0) {
      out[cid] = static_cast<double>(s.intersection) / static_cast<double>(s.union_);
    }
  }
  return out;
}

namespace {

PqResult finalize(const std::map<std::uint32_t, double>& per_class) {
  PqResult res;
  res.per_class = per_class;
  if (!per_class.empty()) {
    double sum = 0.0;
    for (const auto& [cid, v] : per_class) sum += v;
    res.mean = sum / static_cast<double>(per_class.size());
  }
  return res;
}

}  // namespace

PqResult panoptic_quality(const std::vector<Segment>& preds, const std::vector<Segment>& gts) {
  MetricAccumulator acc;
  acc.add_image(preds, gts);
  return finalize(acc.class_pq());
}

PqResult miou(const std::vector<Segment>& preds, const std::vector<Segment>& gts) {
  MetricAccumulator acc;
  acc.add_image(preds, gts);
  return finalize(acc.class_iou());
}

std::vector<Segment> resolve_overlaps(const std::vector<PredictedSegment>& preds, std::size_t h,
                                      std::size_t w) {
  // Owner of each pixel: index into preds of the best-confidence claimant.
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&preds](std::size_t a, std::size_t b) {
    if (preds[a].confidence != preds[b].confidence) {
      return preds[a].confidence > preds[b].confidence;
    }
    return preds[a].query < preds[b].query;
  });

  std::vector<char> owned(h * w, 0);
  std::vector<Segment> out;
  for (std::size_t idx : order) {
    const PredictedSegment& p = preds[idx];
    Segment seg;
    seg.cls = p.segment.cls;
    seg.mask = Mask(h, w);
    bool any = false;
    for (std::size_t i = 0; i < p.segment.mask.cells.size(); ++i) {
      if (p.segment.mask.cells[i] && !owned[i]) {
        owned[i] = 1;
        seg.mask.cells[i] = 1;
        any = true;
      }
    }
    if (any) out.push_back(std::move(seg));
  }
  return out;
}

MetricReport continual_aggregate(const std::map<std::uint32_t, double>& class_pq,
                                 const std::map<std::uint32_t, double>& class_iou,
                                 const Task& task, int step,
                                 const std::vector<double>& all_pq_history) {
  MetricReport report;
  report.step = step;
  report.per_class_pq = class_pq;
  report.per_class_iou = class_iou;

  const auto base_ids = task.id_set_at(1);
  auto mean_over = [](const std::map<std::uint32_t, double>& scores,
                      const std::set<std::uint32_t>& ids) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [cid, v] : scores) {
      if (ids.count(cid)) {
        sum += v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };

  std::set<std::uint32_t> inc_ids;
  for (int t = 2; t <= step; ++t) {
    const auto ids = task.id_set_at(t);
    inc_ids.insert(ids.begin(), ids.end());
  }
  std::set<std::uint32_t> all_ids = task.id_set_up_to(step);

  report.base_pq = mean_over(class_pq, base_ids).value_or(0.0);
  report.inc_pq = mean_over(class_pq, inc_ids);
  report.all_pq = mean_over(class_pq, all_ids).value_or(0.0);
  report.base_iou = mean_over(class_iou, base_ids).value_or(0.0);
  report.inc_iou = mean_over(class_iou, inc_ids);
  report.all_iou = mean_over(class_iou, all_ids).value_or(0.0);

  double avg = report.all_pq;
  for (double past : all_pq_history) avg += past;
  report.avg_pq = avg / static_cast<double>(all_pq_history.size() + 1);
  return report;
}

}  // namespace conseg
