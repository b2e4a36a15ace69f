#include <doctest.h>

#include "conseg/metrics.hpp"
#include "conseg/rng.hpp"

using namespace conseg;

TEST_SUITE_BEGIN("metrics");

namespace {

Segment seg(std::uint32_t cls, std::size_t h, std::size_t w,
            std::initializer_list<std::size_t> cells, ClassKind kind = ClassKind::thing) {
  Segment s;
  s.cls = ClassId{cls, kind};
  s.mask = Mask(h, w);
  for (std::size_t c : cells) s.mask.cells[c] = 1;
  return s;
}

}  // namespace

TEST_CASE("panoptic quality on hand-computed cases") {
  SUBCASE("identical prediction scores 1") {
    const Segment gt = seg(0, 4, 4, {0, 1, 4, 5});
    const auto res = panoptic_quality({gt}, {gt});
    CHECK(res.per_class.at(0) == doctest::Approx(1.0));
    CHECK(res.mean == doctest::Approx(1.0));
  }
  SUBCASE("single pair with IoU 0.6") {
    // gt 8 cells, pred 8 cells, intersection 6 -> union 10 -> IoU 0.6
    const Segment gt = seg(0, 4, 4, {0, 1, 2, 3, 4, 5, 6, 7});
    const Segment pred = seg(0, 4, 4, {2, 3, 4, 5, 6, 7, 8, 9});
    const auto res = panoptic_quality({pred}, {gt});
    CHECK(res.per_class.at(0) == doctest::Approx(0.6));
  }
  SUBCASE("disjoint same-class prediction scores 0") {
    const Segment gt = seg(0, 4, 4, {0, 1});
    const Segment pred = seg(0, 4, 4, {14, 15});
    const auto res = panoptic_quality({pred}, {gt});
    CHECK(res.per_class.at(0) == doctest::Approx(0.0));
  }
  SUBCASE("empty predictions against nonempty ground truth score 0") {
    const Segment gt = seg(0, 4, 4, {0, 1});
    const auto res = panoptic_quality({}, {gt});
    CHECK(res.per_class.at(0) == doctest::Approx(0.0));
  }
}

TEST_CASE("a disjoint false positive strictly lowers the class PQ") {
  const Segment gt = seg(0, 4, 4, {0, 1, 2, 3});
  const Segment good = seg(0, 4, 4, {0, 1, 2, 3});
  const Segment fp = seg(0, 4, 4, {12, 13});
  const double clean = panoptic_quality({good}, {gt}).per_class.at(0);
  const double dirty = panoptic_quality({good, fp}, {gt}).per_class.at(0);
  CHECK(dirty < clean);
  CHECK(dirty == doctest::Approx(1.0 / 1.5));
}

TEST_CASE("matching above 0.5 IoU must be unique") {
  const Segment gt = seg(0, 4, 4, {0, 1, 2, 3, 4, 5});
  // two identical overlapping predictions both claim the gt
  const Segment p1 = seg(0, 4, 4, {0, 1, 2, 3, 4, 5});
  const Segment p2 = seg(0, 4, 4, {0, 1, 2, 3, 4, 5});
  MetricAccumulator acc;
  CHECK_THROWS_AS(acc.add_image({p1, p2}, {gt}), std::logic_error);
}

TEST_CASE("uniqueness holds for disjoint predictions by construction") {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    // random disjoint predictions: partition cells among up to 4 segments
    std::vector<Segment> preds;
    std::vector<Segment> gts;
    const std::size_t n_pred = 1 + rng.index(4), n_gt = 1 + rng.index(3);
    for (std::size_t k = 0; k < n_pred; ++k) {
      preds.push_back(seg(static_cast<std::uint32_t>(rng.index(2)), 4, 4, {}));
    }
    for (std::size_t k = 0; k < n_gt; ++k) {
      gts.push_back(seg(static_cast<std::uint32_t>(rng.index(2)), 4, 4, {}));
    }
    for (std::size_t cell = 0; cell < 16; ++cell) {
      const std::size_t owner = rng.index(n_pred + 2);
      if (owner < n_pred) preds[owner].mask.cells[cell] = 1;
      const std::size_t gt_owner = rng.index(n_gt + 2);
      if (gt_owner < n_gt) gts[gt_owner].mask.cells[cell] = 1;
    }
    auto drop_empty = [](std::vector<Segment>& v) {
      std::erase_if(v, [](const Segment& s) { return s.mask.area() == 0; });
    };
    drop_empty(preds);
    drop_empty(gts);
    MetricAccumulator acc;
    CHECK_NOTHROW(acc.add_image(preds, gts));
  }
}

TEST_CASE("stuff predictions are unioned before matching") {
  const Segment gt = seg(7, 4, 4, {0, 1, 2, 3, 4, 5}, ClassKind::stuff);
  // two halves, each alone under the IoU threshold
  const Segment half1 = seg(7, 4, 4, {0, 1, 2}, ClassKind::stuff);
  const Segment half2 = seg(7, 4, 4, {3, 4, 5}, ClassKind::stuff);
  const auto res = panoptic_quality({half1, half2}, {gt});
  CHECK(res.per_class.at(7) == doctest::Approx(1.0));
}

TEST_CASE("miou on crafted cases and permutation invariance") {
  SUBCASE("identical unions give 1, disjoint give 0") {
    const Segment gt = seg(0, 4, 4, {0, 1, 2});
    CHECK(miou({gt}, {gt}).per_class.at(0) == doctest::Approx(1.0));
    const Segment far = seg(0, 4, 4, {13, 14, 15});
    CHECK(miou({far}, {gt}).per_class.at(0) == doctest::Approx(0.0));
  }
  SUBCASE("16-cell masks overlapping on 8 cells give 8/24 = 1/3") {
    const Segment gt = seg(0, 6, 4, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
    const Segment pred =
        seg(0, 6, 4, {8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23});
    CHECK(miou({pred}, {gt}).per_class.at(0) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("segment order does not matter") {
    const Segment a = seg(0, 4, 4, {0, 1});
    const Segment b = seg(0, 4, 4, {4, 5});
    const Segment gt = seg(0, 4, 4, {0, 1, 4});
    CHECK(miou({a, b}, {gt}).per_class.at(0) == miou({b, a}, {gt}).per_class.at(0));
  }
}

TEST_CASE("resolve_overlaps assigns pixels to the most confident claimant") {
  PredictedSegment strong;
  strong.query = 1;
  strong.confidence = 0.9;
  strong.segment = seg(0, 2, 2, {0, 1});
  PredictedSegment weak;
  weak.query = 0;
  weak.confidence = 0.4;
  weak.segment = seg(1, 2, 2, {1, 2});
  const auto resolved = resolve_overlaps({weak, strong}, 2, 2);
  REQUIRE(resolved.size() == 2);
  // strong keeps both its cells; weak loses the contested one
  bool saw_strong = false, saw_weak = false;
  for (const Segment& s : resolved) {
    if (s.cls.id == 0) {
      saw_strong = true;
      CHECK(s.mask.cells == std::vector<std::uint8_t>{1, 1, 0, 0});
    } else {
      saw_weak = true;
      CHECK(s.mask.cells == std::vector<std::uint8_t>{0, 0, 1, 0});
    }
  }
  CHECK(saw_strong);
  CHECK(saw_weak);
}

TEST_CASE("continual aggregation splits base and incremental classes") {
  Task task;
  task.classes = {ClassId{0, ClassKind::thing}, ClassId{1, ClassKind::thing},
                  ClassId{2, ClassKind::thing}};
  task.steps.push_back({1, {task.classes[0], task.classes[1]}});
  task.steps.push_back({2, {task.classes[2]}});

  SUBCASE("base/inc/all means") {
    const std::map<std::uint32_t, double> pq = {{0, 0.5}, {1, 0.7}, {2, 0.3}};
    const MetricReport rep = continual_aggregate(pq, pq, task, 2, {0.5});
    CHECK(rep.base_pq == doctest::Approx(0.6));
    REQUIRE(rep.inc_pq.has_value());
    CHECK(*rep.inc_pq == doctest::Approx(0.3));
    CHECK(rep.all_pq == doctest::Approx(0.5));
    CHECK(rep.avg_pq == doctest::Approx(0.5));
  }
  SUBCASE("step 1 has no incremental bucket and avg equals all") {
    const std::map<std::uint32_t, double> pq = {{0, 0.4}, {1, 0.8}};
    const MetricReport rep = continual_aggregate(pq, pq, task, 1, {});
    CHECK_FALSE(rep.inc_pq.has_value());
    CHECK(rep.all_pq == doctest::Approx(0.6));
    CHECK(rep.avg_pq == doctest::Approx(rep.all_pq));
  }
  SUBCASE("avg averages the all-history") {
    const std::map<std::uint32_t, double> pq = {{0, 0.4}, {1, 0.4}, {2, 0.4}};
    const MetricReport rep = continual_aggregate(pq, pq, task, 2, {0.5});
    CHECK(rep.avg_pq == doctest::Approx(0.45));
  }
}

TEST_SUITE_END();
