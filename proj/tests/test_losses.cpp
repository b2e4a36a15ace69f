#include <doctest.h>

#include <cmath>

#include "conseg/losses.hpp"
#include "conseg/rng.hpp"
#include "oracles.hpp"

using namespace conseg;

TEST_SUITE_BEGIN("losses");

namespace {

// Hand-built trace with just the fields the losses read.
ForwardTrace bare_trace(std::size_t n_queries, std::size_t n_classes, std::size_t n_pixels,
                        std::size_t s_layers, std::size_t dim) {
  ForwardTrace t;
  t.n_queries = n_queries;
  t.n_classes = n_classes;
  t.n_pixels = n_pixels;
  t.dim = dim;
  t.h = 1;
  t.w = n_pixels;
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    t.head_classes.push_back(ClassId{c, ClassKind::thing});
  }
  t.prob = Mat(n_queries, n_classes + 1, 1.0 / static_cast<double>(n_classes + 1));
  t.mask = Mat(n_queries, n_pixels, 0.5);
  t.layers.resize(s_layers);
  for (LayerTrace& lt : t.layers) lt.out = Mat(n_queries, dim);
  return t;
}

AssignmentResult assignment_of(const ForwardTrace& t, const std::vector<std::size_t>& sigma,
                               const std::vector<Segment>& labels) {
  AssignmentResult r;
  r.assigned_label = sigma;
  r.target_onehot = Mat(t.n_queries, t.n_classes + 1);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (sigma[i] == kNoMatch) {
      r.target_onehot(i, t.n_classes) = 1.0;
    } else {
      r.target_onehot(i, t.column_of(labels[sigma[i]].cls.id)) = 1.0;
      r.matches.emplace_back(i, sigma[i]);
    }
  }
  return r;
}

Segment label_of(std::uint32_t cls, std::size_t n_pixels,
                 std::initializer_list<std::size_t> cells) {
  Segment s;
  s.cls = ClassId{cls, ClassKind::thing};
  s.mask = Mask(1, n_pixels);
  for (std::size_t c : cells) s.mask.cells[c] = 1;
  return s;
}

}  // namespace

TEST_CASE("backtrace_past picks exactly the past-labeled queries") {
  ForwardTrace t = bare_trace(6, 4, 4, 1, 2);
  const std::vector<Segment> labels = {
      label_of(0, 4, {0}), label_of(3, 4, {1}), label_of(1, 4, {2}),
      label_of(2, 4, {3}), label_of(0, 4, {1, 2})};
  const std::set<std::uint32_t> past = {0, 1};

  SUBCASE("no past labels") {
    const auto as = assignment_of(t, {1, 3, kNoMatch, kNoMatch, kNoMatch, kNoMatch},
                                  labels);
    CHECK(backtrace_past(as, labels, past).empty());
  }
  SUBCASE("single past label") {
    const auto as = assignment_of(t, {kNoMatch, kNoMatch, kNoMatch, kNoMatch, 0, kNoMatch},
                                  labels);
    CHECK(backtrace_past(as, labels, past) == std::vector<std::size_t>{4});
  }
  SUBCASE("mixed batch enumeration") {
    // labels 0, 2, 4 are past (classes 0,1,0); 1, 3 are new (classes 3,2)
    const auto as = assignment_of(t, {0, 1, 2, 3, 4, kNoMatch}, labels);
    const auto e = backtrace_past(as, labels, past);
    CHECK(e == std::vector<std::size_t>{0, 2, 4});
    std::size_t expected = 0;
    for (std::size_t i = 0; i < as.n_queries(); ++i) {
      if (as.assigned_label[i] != kNoMatch && past.count(labels[as.assigned_label[i]].cls.id)) {
        ++expected;
      }
    }
    CHECK(e.size() == expected);
  }
}

TEST_CASE("distillation loss value and conventions") {
  ForwardTrace cur = bare_trace(3, 2, 4, 1, 2);
  ForwardTrace ref = bare_trace(3, 2, 4, 1, 2);

  SUBCASE("identical traces give zero") {
    cur.layers[0].out(1, 0) = 0.7;
    ref.layers[0].out(1, 0) = 0.7;
    const std::vector<std::size_t> e = {1};
    CHECK(distillation_loss(cur, ref, e).value == 0.0);
  }
  SUBCASE("empty selection gives zero with zero gradient") {
    cur.layers[0].out(0, 0) = 5.0;
    const LossValue l = distillation_loss(cur, ref, {});
    CHECK(l.value == 0.0);
    CHECK(l.grads.d_query_features.empty());
  }
  SUBCASE("single layer, one query, channels (1,2) vs (1,4)") {
    cur.layers[0].out(0, 0) = 1.0;
    cur.layers[0].out(0, 1) = 2.0;
    ref.layers[0].out(0, 0) = 1.0;
    ref.layers[0].out(0, 1) = 4.0;
    const std::vector<std::size_t> e = {0};
    CHECK(distillation_loss(cur, ref, e).value == doctest::Approx(2.0));
  }
}

TEST_CASE("distillation gradient is exactly zero outside the selected rows") {
  Rng rng(3);
  ForwardTrace cur = bare_trace(5, 2, 4, 3, 4);
  ForwardTrace ref = bare_trace(5, 2, 4, 3, 4);
  for (LayerTrace& lt : cur.layers) lt.out = oracle::random_mat(rng, 5, 4);
  for (LayerTrace& lt : ref.layers) lt.out = oracle::random_mat(rng, 5, 4);
  const std::vector<std::size_t> e = {1, 3};
  const LossValue l = distillation_loss(cur, ref, e);
  REQUIRE(l.grads.d_query_features.size() == 3);
  for (const Mat& g : l.grads.d_query_features) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t c = 0; c < 4; ++c) {
        if (i == 1 || i == 3) continue;
        CHECK(g(i, c) == 0.0);
      }
    }
  }
  // selected rows are generically nonzero
  CHECK(std::fabs(l.grads.d_query_features[0](1, 0)) > 0.0);
}

TEST_CASE("bag1 skips no-object queries entirely") {
  ForwardTrace t = bare_trace(4, 3, 2, 1, 2);
  const std::vector<Segment> labels = {label_of(1, 2, {0})};

  SUBCASE("all no-object gives zero") {
    const auto as = assignment_of(t, {kNoMatch, kNoMatch, kNoMatch, kNoMatch}, labels);
    const LossValue l = bag1_loss(as, t);
    CHECK(l.value == 0.0);
    for (double g : l.grads.d_prob.data()) CHECK(g == 0.0);
  }
  SUBCASE("perfect prediction gives zero") {
    t.prob(2, 1) = 1.0;
    const auto as = assignment_of(t, {kNoMatch, kNoMatch, 0, kNoMatch}, labels);
    CHECK(bag1_loss(as, t).value == doctest::Approx(0.0));
  }
  SUBCASE("half-confidence matched query, two queries") {
    ForwardTrace t2 = bare_trace(2, 3, 2, 1, 2);
    t2.prob(0, 1) = 0.5;
    const auto as = assignment_of(t2, {0, kNoMatch}, labels);
    const LossValue l = bag1_loss(as, t2);
    CHECK(l.value == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
    CHECK(l.value == doctest::Approx(0.3466).epsilon(1e-3));
    // no gradient toward or away from the no-object column
    for (std::size_t i = 0; i < 2; ++i) CHECK(l.grads.d_prob(i, 3) == 0.0);
  }
}

TEST_CASE("bag2 weighting identities") {
  SUBCASE("weight is (replay+regular)/regular") {
    CHECK(no_object_weight({6, 4}) == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(no_object_weight({6, 4}) == 2.5);  // exact in floating point
    CHECK(no_object_weight({0, 7}) == 1.0);
    CHECK(no_object_weight({3, 0}) == 0.0);
  }
  SUBCASE("single no-object query at p=0.5 with counts (1,1)") {
    ForwardTrace t = bare_trace(1, 1, 2, 1, 2);
    t.prob(0, 1) = 0.5;
    const auto as = assignment_of(t, {kNoMatch}, {});
    const LossValue l = bag2_loss(as, t, {1, 1});
    CHECK(l.value == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(l.value == doctest::Approx(1.3863).epsilon(1e-3));
  }
  SUBCASE("without replay queries bag2 is plain cross-entropy to machine precision") {
    Rng rng(17);
    ForwardTrace t = bare_trace(5, 3, 2, 1, 2);
    for (std::size_t i = 0; i < 5; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        t.prob(i, j) = rng.uniform(0.01, 1.0);
        sum += t.prob(i, j);
      }
      for (std::size_t j = 0; j < 4; ++j) t.prob(i, j) /= sum;
    }
    const std::vector<Segment> labels = {label_of(0, 2, {0}), label_of(2, 2, {1})};
    const auto as = assignment_of(t, {0, kNoMatch, 1, kNoMatch, kNoMatch}, labels);
    const LossValue l = bag2_loss(as, t, {0, 3});

    double ce = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        if (as.target_onehot(i, j) == 1.0) ce -= std::log(t.prob(i, j));
      }
    }
    ce /= 5.0;
    CHECK(std::fabs(l.value - ce) < 1e-12);
  }
  SUBCASE("total weight mass on no-object queries equals replay+regular") {
    const NoObjectCounts counts{5, 3};
    CHECK(no_object_weight(counts) * static_cast<double>(counts.regular) ==
          static_cast<double>(counts.replay + counts.regular));
  }
}

TEST_CASE("count_no_object partitions by sample kind") {
  ForwardTrace t = bare_trace(10, 6, 2, 1, 2);
  std::vector<Segment> labels;
  for (std::uint32_t c = 0; c < 5; ++c) labels.push_back(label_of(c, 2, {0}));

  // replay sample with 3 of 10 matched contributes 7
  std::vector<std::size_t> sigma_replay(10, kNoMatch);
  sigma_replay[0] = 0;
  sigma_replay[4] = 1;
  sigma_replay[9] = 2;
  // regular sample with 5 of 10 matched contributes 5
  std::vector<std::size_t> sigma_regular(10, kNoMatch);
  for (std::size_t i = 0; i < 5; ++i) sigma_regular[i] = i;

  const AssignmentResult a_replay = assignment_of(t, sigma_replay, labels);
  const AssignmentResult a_regular = assignment_of(t, sigma_regular, labels);
  const std::vector<AssignmentResult> assignments = {a_replay, a_regular};
  const std::vector<SampleKind> kinds = {SampleKind::replay, SampleKind::regular};
  const NoObjectCounts counts = count_no_object(assignments, kinds);
  CHECK(counts.replay == 7);
  CHECK(counts.regular == 5);

  const NoObjectCounts empty = count_no_object(std::span<const AssignmentResult>{},
                                               std::span<const SampleKind>{});
  CHECK(empty.replay == 0);
  CHECK(empty.regular == 0);
}

TEST_CASE("mask loss on crafted cases") {
  SUBCASE("near-perfect prediction is near zero") {
    ForwardTrace t = bare_trace(1, 1, 4, 1, 2);
    const Segment label = label_of(0, 4, {0, 1});
    t.mask(0, 0) = t.mask(0, 1) = 1.0 - 1e-12;
    t.mask(0, 2) = t.mask(0, 3) = 1e-12;
    const auto as = assignment_of(t, {0}, {label});
    CHECK(mask_loss(t, as, {label}).value == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("uniform 0.5 prediction has bce log 2 per cell") {
    ForwardTrace t = bare_trace(1, 1, 4, 1, 2);
    const Segment label = label_of(0, 4, {0, 1});
    const auto as = assignment_of(t, {0}, {label});
    const double dice = 1.0 - (2.0 * 1.0 + 1.0) / (2.0 + 2.0 + 1.0);
    CHECK(mask_loss(t, as, {label}).value ==
          doctest::Approx(std::log(2.0) + dice).epsilon(1e-12));
  }
  SUBCASE("2x2 hand case matches independent arithmetic") {
    ForwardTrace t = bare_trace(1, 1, 4, 1, 2);
    t.mask(0, 0) = 0.8;
    t.mask(0, 1) = 0.3;
    t.mask(0, 2) = 0.6;
    t.mask(0, 3) = 0.1;
    const Segment label = label_of(0, 4, {0, 2});
    const auto as = assignment_of(t, {0}, {label});
    const double bce =
        -(std::log(0.8) + std::log(1.0 - 0.3) + std::log(0.6) + std::log(1.0 - 0.1)) / 4.0;
    const double inter = 0.8 + 0.6;
    const double psum = 0.8 + 0.3 + 0.6 + 0.1;
    const double dice = 1.0 - (2.0 * inter + 1.0) / (psum + 2.0 + 1.0);
    CHECK(mask_loss(t, as, {label}).value == doctest::Approx(bce + dice).epsilon(1e-12));
  }
  SUBCASE("nothing matched gives zero") {
    ForwardTrace t = bare_trace(2, 1, 4, 1, 2);
    const auto as = assignment_of(t, {kNoMatch, kNoMatch}, {});
    CHECK(mask_loss(t, as, {}).value == 0.0);
  }
}

TEST_CASE("total loss weighting and linearity") {
  const LossWeights w;
  CHECK(total_loss(1, 1, 1, 1, w) == doctest::Approx(14.0));
  CHECK(total_loss(0, 0, 0, 0, w) == 0.0);
  LossWeights no_dist = w;
  no_dist.gamma = 0.0;
  CHECK(total_loss(0.3, 0.4, 0.5, 123.0, no_dist) ==
        doctest::Approx(total_loss(0.3, 0.4, 0.5, 0.0, w)));
  // linear in each component
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const double a = rng.uniform(0, 1), b = rng.uniform(0, 1), c = rng.uniform(0, 1),
                 d = rng.uniform(0, 1);
    CHECK(total_loss(2 * a, b, c, d, w) - total_loss(a, b, c, d, w) ==
          doctest::Approx(w.alpha * a).epsilon(1e-12));
    CHECK(total_loss(a, b, 2 * c, d, w) - total_loss(a, b, c, d, w) ==
          doctest::Approx(w.beta * c).epsilon(1e-12));
  }
  CHECK_THROWS_AS(total_loss(std::numeric_limits<double>::quiet_NaN(), 0, 0, 0, w),
                  NumericError);
}

TEST_CASE("loss gradients match finite differences on random instances") {
  Rng rng(2718);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    ForwardTrace t = bare_trace(4, 3, 6, 2, 3);
    for (double& v : t.prob.data()) v = rng.uniform(0.05, 0.95);
    for (double& v : t.mask.data()) v = rng.uniform(0.05, 0.95);
    for (LayerTrace& lt : t.layers) lt.out = oracle::random_mat(rng, 4, 3);
    ForwardTrace frozen = bare_trace(4, 3, 6, 2, 3);
    for (LayerTrace& lt : frozen.layers) lt.out = oracle::random_mat(rng, 4, 3);

    const std::vector<Segment> labels = {label_of(0, 6, {0, 1, 2}), label_of(2, 6, {3, 4})};
    const auto as = assignment_of(t, {1, kNoMatch, 0, kNoMatch}, labels);
    const NoObjectCounts counts{2, 3};
    const std::vector<std::size_t> e_past = {0, 2};

    SUBCASE("bag1 w.r.t. probabilities") {
      const LossValue l = bag1_loss(as, t);
      for (std::size_t idx = 0; idx < t.prob.data().size(); ++idx) {
        const double saved = t.prob.data()[idx];
        t.prob.data()[idx] = saved + h;
        const double up = bag1_loss(as, t).value;
        t.prob.data()[idx] = saved - h;
        const double down = bag1_loss(as, t).value;
        t.prob.data()[idx] = saved;
        CHECK(oracle::rel_err(l.grads.d_prob.data()[idx], (up - down) / (2 * h)) < 1e-4);
      }
    }
    SUBCASE("bag2 w.r.t. probabilities") {
      const LossValue l = bag2_loss(as, t, counts);
      for (std::size_t idx = 0; idx < t.prob.data().size(); ++idx) {
        const double saved = t.prob.data()[idx];
        t.prob.data()[idx] = saved + h;
        const double up = bag2_loss(as, t, counts).value;
        t.prob.data()[idx] = saved - h;
        const double down = bag2_loss(as, t, counts).value;
        t.prob.data()[idx] = saved;
        CHECK(oracle::rel_err(l.grads.d_prob.data()[idx], (up - down) / (2 * h)) < 1e-4);
      }
    }
    SUBCASE("mask loss w.r.t. mask values") {
      const LossValue l = mask_loss(t, as, labels);
      for (std::size_t idx = 0; idx < t.mask.data().size(); ++idx) {
        const double saved = t.mask.data()[idx];
        t.mask.data()[idx] = saved + h;
        const double up = mask_loss(t, as, labels).value;
        t.mask.data()[idx] = saved - h;
        const double down = mask_loss(t, as, labels).value;
        t.mask.data()[idx] = saved;
        CHECK(oracle::rel_err(l.grads.d_mask.data()[idx], (up - down) / (2 * h)) < 1e-4);
      }
    }
    SUBCASE("distillation w.r.t. current features") {
      const LossValue l = distillation_loss(t, frozen, e_past);
      for (std::size_t s = 0; s < t.layers.size(); ++s) {
        for (std::size_t idx = 0; idx < t.layers[s].out.data().size(); ++idx) {
          const double saved = t.layers[s].out.data()[idx];
          t.layers[s].out.data()[idx] = saved + h;
          const double up = distillation_loss(t, frozen, e_past).value;
          t.layers[s].out.data()[idx] = saved - h;
          const double down = distillation_loss(t, frozen, e_past).value;
          t.layers[s].out.data()[idx] = saved;
          CHECK(oracle::rel_err(l.grads.d_query_features[s].data()[idx],
                                (up - down) / (2 * h)) < 1e-4);
        }
      }
    }
  }
}

TEST_SUITE_END();
