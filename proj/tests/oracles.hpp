#pragma once

// Test-only reference implementations, kept independent of the library
// paths they check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "conseg/mat.hpp"
#include "conseg/matching.hpp"
#include "conseg/model.hpp"
#include "conseg/rng.hpp"
#include "conseg/types.hpp"

namespace oracle {

using conseg::kNoMatch;
using conseg::Mat;

// Exhaustive enumeration of injective assignments covering min(n,m) pairs.
// Returns the minimum total cost and, among assignments within tol of it,
// the lexicographically smallest assignment vector (kNoMatch sorts last).
struct BruteForceResult {
  double cost = 0.0;
  std::vector<std::size_t> sigma;
};

inline BruteForceResult brute_force_assignment(const Mat& cost, double tol = 1e-9) {
  const std::size_t n = cost.rows(), m = cost.cols();
  const std::size_t need = std::min(n, m);
  BruteForceResult best;
  best.cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> sigma(n, kNoMatch);
  std::vector<char> used(m, 0);

  auto consider = [&](double total) {
    if (total < best.cost - tol) {
      best.cost = total;
      best.sigma = sigma;
    } else if (total <= best.cost + tol && sigma < best.sigma) {
      best.sigma = sigma;
    }
  };

  auto rec = [&](auto&& self, std::size_t row, std::size_t pairs, double total) -> void {
    if (row == n) {
      if (pairs == need) consider(total);
      return;
    }
    for (std::size_t c = 0; c < m; ++c) {
      if (used[c]) continue;
      used[c] = 1;
      sigma[row] = c;
      self(self, row + 1, pairs + 1, total + cost(row, c));
      sigma[row] = kNoMatch;
      used[c] = 0;
    }
    if (n - row - 1 >= need - pairs) self(self, row + 1, pairs, total);
  };
  rec(rec, 0, 0, 0.0);
  return best;
}

// Mutable views over every parameter matrix of a model, in a fixed order
// matching grad_mats.
inline std::vector<Mat*> param_mats(conseg::ModelState& m) {
  std::vector<Mat*> out{&m.queries};
  for (conseg::AttentionBlock& b : m.blocks) {
    out.push_back(&b.w_query);
    out.push_back(&b.w_key);
    out.push_back(&b.w_value);
    out.push_back(&b.ff1);
    out.push_back(&b.ff2);
  }
  out.push_back(&m.pixel_head);
  out.push_back(&m.mask_head);
  out.push_back(&m.classifier);
  return out;
}

inline std::vector<const Mat*> grad_mats(const conseg::ModelGrads& g) {
  std::vector<const Mat*> out{&g.queries};
  for (const conseg::AttentionBlock& b : g.blocks) {
    out.push_back(&b.w_query);
    out.push_back(&b.w_key);
    out.push_back(&b.w_value);
    out.push_back(&b.ff1);
    out.push_back(&b.ff2);
  }
  out.push_back(&g.pixel_head);
  out.push_back(&g.mask_head);
  out.push_back(&g.classifier);
  return out;
}

// Relative disagreement with a floor so true zeros compare clean.
inline double rel_err(double analytic, double numeric) {
  const double denom = std::max(std::fabs(analytic) + std::fabs(numeric), 1e-8);
  return std::fabs(analytic - numeric) / denom;
}

// Central finite differences of a scalar function over every model
// parameter; returns the worst relative error against the analytic grads.
template <typename LossFn>
double fd_check_model(conseg::ModelState& model, const conseg::ModelGrads& analytic,
                      LossFn&& loss, double h = 1e-5) {
  auto params = param_mats(model);
  const auto grads = grad_mats(analytic);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Mat& mat = *params[p];
    for (std::size_t idx = 0; idx < mat.data().size(); ++idx) {
      const double saved = mat.data()[idx];
      mat.data()[idx] = saved + h;
      const double up = loss();
      mat.data()[idx] = saved - h;
      const double down = loss();
      mat.data()[idx] = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(grads[p]->data()[idx], numeric));
    }
  }
  return worst;
}

inline conseg::Mask random_mask(conseg::Rng& rng, std::size_t h, std::size_t w,
                                double density = 0.4) {
  conseg::Mask mask(h, w);
  for (auto& c : mask.cells) c = rng.real() < density ? 1 : 0;
  if (mask.area() == 0) mask.cells[rng.index(mask.cells.size())] = 1;
  return mask;
}

inline Mat random_mat(conseg::Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                      double hi = 1.0) {
  Mat m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

}  // namespace oracle
