#include "conseg/mat.hpp"

#include <cmath>
#include <stdexcept>

namespace conseg {

namespace {
void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}
}  // namespace

Mat mul(const Mat& a, const Mat& b) {
  require(a.cols() == b.rows(), "mul: shape mismatch");
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto brow = b.row(k);
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Mat mul_tn(const Mat& a, const Mat& b) {
  require(a.rows() == b.rows(), "mul_tn: shape mismatch");
  Mat out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto arow = a.row(k);
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Mat mul_nt(const Mat& a, const Mat& b) {
  require(a.cols() == b.cols(), "mul_nt: shape mismatch");
  Mat out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

void axpy(double alpha, const Mat& x, Mat& y) {
  require(x.rows() == y.rows() && x.cols() == y.cols(), "axpy: shape mismatch");
  const auto& xs = x.data();
  auto& ys = y.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] += alpha * xs[i];
}

void scale(Mat& m, double alpha) {
  for (double& v : m.data()) v *= alpha;
}

void softmax_rows(Mat& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

Mat softmax_backward_rows(const Mat& p, const Mat& dp) {
  require(p.rows() == dp.rows() && p.cols() == dp.cols(), "softmax_backward: shape mismatch");
  Mat out(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto pr = p.row(i);
    const auto gr = dp.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) dot += pr[j] * gr[j];
    auto orow = out.row(i);
    for (std::size_t j = 0; j < p.cols(); ++j) orow[j] = pr[j] * (gr[j] - dot);
  }
  return out;
}

bool all_finite(const Mat& m) {
  for (double v : m.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff: shape mismatch");
  double mx = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    mx = std::max(mx, std::fabs(a.data()[i] - b.data()[i]));
  }
  return mx;
}

}  // namespace conseg
