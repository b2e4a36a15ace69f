#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace conseg {

// Dense row-major double matrix. Only the handful of operations the toy
// network and its hand-written backward pass need.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return a_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return a_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {a_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {a_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return a_; }
  const std::vector<double>& data() const { return a_; }

  void fill(double v) { a_.assign(a_.size(), v); }

  friend bool operator==(const Mat& a, const Mat& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.a_ == b.a_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> a_;
};

Mat mul(const Mat& a, const Mat& b);     // A · B
Mat mul_tn(const Mat& a, const Mat& b);  // Aᵀ · B
Mat mul_nt(const Mat& a, const Mat& b);  // A · Bᵀ

// y += alpha * x (shapes must match)
void axpy(double alpha, const Mat& x, Mat& y);

void scale(Mat& m, double alpha);

// In-place softmax over each row.
void softmax_rows(Mat& m);

// Given softmax outputs p and upstream dL/dp, returns dL/dlogits.
Mat softmax_backward_rows(const Mat& p, const Mat& dp);

bool all_finite(const Mat& m);

double max_abs_diff(const Mat& a, const Mat& b);

}  // namespace conseg
