#include "conseg/mask_math.hpp"

#include <cmath>

namespace conseg {

double clamped_log(double p) { return std::log(p < kLogClamp ? kLogClamp : p); }

double mask_bce(std::span<const double> pred, const Mask& target) {
  if (pred.size() != target.cells.size()) throw ConfigError("mask_bce: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sum -= target.cells[i] ? clamped_log(pred[i]) : clamped_log(1.0 - pred[i]);
  }
  return sum / static_cast<double>(pred.size());
}

double mask_dice(std::span<const double> pred, const Mask& target) {
  if (pred.size() != target.cells.size()) throw ConfigError("mask_dice: size mismatch");
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    psum += pred[i];
    if (target.cells[i]) {
      inter += pred[i];
      tsum += 1.0;
    }
  }
  return 1.0 - (2.0 * inter + 1.0) / (psum + tsum + 1.0);
}

void mask_bce_grad(std::span<const double> pred, const Mask& target, double scale,
                   std::span<double> grad) {
  const double inv_n = scale / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target.cells[i]) {
      grad[i] += pred[i] < kLogClamp ? 0.0 : -inv_n / pred[i];
    } else {
      grad[i] += 1.0 - pred[i] < kLogClamp ? 0.0 : inv_n / (1.0 - pred[i]);
    }
  }
}

void mask_dice_grad(std::span<const double> pred, const Mask& target, double scale,
                    std::span<double> grad) {
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    psum += pred[i];
    if (target.cells[i]) {
      inter += pred[i];
      tsum += 1.0;
    }
  }
  const double denom = psum + tsum + 1.0;
  const double num = 2.0 * inter + 1.0;
  // d/dp_i [1 − num/denom] = (num − 2·y_i·denom) / denom²
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = target.cells[i] ? 1.0 : 0.0;
    grad[i] += scale * (num - 2.0 * y * denom) / (denom * denom);
  }
}

}  // namespace conseg
