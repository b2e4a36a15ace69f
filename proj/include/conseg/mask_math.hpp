#pragma once

#include <span>

#include "conseg/types.hpp"

namespace conseg {

// Probabilities are clamped below at this value before taking logs.
inline constexpr double kLogClamp = 1e-12;

double clamped_log(double p);

// Mean per-cell binary cross-entropy between a predicted soft mask and a
// binary target.
double mask_bce(std::span<const double> pred, const Mask& target);

// Dice loss with +1 smoothing: 1 − (2Σpy + 1)/(Σp + Σy + 1).
double mask_dice(std::span<const double> pred, const Mask& target);

// d(bce)/dpred and d(dice)/dpred, accumulated into grad with a scale
// factor. grad must have the same length as pred.
void mask_bce_grad(std::span<const double> pred, const Mask& target, double scale,
                   std::span<double> grad);
void mask_dice_grad(std::span<const double> pred, const Mask& target, double scale,
                    std::span<double> grad);

}  // namespace conseg
