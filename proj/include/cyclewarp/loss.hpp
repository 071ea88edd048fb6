#pragma once

#include "cyclewarp/core.hpp"

namespace cyclewarp {

/// SSIM over a 3x3 mean window with reflect padding at the borders.
struct SsimConfig {
  double c1 = 1e-4;
  double c2 = 9e-4;
};

/// SSIM blend weight of the photometric loss; the L1 term gets 1 - this.
inline constexpr double kPhotometricAlpha = 0.85;

struct LossValue {
  double scalar = 0.0;     // mean of per_pixel over the mask
  FeatureMap per_pixel;    // H x W x 1
  size_t valid_count = 0;
};

struct LossWithGradient {
  LossValue value;
  FeatureMap d_input;      // d(scalar)/d(second argument), same shape as it
};

/// Per-pixel, per-channel SSIM, values in [-1, 1].
FeatureMap ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

/// alpha * (1 - SSIM) / 2 + (1 - alpha) * |target - warped|, averaged over
/// channels per pixel, then over the mask in row-major order.
LossValue photometric_loss(const Image& target, const Image& warped, const Mask& mask,
                           double alpha = kPhotometricAlpha, const SsimConfig& cfg = {});
LossWithGradient photometric_loss_grad(const Image& target, const Image& warped, const Mask& mask,
                                       double alpha = kPhotometricAlpha,
                                       const SsimConfig& cfg = {});

/// Fixed, learning-free filter bank: grayscale, horizontal gradient, vertical
/// gradient, and gradient magnitude computed at half resolution and
/// upsampled back.
FeatureMap feature_extract(const Image& image);
inline constexpr int kFeatureChannels = 4;

/// Mean absolute difference over masked pixels and all channels.
LossValue perception_loss(const FeatureMap& f_target, const FeatureMap& f_warped,
                          const Mask& mask);
LossWithGradient perception_loss_grad(const FeatureMap& f_target, const FeatureMap& f_warped,
                                      const Mask& mask);

}  // namespace cyclewarp
