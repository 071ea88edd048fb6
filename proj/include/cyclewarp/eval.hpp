#pragma once

#include <array>
#include <vector>

#include "cyclewarp/core.hpp"

namespace cyclewarp {

struct MetricsReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta = 0.0;  // fraction with max(d/d*, d*/d) < 1.25
  size_t valid_count = 0;
  double cap = 0.0;
};

inline constexpr double kDeltaThreshold = 1.25;
inline constexpr double kScaredDepthCap = 150.0;  // mm

/// Lower-middle element for even counts.
double lower_median(std::vector<double> values);

struct ScaledDepth {
  DepthMap depth;
  double scale = 1.0;
};

/// pred * median(gt) / median(pred) over jointly valid pixels.
ScaledDepth median_scale(const DepthMap& pred, const DepthMap& gt);

/// Both maps clamped to (0, cap]; pixels invalid in either map are skipped.
MetricsReport depth_metrics(const DepthMap& pred_scaled, const DepthMap& gt, double cap);

/// Camera-to-world poses with strictly increasing frame indices.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::vector<int> indices, std::vector<PoseSE3> poses);
  size_t size() const { return poses_.size(); }
  const std::vector<int>& indices() const { return indices_; }
  const std::vector<PoseSE3>& poses() const { return poses_; }

 private:
  std::vector<int> indices_;
  std::vector<PoseSE3> poses_;
};

struct AteResult {
  std::vector<double> per_snippet;
  double mean = 0.0;
};

/// Sliding snippets of `snippet` consecutive poses: both trajectories are
/// translated so the snippet starts at the origin, the prediction is scaled
/// by the least-squares factor, and the RMS position residual is reported.
AteResult ate(const Trajectory& pred, const Trajectory& gt, int snippet = 5);

/// Upper end of the error-map colour scale.
inline constexpr double kErrorMapMax = 0.3;
inline constexpr int kColormapBins = 256;

/// Blue -> red ramp indexed by bin.
std::array<double, 3> colormap_color(int bin);
int colormap_bin(double value);
/// Nearest bin for a colour from the table, as a value in [0, kErrorMapMax].
double colormap_invert(const std::array<double, 3>& rgb);

/// Per-pixel |d - d*| / d* through the colour ramp; invalid pixels black.
Image error_map(const DepthMap& pred_scaled, const DepthMap& gt);

}  // namespace cyclewarp
