#pragma once

// Inverse warping between two pinhole views.
//
// For every target pixel p with depth d, the matching source coordinate is
//   K * T_target_to_source * (d * K^-1 * p),
// and the warped image is a bilinear resampling of the source at those
// coordinates. Out-of-view and degenerate pixels are masked out rather than
// clamped to the border.

#include <array>
#include <vector>

#include "cyclewarp/core.hpp"

namespace cyclewarp {

/// Projections with transformed z at or below this are treated as invalid.
inline constexpr double kNearPlane = 1e-6;

/// Continuous source coordinates for every pixel of the target grid.
struct WarpField {
  int height = 0;         // target grid
  int width = 0;
  int source_height = 0;  // raster the coordinates index into
  int source_width = 0;
  std::vector<double> u;
  std::vector<double> v;
  Mask valid;

  size_t size() const { return u.size(); }
};

/// Derivatives of a downstream scalar through one warp.
struct WarpGradients {
  std::vector<double> d_depth;   // per target pixel
  std::array<double, 6> d_twist{};  // rotation xyz, translation xyz
  FeatureMap d_source;           // shaped like the sampled source raster
};

WarpField identity_field(int height, int width);

/// Pixel matching for a target depth map under `pose_target_to_source`.
/// The source raster defaults to the same size as the depth map.
WarpField compute_correspondence(const DepthMap& depth, const PoseSE3& pose_target_to_source,
                                 const Intrinsics& k);
WarpField compute_correspondence(const DepthMap& depth, const PoseSE3& pose_target_to_source,
                                 const Intrinsics& k, int source_height, int source_width);

/// Bilinear value at a continuous in-bounds coordinate.
template <class Tag>
double sample_at(const BasicRaster<Tag>& source, double u, double v, int c);

/// Resamples `source` at the field coordinates; invalid pixels are 0.
template <class Tag>
BasicRaster<Tag> bilinear_sample(const BasicRaster<Tag>& source, const WarpField& field);

struct WarpResult {
  Image image;
  WarpField field;
};

WarpResult warp_image(const Image& source, const DepthMap& target_depth,
                      const PoseSE3& pose_target_to_source, const Intrinsics& k);

/// Extends the valid region outward by repeated 4-neighbour averaging so a
/// hard zero border does not leak into the amplitude spectrum before
/// structure transplant. Uses only the image's own valid pixels; no-op when
/// nothing is valid.
void fill_out_of_view(Image& image, const Mask& valid);

struct CycleResult {
  Image cycled;        // target -> source -> target, on the target grid
  Image intermediate;  // target warped onto the source grid (after STM if enabled)
  WarpField forward;   // source grid -> coordinates in the target image
  WarpField backward;  // target grid -> coordinates in the intermediate image
  Mask cycle_valid;
};

/// Two-step cycle warp. `source` only enters through the structure
/// transplant, so with `use_stm == false` the result ignores its intensities.
CycleResult cycle_warp(const Image& target, const Image& source, const DepthMap& depth_source,
                       const PoseSE3& pose_source_to_target, const DepthMap& depth_target,
                       const PoseSE3& pose_target_to_source, const Intrinsics& k, bool use_stm);

/// Backward-field validity AND forward validity looked up at the nearest
/// source pixel of each backward coordinate.
Mask cycle_validity(const WarpField& forward, const WarpField& backward);

/// Chain rule from d(loss)/d(warped raster) back to the driving depth, the
/// twist and the sampled source intensities. Zero at invalid pixels.
template <class Tag>
WarpGradients warp_gradients(const FeatureMap& loss_grad_at_output,
                             const BasicRaster<Tag>& source, const DepthMap& depth,
                             const Twist& twist, const Intrinsics& k);

}  // namespace cyclewarp
