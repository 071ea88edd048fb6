#pragma once

// Two-view synthetic scenes with analytic ground truth, and the brightness
// perturbations used to stress photometric supervision.

#include <cstdint>
#include <optional>
#include <string>

#include "cyclewarp/core.hpp"

namespace cyclewarp {

enum class SurfaceKind { kFrontoParallel, kInclined, kBumps };
enum class TextureKind { kValueNoise, kCheckerNoise };

std::string to_string(SurfaceKind s);
std::string to_string(TextureKind t);
SurfaceKind surface_from_string(const std::string& s);
TextureKind texture_from_string(const std::string& s);

struct SceneSpec {
  int height = 64;
  int width = 64;
  SurfaceKind surface = SurfaceKind::kBumps;
  TextureKind texture = TextureKind::kValueNoise;
  Twist baseline;            // ground-truth target -> source motion
  Intrinsics intrinsics{64.0, 64.0, 31.5, 31.5};
  double nominal_depth = 100.0;   // d0, scene units
  double texture_period_px = 16.0;  // coarsest texture period, in pixels at d0
  uint64_t seed = 0;
};

/// Default spec for a surface/seed: intrinsics scaled to the resolution and a
/// seeded jitter around a mostly-lateral baseline of about 6% of d0.
SceneSpec default_scene_spec(SurfaceKind surface, uint64_t seed, int size = 64);

struct SyntheticScene {
  Image source;
  Image target;
  DepthMap gt_depth_source;
  DepthMap gt_depth_target;
  PoseSE3 gt_pose_target_to_source;
  PoseSE3 gt_pose_source_to_target;
  Intrinsics intrinsics;
  SceneSpec spec;
};

/// Ray-casts both views against the analytic surface and shades each hit
/// with the procedural texture at the hit's world position. Throws
/// DegenerateSceneError when more than 30% of either view misses.
SyntheticScene generate_scene(const SceneSpec& spec);

struct PerturbationSpec {
  bool apply_global = true;
  std::optional<double> global_k;  // empty: draw from [0.8,0.9] U [1.1,1.2]
  int spot_count = 3;
  double spot_sigma_min = 5.0;     // pixels
  double spot_sigma_max = 25.0;
  double spot_amplitude_min = 0.1;  // V-channel offset magnitude
  double spot_amplitude_max = 0.3;
  uint64_t seed = 0;
};

/// Draws k uniformly from [0.8, 0.9] U [1.1, 1.2].
double sample_global_k(uint64_t seed);

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

/// V <- clamp(k * V) in HSV. Single-channel images are treated as V.
Image perturb_global(const Image& image, double k);

/// Adds randomly placed Gaussian bright/dark spots to V.
Image perturb_local(const Image& image, const PerturbationSpec& spec);

struct SpotParams {
  double cx, cy, sigma, amplitude;
};
/// Single spot, exposed for tests and the spot sampler.
Image add_spot(const Image& image, const SpotParams& spot);

/// Global (if enabled) then local perturbation, seeded by spec.seed.
Image apply_perturbation(const Image& image, const PerturbationSpec& spec);

}  // namespace cyclewarp
