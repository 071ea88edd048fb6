#pragma once

// Direct optimization of depth and pose for one image pair.
//
// The learnable state stands in for a depth network and a pose network:
// each frame owns a coarse log-depth grid (one node every `stride` pixels,
// bilinearly upsampled and exponentiated), and each ordered pair owns an
// independent twist. Training runs in two phases:
//
//   warm-up    plain forward warping with the photometric loss;
//   follow-up  cycle warping target -> source -> target, where the forward
//              half is driven by an exponential-moving-average shadow of the
//              parameters (no gradient) and only the backward half learns.

#include <cstdint>
#include <string>
#include <vector>

#include "cyclewarp/core.hpp"
#include "cyclewarp/loss.hpp"
#include "cyclewarp/warp.hpp"

namespace cyclewarp {

enum class FrameId : int { kSource = 0, kTarget = 1 };
/// kTargetToSource drives warps sampling the source onto the target grid.
enum class PairId : int { kTargetToSource = 0, kSourceToTarget = 1 };
enum class Which { kActive, kEma };

/// Offsets of each parameter block inside the flat parameter vector.
class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(int image_height, int image_width, int stride = 8);

  int image_height() const { return image_height_; }
  int image_width() const { return image_width_; }
  int stride() const { return stride_; }
  int grid_height() const { return grid_height_; }
  int grid_width() const { return grid_width_; }
  size_t grid_size() const { return static_cast<size_t>(grid_height_) * grid_width_; }
  size_t grid_offset(FrameId frame) const;
  size_t twist_offset(PairId pair) const;
  size_t total() const { return 2 * grid_size() + 12; }
  bool is_depth_index(size_t i) const { return i < 2 * grid_size(); }
  bool is_rotation_index(size_t i) const;

  bool operator==(const ParamLayout&) const = default;

 private:
  int image_height_ = 0;
  int image_width_ = 0;
  int stride_ = 8;
  int grid_height_ = 0;
  int grid_width_ = 0;
};

/// Active parameters, their EMA shadow, and optimizer state.
struct ParamState {
  ParamLayout layout;
  std::vector<double> active;
  std::vector<double> ema;
  std::vector<double> velocity;
  int64_t step = 0;           // total gradient steps taken
  int64_t followup_step = 0;  // gradient steps within the follow-up phase
  int64_t ema_updates = 0;

  /// Grids at log(nominal_depth), twists zero, shadow equal to active.
  static ParamState initial(int image_height, int image_width, double nominal_depth,
                            int stride = 8);

  bool operator==(const ParamState&) const = default;
};

struct TrainConfig {
  int warmup_steps = 2000;
  int followup_steps = 1000;
  double lr_warmup = 0.5;
  double lr_followup = 0.25;
  double momentum = 0.9;
  // Per-group multipliers on the phase learning rate.
  double depth_lr_scale = 300.0;
  double rotation_lr_scale = 1e-4;
  double translation_lr_scale = 30.0;
  double ema_alpha = 0.75;
  int ema_cadence = 200;
  bool use_cycle = true;
  bool use_stm = true;
  bool use_ema = true;
  bool use_pcp = true;
  double pcp_weight = 1.0;
  double ssim_alpha = kPhotometricAlpha;
  /// Warm-up compares the warped image to the source frame ("source") or
  /// uses the target-side comparison ("target"). With `symmetric` both
  /// orderings are processed every step either way.
  std::string warmup_compare = "source";
  bool symmetric = true;
  double nominal_depth = 100.0;
  int grid_stride = 8;

  void validate() const;
};

/// Image pair plus the fixed feature maps used by the perception loss.
struct TrainingPair {
  Image source;
  Image target;
  Intrinsics intrinsics;
  FeatureMap source_features;
  FeatureMap target_features;

  TrainingPair(Image source_image, Image target_image, const Intrinsics& k);
};

DepthMap predict_depth(const ParamState& state, FrameId frame, Which which = Which::kActive);
PoseSE3 predict_pose(const ParamState& state, PairId pair, Which which = Which::kActive);
Twist twist_of(const ParamState& state, PairId pair, Which which = Which::kActive);

/// Accumulates d(loss)/d(depth) of a frame onto that frame's grid nodes.
void accumulate_depth_gradient(const ParamLayout& layout, FrameId frame,
                               const std::vector<double>& d_depth, const DepthMap& depth,
                               std::vector<double>& grad);

struct StepStats {
  double loss = 0.0;            // total objective this step
  double photometric = 0.0;
  double perception = 0.0;
  size_t valid_pixels = 0;
  bool ema_updated = false;
};

struct Evaluation {
  StepStats stats;
  std::vector<double> gradient;  // d(loss)/d(active), flat layout
};

/// Warm-up objective and its gradient at the current active parameters.
Evaluation warmup_objective(const ParamState& state, const TrainingPair& pair,
                            const TrainConfig& cfg);
/// Follow-up objective; forward halves read the shadow and receive no gradient.
Evaluation followup_objective(const ParamState& state, const TrainingPair& pair,
                              const TrainConfig& cfg);

/// One momentum step on the warm-up objective. The shadow is left untouched.
StepStats warmup_step(ParamState& state, const TrainingPair& pair, const TrainConfig& cfg);

/// Copies active into the shadow and clears momentum.
void begin_followup(ParamState& state);

/// One momentum step on the follow-up objective, then the shadow update when
/// the follow-up step count hits a multiple of the cadence. With
/// `use_cycle == false` this is exactly a warm-up step.
StepStats followup_step(ParamState& state, const TrainingPair& pair, const TrainConfig& cfg);

/// shadow <- alpha * shadow + (1 - alpha) * active, elementwise.
void ema_update(std::vector<double>& shadow, const std::vector<double>& active, double alpha);

struct TrainingCurve {
  std::vector<std::string> phase;
  std::vector<StepStats> steps;
};

/// Runs both phases; `warmup_checkpoint` (if non-null) receives the state at
/// the end of warm-up.
ParamState train(const TrainingPair& pair, const TrainConfig& cfg, TrainingCurve* curve = nullptr,
                 ParamState* warmup_checkpoint = nullptr);

}  // namespace cyclewarp
