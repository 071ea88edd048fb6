#include "cyclewarp/optim.hpp"

#include <cmath>

#include "cyclewarp/freq.hpp"

namespace cyclewarp {

ParamLayout::ParamLayout(int image_height, int image_width, int stride)
    : image_height_(image_height), image_width_(image_width), stride_(stride) {
  if (image_height <= 0 || image_width <= 0 || stride <= 0) {
    throw MisuseError("ParamLayout: dimensions and stride must be positive");
  }
  grid_height_ = (image_height + stride - 1) / stride + 1;
  grid_width_ = (image_width + stride - 1) / stride + 1;
}

size_t ParamLayout::grid_offset(FrameId frame) const {
  const int f = static_cast<int>(frame);
  if (f < 0 || f > 1) throw MisuseError("unknown frame id " + std::to_string(f));
  return static_cast<size_t>(f) * grid_size();
}

size_t ParamLayout::twist_offset(PairId pair) const {
  const int p = static_cast<int>(pair);
  if (p < 0 || p > 1) throw MisuseError("unknown pair id " + std::to_string(p));
  return 2 * grid_size() + 6 * static_cast<size_t>(p);
}

bool ParamLayout::is_rotation_index(size_t i) const {
  if (is_depth_index(i)) return false;
  return (i - 2 * grid_size()) % 6 < 3;
}

ParamState ParamState::initial(int image_height, int image_width, double nominal_depth,
                               int stride) {
  if (!(nominal_depth > 0.0)) throw MisuseError("nominal depth must be positive");
  ParamState s;
  s.layout = ParamLayout(image_height, image_width, stride);
  s.active.assign(s.layout.total(), 0.0);
  for (size_t i = 0; i < 2 * s.layout.grid_size(); ++i) s.active[i] = std::log(nominal_depth);
  s.ema = s.active;
  s.velocity.assign(s.layout.total(), 0.0);
  return s;
}

void TrainConfig::validate() const {
  if (warmup_steps < 0 || followup_steps < 0) throw ConfigError("step counts must be >= 0");
  if (!(lr_warmup > 0.0) || !(lr_followup > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(depth_lr_scale > 0.0) || !(rotation_lr_scale > 0.0) || !(translation_lr_scale > 0.0)) {
    throw ConfigError("learning-rate scales must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) throw ConfigError("ema_alpha must lie in [0, 1]");
  if (ema_cadence <= 0) throw ConfigError("ema_cadence must be positive");
  if (use_stm && !use_cycle) throw ConfigError("use_stm requires use_cycle");
  if (warmup_compare != "source" && warmup_compare != "target") {
    throw ConfigError("warmup_compare must be 'source' or 'target'");
  }
  if (!(nominal_depth > 0.0)) throw ConfigError("nominal_depth must be > 0");
  if (grid_stride <= 0) throw ConfigError("grid_stride must be > 0");
}

TrainingPair::TrainingPair(Image source_image, Image target_image, const Intrinsics& k)
    : source(std::move(source_image)), target(std::move(target_image)), intrinsics(k) {
  if (!source.same_shape(target)) throw MisuseError("TrainingPair: frames differ in shape");
  source_features = feature_extract(source);
  target_features = feature_extract(target);
}

namespace {

const std::vector<double>& params_of(const ParamState& s, Which which) {
  return which == Which::kActive ? s.active : s.ema;
}

FrameId other(FrameId f) {
  return f == FrameId::kSource ? FrameId::kTarget : FrameId::kSource;
}

// Twist driving warps that sample `sampled` onto the grid of `reference`.
PairId pair_for(FrameId reference) {
  return reference == FrameId::kTarget ? PairId::kTargetToSource : PairId::kSourceToTarget;
}

const Image& image_of(const TrainingPair& p, FrameId f) {
  return f == FrameId::kSource ? p.source : p.target;
}
const FeatureMap& features_of(const TrainingPair& p, FrameId f) {
  return f == FrameId::kSource ? p.source_features : p.target_features;
}

void add_twist_gradient(const ParamLayout& layout, PairId pair, const std::array<double, 6>& g,
                        std::vector<double>& grad) {
  const size_t off = layout.twist_offset(pair);
  for (int i = 0; i < 6; ++i) grad[off + i] += g[i];
}

void check_finite(double loss) {
  if (!std::isfinite(loss)) throw NumericalError("optimization diverged (non-finite loss)");
}

// Photometric loss between `reference` and the other frame warped onto it.
void forward_term(const ParamState& state, const TrainingPair& pair, FrameId reference,
                  const TrainConfig& cfg, Evaluation& out) {
  const FrameId sampled = other(reference);
  const PairId pid = pair_for(reference);
  const DepthMap depth = predict_depth(state, reference);
  const Twist twist = twist_of(state, pid);
  const WarpResult w = warp_image(image_of(pair, sampled), depth, se3_exp(twist), pair.intrinsics);
  const LossWithGradient l =
      photometric_loss_grad(image_of(pair, reference), w.image, w.field.valid, cfg.ssim_alpha);
  const WarpGradients g =
      warp_gradients(l.d_input, image_of(pair, sampled), depth, twist, pair.intrinsics);
  accumulate_depth_gradient(state.layout, reference, g.d_depth, depth, out.gradient);
  add_twist_gradient(state.layout, pid, g.d_twist, out.gradient);
  out.stats.photometric += l.value.scalar;
  out.stats.valid_pixels += l.value.valid_count;
}

// reference -> other -> reference cycle. The first half reads the shadow and
// contributes no gradient; the second half and the feature warp are active.
void cycle_term(const ParamState& state, const TrainingPair& pair, FrameId reference,
                const TrainConfig& cfg, Evaluation& out) {
  const FrameId mid = other(reference);
  const Intrinsics& k = pair.intrinsics;
  const Image& ref_img = image_of(pair, reference);

  const DepthMap fwd_depth = predict_depth(state, mid, Which::kEma);
  const PoseSE3 fwd_pose = predict_pose(state, pair_for(mid), Which::kEma);
  const WarpField fwd = compute_correspondence(fwd_depth, fwd_pose, k, ref_img.height(),
                                               ref_img.width());
  Image intermediate = bilinear_sample(ref_img, fwd);
  if (cfg.use_stm) {
    fill_out_of_view(intermediate, fwd.valid);
    intermediate = structure_transplant(intermediate, image_of(pair, mid));
  }

  const PairId bwd_pair = pair_for(reference);
  const DepthMap bwd_depth = predict_depth(state, reference);
  const Twist bwd_twist = twist_of(state, bwd_pair);
  const WarpField bwd = compute_correspondence(bwd_depth, se3_exp(bwd_twist), k,
                                               intermediate.height(), intermediate.width());
  const Image cycled = bilinear_sample(intermediate, bwd);
  const Mask valid = cycle_validity(fwd, bwd);

  const LossWithGradient pht = photometric_loss_grad(ref_img, cycled, valid, cfg.ssim_alpha);
  WarpGradients g = warp_gradients(pht.d_input, intermediate, bwd_depth, bwd_twist, k);
  accumulate_depth_gradient(state.layout, reference, g.d_depth, bwd_depth, out.gradient);
  add_twist_gradient(state.layout, bwd_pair, g.d_twist, out.gradient);
  out.stats.photometric += pht.value.scalar;
  out.stats.valid_pixels += pht.value.valid_count;

  if (cfg.use_pcp) {
    const FeatureMap& mid_feat = features_of(pair, mid);
    const FeatureMap warped_feat = bilinear_sample(mid_feat, bwd);
    LossWithGradient pcp = perception_loss_grad(features_of(pair, reference), warped_feat, bwd.valid);
    for (double& v : pcp.d_input.data()) v *= cfg.pcp_weight;
    g = warp_gradients(pcp.d_input, mid_feat, bwd_depth, bwd_twist, k);
    accumulate_depth_gradient(state.layout, reference, g.d_depth, bwd_depth, out.gradient);
    add_twist_gradient(state.layout, bwd_pair, g.d_twist, out.gradient);
    out.stats.perception += cfg.pcp_weight * pcp.value.scalar;
  }
}

void momentum_step(ParamState& state, const std::vector<double>& grad, double lr,
                   const TrainConfig& cfg) {
  const ParamLayout& layout = state.layout;
  for (size_t i = 0; i < grad.size(); ++i) {
    double scale = cfg.translation_lr_scale;
    if (layout.is_depth_index(i)) {
      scale = cfg.depth_lr_scale;
    } else if (layout.is_rotation_index(i)) {
      scale = cfg.rotation_lr_scale;
    }
    state.velocity[i] = cfg.momentum * state.velocity[i] + grad[i];
    state.active[i] -= lr * scale * state.velocity[i];
  }
  ++state.step;
}

}  // namespace

DepthMap predict_depth(const ParamState& state, FrameId frame, Which which) {
  const ParamLayout& l = state.layout;
  const size_t off = l.grid_offset(frame);
  const std::vector<double>& p = params_of(state, which);
  const int h = l.image_height(), w = l.image_width(), gw = l.grid_width();
  const double inv = 1.0 / l.stride();
  std::vector<double> depth(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const double gy = y * inv;
    const int y0 = static_cast<int>(gy);
    const double fy = gy - y0;
    for (int x = 0; x < w; ++x) {
      const double gx = x * inv;
      const int x0 = static_cast<int>(gx);
      const double fx = gx - x0;
      const double* row0 = &p[off + static_cast<size_t>(y0) * gw + x0];
      const double* row1 = row0 + gw;
      const double v = (1 - fy) * ((1 - fx) * row0[0] + fx * row0[1]) +
                       fy * ((1 - fx) * row1[0] + fx * row1[1]);
      depth[static_cast<size_t>(y) * w + x] = std::exp(v);
    }
  }
  return DepthMap(h, w, std::move(depth));
}

Twist twist_of(const ParamState& state, PairId pair, Which which) {
  const size_t off = state.layout.twist_offset(pair);
  const std::vector<double>& p = params_of(state, which);
  return Twist({p[off], p[off + 1], p[off + 2]}, {p[off + 3], p[off + 4], p[off + 5]});
}

PoseSE3 predict_pose(const ParamState& state, PairId pair, Which which) {
  return se3_exp(twist_of(state, pair, which));
}

void accumulate_depth_gradient(const ParamLayout& l, FrameId frame,
                               const std::vector<double>& d_depth, const DepthMap& depth,
                               std::vector<double>& grad) {
  const size_t off = l.grid_offset(frame);
  const int h = l.image_height(), w = l.image_width(), gw = l.grid_width();
  const double inv = 1.0 / l.stride();
  for (int y = 0; y < h; ++y) {
    const double gy = y * inv;
    const int y0 = static_cast<int>(gy);
    const double fy = gy - y0;
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (d_depth[i] == 0.0) continue;
      const double gx = x * inv;
      const int x0 = static_cast<int>(gx);
      const double fx = gx - x0;
      const double g = d_depth[i] * depth[i];  // d exp(v) / dv = exp(v)
      const size_t n = off + static_cast<size_t>(y0) * gw + x0;
      grad[n] += g * (1 - fy) * (1 - fx);
      grad[n + 1] += g * (1 - fy) * fx;
      grad[n + gw] += g * fy * (1 - fx);
      grad[n + gw + 1] += g * fy * fx;
    }
  }
}

Evaluation warmup_objective(const ParamState& state, const TrainingPair& pair,
                            const TrainConfig& cfg) {
  Evaluation out;
  out.gradient.assign(state.layout.total(), 0.0);
  // "source": compare the target warped onto the source grid with I_s.
  const FrameId first = cfg.warmup_compare == "source" ? FrameId::kSource : FrameId::kTarget;
  forward_term(state, pair, first, cfg, out);
  if (cfg.symmetric) forward_term(state, pair, other(first), cfg, out);
  out.stats.loss = out.stats.photometric;
  return out;
}

Evaluation followup_objective(const ParamState& state, const TrainingPair& pair,
                              const TrainConfig& cfg) {
  if (!cfg.use_cycle) return warmup_objective(state, pair, cfg);
  Evaluation out;
  out.gradient.assign(state.layout.total(), 0.0);
  cycle_term(state, pair, FrameId::kTarget, cfg, out);
  if (cfg.symmetric) cycle_term(state, pair, FrameId::kSource, cfg, out);
  out.stats.loss = out.stats.photometric + out.stats.perception;
  return out;
}

StepStats warmup_step(ParamState& state, const TrainingPair& pair, const TrainConfig& cfg) {
  Evaluation e = warmup_objective(state, pair, cfg);
  check_finite(e.stats.loss);
  momentum_step(state, e.gradient, cfg.lr_warmup, cfg);
  return e.stats;
}

void begin_followup(ParamState& state) {
  state.ema = state.active;
  std::fill(state.velocity.begin(), state.velocity.end(), 0.0);
  state.followup_step = 0;
}

StepStats followup_step(ParamState& state, const TrainingPair& pair, const TrainConfig& cfg) {
  if (!cfg.use_cycle) {
    Evaluation e = warmup_objective(state, pair, cfg);
    check_finite(e.stats.loss);
    momentum_step(state, e.gradient, cfg.lr_followup, cfg);
    ++state.followup_step;
    return e.stats;
  }
  Evaluation e = followup_objective(state, pair, cfg);
  check_finite(e.stats.loss);
  momentum_step(state, e.gradient, cfg.lr_followup, cfg);
  ++state.followup_step;
  if (cfg.use_ema && state.followup_step % cfg.ema_cadence == 0) {
    ema_update(state.ema, state.active, cfg.ema_alpha);
    ++state.ema_updates;
    e.stats.ema_updated = true;
  }
  return e.stats;
}

void ema_update(std::vector<double>& shadow, const std::vector<double>& active, double alpha) {
  if (shadow.size() != active.size()) throw MisuseError("ema_update: shape mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw MisuseError("ema_update: alpha outside [0, 1]");
  for (size_t i = 0; i < shadow.size(); ++i) {
    shadow[i] = alpha * shadow[i] + (1.0 - alpha) * active[i];
  }
}

ParamState train(const TrainingPair& pair, const TrainConfig& cfg, TrainingCurve* curve,
                 ParamState* warmup_checkpoint) {
  cfg.validate();
  ParamState state = ParamState::initial(pair.target.height(), pair.target.width(),
                                         cfg.nominal_depth, cfg.grid_stride);
  for (int i = 0; i < cfg.warmup_steps; ++i) {
    StepStats s = warmup_step(state, pair, cfg);
    if (curve) {
      curve->phase.emplace_back("warmup");
      curve->steps.push_back(s);
    }
  }
  if (warmup_checkpoint) *warmup_checkpoint = state;
  begin_followup(state);
  for (int i = 0; i < cfg.followup_steps; ++i) {
    StepStats s = followup_step(state, pair, cfg);
    if (curve) {
      curve->phase.emplace_back("followup");
      curve->steps.push_back(s);
    }
  }
  return state;
}

}  // namespace cyclewarp
