#include "cyclewarp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cyclewarp {

double lower_median(std::vector<double> values) {
  if (values.empty()) throw NumericalError("median of an empty set");
  const size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  return values[mid];
}

namespace {

void require_same_grid(const DepthMap& a, const DepthMap& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw MisuseError(std::string(what) + ": depth maps differ in shape");
  }
}

}  // namespace

ScaledDepth median_scale(const DepthMap& pred, const DepthMap& gt) {
  require_same_grid(pred, gt, "median_scale");
  std::vector<double> p, g;
  for (size_t i = 0; i < pred.pixel_count(); ++i) {
    if (pred.valid(i) && gt.valid(i)) {
      p.push_back(pred[i]);
      g.push_back(gt[i]);
    }
  }
  if (p.empty()) throw NumericalError("median_scale: no jointly valid pixels");
  const double scale = lower_median(g) / lower_median(p);
  std::vector<double> out(pred.values());
  for (double& v : out) v *= scale;
  return {DepthMap(pred.height(), pred.width(), std::move(out), pred.mask()), scale};
}

MetricsReport depth_metrics(const DepthMap& pred, const DepthMap& gt, double cap) {
  require_same_grid(pred, gt, "depth_metrics");
  if (!(cap > 0.0)) throw MisuseError("depth_metrics: cap must be positive");
  MetricsReport r;
  r.cap = cap;
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  size_t inliers = 0;
  for (size_t i = 0; i < pred.pixel_count(); ++i) {
    if (!gt.valid(i) || !pred.valid(i)) continue;
    const double d = std::min(pred[i], cap);
    const double t = std::min(gt[i], cap);
    const double diff = d - t;
    abs_rel += std::abs(diff) / t;
    sq_rel += diff * diff / t;
    sq += diff * diff;
    const double dl = std::log(d) - std::log(t);
    sq_log += dl * dl;
    if (std::max(d / t, t / d) < kDeltaThreshold) ++inliers;
    ++r.valid_count;
  }
  if (r.valid_count == 0) throw NumericalError("depth_metrics: no valid pixels");
  const double n = static_cast<double>(r.valid_count);
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(sq / n);
  r.rmse_log = std::sqrt(sq_log / n);
  r.delta = static_cast<double>(inliers) / n;
  return r;
}

Trajectory::Trajectory(std::vector<int> indices, std::vector<PoseSE3> poses)
    : indices_(std::move(indices)), poses_(std::move(poses)) {
  if (indices_.size() != poses_.size()) {
    throw MisuseError("Trajectory: index and pose counts differ");
  }
  for (size_t i = 1; i < indices_.size(); ++i) {
    if (indices_[i] <= indices_[i - 1]) {
      throw MisuseError("Trajectory: frame indices must be strictly increasing");
    }
  }
}

AteResult ate(const Trajectory& pred, const Trajectory& gt, int snippet) {
  if (pred.size() != gt.size()) throw MisuseError("ate: trajectory lengths differ");
  if (snippet < 1 || pred.size() < static_cast<size_t>(snippet)) {
    throw MisuseError("ate: trajectories shorter than the snippet length");
  }
  AteResult out;
  const size_t count = pred.size() - snippet + 1;
  for (size_t s = 0; s < count; ++s) {
    const Eigen::Vector3d p0 = pred.poses()[s].translation();
    const Eigen::Vector3d g0 = gt.poses()[s].translation();
    double pg = 0.0, pp = 0.0;
    for (int i = 0; i < snippet; ++i) {
      const Eigen::Vector3d p = pred.poses()[s + i].translation() - p0;
      const Eigen::Vector3d g = gt.poses()[s + i].translation() - g0;
      pg += p.dot(g);
      pp += p.dot(p);
    }
    const double scale = pp > 0.0 ? pg / pp : 0.0;
    double sq = 0.0;
    for (int i = 0; i < snippet; ++i) {
      const Eigen::Vector3d p = pred.poses()[s + i].translation() - p0;
      const Eigen::Vector3d g = gt.poses()[s + i].translation() - g0;
      sq += (scale * p - g).squaredNorm();
    }
    out.per_snippet.push_back(std::sqrt(sq / snippet));
  }
  double sum = 0.0;
  for (double v : out.per_snippet) sum += v;
  out.mean = sum / static_cast<double>(out.per_snippet.size());
  return out;
}

std::array<double, 3> colormap_color(int bin) {
  bin = std::clamp(bin, 0, kColormapBins - 1);
  const double t = static_cast<double>(bin) / (kColormapBins - 1);
  // Blue -> cyan -> yellow -> red, piecewise linear, every bin distinct.
  if (t < 1.0 / 3.0) {
    const double s = 3.0 * t;
    return {0.0, s, 1.0 - 0.5 * s};
  }
  if (t < 2.0 / 3.0) {
    const double s = 3.0 * t - 1.0;
    return {s, 1.0, 0.5 - 0.5 * s};
  }
  const double s = 3.0 * t - 2.0;
  return {1.0, 1.0 - s, 0.0};
}

int colormap_bin(double value) {
  const double t = std::clamp(value / kErrorMapMax, 0.0, 1.0);
  return static_cast<int>(std::lround(t * (kColormapBins - 1)));
}

double colormap_invert(const std::array<double, 3>& rgb) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int b = 0; b < kColormapBins; ++b) {
    const auto c = colormap_color(b);
    const double d = (c[0] - rgb[0]) * (c[0] - rgb[0]) + (c[1] - rgb[1]) * (c[1] - rgb[1]) +
                     (c[2] - rgb[2]) * (c[2] - rgb[2]);
    if (d < best_d) {
      best_d = d;
      best = b;
    }
  }
  return kErrorMapMax * best / (kColormapBins - 1);
}

Image error_map(const DepthMap& pred, const DepthMap& gt) {
  require_same_grid(pred, gt, "error_map");
  Image out = make_image(gt.height(), gt.width(), 3, 0.0);
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      if (!gt.valid(y, x) || !pred.valid(y, x)) continue;
      const double rel = std::abs(pred.at(y, x) - gt.at(y, x)) / gt.at(y, x);
      const auto c = colormap_color(colormap_bin(rel));
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = c[ch];
    }
  }
  return out;
}

}  // namespace cyclewarp
