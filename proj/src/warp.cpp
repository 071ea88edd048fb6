#include "cyclewarp/warp.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

#include "cyclewarp/freq.hpp"

namespace cyclewarp {

namespace {

struct Taps {
  int x0, x1, y0, y1;
  double fx, fy;
};

Taps taps_for(double u, double v, int width, int height) {
  Taps t;
  t.x0 = std::min(static_cast<int>(std::floor(u)), std::max(width - 2, 0));
  t.y0 = std::min(static_cast<int>(std::floor(v)), std::max(height - 2, 0));
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.fx = u - t.x0;
  t.fy = v - t.y0;
  return t;
}

bool in_bounds(double u, double v, int width, int height) {
  return u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1;
}

}  // namespace

WarpField identity_field(int height, int width) {
  WarpField f;
  f.height = f.source_height = height;
  f.width = f.source_width = width;
  f.u.resize(static_cast<size_t>(height) * width);
  f.v.resize(f.u.size());
  f.valid = Mask(height, width, true);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      f.u[static_cast<size_t>(y) * width + x] = x;
      f.v[static_cast<size_t>(y) * width + x] = y;
    }
  }
  return f;
}

WarpField compute_correspondence(const DepthMap& depth, const PoseSE3& pose_target_to_source,
                                 const Intrinsics& k) {
  return compute_correspondence(depth, pose_target_to_source, k, depth.height(), depth.width());
}

WarpField compute_correspondence(const DepthMap& depth, const PoseSE3& pose, const Intrinsics& k,
                                 int source_height, int source_width) {
  WarpField f;
  f.height = depth.height();
  f.width = depth.width();
  f.source_height = source_height;
  f.source_width = source_width;
  f.u.assign(depth.pixel_count(), 0.0);
  f.v.assign(depth.pixel_count(), 0.0);
  f.valid = Mask(f.height, f.width, false);

  const Eigen::Matrix3d& r = pose.rotation();
  const Eigen::Vector3d& t = pose.translation();
  // Under the identity motion every pixel maps onto itself; skipping the
  // projection keeps the grid exact instead of off by rounding.
  const bool identity = r == Eigen::Matrix3d::Identity() && t.isZero(0.0);
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      const size_t i = static_cast<size_t>(y) * f.width + x;
      if (!depth.valid(i)) continue;
      const double d = depth[i];
      if (identity) {
        if (!(d > kNearPlane)) continue;
        f.u[i] = x;
        f.v[i] = y;
        f.valid.set(i, in_bounds(x, y, source_width, source_height));
        continue;
      }
      const Eigen::Vector3d ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d p = r * (d * ray) + t;
      if (!(p.z() > kNearPlane)) continue;
      const double u = k.fx * p.x() / p.z() + k.cx;
      const double v = k.fy * p.y() / p.z() + k.cy;
      f.u[i] = u;
      f.v[i] = v;
      f.valid.set(i, in_bounds(u, v, source_width, source_height));
    }
  }
  return f;
}

template <class Tag>
double sample_at(const BasicRaster<Tag>& src, double u, double v, int c) {
  const Taps t = taps_for(u, v, src.width(), src.height());
  const double top = (1.0 - t.fx) * src.at(t.y0, t.x0, c) + t.fx * src.at(t.y0, t.x1, c);
  const double bottom = (1.0 - t.fx) * src.at(t.y1, t.x0, c) + t.fx * src.at(t.y1, t.x1, c);
  return (1.0 - t.fy) * top + t.fy * bottom;
}

template <class Tag>
BasicRaster<Tag> bilinear_sample(const BasicRaster<Tag>& source, const WarpField& field) {
  if (source.height() != field.source_height || source.width() != field.source_width) {
    throw MisuseError("bilinear_sample: source raster does not match the field");
  }
  const int channels = source.channels();
  BasicRaster<Tag> out(field.height, field.width, channels, 0.0);
  auto dst = out.data();
  for (size_t i = 0; i < field.size(); ++i) {
    if (!field.valid[i]) continue;
    const Taps t = taps_for(field.u[i], field.v[i], source.width(), source.height());
    const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
    const double w01 = t.fx * (1.0 - t.fy);
    const double w10 = (1.0 - t.fx) * t.fy;
    const double w11 = t.fx * t.fy;
    for (int c = 0; c < channels; ++c) {
      dst[i * channels + c] = w00 * source.at(t.y0, t.x0, c) + w01 * source.at(t.y0, t.x1, c) +
                              w10 * source.at(t.y1, t.x0, c) + w11 * source.at(t.y1, t.x1, c);
    }
  }
  return out;
}

WarpResult warp_image(const Image& source, const DepthMap& target_depth,
                      const PoseSE3& pose_target_to_source, const Intrinsics& k) {
  WarpField field = compute_correspondence(target_depth, pose_target_to_source, k,
                                           source.height(), source.width());
  Image warped = bilinear_sample(source, field);
  return {std::move(warped), std::move(field)};
}

Mask cycle_validity(const WarpField& forward, const WarpField& backward) {
  if (backward.source_height != forward.height || backward.source_width != forward.width) {
    throw MisuseError("cycle_validity: backward field does not index the forward grid");
  }
  Mask out(backward.height, backward.width, false);
  for (size_t i = 0; i < backward.size(); ++i) {
    if (!backward.valid[i]) continue;
    const int x = static_cast<int>(std::lround(backward.u[i]));
    const int y = static_cast<int>(std::lround(backward.v[i]));
    out.set(i, forward.valid.at(y, x));
  }
  return out;
}

void fill_out_of_view(Image& image, const Mask& valid) {
  if (valid.height() != image.height() || valid.width() != image.width()) {
    throw MisuseError("fill_out_of_view: mask and image differ in shape");
  }
  if (valid.count() == 0) return;
  const int h = image.height(), w = image.width(), c = image.channels();
  Mask known = valid;
  std::vector<double> acc(c);
  // Grow the known region one ring at a time; each new pixel averages its
  // already-known 4-neighbours.
  while (known.count() < known.size()) {
    Mask next = known;
    Image grown = image;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (known.at(y, x)) continue;
        std::fill(acc.begin(), acc.end(), 0.0);
        int n = 0;
        for (const auto& [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w || !known.at(yy, xx)) continue;
          for (int k = 0; k < c; ++k) acc[k] += image.at(yy, xx, k);
          ++n;
        }
        if (n == 0) continue;
        for (int k = 0; k < c; ++k) grown.at(y, x, k) = acc[k] / n;
        next.set(y, x, true);
      }
    }
    image = std::move(grown);
    known = std::move(next);
  }
}

CycleResult cycle_warp(const Image& target, const Image& source, const DepthMap& depth_source,
                       const PoseSE3& pose_source_to_target, const DepthMap& depth_target,
                       const PoseSE3& pose_target_to_source, const Intrinsics& k, bool use_stm) {
  if (!target.same_shape(source) || depth_source.height() != source.height() ||
      depth_source.width() != source.width() || depth_target.height() != target.height() ||
      depth_target.width() != target.width()) {
    throw MisuseError("cycle_warp: all rasters must share dimensions");
  }
  CycleResult r;
  r.forward = compute_correspondence(depth_source, pose_source_to_target, k, target.height(),
                                     target.width());
  r.intermediate = bilinear_sample(target, r.forward);
  if (use_stm) {
    fill_out_of_view(r.intermediate, r.forward.valid);
    r.intermediate = structure_transplant(r.intermediate, source);
  }
  r.backward = compute_correspondence(depth_target, pose_target_to_source, k, source.height(),
                                      source.width());
  r.cycled = bilinear_sample(r.intermediate, r.backward);
  r.cycle_valid = cycle_validity(r.forward, r.backward);
  return r;
}

template <class Tag>
WarpGradients warp_gradients(const FeatureMap& grad, const BasicRaster<Tag>& source,
                             const DepthMap& depth, const Twist& twist, const Intrinsics& k) {
  if (grad.height() != depth.height() || grad.width() != depth.width() ||
      grad.channels() != source.channels()) {
    throw MisuseError("warp_gradients: loss gradient does not match the warped output");
  }
  const PoseSE3 pose = se3_exp(twist);
  const Eigen::Matrix3d& r = pose.rotation();
  const Eigen::Vector3d& t = pose.translation();
  const int width = depth.width();
  const int sw = source.width();
  const int sh = source.height();
  const int channels = source.channels();

  WarpGradients out;
  out.d_depth.assign(depth.pixel_count(), 0.0);
  out.d_source = FeatureMap(sh, sw, channels, 0.0);
  Eigen::Vector3d g_trans = Eigen::Vector3d::Zero();
  Eigen::Vector3d g_rot_world = Eigen::Vector3d::Zero();

  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < width; ++x) {
      const size_t i = static_cast<size_t>(y) * width + x;
      if (!depth.valid(i)) continue;
      const Eigen::Vector3d ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d rotated = r * (depth[i] * ray);
      const Eigen::Vector3d p = rotated + t;
      if (!(p.z() > kNearPlane)) continue;
      const double u = k.fx * p.x() / p.z() + k.cx;
      const double v = k.fy * p.y() / p.z() + k.cy;
      if (!in_bounds(u, v, sw, sh)) continue;

      const Taps tp = taps_for(u, v, sw, sh);
      double g_u = 0.0, g_v = 0.0;
      for (int c = 0; c < channels; ++c) {
        const double g = grad.at(y, x, c);
        if (g == 0.0) continue;
        const double i00 = source.at(tp.y0, tp.x0, c), i01 = source.at(tp.y0, tp.x1, c);
        const double i10 = source.at(tp.y1, tp.x0, c), i11 = source.at(tp.y1, tp.x1, c);
        g_u += g * ((1.0 - tp.fy) * (i01 - i00) + tp.fy * (i11 - i10));
        g_v += g * ((1.0 - tp.fx) * (i10 - i00) + tp.fx * (i11 - i01));
        out.d_source.at(tp.y0, tp.x0, c) += g * (1.0 - tp.fx) * (1.0 - tp.fy);
        out.d_source.at(tp.y0, tp.x1, c) += g * tp.fx * (1.0 - tp.fy);
        out.d_source.at(tp.y1, tp.x0, c) += g * (1.0 - tp.fx) * tp.fy;
        out.d_source.at(tp.y1, tp.x1, c) += g * tp.fx * tp.fy;
      }
      if (g_u == 0.0 && g_v == 0.0) continue;

      const double iz = 1.0 / p.z();
      const Eigen::Vector3d g_p(g_u * k.fx * iz, g_v * k.fy * iz,
                                -(g_u * k.fx * p.x() + g_v * k.fy * p.y()) * iz * iz);
      out.d_depth[i] = g_p.dot(r * ray);
      g_trans += g_p;
      g_rot_world += rotated.cross(g_p);
    }
  }
  const Eigen::Vector3d g_rot = so3_left_jacobian(twist.rotation).transpose() * g_rot_world;
  out.d_twist = {g_rot.x(), g_rot.y(), g_rot.z(), g_trans.x(), g_trans.y(), g_trans.z()};
  return out;
}

template double sample_at(const Image&, double, double, int);
template double sample_at(const FeatureMap&, double, double, int);
template Image bilinear_sample(const Image&, const WarpField&);
template FeatureMap bilinear_sample(const FeatureMap&, const WarpField&);
template WarpGradients warp_gradients(const FeatureMap&, const Image&, const DepthMap&,
                                      const Twist&, const Intrinsics&);
template WarpGradients warp_gradients(const FeatureMap&, const FeatureMap&, const DepthMap&,
                                      const Twist&, const Intrinsics&);

}  // namespace cyclewarp
