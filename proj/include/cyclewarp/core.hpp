#pragma once

// Raster and geometry primitives shared by every module.
//
// Rasters are row-major, channel-interleaved, double precision:
//   data[(y * width + x) * channels + c]

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cyclewarp/errors.hpp"

namespace cyclewarp {

template <class Tag>
class BasicRaster {
 public:
  BasicRaster() = default;
  BasicRaster(int height, int width, int channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0) {
      throw MisuseError("raster dimensions must be strictly positive");
    }
    data_.assign(static_cast<size_t>(height) * width * channels, fill);
  }
  BasicRaster(int height, int width, int channels, std::vector<double> data)
      : BasicRaster(height, width, channels) {
    if (data.size() != data_.size()) {
      throw MisuseError("raster data size does not match dimensions");
    }
    data_ = std::move(data);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  size_t pixel_count() const { return static_cast<size_t>(height_) * width_; }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c = 0) {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }
  double at(int y, int x, int c = 0) const {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool same_shape(int h, int w, int c) const {
    return height_ == h && width_ == w && channels_ == c;
  }
  template <class Other>
  bool same_shape(const BasicRaster<Other>& o) const {
    return same_shape(o.height(), o.width(), o.channels());
  }

  bool operator==(const BasicRaster&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

struct ImageTag {};
struct FeatureTag {};

/// Intensity raster with 1 or 3 channels; values live in [0,1] after clamping.
using Image = BasicRaster<ImageTag>;
/// Unbounded real-valued responses (feature maps, raw inverse transforms).
using FeatureMap = BasicRaster<FeatureTag>;

/// Builds an Image, rejecting channel counts other than 1 or 3.
Image make_image(int height, int width, int channels, double fill = 0.0);
Image make_image(int height, int width, int channels, std::vector<double> data);
void clamp_unit(Image& image);

template <class To, class From>
BasicRaster<To> raster_cast(const BasicRaster<From>& r) {
  return BasicRaster<To>(r.height(), r.width(), r.channels(), r.storage());
}

/// Per-pixel boolean mask.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, bool fill = false)
      : height_(height), width_(width),
        data_(static_cast<size_t>(height) * width, fill ? 1 : 0) {
    if (height <= 0 || width <= 0) {
      throw MisuseError("mask dimensions must be strictly positive");
    }
  }
  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int y, int x) const { return data_[static_cast<size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v) { data_[static_cast<size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool operator[](size_t i) const { return data_[i] != 0; }
  void set(size_t i, bool v) { data_[i] = v ? 1 : 0; }
  size_t size() const { return data_.size(); }
  size_t count() const;
  Mask operator&(const Mask& other) const;
  bool operator==(const Mask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<uint8_t> data_;
};

/// Depth raster in scene units (millimetres by convention) with validity.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int height, int width, double fill = 1.0);
  /// Pixels whose depth is non-finite or <= 0 are marked invalid.
  DepthMap(int height, int width, std::vector<double> depth);
  DepthMap(int height, int width, std::vector<double> depth, Mask valid);

  int height() const { return height_; }
  int width() const { return width_; }
  size_t pixel_count() const { return depth_.size(); }
  double at(int y, int x) const { return depth_[static_cast<size_t>(y) * width_ + x]; }
  double operator[](size_t i) const { return depth_[i]; }
  bool valid(int y, int x) const { return valid_.at(y, x); }
  bool valid(size_t i) const { return valid_[i]; }
  const Mask& mask() const { return valid_; }
  const std::vector<double>& values() const { return depth_; }

  bool operator==(const DepthMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> depth_;
  Mask valid_;
};

/// Ideal pinhole camera.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Intrinsics() = default;
  Intrinsics(double fx_, double fy_, double cx_, double cy_);
  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse() const;
  bool operator==(const Intrinsics&) const = default;
};

/// Axis-angle rotation (radians) followed by a raw translation.
struct Twist {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Twist() = default;
  Twist(const Eigen::Vector3d& rot, const Eigen::Vector3d& trans);
  static Twist from_array(const std::array<double, 6>& v);
  std::array<double, 6> to_array() const;
  bool operator==(const Twist& o) const {
    return rotation == o.rotation && translation == o.translation;
  }
};

/// Rigid transform x -> R x + t.
class PoseSE3 {
 public:
  PoseSE3() = default;
  PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static PoseSE3 identity() { return {}; }

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return rotation_ * x + translation_;
  }
  Eigen::Matrix4d homogeneous() const;

 private:
  Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Rodrigues rotation of the rotation part; translation copied verbatim.
PoseSE3 se3_exp(const Twist& xi);
/// Applies b first, then a.
PoseSE3 se3_compose(const PoseSE3& a, const PoseSE3& b);
PoseSE3 se3_inverse(const PoseSE3& t);

/// Left Jacobian of SO(3): d(exp(w) x)/dw = -[exp(w) x]_x * J_l(w).
Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& omega);

}  // namespace cyclewarp
