#include "cyclewarp/core.hpp"

#include <algorithm>
#include <cmath>

namespace cyclewarp {

Image make_image(int height, int width, int channels, double fill) {
  if (channels != 1 && channels != 3) {
    throw MisuseError("images carry 1 or 3 channels");
  }
  return Image(height, width, channels, fill);
}

Image make_image(int height, int width, int channels, std::vector<double> data) {
  if (channels != 1 && channels != 3) {
    throw MisuseError("images carry 1 or 3 channels");
  }
  return Image(height, width, channels, std::move(data));
}

void clamp_unit(Image& image) {
  for (double& v : image.data()) {
    v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  }
}

size_t Mask::count() const {
  return static_cast<size_t>(std::count(data_.begin(), data_.end(), uint8_t{1}));
}

Mask Mask::operator&(const Mask& other) const {
  if (other.height_ != height_ || other.width_ != width_) {
    throw MisuseError("mask dimensions differ");
  }
  Mask out = *this;
  for (size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] & other.data_[i];
  return out;
}

DepthMap::DepthMap(int height, int width, double fill)
    : DepthMap(height, width,
               std::vector<double>(static_cast<size_t>(std::max(height, 0)) *
                                       std::max(width, 0),
                                   fill)) {}

DepthMap::DepthMap(int height, int width, std::vector<double> depth)
    : height_(height), width_(width), depth_(std::move(depth)), valid_(height, width) {
  if (depth_.size() != static_cast<size_t>(height) * width) {
    throw MisuseError("depth data size does not match dimensions");
  }
  for (size_t i = 0; i < depth_.size(); ++i) {
    valid_.set(i, std::isfinite(depth_[i]) && depth_[i] > 0.0);
  }
}

DepthMap::DepthMap(int height, int width, std::vector<double> depth, Mask valid)
    : DepthMap(height, width, std::move(depth)) {
  if (valid.height() != height || valid.width() != width) {
    throw MisuseError("depth mask dimensions do not match depth");
  }
  valid_ = valid_ & valid;
}

Intrinsics::Intrinsics(double fx_, double fy_, double cx_, double cy_)
    : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw MisuseError("focal lengths must be positive");
  }
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Eigen::Matrix3d Intrinsics::inverse() const {
  Eigen::Matrix3d k;
  k << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
  return k;
}

Twist::Twist(const Eigen::Vector3d& rot, const Eigen::Vector3d& trans)
    : rotation(rot), translation(trans) {}

Twist Twist::from_array(const std::array<double, 6>& v) {
  return Twist({v[0], v[1], v[2]}, {v[3], v[4], v[5]});
}

std::array<double, 6> Twist::to_array() const {
  return {rotation.x(), rotation.y(), rotation.z(),
          translation.x(), translation.y(), translation.z()};
}

PoseSE3::PoseSE3(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {}

Eigen::Matrix4d PoseSE3::homogeneous() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  // clang-format off
  s <<     0, -v.z(),  v.y(),
       v.z(),      0, -v.x(),
      -v.y(),  v.x(),      0;
  // clang-format on
  return s;
}

PoseSE3 se3_exp(const Twist& xi) {
  const Eigen::Vector3d& w = xi.rotation;
  const double theta2 = w.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 1e-5) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Eigen::Matrix3d wx = skew(w);
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity() + a * wx + b * (wx * wx);
  return PoseSE3(r, xi.translation);
}

PoseSE3 se3_compose(const PoseSE3& a, const PoseSE3& b) {
  return PoseSE3(a.rotation() * b.rotation(),
                 a.rotation() * b.translation() + a.translation());
}

PoseSE3 se3_inverse(const PoseSE3& t) {
  Eigen::Matrix3d rt = t.rotation().transpose();
  return PoseSE3(rt, -(rt * t.translation()));
}

Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  double c1, c2;
  if (theta < 1e-4) {
    c1 = 0.5 - theta2 / 24.0;
    c2 = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    c1 = (1.0 - std::cos(theta)) / theta2;
    c2 = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Eigen::Matrix3d wx = skew(omega);
  return Eigen::Matrix3d::Identity() + c1 * wx + c2 * (wx * wx);
}

}  // namespace cyclewarp
