#include "cyclewarp/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace cyclewarp {

std::string to_string(SurfaceKind s) {
  switch (s) {
    case SurfaceKind::kFrontoParallel: return "plane";
    case SurfaceKind::kInclined: return "inclined";
    case SurfaceKind::kBumps: return "bumps";
  }
  return "?";
}

std::string to_string(TextureKind t) {
  return t == TextureKind::kValueNoise ? "noise" : "checker_noise";
}

SurfaceKind surface_from_string(const std::string& s) {
  if (s == "plane") return SurfaceKind::kFrontoParallel;
  if (s == "inclined") return SurfaceKind::kInclined;
  if (s == "bumps") return SurfaceKind::kBumps;
  throw ConfigError("unknown surface '" + s + "' (plane|inclined|bumps)");
}

TextureKind texture_from_string(const std::string& s) {
  if (s == "noise") return TextureKind::kValueNoise;
  if (s == "checker_noise") return TextureKind::kCheckerNoise;
  throw ConfigError("unknown texture '" + s + "' (noise|checker_noise)");
}

SceneSpec default_scene_spec(SurfaceKind surface, uint64_t seed, int size) {
  SceneSpec spec;
  spec.height = spec.width = size;
  spec.surface = surface;
  spec.seed = seed;
  const double f = static_cast<double>(size);
  spec.intrinsics = Intrinsics(f, f, (size - 1) / 2.0, (size - 1) / 2.0);

  std::mt19937_64 rng(seed ^ 0x5bd1e995u);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double d0 = spec.nominal_depth;
  const double sign = unit(rng) < 0 ? -1.0 : 1.0;
  spec.baseline.translation = Eigen::Vector3d(sign * (0.06 + 0.015 * unit(rng)) * d0,
                                              0.02 * d0 * unit(rng), 0.01 * d0 * unit(rng));
  spec.baseline.rotation = Eigen::Vector3d(0.015 * unit(rng), 0.015 * unit(rng),
                                           0.015 * unit(rng));
  return spec;
}

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(int64_t ix, int64_t iy, uint64_t stream) {
  uint64_t h = splitmix(stream ^ splitmix(static_cast<uint64_t>(ix) * 0x632be59bd9b4e019ULL ^
                                          splitmix(static_cast<uint64_t>(iy))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// C2-smooth value noise in [0,1] with unit lattice spacing.
double value_noise(double x, double y, uint64_t stream) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
  const double sx = quintic(x - fx), sy = quintic(y - fy);
  const double a = lattice(ix, iy, stream), b = lattice(ix + 1, iy, stream);
  const double c = lattice(ix, iy + 1, stream), d = lattice(ix + 1, iy + 1, stream);
  return (a + (b - a) * sx) * (1.0 - sy) + (c + (d - c) * sx) * sy;
}

double octave_noise(double x, double y, double period, uint64_t stream) {
  static constexpr std::array<double, 3> kAmp{1.0, 0.45, 0.2};
  double sum = 0.0, norm = 0.0, p = period;
  for (size_t o = 0; o < kAmp.size(); ++o) {
    sum += kAmp[o] * value_noise(x / p, y / p, splitmix(stream + o));
    norm += kAmp[o];
    p *= 0.5;
  }
  return sum / norm;
}

struct Bump {
  double x, y, amp, sigma;
};

class Surface {
 public:
  explicit Surface(const SceneSpec& spec) : kind_(spec.surface), d0_(spec.nominal_depth) {
    std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ULL + 17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto sgn = [&] { return unit(rng) < 0.5 ? -1.0 : 1.0; };
    if (kind_ == SurfaceKind::kInclined) {
      gx_ = sgn() * (0.15 + 0.2 * unit(rng));
      gy_ = sgn() * (0.1 * unit(rng));
    } else if (kind_ == SurfaceKind::kBumps) {
      // Footprint half-width of the view at d0.
      const double half = 0.5 * spec.width / spec.intrinsics.fx * d0_;
      for (int i = 0; i < 4; ++i) {
        bumps_.push_back({(2.0 * unit(rng) - 1.0) * 0.8 * half,
                          (2.0 * unit(rng) - 1.0) * 0.8 * half,
                          sgn() * (0.08 + 0.12 * unit(rng)) * d0_,
                          (0.12 + 0.12 * unit(rng)) * d0_});
      }
    }
  }

  // Height z = f(x, y) and its gradient.
  double eval(double x, double y, double& dfx, double& dfy) const {
    double z = d0_ + gx_ * x + gy_ * y;
    dfx = gx_;
    dfy = gy_;
    for (const Bump& b : bumps_) {
      const double dx = x - b.x, dy = y - b.y;
      const double e = b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      z += e;
      dfx += -e * dx / (b.sigma * b.sigma);
      dfy += -e * dy / (b.sigma * b.sigma);
    }
    return z;
  }

  // Solves o + lambda * r on the surface; lambda is the camera depth when r
  // is the rotated (x, y, 1) ray.
  std::optional<double> intersect(const Eigen::Vector3d& o, const Eigen::Vector3d& r) const {
    auto g = [&](double lambda, double& dg) {
      double dfx, dfy;
      const double f = eval(o.x() + lambda * r.x(), o.y() + lambda * r.y(), dfx, dfy);
      dg = r.z() - dfx * r.x() - dfy * r.y();
      return o.z() + lambda * r.z() - f;
    };
    const double lo = 0.25 * d0_, hi = 4.0 * d0_;
    double lambda = std::clamp((d0_ - o.z()) / r.z(), lo, hi);
    for (int it = 0; it < 40; ++it) {
      double dg;
      const double val = g(lambda, dg);
      if (std::abs(val) < 1e-12 * d0_) return lambda >= lo && lambda <= hi ? std::optional(lambda) : std::nullopt;
      if (dg == 0.0) break;
      const double next = lambda - val / dg;
      if (!(next >= lo && next <= hi)) break;
      lambda = next;
    }
    // Fallback: scan for the first sign change, then bisect.
    const int steps = 400;
    double dg;
    double prev_l = lo, prev_v = g(lo, dg);
    for (int i = 1; i <= steps; ++i) {
      const double l = lo + (hi - lo) * i / steps;
      const double v = g(l, dg);
      if ((prev_v <= 0.0) != (v <= 0.0)) {
        double a = prev_l, b = l, va = prev_v;
        for (int k = 0; k < 100; ++k) {
          const double m = 0.5 * (a + b);
          const double vm = g(m, dg);
          if ((va <= 0.0) == (vm <= 0.0)) {
            a = m;
            va = vm;
          } else {
            b = m;
          }
        }
        return 0.5 * (a + b);
      }
      prev_l = l;
      prev_v = v;
    }
    return std::nullopt;
  }

 private:
  SurfaceKind kind_;
  double d0_;
  double gx_ = 0.0, gy_ = 0.0;
  std::vector<Bump> bumps_;
};

class Texture {
 public:
  explicit Texture(const SceneSpec& spec)
      : kind_(spec.texture),
        period_(spec.texture_period_px * spec.nominal_depth / spec.intrinsics.fx),
        seed_(splitmix(spec.seed + 0x1234)) {}

  std::array<double, 3> shade(double x, double y) const {
    double lum = octave_noise(x, y, period_, seed_);
    if (kind_ == TextureKind::kCheckerNoise) {
      const double p = 2.0 * period_;
      const double q = 0.5 + 0.5 * std::tanh(3.0 * std::sin(2.0 * std::numbers::pi * x / p) *
                                             std::sin(2.0 * std::numbers::pi * y / p));
      lum = 0.5 * q + 0.5 * lum;
    }
    std::array<double, 3> rgb;
    static constexpr std::array<double, 3> kTint{1.0, 0.75, 0.6};
    for (int c = 0; c < 3; ++c) {
      const double chroma = octave_noise(x, y, 1.5 * period_, splitmix(seed_ + 101 + c));
      rgb[c] = std::clamp(0.1 + 0.8 * kTint[c] * (0.7 * lum + 0.3 * chroma), 0.0, 1.0);
    }
    return rgb;
  }

 private:
  TextureKind kind_;
  double period_;
  uint64_t seed_;
};

struct RenderedView {
  Image image;
  DepthMap depth;
  size_t misses = 0;
};

RenderedView render(const SceneSpec& spec, const Surface& surface, const Texture& texture,
                    const PoseSE3& camera_to_world) {
  const int h = spec.height, w = spec.width;
  const Intrinsics& k = spec.intrinsics;
  Image img = make_image(h, w, 3, 0.0);
  std::vector<double> depth(static_cast<size_t>(h) * w, 0.0);
  size_t misses = 0;
  const Eigen::Vector3d& origin = camera_to_world.translation();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3d ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d dir = camera_to_world.rotation() * ray;
      const auto lambda = surface.intersect(origin, dir);
      if (!lambda) {
        ++misses;
        continue;
      }
      const Eigen::Vector3d hit = origin + *lambda * dir;
      const auto rgb = texture.shade(hit.x(), hit.y());
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
      depth[static_cast<size_t>(y) * w + x] = *lambda;
    }
  }
  return {std::move(img), DepthMap(h, w, std::move(depth)), misses};
}

}  // namespace

SyntheticScene generate_scene(const SceneSpec& spec) {
  if (spec.height < 16 || spec.width < 16) {
    throw MisuseError("generate_scene: resolution must be at least 16 pixels");
  }
  if (!(spec.nominal_depth > 0.0) || !(spec.texture_period_px > 0.0)) {
    throw MisuseError("generate_scene: nominal depth and texture period must be positive");
  }
  const Surface surface(spec);
  const Texture texture(spec);

  SyntheticScene scene;
  scene.spec = spec;
  scene.intrinsics = spec.intrinsics;
  scene.gt_pose_target_to_source = se3_exp(spec.baseline);
  scene.gt_pose_source_to_target = se3_inverse(scene.gt_pose_target_to_source);

  // World frame is the target camera.
  RenderedView tv = render(spec, surface, texture, PoseSE3::identity());
  RenderedView sv = render(spec, surface, texture, scene.gt_pose_source_to_target);
  const double limit = 0.3 * static_cast<double>(spec.height) * spec.width;
  if (tv.misses > limit || sv.misses > limit) {
    throw DegenerateSceneError("generate_scene: more than 30% of pixels see no surface");
  }
  scene.target = std::move(tv.image);
  scene.gt_depth_target = std::move(tv.depth);
  scene.source = std::move(sv.image);
  scene.gt_depth_source = std::move(sv.depth);
  return scene;
}

double sample_global_k(uint64_t seed) {
  std::mt19937_64 rng(splitmix(seed + 0xabcdef));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double t = u(rng);
  return u(rng) < 0.5 ? 0.8 + 0.1 * t : 1.1 + 0.1 * t;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  v = mx;
  s = mx > 0.0 ? delta / mx : 0.0;
  if (delta <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = (g - b) / delta;
    if (h < 0.0) h += 6.0;
  } else if (mx == g) {
    h = 2.0 + (b - r) / delta;
  } else {
    h = 4.0 + (r - g) / delta;
  }
  h *= 60.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  if (s <= 0.0) {
    r = g = b = v;
    return;
  }
  double hh = h / 60.0;
  if (hh >= 6.0) hh = 0.0;
  const int sector = static_cast<int>(hh);
  const double f = hh - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

namespace {

template <class Fn>
Image map_value_channel(const Image& image, Fn&& fn) {
  Image out = image;
  const int channels = image.channels();
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (channels == 1) {
        out.at(y, x) = std::clamp(fn(image.at(y, x), y, x), 0.0, 1.0);
        continue;
      }
      double h, s, v;
      rgb_to_hsv(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2), h, s, v);
      v = std::clamp(fn(v, y, x), 0.0, 1.0);
      hsv_to_rgb(h, s, v, out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2));
    }
  }
  return out;
}

}  // namespace

Image perturb_global(const Image& image, double k) {
  if (!(k > 0.0)) throw MisuseError("perturb_global: k must be positive");
  if (k == 1.0) return image;
  return map_value_channel(image, [k](double v, int, int) { return k * v; });
}

Image add_spot(const Image& image, const SpotParams& spot) {
  if (!(spot.sigma > 0.0)) throw MisuseError("add_spot: sigma must be positive");
  const double inv = 1.0 / (2.0 * spot.sigma * spot.sigma);
  return map_value_channel(image, [&](double v, int y, int x) {
    const double dx = x - spot.cx, dy = y - spot.cy;
    return v + spot.amplitude * std::exp(-(dx * dx + dy * dy) * inv);
  });
}

Image perturb_local(const Image& image, const PerturbationSpec& spec) {
  if (!(spec.spot_sigma_min > 0.0) || spec.spot_sigma_max < spec.spot_sigma_min) {
    throw MisuseError("perturb_local: invalid spot sigma range");
  }
  std::mt19937_64 rng(splitmix(spec.seed + 0x51507));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image out = image;
  for (int i = 0; i < spec.spot_count; ++i) {
    SpotParams spot;
    spot.cx = u(rng) * image.width();
    spot.cy = u(rng) * image.height();
    spot.sigma = spec.spot_sigma_min + u(rng) * (spec.spot_sigma_max - spec.spot_sigma_min);
    spot.amplitude =
        spec.spot_amplitude_min + u(rng) * (spec.spot_amplitude_max - spec.spot_amplitude_min);
    if (u(rng) < 0.5) spot.amplitude = -spot.amplitude;
    out = add_spot(out, spot);
  }
  return out;
}

Image apply_perturbation(const Image& image, const PerturbationSpec& spec) {
  Image out = image;
  if (spec.apply_global) {
    const double k = spec.global_k ? *spec.global_k : sample_global_k(spec.seed);
    if (!(k > 0.0)) throw MisuseError("perturbation: global_k must be positive");
    out = perturb_global(out, k);
  }
  return perturb_local(out, spec);
}

}  // namespace cyclewarp
