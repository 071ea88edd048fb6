#include <doctest.h>

#include <cmath>
#include <random>

#include "cyclewarp/synth.hpp"
#include "cyclewarp/warp.hpp"
#include "oracles.hpp"

using namespace cyclewarp;

namespace {

double v_of(const Image& img, int y, int x) {
  return std::max({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
}

}  // namespace

TEST_CASE("identity baseline on a plane renders identical views") {
  SceneSpec spec = default_scene_spec(SurfaceKind::kFrontoParallel, 4);
  spec.baseline = Twist();
  const SyntheticScene s = generate_scene(spec);
  CHECK(s.source == s.target);
  for (size_t i = 0; i < s.gt_depth_target.pixel_count(); ++i) {
    CHECK(s.gt_depth_target[i] == doctest::Approx(spec.nominal_depth).epsilon(1e-12));
    CHECK(s.gt_depth_source[i] == doctest::Approx(spec.nominal_depth).epsilon(1e-12));
  }
}

TEST_CASE("plane at 100 with fx 200 and 5 units of x translation gives 10 px disparity") {
  SceneSpec spec = default_scene_spec(SurfaceKind::kFrontoParallel, 1);
  spec.intrinsics = Intrinsics(200.0, 200.0, 31.5, 31.5);
  spec.baseline = Twist({0, 0, 0}, {5.0, 0, 0});
  const SyntheticScene s = generate_scene(spec);
  const WarpField f = compute_correspondence(s.gt_depth_target, s.gt_pose_target_to_source,
                                             s.intrinsics);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 54; ++x) {
      CHECK(f.u[static_cast<size_t>(y) * 64 + x] - x == doctest::Approx(10.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("ground-truth poses are mutual inverses") {
  for (auto surf : {SurfaceKind::kFrontoParallel, SurfaceKind::kInclined, SurfaceKind::kBumps}) {
    const SyntheticScene s = generate_scene(default_scene_spec(surf, 7));
    const PoseSE3 c = se3_compose(s.gt_pose_source_to_target, s.gt_pose_target_to_source);
    CHECK((c.homogeneous() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("rendering is self-consistent under the true geometry") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    for (auto surf : {SurfaceKind::kFrontoParallel, SurfaceKind::kInclined, SurfaceKind::kBumps}) {
      const SyntheticScene s = generate_scene(default_scene_spec(surf, seed));
      const WarpResult w =
          warp_image(s.source, s.gt_depth_target, s.gt_pose_target_to_source, s.intrinsics);
      double err = 0.0;
      size_t n = 0;
      for (size_t i = 0; i < w.field.size(); ++i) {
        if (!w.field.valid[i]) continue;
        for (int c = 0; c < 3; ++c) err += std::abs(w.image.storage()[i * 3 + c] - s.target.storage()[i * 3 + c]);
        n += 3;
      }
      CHECK(n > 0);
      CHECK(err / n < 1e-2);
    }
  }
}

TEST_CASE("ground truth returns within 0.05 px around the view cycle") {
  const SyntheticScene s = generate_scene(default_scene_spec(SurfaceKind::kBumps, 2));
  const WarpField ts = compute_correspondence(s.gt_depth_target, s.gt_pose_target_to_source,
                                              s.intrinsics);
  const WarpField st = compute_correspondence(s.gt_depth_source, s.gt_pose_source_to_target,
                                              s.intrinsics);
  int checked = 0;
  for (size_t i = 0; i < ts.size(); ++i) {
    if (!ts.valid[i]) continue;
    const double u = ts.u[i], v = ts.v[i];
    const double bu = sample_at(FeatureMap(64, 64, 1, st.u), u, v, 0);
    const double bv = sample_at(FeatureMap(64, 64, 1, st.v), u, v, 0);
    const int x = static_cast<int>(i % 64), y = static_cast<int>(i / 64);
    // Only interior samples whose four taps are all valid.
    const int x0 = std::min(static_cast<int>(u), 62), y0 = std::min(static_cast<int>(v), 62);
    if (!(st.valid.at(y0, x0) && st.valid.at(y0, x0 + 1) && st.valid.at(y0 + 1, x0) &&
          st.valid.at(y0 + 1, x0 + 1)))
      continue;
    CHECK(std::hypot(bu - x, bv - y) < 0.05);
    ++checked;
  }
  CHECK(checked > 2000);
}

TEST_CASE("depth stays within a quarter to four times the nominal distance") {
  for (auto surf : {SurfaceKind::kFrontoParallel, SurfaceKind::kInclined, SurfaceKind::kBumps}) {
    const SyntheticScene s = generate_scene(default_scene_spec(surf, 3));
    for (const DepthMap* d : {&s.gt_depth_source, &s.gt_depth_target}) {
      for (size_t i = 0; i < d->pixel_count(); ++i) {
        if (!d->valid(i)) continue;
        CHECK((*d)[i] >= 25.0);
        CHECK((*d)[i] <= 400.0);
      }
    }
  }
}

TEST_CASE("scene generation is deterministic and seed-dependent") {
  const SceneSpec a = default_scene_spec(SurfaceKind::kBumps, 5);
  CHECK(generate_scene(a).source == generate_scene(a).source);
  CHECK_FALSE(generate_scene(a).source == generate_scene(default_scene_spec(SurfaceKind::kBumps, 6)).source);
}

TEST_CASE("grazing geometry is reported as a degenerate scene") {
  SceneSpec spec = default_scene_spec(SurfaceKind::kFrontoParallel, 0);
  spec.baseline = Twist({0, 2.0, 0}, {0, 0, 0});
  CHECK_THROWS_AS(generate_scene(spec), DegenerateSceneError);
}

TEST_CASE("small resolutions are rejected") {
  CHECK_THROWS_AS(generate_scene(default_scene_spec(SurfaceKind::kBumps, 0, 8)), MisuseError);
}

TEST_CASE("HSV conversion round-trips and treats gray as V") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double r = u(rng), g = u(rng), b = u(rng);
    double h, s, v, r2, g2, b2;
    rgb_to_hsv(r, g, b, h, s, v);
    CHECK(v == std::max({r, g, b}));
    hsv_to_rgb(h, s, v, r2, g2, b2);
    CHECK(std::abs(r - r2) < 1e-12);
    CHECK(std::abs(g - g2) < 1e-12);
    CHECK(std::abs(b - b2) < 1e-12);
  }
  double h, s, v;
  rgb_to_hsv(0.4, 0.4, 0.4, h, s, v);
  CHECK(s == 0.0);
  CHECK(v == 0.4);
}

TEST_CASE("global perturbation scales achromatic intensities and clamps") {
  const Image gray(4, 4, 3, 0.5);
  CHECK(perturb_global(gray, 1.0) == gray);
  const Image up = perturb_global(gray, 1.2);
  for (double x : up.storage()) CHECK(x == doctest::Approx(0.6).epsilon(1e-15));
  const Image sat = perturb_global(Image(2, 2, 3, 0.9), 1.2);
  for (double x : sat.storage()) CHECK(x == 1.0);
  CHECK_THROWS_AS(perturb_global(gray, 0.0), MisuseError);
}

TEST_CASE("global perturbation inverts away from clamped pixels") {
  const Image img = oracle::random_image(16, 16, 3, 3, 0.0, 0.8);
  const double k = 1.15;
  const Image back = perturb_global(perturb_global(img, k), 1.0 / k);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      if (k * v_of(img, y, x) >= 1.0) continue;
      for (int c = 0; c < 3; ++c) CHECK(std::abs(back.at(y, x, c) - img.at(y, x, c)) < 1e-9);
    }
  }
}

TEST_CASE("global k is drawn from the two admissible bands") {
  for (uint64_t seed = 0; seed < 500; ++seed) {
    const double k = sample_global_k(seed);
    CHECK(((k >= 0.8 && k <= 0.9) || (k >= 1.1 && k <= 1.2)));
  }
}

TEST_CASE("a single spot follows the Gaussian closed form") {
  const Image gray(64, 64, 3, 0.4);
  const Image out = add_spot(gray, {32.0, 32.0, 10.0, 0.3});
  CHECK(v_of(out, 32, 32) - 0.4 == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(v_of(out, 32, 42) - 0.4 == doctest::Approx(0.3 * std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("local perturbation: zero spots is the identity, otherwise deterministic") {
  const Image img = oracle::random_image(32, 32, 3, 4);
  PerturbationSpec spec;
  spec.spot_count = 0;
  CHECK(perturb_local(img, spec) == img);
  spec.spot_count = 3;
  spec.seed = 9;
  CHECK(perturb_local(img, spec) == perturb_local(img, spec));
  CHECK_FALSE(perturb_local(img, spec) == img);
  PerturbationSpec bad = spec;
  bad.spot_sigma_min = 0.0;
  CHECK_THROWS_AS(perturb_local(img, bad), MisuseError);
}

TEST_CASE("full perturbation applies a fixed k then spots") {
  const Image img = oracle::random_image(16, 16, 3, 5, 0.1, 0.6);
  PerturbationSpec spec;
  spec.global_k = 1.2;
  spec.spot_count = 0;
  CHECK(apply_perturbation(img, spec) == perturb_global(img, 1.2));
  spec.apply_global = false;
  CHECK(apply_perturbation(img, spec) == img);
}
