#include <doctest.h>

#include <random>

#include "cyclewarp/warp.hpp"
#include "oracles.hpp"

using namespace cyclewarp;

namespace {

DepthMap random_depth(int h, int w, uint64_t seed, double lo = 80.0, double hi = 120.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> d(static_cast<size_t>(h) * w);
  for (double& v : d) v = u(rng);
  return DepthMap(h, w, d);
}

Twist small_twist(uint64_t seed, double rot = 0.02, double trans = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  return Twist({rot * n(rng), rot * n(rng), rot * n(rng)},
               {trans * n(rng), trans * n(rng), trans * n(rng)});
}

const Intrinsics kCam(60.0, 60.0, 15.5, 15.5);

}  // namespace

TEST_CASE("identity pose gives the identity grid exactly") {
  const DepthMap d = random_depth(32, 32, 1);
  const WarpField f = compute_correspondence(d, PoseSE3::identity(), kCam);
  const WarpField id = identity_field(32, 32);
  CHECK(f.u == id.u);
  CHECK(f.v == id.v);
  CHECK(f.valid == id.valid);
}

TEST_CASE("pure x translation shifts u by fx * tx / d") {
  const Intrinsics k(100.0, 100.0, 16.0, 16.0);
  const DepthMap d(32, 32, 1.0);
  const WarpField f = compute_correspondence(d, se3_exp(Twist({0, 0, 0}, {0.1, 0, 0})), k);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 22; ++x) {
      const size_t i = static_cast<size_t>(y) * 32 + x;
      CHECK(std::abs(f.u[i] - (x + 10.0)) < 1e-10);
      CHECK(std::abs(f.v[i] - y) < 1e-10);
      CHECK(f.valid[i]);
    }
    CHECK_FALSE(f.valid[static_cast<size_t>(y) * 32 + 22]);
  }
}

TEST_CASE("correspondence matches the homogeneous projection chain") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const DepthMap d = random_depth(24, 28, seed);
    const PoseSE3 pose = se3_exp(small_twist(seed + 100));
    const WarpField f = compute_correspondence(d, pose, kCam, 24, 28);
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 28; ++x) {
        const size_t i = static_cast<size_t>(y) * 28 + x;
        double u = 0, v = 0;
        REQUIRE(oracle::project(kCam, pose.homogeneous(), x, y, d[i], u, v));
        const bool inside = u >= 0 && v >= 0 && u <= 27 && v <= 23;
        CHECK(f.valid[i] == inside);
        if (inside) {
          CHECK(std::abs(f.u[i] - u) < 1e-10);
          CHECK(std::abs(f.v[i] - v) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("points behind the camera are invalid") {
  const DepthMap d(8, 8, 1.0);
  const WarpField f = compute_correspondence(d, se3_exp(Twist({0, 0, 0}, {0, 0, -2.0})), kCam);
  CHECK(f.valid.count() == 0);
}

TEST_CASE("invalid depth pixels stay invalid") {
  std::vector<double> v(16, 50.0);
  v[5] = 0.0;
  const WarpField f = compute_correspondence(DepthMap(4, 4, v), PoseSE3::identity(), kCam);
  CHECK_FALSE(f.valid[5]);
  CHECK(f.valid.count() == 15);
}

TEST_CASE("bilinear sampling matches the four-neighbour formula") {
  const Image src = oracle::random_image(20, 24, 3, 9);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ux(0.0, 23.0), uy(0.0, 19.0);
  WarpField f = identity_field(10, 10);
  f.source_height = 20;
  f.source_width = 24;
  for (size_t i = 0; i < f.size(); ++i) {
    f.u[i] = ux(rng);
    f.v[i] = uy(rng);
  }
  f.u[0] = 23.0;  // right and bottom borders exactly
  f.v[0] = 19.0;
  f.u[1] = 0.0;
  f.v[1] = 0.0;
  const Image out = bilinear_sample(src, f);
  for (size_t i = 0; i < f.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(out.storage()[i * 3 + c] - oracle::bilinear(src, f.u[i], f.v[i], c)) < 1e-12);
    }
  }
  CHECK(out.at(0, 0, 0) == src.at(19, 23, 0));
}

TEST_CASE("bilinear sampling zeroes invalid pixels and checks shapes") {
  const Image src = oracle::random_image(8, 8, 1, 1);
  WarpField f = identity_field(8, 8);
  f.valid.set(size_t{3}, false);
  const Image out = bilinear_sample(src, f);
  CHECK(out.storage()[3] == 0.0);
  CHECK(out.storage()[4] == src.storage()[4]);
  CHECK_THROWS_AS(bilinear_sample(oracle::random_image(9, 8, 1, 1), f), MisuseError);
}

TEST_CASE("fill_out_of_view keeps valid pixels and averages rings inward") {
  Image img(1, 5, 1, std::vector<double>{0.0, 0.2, 0.0, 0.6, 0.0});
  Mask m(1, 5, false);
  m.set(size_t{1}, true);
  m.set(size_t{3}, true);
  fill_out_of_view(img, m);
  CHECK(img.storage()[0] == 0.2);
  CHECK(img.storage()[1] == 0.2);
  CHECK(img.storage()[2] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(img.storage()[3] == 0.6);
  CHECK(img.storage()[4] == 0.6);

  Image blank(3, 3, 1, 0.5);
  fill_out_of_view(blank, Mask(3, 3, false));
  CHECK(blank == Image(3, 3, 1, 0.5));
  CHECK_THROWS_AS(fill_out_of_view(blank, Mask(2, 3, true)), MisuseError);
}

TEST_CASE("fill_out_of_view commutes with positive scaling") {
  Image img = oracle::random_image(12, 12, 3, 2);
  Mask m(12, 12, false);
  for (int y = 3; y < 9; ++y)
    for (int x = 2; x < 7; ++x) m.set(y, x, true);
  Image scaled = img;
  for (double& v : scaled.storage()) v *= 1.2;
  fill_out_of_view(img, m);
  fill_out_of_view(scaled, m);
  for (size_t i = 0; i < img.storage().size(); ++i) {
    CHECK(std::abs(scaled.storage()[i] - 1.2 * img.storage()[i]) < 1e-12);
  }
}

TEST_CASE("cycle warp without transplant ignores source intensities") {
  const Image target = oracle::smooth_image(24, 24, 3, 1);
  const Image source_a = oracle::random_image(24, 24, 3, 2);
  const Image source_b = oracle::random_image(24, 24, 3, 3);
  const DepthMap ds = random_depth(24, 24, 4, 95, 105), dt = random_depth(24, 24, 5, 95, 105);
  const Twist tw = small_twist(6, 0.005, 1.0);
  const PoseSE3 ts = se3_exp(tw), st = se3_inverse(ts);
  const CycleResult a = cycle_warp(target, source_a, ds, st, dt, ts, kCam, false);
  const CycleResult b = cycle_warp(target, source_b, ds, st, dt, ts, kCam, false);
  CHECK(a.cycled == b.cycled);
  CHECK(a.cycle_valid == b.cycle_valid);
  CHECK(a.cycle_valid.count() > 0);
}

TEST_CASE("cycle warp with identity motion returns the target") {
  const Image target = oracle::random_image(16, 16, 1, 8);
  const DepthMap d(16, 16, 100.0);
  const CycleResult r = cycle_warp(target, target, d, PoseSE3::identity(), d,
                                   PoseSE3::identity(), kCam, false);
  CHECK(r.cycled == target);
  CHECK(r.cycle_valid.count() == 256);
}

TEST_CASE("cycle validity requires both halves") {
  WarpField fwd = identity_field(4, 4);
  fwd.valid.set(size_t{5}, false);
  WarpField bwd = identity_field(4, 4);
  bwd.valid.set(size_t{0}, false);
  const Mask m = cycle_validity(fwd, bwd);
  CHECK_FALSE(m[0]);
  CHECK_FALSE(m[5]);
  CHECK(m.count() == 14);
}

TEST_CASE("warp gradients match finite differences of a linear readout") {
  const int h = 20, w = 20;
  const Image src = oracle::smooth_image(h, w, 3, 12);
  const DepthMap depth = random_depth(h, w, 13, 95, 105);
  const Twist tw = small_twist(14, 0.01, 1.5);
  const FeatureMap g = raster_cast<FeatureTag>(oracle::random_image(h, w, 3, 15, -1.0, 1.0));
  auto readout = [&](const DepthMap& d, const Twist& t) {
    const Image out = warp_image(src, d, se3_exp(t), kCam).image;
    double s = 0.0;
    for (size_t i = 0; i < out.storage().size(); ++i) s += g.storage()[i] * out.storage()[i];
    return s;
  };
  const WarpGradients an = warp_gradients(g, src, depth, tw, kCam);
  const WarpField field = compute_correspondence(depth, se3_exp(tw), kCam);

  int checked = 0, good = 0;
  for (size_t i = 0; i < depth.pixel_count(); i += 7) {
    if (!field.valid[i]) continue;
    const double hstep = 1e-4;
    std::vector<double> p = depth.values(), m = depth.values();
    p[i] += hstep;
    m[i] -= hstep;
    const double num = (readout(DepthMap(h, w, p), tw) - readout(DepthMap(h, w, m), tw)) / (2 * hstep);
    ++checked;
    if (std::abs(num - an.d_depth[i]) <= 1e-4 * std::max(1e-3, std::abs(num))) ++good;
  }
  CHECK(checked > 20);
  CHECK(good >= checked * 0.95);

  for (int j = 0; j < 6; ++j) {
    const double hstep = j < 3 ? 1e-6 : 1e-5;
    std::array<double, 6> p = tw.to_array(), m = tw.to_array();
    p[j] += hstep;
    m[j] -= hstep;
    const double num = (readout(depth, Twist::from_array(p)) - readout(depth, Twist::from_array(m))) /
                       (2 * hstep);
    CHECK(an.d_twist[j] == doctest::Approx(num).epsilon(1e-3));
  }
}
