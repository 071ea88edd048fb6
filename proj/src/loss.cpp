#include "cyclewarp/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cyclewarp {

namespace {

// 3-tap sums along one axis with reflect padding. `stride` steps along the
// axis, `lines`/`line_step` enumerate the parallel lines.
void sum3(const double* in, double* out, int len, int stride, int lines, int line_step) {
  for (int l = 0; l < lines; ++l) {
    const double* a = in + static_cast<ptrdiff_t>(l) * line_step;
    double* o = out + static_cast<ptrdiff_t>(l) * line_step;
    if (len == 1) {
      o[0] = 3.0 * a[0];
      continue;
    }
    o[0] = a[0] + 2.0 * a[stride];
    for (int i = 1; i + 1 < len; ++i) {
      o[i * stride] = a[(i - 1) * stride] + a[i * stride] + a[(i + 1) * stride];
    }
    o[(len - 1) * stride] = a[(len - 1) * stride] + 2.0 * a[(len - 2) * stride];
  }
}

// Transpose of sum3: the reflected taps scatter back onto index 1 and len-2.
void sum3_adjoint(const double* in, double* out, int len, int stride, int lines, int line_step) {
  for (int l = 0; l < lines; ++l) {
    const double* g = in + static_cast<ptrdiff_t>(l) * line_step;
    double* o = out + static_cast<ptrdiff_t>(l) * line_step;
    if (len == 1) {
      o[0] = 3.0 * g[0];
      continue;
    }
    for (int i = 0; i < len; ++i) {
      double v = g[i * stride];
      if (i > 0) v += g[(i - 1) * stride];
      if (i + 1 < len) v += g[(i + 1) * stride];
      o[i * stride] = v;
    }
    if (len >= 2) {
      o[1 * stride] += g[0];
      o[(len - 2) * stride] += g[(len - 1) * stride];
    }
  }
}

std::vector<double> box3(const std::vector<double>& x, int h, int w) {
  std::vector<double> tmp(x.size()), out(x.size());
  sum3(x.data(), tmp.data(), w, 1, h, w);
  sum3(tmp.data(), out.data(), h, w, w, 1);
  for (double& v : out) v /= 9.0;
  return out;
}

// Adjoint of box3: scatters every window's weight back onto its taps.
std::vector<double> box3_adjoint(const std::vector<double>& g, int h, int w) {
  std::vector<double> tmp(g.size()), out(g.size());
  sum3_adjoint(g.data(), tmp.data(), h, w, w, 1);
  sum3_adjoint(tmp.data(), out.data(), w, 1, h, w);
  for (double& v : out) v /= 9.0;
  return out;
}

struct WindowStats {
  std::vector<double> mu_a, mu_b, s_aa, s_bb, s_ab;  // raw first and second moments
};

WindowStats window_stats(const Image& a, const Image& b, int c) {
  const int h = a.height(), w = a.width();
  const size_t n = a.pixel_count();
  const int channels = a.channels();
  std::vector<double> va(n), vb(n), aa(n), bb(n), ab(n);
  const auto pa = a.data();
  const auto pb = b.data();
  for (size_t i = 0; i < n; ++i) {
    va[i] = pa[i * channels + c];
    vb[i] = pb[i * channels + c];
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  return {box3(va, h, w), box3(vb, h, w), box3(aa, h, w), box3(bb, h, w), box3(ab, h, w)};
}

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw MisuseError(std::string(what) + ": image shapes differ");
}

void require_mask(const Mask& m, int h, int w, const char* what) {
  if (m.height() != h || m.width() != w) {
    throw MisuseError(std::string(what) + ": mask shape differs from the images");
  }
  if (m.count() == 0) throw NumericalError(std::string(what) + ": empty validity mask");
}

LossValue reduce(FeatureMap per_pixel, const Mask& mask) {
  LossValue out;
  double sum = 0.0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      sum += per_pixel.data()[i];
      ++out.valid_count;
    }
  }
  out.scalar = sum / static_cast<double>(out.valid_count);
  out.per_pixel = std::move(per_pixel);
  return out;
}

LossWithGradient photometric_impl(const Image& target, const Image& warped, const Mask& mask,
                                  double alpha, const SsimConfig& cfg, bool want_grad) {
  require_same(target, warped, "photometric_loss");
  require_mask(mask, target.height(), target.width(), "photometric_loss");
  const int h = target.height(), w = target.width(), channels = target.channels();
  const size_t n = target.pixel_count();
  const double inv_c = 1.0 / channels;
  const double m = static_cast<double>(mask.count());

  FeatureMap per_pixel(h, w, 1, 0.0);
  FeatureMap grad;
  if (want_grad) grad = FeatureMap(h, w, channels, 0.0);
  const auto ta = target.data();
  const auto wb = warped.data();

  for (int c = 0; c < channels; ++c) {
    const WindowStats st = window_stats(target, warped, c);
    std::vector<double> g_mu, g_bb, g_ab;
    if (want_grad) {
      g_mu.assign(n, 0.0);
      g_bb.assign(n, 0.0);
      g_ab.assign(n, 0.0);
    }
    for (size_t i = 0; i < n; ++i) {
      const double mua = st.mu_a[i], mub = st.mu_b[i];
      const double var_a = st.s_aa[i] - mua * mua;
      const double var_b = st.s_bb[i] - mub * mub;
      const double cov = st.s_ab[i] - mua * mub;
      const double n1 = 2.0 * mua * mub + cfg.c1;
      const double n2 = 2.0 * cov + cfg.c2;
      const double d1 = mua * mua + mub * mub + cfg.c1;
      const double d2 = var_a + var_b + cfg.c2;
      const double s = (n1 * n2) / (d1 * d2);
      const double a = ta[i * channels + c], b = wb[i * channels + c];
      per_pixel.data()[i] += inv_c * (alpha * (1.0 - s) * 0.5 + (1.0 - alpha) * std::abs(a - b));

      if (want_grad && mask[i]) {
        const double up = -0.5 * alpha * inv_c / m;  // d(loss)/d(SSIM) at this window
        const double dd = d1 * d2;
        g_mu[i] = up * ((2.0 * mua * n2 - 2.0 * mua * n1) / dd - s * (2.0 * mub) / d1 +
                        s * (2.0 * mub) / d2);
        g_bb[i] = up * (-s / d2);
        g_ab[i] = up * (2.0 * n1 / dd);
        const double diff = b - a;
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        grad.data()[i * channels + c] += (1.0 - alpha) * inv_c / m * sign;
      }
    }
    if (want_grad) {
      const auto a_mu = box3_adjoint(g_mu, h, w);
      const auto a_bb = box3_adjoint(g_bb, h, w);
      const auto a_ab = box3_adjoint(g_ab, h, w);
      for (size_t i = 0; i < n; ++i) {
        grad.data()[i * channels + c] +=
            a_mu[i] + 2.0 * wb[i * channels + c] * a_bb[i] + ta[i * channels + c] * a_ab[i];
      }
    }
  }
  return {reduce(std::move(per_pixel), mask), std::move(grad)};
}

double central_diff(const std::vector<double>& g, int h, int w, int y, int x, bool horizontal) {
  if (horizontal) {
    const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
    if (x0 == x1) return 0.0;
    return (g[static_cast<size_t>(y) * w + x1] - g[static_cast<size_t>(y) * w + x0]) / (x1 - x0);
  }
  const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
  if (y0 == y1) return 0.0;
  return (g[static_cast<size_t>(y1) * w + x] - g[static_cast<size_t>(y0) * w + x]) / (y1 - y0);
}

}  // namespace

FeatureMap ssim(const Image& a, const Image& b, const SsimConfig& cfg) {
  require_same(a, b, "ssim");
  const int channels = a.channels();
  FeatureMap out(a.height(), a.width(), channels);
  for (int c = 0; c < channels; ++c) {
    const WindowStats st = window_stats(a, b, c);
    for (size_t i = 0; i < a.pixel_count(); ++i) {
      const double mua = st.mu_a[i], mub = st.mu_b[i];
      const double var_a = st.s_aa[i] - mua * mua;
      const double var_b = st.s_bb[i] - mub * mub;
      const double cov = st.s_ab[i] - mua * mub;
      out.data()[i * channels + c] = ((2.0 * mua * mub + cfg.c1) * (2.0 * cov + cfg.c2)) /
                                     ((mua * mua + mub * mub + cfg.c1) * (var_a + var_b + cfg.c2));
    }
  }
  return out;
}

LossValue photometric_loss(const Image& target, const Image& warped, const Mask& mask,
                           double alpha, const SsimConfig& cfg) {
  return photometric_impl(target, warped, mask, alpha, cfg, false).value;
}

LossWithGradient photometric_loss_grad(const Image& target, const Image& warped, const Mask& mask,
                                       double alpha, const SsimConfig& cfg) {
  return photometric_impl(target, warped, mask, alpha, cfg, true);
}

FeatureMap feature_extract(const Image& image) {
  const int h = image.height(), w = image.width(), channels = image.channels();
  const size_t n = image.pixel_count();
  std::vector<double> gray(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) gray[i] += image.data()[i * channels + c];
    gray[i] /= channels;
  }

  // Half-resolution gradient magnitude (box 2x2 average; odd edges repeat).
  const int hh = (h + 1) / 2, hw = (w + 1) / 2;
  std::vector<double> low(static_cast<size_t>(hh) * hw, 0.0);
  for (int y = 0; y < hh; ++y) {
    for (int x = 0; x < hw; ++x) {
      double s = 0.0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          s += gray[static_cast<size_t>(std::min(2 * y + dy, h - 1)) * w + std::min(2 * x + dx, w - 1)];
      low[static_cast<size_t>(y) * hw + x] = s / 4.0;
    }
  }
  std::vector<double> low_mag(low.size());
  for (int y = 0; y < hh; ++y) {
    for (int x = 0; x < hw; ++x) {
      // Per full-resolution pixel: one low-res step spans two pixels.
      const double gx = 0.5 * central_diff(low, hh, hw, y, x, true);
      const double gy = 0.5 * central_diff(low, hh, hw, y, x, false);
      low_mag[static_cast<size_t>(y) * hw + x] = std::sqrt(gx * gx + gy * gy);
    }
  }

  FeatureMap out(h, w, kFeatureChannels, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(y, x, 0) = gray[static_cast<size_t>(y) * w + x];
      out.at(y, x, 1) = central_diff(gray, h, w, y, x, true);
      out.at(y, x, 2) = central_diff(gray, h, w, y, x, false);
      // Low-res sample centres sit at full-res 2i + 0.5.
      const double ly = std::clamp((y - 0.5) / 2.0, 0.0, hh - 1.0);
      const double lx = std::clamp((x - 0.5) / 2.0, 0.0, hw - 1.0);
      const int y0 = static_cast<int>(ly), x0 = static_cast<int>(lx);
      const int y1 = std::min(y0 + 1, hh - 1), x1 = std::min(x0 + 1, hw - 1);
      const double fy = ly - y0, fx = lx - x0;
      auto at = [&](int yy, int xx) { return low_mag[static_cast<size_t>(yy) * hw + xx]; };
      out.at(y, x, 3) = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                        fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
    }
  }
  return out;
}

LossWithGradient perception_loss_grad(const FeatureMap& f_target, const FeatureMap& f_warped,
                                      const Mask& mask) {
  if (!f_target.same_shape(f_warped)) {
    throw MisuseError("perception_loss: feature map shapes differ");
  }
  require_mask(mask, f_target.height(), f_target.width(), "perception_loss");
  const int channels = f_target.channels();
  const double m = static_cast<double>(mask.count());
  FeatureMap per_pixel(f_target.height(), f_target.width(), 1, 0.0);
  FeatureMap grad(f_target.height(), f_target.width(), channels, 0.0);
  for (size_t i = 0; i < f_target.pixel_count(); ++i) {
    double s = 0.0;
    for (int c = 0; c < channels; ++c) {
      const double diff = f_warped.data()[i * channels + c] - f_target.data()[i * channels + c];
      s += std::abs(diff);
      if (mask[i]) {
        grad.data()[i * channels + c] =
            (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) / (m * channels);
      }
    }
    per_pixel.data()[i] = s / channels;
  }
  return {reduce(std::move(per_pixel), mask), std::move(grad)};
}

LossValue perception_loss(const FeatureMap& f_target, const FeatureMap& f_warped,
                          const Mask& mask) {
  return perception_loss_grad(f_target, f_warped, mask).value;
}

}  // namespace cyclewarp
