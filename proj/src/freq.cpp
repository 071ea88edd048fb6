#include "cyclewarp/freq.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <tuple>
#include <utility>

namespace cyclewarp {

namespace {

// FFTW planning is not thread-safe; execution on fresh aligned buffers is.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int height, int width, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(height, width, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    auto* buf = fftw_alloc_complex(static_cast<size_t>(height) * width);
    fftw_plan plan = fftw_plan_dft_2d(height, width, buf, buf, sign, FFTW_ESTIMATE);
    fftw_free(buf);
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

struct FftwBuffer {
  explicit FftwBuffer(size_t n) : data(fftw_alloc_complex(n)) {}
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  fftw_complex* data;
};

double wrap_phase(double p) {
  // atan2 yields [-pi, pi]; fold -pi onto +pi.
  return p <= -std::numbers::pi ? std::numbers::pi : p;
}

template <class Tag>
FrequencyDecomposition forward_transform(const BasicRaster<Tag>& raster) {
  const int h = raster.height(), w = raster.width(), channels = raster.channels();
  const size_t n = raster.pixel_count();
  FrequencyDecomposition out{FeatureMap(h, w, channels), FeatureMap(h, w, channels)};
  fftw_plan plan = PlanCache::instance().get(h, w, FFTW_FORWARD);
  FftwBuffer buf(n);
  const auto src = raster.data();
  auto amp = out.amplitude.data();
  auto ph = out.phase.data();
  for (int c = 0; c < channels; ++c) {
    for (size_t i = 0; i < n; ++i) {
      buf.data[i][0] = src[i * channels + c];
      buf.data[i][1] = 0.0;
    }
    fftw_execute_dft(plan, buf.data, buf.data);
    for (size_t i = 0; i < n; ++i) {
      const std::complex<double> z(buf.data[i][0], buf.data[i][1]);
      amp[i * channels + c] = std::abs(z);
      ph[i * channels + c] = wrap_phase(std::arg(z));
    }
  }
  return out;
}

}  // namespace

FrequencyDecomposition fft2(const Image& image) { return forward_transform(image); }
FrequencyDecomposition fft2(const FeatureMap& raster) { return forward_transform(raster); }

InverseTransform ifft2_raw(const FrequencyDecomposition& decomp) {
  const FeatureMap& amp = decomp.amplitude;
  if (!amp.same_shape(decomp.phase)) {
    throw MisuseError("ifft2: amplitude and phase shapes differ");
  }
  const int h = amp.height(), w = amp.width(), channels = amp.channels();
  const size_t n = amp.pixel_count();
  InverseTransform out{FeatureMap(h, w, channels), 0.0};
  fftw_plan plan = PlanCache::instance().get(h, w, FFTW_BACKWARD);
  FftwBuffer buf(n);
  const double scale = 1.0 / static_cast<double>(n);
  const auto a = amp.data();
  const auto p = decomp.phase.data();
  auto dst = out.real.data();
  for (int c = 0; c < channels; ++c) {
    for (size_t i = 0; i < n; ++i) {
      const std::complex<double> z = std::polar(a[i * channels + c], p[i * channels + c]);
      buf.data[i][0] = z.real();
      buf.data[i][1] = z.imag();
    }
    fftw_execute_dft(plan, buf.data, buf.data);
    for (size_t i = 0; i < n; ++i) {
      dst[i * channels + c] = buf.data[i][0] * scale;
      out.max_imag_residue = std::max(out.max_imag_residue, std::abs(buf.data[i][1] * scale));
    }
  }
  return out;
}

Image ifft2(const FrequencyDecomposition& decomp) {
  InverseTransform raw = ifft2_raw(decomp);
  if (raw.real.channels() != 1 && raw.real.channels() != 3) {
    throw MisuseError("ifft2: image spectra carry 1 or 3 channels");
  }
  Image img = raster_cast<ImageTag>(raw.real);
  clamp_unit(img);
  return img;
}

InverseTransform structure_transplant_raw(const Image& warped, const Image& source) {
  if (!warped.same_shape(source)) {
    throw MisuseError("structure_transplant: warped and source images differ in shape");
  }
  // |W| * S / |S| is the polar recombination of W's amplitude with S's phase
  // (a zero-magnitude source bin carries phase 0).
  const int h = warped.height(), w = warped.width(), channels = warped.channels();
  const size_t n = warped.pixel_count();
  InverseTransform out{FeatureMap(h, w, channels), 0.0};
  fftw_plan fwd = PlanCache::instance().get(h, w, FFTW_FORWARD);
  fftw_plan inv = PlanCache::instance().get(h, w, FFTW_BACKWARD);
  FftwBuffer wb(n), sb(n);
  const auto pw = warped.data();
  const auto ps = source.data();
  auto dst = out.real.data();
  const double scale = 1.0 / static_cast<double>(n);
  for (int c = 0; c < channels; ++c) {
    for (size_t i = 0; i < n; ++i) {
      wb.data[i][0] = pw[i * channels + c];
      wb.data[i][1] = 0.0;
      sb.data[i][0] = ps[i * channels + c];
      sb.data[i][1] = 0.0;
    }
    fftw_execute_dft(fwd, wb.data, wb.data);
    fftw_execute_dft(fwd, sb.data, sb.data);
    for (size_t i = 0; i < n; ++i) {
      const double amp = std::hypot(wb.data[i][0], wb.data[i][1]);
      const double mag = std::hypot(sb.data[i][0], sb.data[i][1]);
      if (mag > 0.0) {
        sb.data[i][0] *= amp / mag;
        sb.data[i][1] *= amp / mag;
      } else {
        sb.data[i][0] = amp;
        sb.data[i][1] = 0.0;
      }
    }
    fftw_execute_dft(inv, sb.data, sb.data);
    for (size_t i = 0; i < n; ++i) {
      dst[i * channels + c] = sb.data[i][0] * scale;
      out.max_imag_residue = std::max(out.max_imag_residue, std::abs(sb.data[i][1] * scale));
    }
  }
  return out;
}

Image structure_transplant(const Image& warped, const Image& source) {
  Image img = raster_cast<ImageTag>(structure_transplant_raw(warped, source).real);
  clamp_unit(img);
  return img;
}

}  // namespace cyclewarp
