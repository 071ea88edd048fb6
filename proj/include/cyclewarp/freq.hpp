#pragma once

// Per-channel 2-D Fourier analysis and the structure transplant: recombine
// the amplitude spectrum of one image (brightness, style) with the phase
// spectrum of another (structure, edges).

#include "cyclewarp/core.hpp"

namespace cyclewarp {

/// Amplitude (>= 0) and phase (in (-pi, pi]) per channel, full H x W spectrum,
/// laid out like the input raster (bin (ky, kx) at pixel (y, x)).
struct FrequencyDecomposition {
  FeatureMap amplitude;
  FeatureMap phase;
};

FrequencyDecomposition fft2(const Image& image);
FrequencyDecomposition fft2(const FeatureMap& raster);

struct InverseTransform {
  FeatureMap real;            // real part, unclamped
  double max_imag_residue = 0.0;
};

/// Inverse transform without clamping; the discarded imaginary part's
/// largest modulus is reported.
InverseTransform ifft2_raw(const FrequencyDecomposition& decomp);

/// Inverse transform clamped to [0,1].
Image ifft2(const FrequencyDecomposition& decomp);

/// Amplitude of `warped` with the phase of `source`, clamped to [0,1].
Image structure_transplant(const Image& warped, const Image& source);
/// Same recombination before clamping.
InverseTransform structure_transplant_raw(const Image& warped, const Image& source);

}  // namespace cyclewarp
