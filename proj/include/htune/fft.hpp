#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace htune::fft {

using cd = std::complex<double>;

/// In-place complex DFT of any length (mixed radix, prime factors by direct
/// summation). Forward uses e^{-i}, inverse e^{+i}; neither is normalized.
void transform(std::span<cd> data, bool inverse);

/// Real 2-D FFT of an H x W row-major image. Returns the half spectrum,
/// H x (W/2 + 1) row-major, unnormalized.
std::vector<cd> rfft2(std::span<const double> x, std::size_t h, std::size_t w);

/// Inverse of rfft2, normalized by 1/(H*W). The imaginary parts of the
/// self-conjugate columns (kx = 0 and, for even W, kx = W/2) are ignored.
std::vector<double> irfft2(std::span<const cd> spectrum, std::size_t h, std::size_t w);

/// Multiplicity of half-spectrum column kx in the full spectrum: 1 for the
/// self-conjugate columns, 2 otherwise.
inline double column_weight(std::size_t kx, std::size_t w) {
    return (kx == 0 || (w % 2 == 0 && kx == w / 2)) ? 1.0 : 2.0;
}

/// Full-spectrum energy sum |X(k)|^2 computed from a half spectrum.
double spectral_energy(std::span<const cd> spectrum, std::size_t h, std::size_t w);

}  // namespace htune::fft
