#include "htune/fft.hpp"

#include <cmath>
#include <numbers>

namespace htune::fft {

namespace {

std::size_t smallest_factor(std::size_t n) {
    if (n % 2 == 0) return 2;
    for (std::size_t p = 3; p * p <= n; p += 2)
        if (n % p == 0) return p;
    return n;
}

// Decimation in time: split into p interleaved subsequences of length n/p,
// transform each, then combine with twiddles.
void recurse(cd* out, const cd* in, std::size_t n, std::size_t stride, double sign) {
    if (n == 1) {
        out[0] = in[0];
        return;
    }
    const std::size_t p = smallest_factor(n);
    const std::size_t m = n / p;
    for (std::size_t r = 0; r < p; ++r) recurse(out + r * m, in + r * stride, m, stride * p, sign);

    std::vector<cd> tmp(p);
    const double base = sign * 2.0 * std::numbers::pi / static_cast<double>(n);
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t q = 0; q < p; ++q) {
            const std::size_t kk = k + q * m;
            cd acc = 0.0;
            for (std::size_t r = 0; r < p; ++r) {
                const double ang = base * static_cast<double>((r * kk) % n);
                acc += out[r * m + k] * cd(std::cos(ang), std::sin(ang));
            }
            tmp[q] = acc;
        }
        for (std::size_t q = 0; q < p; ++q) out[k + q * m] = tmp[q];
    }
}

}  // namespace

void transform(std::span<cd> data, bool inverse) {
    if (data.size() <= 1) return;
    std::vector<cd> in(data.begin(), data.end());
    recurse(data.data(), in.data(), data.size(), 1, inverse ? 1.0 : -1.0);
}

std::vector<cd> rfft2(std::span<const double> x, std::size_t h, std::size_t w) {
    const std::size_t wc = w / 2 + 1;
    std::vector<cd> spec(h * wc);
    std::vector<cd> row(w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t i = 0; i < w; ++i) row[i] = x[y * w + i];
        transform(row, false);
        for (std::size_t k = 0; k < wc; ++k) spec[y * wc + k] = row[k];
    }
    std::vector<cd> col(h);
    for (std::size_t k = 0; k < wc; ++k) {
        for (std::size_t y = 0; y < h; ++y) col[y] = spec[y * wc + k];
        transform(col, false);
        for (std::size_t y = 0; y < h; ++y) spec[y * wc + k] = col[y];
    }
    return spec;
}

std::vector<double> irfft2(std::span<const cd> spectrum, std::size_t h, std::size_t w) {
    const std::size_t wc = w / 2 + 1;
    std::vector<cd> tmp(spectrum.begin(), spectrum.end());
    std::vector<cd> col(h);
    for (std::size_t k = 0; k < wc; ++k) {
        for (std::size_t y = 0; y < h; ++y) col[y] = tmp[y * wc + k];
        transform(col, true);
        for (std::size_t y = 0; y < h; ++y) tmp[y * wc + k] = col[y];
    }
    std::vector<double> out(h * w);
    std::vector<cd> row(w);
    const double norm = 1.0 / static_cast<double>(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        // Hermitian extension of the half row; self-conjugate bins are real.
        row[0] = tmp[y * wc].real();
        for (std::size_t k = 1; k < wc; ++k) row[k] = tmp[y * wc + k];
        if (w % 2 == 0) row[w / 2] = tmp[y * wc + w / 2].real();
        for (std::size_t k = wc; k < w; ++k) row[k] = std::conj(row[w - k]);
        transform(row, true);
        for (std::size_t i = 0; i < w; ++i) out[y * w + i] = row[i].real() * norm;
    }
    return out;
}

double spectral_energy(std::span<const cd> spectrum, std::size_t h, std::size_t w) {
    const std::size_t wc = w / 2 + 1;
    double e = 0.0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t k = 0; k < wc; ++k) e += column_weight(k, w) * std::norm(spectrum[y * wc + k]);
    return e;
}

}  // namespace htune::fft
