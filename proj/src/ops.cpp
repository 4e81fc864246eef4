#include "htune/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "htune/errors.hpp"
#include "htune/fft.hpp"
#include "htune/rng.hpp"

namespace htune::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_finite(const char* op, Var v) {
    if (!v.value().all_finite()) throw NumericError(std::string(op) + ": non-finite input " + shape_str(v.shape()));
}

void require_same_shape(const char* op, Var a, Var b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": lhs " + shape_str(a.shape()) + " and rhs " + shape_str(b.shape()) +
                             " differ");
}

void require_rank(const char* op, const char* name, Var v, std::size_t rank) {
    if (v.value().rank() != rank)
        throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got " +
                             shape_str(v.shape()));
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
    Tensor out(x.shape());
    const double* in = x.ptr();
    double* o = out.ptr();
    for (std::size_t i = 0; i < x.numel(); ++i) o[i] = f(in[i]);
    return out;
}

}  // namespace

Var add(Var a, Var b) {
    require_same_shape("add", a, b);
    require_finite("add", a);
    require_finite("add", b);
    Tensor out = a.value();
    out.accumulate(b.value());
    return a.graph().record("add", {a, b}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) gi[0]->accumulate(g);
        if (gi[1]) gi[1]->accumulate(g);
    });
}

Var sub(Var a, Var b) {
    require_same_shape("sub", a, b);
    require_finite("sub", a);
    require_finite("sub", b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return a.graph().record("sub", {a, b}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) gi[0]->accumulate(g);
        if (gi[1])
            for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] -= g[i];
    });
}

Var mul(Var a, Var b) {
    require_same_shape("mul", a, b);
    require_finite("mul", a);
    require_finite("mul", b);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return a.graph().record("mul", {a, b}, std::move(out), [a, b](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (gi[0])
            for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * bv[i];
        if (gi[1])
            for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] += g[i] * av[i];
    });
}

Var scale(Var a, double c) {
    require_finite("scale", a);
    Tensor out = map_unary(a.value(), [c](double v) { return v * c; });
    return a.graph().record("scale", {a}, std::move(out), [c](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += c * g[i];
    });
}

namespace {

void check_lastdim(const char* op, Var x, Var v) {
    if (v.value().rank() != 1 || v.dim(0) != x.shape().back())
        throw DimensionError(std::string(op) + ": vector " + shape_str(v.shape()) + " does not match last axis of " +
                             shape_str(x.shape()));
}

}  // namespace

Var add_lastdim(Var x, Var v) {
    check_lastdim("add_lastdim", x, v);
    require_finite("add_lastdim", x);
    require_finite("add_lastdim", v);
    const std::size_t d = v.dim(0);
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += v.value()[i % d];
    return x.graph().record("add_lastdim", {x, v}, std::move(out), [d](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) gi[0]->accumulate(g);
        if (gi[1])
            for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i % d] += g[i];
    });
}

Var mul_lastdim(Var x, Var v) {
    check_lastdim("mul_lastdim", x, v);
    require_finite("mul_lastdim", x);
    require_finite("mul_lastdim", v);
    const std::size_t d = v.dim(0);
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= v.value()[i % d];
    return x.graph().record("mul_lastdim", {x, v}, std::move(out),
                            [x, v, d](const Tensor& g, std::span<Tensor* const> gi) {
                                const Tensor& xv = x.value();
                                const Tensor& vv = v.value();
                                if (gi[0])
                                    for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * vv[i % d];
                                if (gi[1])
                                    for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i % d] += g[i] * xv[i];
                            });
}

Var matmul(Var a, Var b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) throw DimensionError("matmul: operands must have rank >= 2");
    require_finite("matmul", a);
    require_finite("matmul", b);
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as.back();
    const std::size_t n = bs.back();
    if (bs[bs.size() - 2] != k)
        throw DimensionError("matmul: lhs " + shape_str(as) + " and rhs " + shape_str(bs) + " inner extents differ");

    Shape out_shape(as.begin(), as.end() - 1);
    out_shape.push_back(n);

    if (bs.size() == 2) {
        const std::size_t rows = a.value().numel() / k;
        Tensor out(out_shape);
        MatMap(out.ptr(), rows, n).noalias() = ConstMatMap(a.value().ptr(), rows, k) * ConstMatMap(b.value().ptr(), k, n);
        return a.graph().record("matmul", {a, b}, std::move(out),
                                [a, b, rows, k, n](const Tensor& g, std::span<Tensor* const> gi) {
                                    ConstMatMap G(g.ptr(), rows, n);
                                    if (gi[0])
                                        MatMap(gi[0]->ptr(), rows, k).noalias() +=
                                            G * ConstMatMap(b.value().ptr(), k, n).transpose();
                                    if (gi[1])
                                        MatMap(gi[1]->ptr(), k, n).noalias() +=
                                            ConstMatMap(a.value().ptr(), rows, k).transpose() * G;
                                });
    }

    if (!std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2))
        throw DimensionError("matmul: batch extents of lhs " + shape_str(as) + " and rhs " + shape_str(bs) + " differ");
    const std::size_t batch = a.value().numel() / (m * k);
    Tensor out(out_shape);
    for (std::size_t i = 0; i < batch; ++i)
        MatMap(out.ptr() + i * m * n, m, n).noalias() =
            ConstMatMap(a.value().ptr() + i * m * k, m, k) * ConstMatMap(b.value().ptr() + i * k * n, k, n);
    return a.graph().record("bmm", {a, b}, std::move(out),
                            [a, b, batch, m, k, n](const Tensor& g, std::span<Tensor* const> gi) {
                                for (std::size_t i = 0; i < batch; ++i) {
                                    ConstMatMap G(g.ptr() + i * m * n, m, n);
                                    if (gi[0])
                                        MatMap(gi[0]->ptr() + i * m * k, m, k).noalias() +=
                                            G * ConstMatMap(b.value().ptr() + i * k * n, k, n).transpose();
                                    if (gi[1])
                                        MatMap(gi[1]->ptr() + i * k * n, k, n).noalias() +=
                                            ConstMatMap(a.value().ptr() + i * m * k, m, k).transpose() * G;
                                }
                            });
}

Var permute(Var a, const std::vector<std::size_t>& perm) {
    const Shape& s = a.shape();
    const std::size_t r = s.size();
    if (perm.size() != r) throw DimensionError("permute: permutation length differs from rank of " + shape_str(s));
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];

    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
    // Stride in the input for each output axis.
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_stride[perm[i]];

    // offsets[j] = input offset of output element j.
    const std::size_t total = a.value().numel();
    std::vector<std::size_t> offsets(total);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t j = 0; j < total; ++j) {
        offsets[j] = off;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            off += src_stride[ax];
            if (idx[ax] < out_shape[ax]) break;
            off -= src_stride[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor out(out_shape);
    const double* in = a.value().ptr();
    for (std::size_t j = 0; j < total; ++j) out[j] = in[offsets[j]];
    return a.graph().record("permute", {a}, std::move(out),
                            [offsets = std::move(offsets)](const Tensor& g, std::span<Tensor* const> gi) {
                                double* d = gi[0]->ptr();
                                for (std::size_t j = 0; j < offsets.size(); ++j) d[offsets[j]] += g[j];
                            });
}

Var transpose_last2(Var a) {
    const std::size_t r = a.value().rank();
    if (r < 2) throw DimensionError("transpose_last2: rank must be >= 2");
    std::vector<std::size_t> perm(r);
    for (std::size_t i = 0; i < r; ++i) perm[i] = i;
    std::swap(perm[r - 1], perm[r - 2]);
    return permute(a, perm);
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.graph().record("reshape", {a}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gi) {
        double* d = gi[0]->ptr();
        for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
    });
}

Var layer_norm(Var x, double eps) {
    require_finite("layer_norm", x);
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.value().numel() / d;
    Tensor out(x.shape());
    std::vector<double> inv_std(rows);
    const double* in = x.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += row[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t i = 0; i < d; ++i) out[r * d + i] = (row[i] - mu) * is;
    }
    Tensor normalized = out;
    return x.graph().record(
        "layer_norm", {x}, std::move(out),
        [xhat = std::move(normalized), inv_std = std::move(inv_std), d, rows](const Tensor& g,
                                                                              std::span<Tensor* const> gi) {
            double* dx = gi[0]->ptr();
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.ptr() + r * d;
                const double* xr = xhat.ptr() + r * d;
                double mg = 0.0, mgx = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    mg += gr[i];
                    mgx += gr[i] * xr[i];
                }
                mg *= inv_d;
                mgx *= inv_d;
                for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += inv_std[r] * (gr[i] - mg - xr[i] * mgx);
            }
        });
}

Var softmax(Var x) {
    require_finite("softmax", x);
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.value().numel() / d;
    Tensor out(x.shape());
    const double* in = x.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in + r * d;
        double* o = out.ptr() + r * d;
        const double mx = *std::max_element(row, row + d);
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            o[i] = std::exp(row[i] - mx);
            s += o[i];
        }
        for (std::size_t i = 0; i < d; ++i) o[i] /= s;
    }
    Tensor y = out;
    return x.graph().record("softmax", {x}, std::move(out),
                            [y = std::move(y), d, rows](const Tensor& g, std::span<Tensor* const> gi) {
                                double* dx = gi[0]->ptr();
                                for (std::size_t r = 0; r < rows; ++r) {
                                    const double* gr = g.ptr() + r * d;
                                    const double* yr = y.ptr() + r * d;
                                    double dot = 0.0;
                                    for (std::size_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
                                    for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += yr[i] * (gr[i] - dot);
                                }
                            });
}

Var gelu(Var x) {
    require_finite("gelu", x);
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    Tensor out = map_unary(x.value(), [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
    return x.graph().record("gelu", {x}, std::move(out), [x](const Tensor& g, std::span<Tensor* const> gi) {
        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        const double* xv = x.value().ptr();
        double* dx = gi[0]->ptr();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            dx[i] += g[i] * (cdf + v * pdf);
        }
    });
}

Var relu(Var x) {
    require_finite("relu", x);
    Tensor out = map_unary(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
    return x.graph().record("relu", {x}, std::move(out), [x](const Tensor& g, std::span<Tensor* const> gi) {
        const double* xv = x.value().ptr();
        double* dx = gi[0]->ptr();
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (xv[i] > 0.0) dx[i] += g[i];
    });
}

Var dropout(Var x, double rate, bool training) {
    if (!training || rate == 0.0) return x;
    return dropout(x, rate, training, x.graph().next_seed());
}

Var dropout(Var x, double rate, bool training, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    require_finite("dropout", x);
    Rng rng(seed);
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(x.shape());
    for (auto& m : mask.data()) m = rng.uniform() >= rate ? keep_scale : 0.0;
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * mask[i];
    return x.graph().record("dropout", {x}, std::move(out),
                            [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> gi) {
                                double* dx = gi[0]->ptr();
                                for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * mask[i];
                            });
}

Var global_avg_pool(Var x) {
    require_rank("global_avg_pool", "input", x, 4);
    require_finite("global_avg_pool", x);
    const std::size_t bc = x.dim(0) * x.dim(1);
    const std::size_t hw = x.dim(2) * x.dim(3);
    Tensor out(Shape{x.dim(0), x.dim(1)});
    for (std::size_t i = 0; i < bc; ++i) {
        double s = 0.0;
        for (std::size_t p = 0; p < hw; ++p) s += x.value()[i * hw + p];
        out[i] = s / static_cast<double>(hw);
    }
    return x.graph().record("global_avg_pool", {x}, std::move(out),
                            [bc, hw](const Tensor& g, std::span<Tensor* const> gi) {
                                double* dx = gi[0]->ptr();
                                const double inv = 1.0 / static_cast<double>(hw);
                                for (std::size_t i = 0; i < bc; ++i)
                                    for (std::size_t p = 0; p < hw; ++p) dx[i * hw + p] += g[i] * inv;
                            });
}

Var adaptive_avg_pool2d(Var x, std::size_t oh, std::size_t ow) {
    require_rank("adaptive_avg_pool2d", "input", x, 4);
    require_finite("adaptive_avg_pool2d", x);
    if (oh == 0 || ow == 0) throw ConfigError("adaptive_avg_pool2d: output extent must be positive");
    const std::size_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    auto lo = [](std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; };
    auto hi = [](std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; };
    Tensor out(Shape{x.dim(0), x.dim(1), oh, ow});
    for (std::size_t c = 0; c < bc; ++c)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double s = 0.0;
                const std::size_t y0 = lo(i, h, oh), y1 = hi(i, h, oh), x0 = lo(j, w, ow), x1 = hi(j, w, ow);
                for (std::size_t y = y0; y < y1; ++y)
                    for (std::size_t xx = x0; xx < x1; ++xx) s += x.value()[(c * h + y) * w + xx];
                out[(c * oh + i) * ow + j] = s / static_cast<double>((y1 - y0) * (x1 - x0));
            }
    return x.graph().record(
        "adaptive_avg_pool2d", {x}, std::move(out), [=](const Tensor& g, std::span<Tensor* const> gi) {
            double* dx = gi[0]->ptr();
            for (std::size_t c = 0; c < bc; ++c)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        const std::size_t y0 = lo(i, h, oh), y1 = hi(i, h, oh), x0 = lo(j, w, ow), x1 = hi(j, w, ow);
                        const double share =
                            g[(c * oh + i) * ow + j] / static_cast<double>((y1 - y0) * (x1 - x0));
                        for (std::size_t y = y0; y < y1; ++y)
                            for (std::size_t xx = x0; xx < x1; ++xx) dx[(c * h + y) * w + xx] += share;
                    }
        });
}

Var rfft2_filter(Var f, Var theta) {
    require_rank("rfft2_filter", "feature map", f, 4);
    require_rank("rfft2_filter", "theta", theta, 1);
    if (theta.dim(0) != f.dim(1))
        throw DimensionError("rfft2_filter: theta " + shape_str(theta.shape()) + " does not match channels of " +
                             shape_str(f.shape()));
    require_finite("rfft2_filter", f);
    require_finite("rfft2_filter", theta);
    const std::size_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    const std::size_t hw = h * w;
    const std::size_t half = h * (w / 2 + 1);
    std::vector<fft::cd> spectra(b * c * half);
    Tensor out(f.shape());
    for (std::size_t i = 0; i < b * c; ++i) {
        const double th = theta.value()[i % c];
        auto spec = fft::rfft2(std::span<const double>(f.value().ptr() + i * hw, hw), h, w);
        std::copy(spec.begin(), spec.end(), spectra.begin() + i * half);
        for (auto& z : spec) z *= th;
        auto back = fft::irfft2(spec, h, w);
        std::copy(back.begin(), back.end(), out.ptr() + i * hw);
    }
    return f.graph().record(
        "rfft2_filter", {f, theta}, std::move(out),
        [theta, spectra = std::move(spectra), b, c, h, w, hw, half](const Tensor& g, std::span<Tensor* const> gi) {
            const std::size_t wc = w / 2 + 1;
            const double inv_hw = 1.0 / static_cast<double>(hw);
            for (std::size_t i = 0; i < b * c; ++i) {
                auto gspec = fft::rfft2(std::span<const double>(g.ptr() + i * hw, hw), h, w);
                if (gi[1]) {
                    // <G, irfft2(theta * Fhat)> as a full-spectrum inner product; the
                    // half spectrum counts every non-self-conjugate column twice.
                    double acc = 0.0;
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t k = 0; k < wc; ++k) {
                            const std::size_t idx = y * wc + k;
                            acc += fft::column_weight(k, w) *
                                   (std::conj(gspec[idx]) * spectra[i * half + idx]).real();
                        }
                    (*gi[1])[i % c] += acc * inv_hw;
                }
                if (gi[0]) {
                    const double th = theta.value()[i % c];
                    for (auto& z : gspec) z *= th;
                    auto back = fft::irfft2(gspec, h, w);
                    double* dx = gi[0]->ptr() + i * hw;
                    for (std::size_t p = 0; p < hw; ++p) dx[p] += back[p];
                }
            }
        });
}

Var depthwise_conv2d(Var f, Var kernel, std::optional<Var> bias) {
    require_rank("depthwise_conv2d", "feature map", f, 4);
    require_rank("depthwise_conv2d", "kernel", kernel, 3);
    const std::size_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
    const std::size_t k = kernel.dim(1);
    if (kernel.dim(2) != k) throw DimensionError("depthwise_conv2d: kernel must be square, got " + shape_str(kernel.shape()));
    if (k % 2 == 0) throw ConfigError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
    if (kernel.dim(0) != c)
        throw DimensionError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) + " does not match channels of " +
                             shape_str(f.shape()));
    if (bias && (bias->value().rank() != 1 || bias->dim(0) != c))
        throw DimensionError("depthwise_conv2d: bias " + shape_str(bias->shape()) + " does not match " +
                             std::to_string(c) + " channels");
    require_finite("depthwise_conv2d", f);
    require_finite("depthwise_conv2d", kernel);

    const long r = static_cast<long>(k / 2);
    const long H = static_cast<long>(h), W = static_cast<long>(w);
    Tensor out(f.shape());
    const double* in = f.value().ptr();
    const double* K = kernel.value().ptr();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci) {
            const double* src = in + (bi * c + ci) * h * w;
            const double* kc = K + ci * k * k;
            double* dst = out.ptr() + (bi * c + ci) * h * w;
            const double b0 = bias ? bias->value()[ci] : 0.0;
            for (long y = 0; y < H; ++y)
                for (long x = 0; x < W; ++x) {
                    double s = b0;
                    for (long i = -r; i <= r; ++i) {
                        const long yy = y + i;
                        if (yy < 0 || yy >= H) continue;
                        for (long j = -r; j <= r; ++j) {
                            const long xx = x + j;
                            if (xx < 0 || xx >= W) continue;
                            s += kc[(i + r) * static_cast<long>(k) + (j + r)] * src[yy * W + xx];
                        }
                    }
                    dst[y * W + x] = s;
                }
        }

    std::vector<Var> inputs{f, kernel};
    if (bias) inputs.push_back(*bias);
    return f.graph().record(
        "depthwise_conv2d", inputs, std::move(out), [f, kernel, b, c, h, w, k, r, H, W](const Tensor& g, std::span<Tensor* const> gi) {
            const double* in = f.value().ptr();
            const double* K = kernel.value().ptr();
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const std::size_t base = (bi * c + ci) * h * w;
                    const double* gc = g.ptr() + base;
                    const double* src = in + base;
                    const double* kc = K + ci * k * k;
                    for (long y = 0; y < H; ++y)
                        for (long x = 0; x < W; ++x) {
                            const double gv = gc[y * W + x];
                            if (gi.size() > 2 && gi[2]) (*gi[2])[ci] += gv;
                            for (long i = -r; i <= r; ++i) {
                                const long yy = y + i;
                                if (yy < 0 || yy >= H) continue;
                                for (long j = -r; j <= r; ++j) {
                                    const long xx = x + j;
                                    if (xx < 0 || xx >= W) continue;
                                    const std::size_t kidx = static_cast<std::size_t>((i + r) * static_cast<long>(k) + (j + r));
                                    if (gi[0]) (*gi[0])[base + static_cast<std::size_t>(yy * W + xx)] += gv * kc[kidx];
                                    if (gi[1]) (*gi[1])[ci * k * k + kidx] += gv * src[yy * W + xx];
                                }
                            }
                        }
                }
        });
}

Var pointwise_conv2d(Var f, Var weight, std::optional<Var> bias) {
    require_rank("pointwise_conv2d", "feature map", f, 4);
    require_rank("pointwise_conv2d", "weight", weight, 2);
    const std::size_t b = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
    const std::size_t co = weight.dim(0);
    if (weight.dim(1) != c)
        throw DimensionError("pointwise_conv2d: weight " + shape_str(weight.shape()) + " does not match channels of " +
                             shape_str(f.shape()));
    if (bias && (bias->value().rank() != 1 || bias->dim(0) != co))
        throw DimensionError("pointwise_conv2d: bias " + shape_str(bias->shape()) + " does not match " +
                             std::to_string(co) + " output channels");
    require_finite("pointwise_conv2d", f);
    require_finite("pointwise_conv2d", weight);

    Tensor out(Shape{b, co, f.dim(2), f.dim(3)});
    ConstMatMap Wm(weight.value().ptr(), co, c);
    for (std::size_t bi = 0; bi < b; ++bi) {
        MatMap O(out.ptr() + bi * co * hw, co, hw);
        O.noalias() = Wm * ConstMatMap(f.value().ptr() + bi * c * hw, c, hw);
        if (bias)
            for (std::size_t o = 0; o < co; ++o) O.row(o).array() += bias->value()[o];
    }
    std::vector<Var> inputs{f, weight};
    if (bias) inputs.push_back(*bias);
    return f.graph().record("pointwise_conv2d", inputs, std::move(out),
                            [f, weight, b, c, co, hw](const Tensor& g, std::span<Tensor* const> gi) {
                                ConstMatMap Wm(weight.value().ptr(), co, c);
                                for (std::size_t bi = 0; bi < b; ++bi) {
                                    ConstMatMap G(g.ptr() + bi * co * hw, co, hw);
                                    if (gi[0]) MatMap(gi[0]->ptr() + bi * c * hw, c, hw).noalias() += Wm.transpose() * G;
                                    if (gi[1])
                                        MatMap(gi[1]->ptr(), co, c).noalias() +=
                                            G * ConstMatMap(f.value().ptr() + bi * c * hw, c, hw).transpose();
                                    if (gi.size() > 2 && gi[2])
                                        for (std::size_t o = 0; o < co; ++o) (*gi[2])[o] += G.row(o).sum();
                                }
                            });
}

namespace {

struct Tap {
    std::size_t lo, hi;
    double frac;  // weight of hi
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[o] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace

Var bilinear_upsample(Var f, std::size_t h_out, std::size_t w_out) {
    require_rank("bilinear_upsample", "feature map", f, 4);
    if (h_out == 0 || w_out == 0) throw ConfigError("bilinear_upsample: output extent must be positive");
    const std::size_t bc = f.dim(0) * f.dim(1), h = f.dim(2), w = f.dim(3);
    if (h_out < h || w_out < w)
        throw ConfigError("bilinear_upsample: output " + std::to_string(h_out) + "x" + std::to_string(w_out) +
                          " smaller than input " + std::to_string(h) + "x" + std::to_string(w));
    require_finite("bilinear_upsample", f);
    auto ty = bilinear_taps(h, h_out);
    auto tx = bilinear_taps(w, w_out);
    Tensor out(Shape{f.dim(0), f.dim(1), h_out, w_out});
    for (std::size_t c = 0; c < bc; ++c) {
        const double* src = f.value().ptr() + c * h * w;
        double* dst = out.ptr() + c * h_out * w_out;
        for (std::size_t y = 0; y < h_out; ++y) {
            const double* r0 = src + ty[y].lo * w;
            const double* r1 = src + ty[y].hi * w;
            const double fy = ty[y].frac;
            for (std::size_t x = 0; x < w_out; ++x) {
                const double fx = tx[x].frac;
                const double top = r0[tx[x].lo] * (1.0 - fx) + r0[tx[x].hi] * fx;
                const double bot = r1[tx[x].lo] * (1.0 - fx) + r1[tx[x].hi] * fx;
                dst[y * w_out + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    return f.graph().record("bilinear_upsample", {f}, std::move(out),
                            [ty = std::move(ty), tx = std::move(tx), bc, h, w, h_out, w_out](
                                const Tensor& g, std::span<Tensor* const> gi) {
                                for (std::size_t c = 0; c < bc; ++c) {
                                    double* dsrc = gi[0]->ptr() + c * h * w;
                                    const double* gc = g.ptr() + c * h_out * w_out;
                                    for (std::size_t y = 0; y < h_out; ++y) {
                                        double* r0 = dsrc + ty[y].lo * w;
                                        double* r1 = dsrc + ty[y].hi * w;
                                        const double fy = ty[y].frac;
                                        for (std::size_t x = 0; x < w_out; ++x) {
                                            const double gv = gc[y * w_out + x];
                                            const double fx = tx[x].frac;
                                            r0[tx[x].lo] += gv * (1.0 - fy) * (1.0 - fx);
                                            r0[tx[x].hi] += gv * (1.0 - fy) * fx;
                                            r1[tx[x].lo] += gv * fy * (1.0 - fx);
                                            r1[tx[x].hi] += gv * fy * fx;
                                        }
                                    }
                                }
                            });
}

Var batch_scale(Var x, Var s) {
    require_rank("batch_scale", "scales", s, 1);
    if (s.dim(0) != x.dim(0))
        throw DimensionError("batch_scale: scales " + shape_str(s.shape()) + " do not match batch of " +
                             shape_str(x.shape()));
    require_finite("batch_scale", x);
    require_finite("batch_scale", s);
    const std::size_t b = x.dim(0);
    const std::size_t per = x.value().numel() / b;
    Tensor out = x.value();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t i = 0; i < per; ++i) out[bi * per + i] *= s.value()[bi];
    return x.graph().record("batch_scale", {x, s}, std::move(out),
                            [x, s, b, per](const Tensor& g, std::span<Tensor* const> gi) {
                                for (std::size_t bi = 0; bi < b; ++bi) {
                                    double acc = 0.0;
                                    for (std::size_t i = 0; i < per; ++i) {
                                        const std::size_t idx = bi * per + i;
                                        if (gi[0]) (*gi[0])[idx] += g[idx] * s.value()[bi];
                                        acc += g[idx] * x.value()[idx];
                                    }
                                    if (gi[1]) (*gi[1])[bi] += acc;
                                }
                            });
}

Var column(Var x, std::size_t j) {
    require_rank("column", "input", x, 2);
    if (j >= x.dim(1)) throw DimensionError("column: index " + std::to_string(j) + " out of range for " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), k = x.dim(1);
    Tensor out(Shape{b});
    for (std::size_t i = 0; i < b; ++i) out[i] = x.value()[i * k + j];
    return x.graph().record("column", {x}, std::move(out), [b, k, j](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < b; ++i) (*gi[0])[i * k + j] += g[i];
    });
}

Var token_mean(Var x) {
    require_rank("token_mean", "tokens", x, 3);
    require_finite("token_mean", x);
    const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    Tensor out(Shape{b, d});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t i = 0; i < d; ++i) out[bi * d + i] += x.value()[(bi * n + t) * d + i];
    for (auto& v : out.data()) v /= static_cast<double>(n);
    return x.graph().record("token_mean", {x}, std::move(out), [b, n, d](const Tensor& g, std::span<Tensor* const> gi) {
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t t = 0; t < n; ++t)
                for (std::size_t i = 0; i < d; ++i) (*gi[0])[(bi * n + t) * d + i] += g[bi * d + i] * inv;
    });
}

Var l2_normalize_rows(Var x) {
    require_rank("l2_normalize_rows", "input", x, 2);
    require_finite("l2_normalize_rows", x);
    const std::size_t b = x.dim(0), d = x.dim(1);
    Tensor out(x.shape());
    std::vector<double> norms(b);
    for (std::size_t bi = 0; bi < b; ++bi) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += x.value()[bi * d + i] * x.value()[bi * d + i];
        if (s == 0.0) throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(bi));
        norms[bi] = std::sqrt(s);
        for (std::size_t i = 0; i < d; ++i) out[bi * d + i] = x.value()[bi * d + i] / norms[bi];
    }
    Tensor y = out;
    return x.graph().record("l2_normalize_rows", {x}, std::move(out),
                            [y = std::move(y), norms = std::move(norms), b, d](const Tensor& g, std::span<Tensor* const> gi) {
                                for (std::size_t bi = 0; bi < b; ++bi) {
                                    double dot = 0.0;
                                    for (std::size_t i = 0; i < d; ++i) dot += g[bi * d + i] * y[bi * d + i];
                                    for (std::size_t i = 0; i < d; ++i)
                                        (*gi[0])[bi * d + i] += (g[bi * d + i] - y[bi * d + i] * dot) / norms[bi];
                                }
                            });
}

Var sum(Var x) {
    require_finite("sum", x);
    return x.graph().record("sum", {x}, Tensor::scalar(x.value().sum()), [](const Tensor& g, std::span<Tensor* const> gi) {
        for (auto& v : gi[0]->data()) v += g[0];
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var weighted_sum(Var x, const Tensor& w) {
    if (w.shape() != x.shape())
        throw DimensionError("weighted_sum: weights " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    require_finite("weighted_sum", x);
    double s = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i) s += w[i] * x.value()[i];
    return x.graph().record("weighted_sum", {x}, Tensor::scalar(s), [w](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < w.numel(); ++i) (*gi[0])[i] += g[0] * w[i];
    });
}

}  // namespace htune::ops
