#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "htune/graph.hpp"

namespace htune::ops {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kDefaultDropout = 0.1;

// Elementwise, same shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);

// Broadcast a vector of length shape.back() over all leading dimensions.
Var add_lastdim(Var x, Var v);
Var mul_lastdim(Var x, Var v);

/// a: (..., m, k). b: (k, n) shared across the leading dims, or
/// (..., k, n) with the same leading dims as a.
Var matmul(Var a, Var b);
Var transpose_last2(Var a);
Var permute(Var a, const std::vector<std::size_t>& perm);
Var reshape(Var a, Shape shape);

/// Normalizes over the last axis, no affine.
Var layer_norm(Var x, double eps = kLayerNormEps);
/// Softmax over the last axis.
Var softmax(Var x);
/// Exact (erf) GELU.
Var gelu(Var x);
Var relu(Var x);
/// Inverted dropout. Identity when !training or rate == 0; otherwise the
/// mask is drawn from the graph's seed stream (or the given seed).
Var dropout(Var x, double rate, bool training);
Var dropout(Var x, double rate, bool training, std::uint64_t seed);

/// B x C x H x W -> B x C.
Var global_avg_pool(Var x);
/// B x C x H x W -> B x C x oh x ow, bins [floor(i*H/oh), ceil((i+1)*H/oh)).
Var adaptive_avg_pool2d(Var x, std::size_t oh, std::size_t ow);

/// irFFT2(rFFT2(F) * theta) with theta[c] applied to every bin of channel c.
Var rfft2_filter(Var f, Var theta);
/// Same-padded depthwise cross-correlation. kernel: C x k x k, k odd.
Var depthwise_conv2d(Var f, Var kernel, std::optional<Var> bias = std::nullopt);
/// Per-pixel channel mixing. weight: C_out x C_in.
Var pointwise_conv2d(Var f, Var weight, std::optional<Var> bias = std::nullopt);
/// Half-pixel-centre bilinear resize with edge clamping.
Var bilinear_upsample(Var f, std::size_t h_out, std::size_t w_out);

/// x: B x ..., s: B. Scales every element of sample b by s[b].
Var batch_scale(Var x, Var s);
/// B x K -> B, column j.
Var column(Var x, std::size_t j);
/// B x N x D -> B x D, mean over N.
Var token_mean(Var x);
/// Rows of a B x D matrix scaled to unit Euclidean norm.
Var l2_normalize_rows(Var x);

Var sum(Var x);
Var mean(Var x);
/// sum_i w_i x_i, a fixed linear read-out (used to seed gradient checks).
Var weighted_sum(Var x, const Tensor& w);

}  // namespace htune::ops
