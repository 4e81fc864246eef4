#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "htune/graph.hpp"
#include "htune/tensor_io.hpp"

namespace htune {

struct HTConfig {
    std::size_t width = 64;       // D
    std::size_t bottleneck = 16;  // d
    std::size_t squeeze = 4;      // h
    std::array<std::size_t, 3> kernels{3, 5, 7};
    double dropout = 0.1;

    void validate() const;

    /// Desk-scale adapter for a width-64 backbone.
    static HTConfig toy();
    /// D=768, d=64, h=16.
    static HTConfig base();
};

struct HTParams {
    Tensor gamma, gamma_x;          // D
    Tensor ln_scale, ln_shift;      // D
    Tensor w_down, b_down;          // D x d, d
    Tensor theta;                   // d
    Tensor w_sq1, b_sq1;            // d x h, h
    Tensor w_sq2, b_sq2;            // h x 3, 3
    std::array<Tensor, 3> dw, dw_bias;  // d x k x k, d
    Tensor w_pw, b_pw;              // d x d (out x in), d
    Tensor w_up, b_up;              // d x D, D

    std::vector<std::pair<std::string, const Tensor*>> named() const;
    std::vector<std::pair<std::string, Tensor*>> named_mut();
    std::size_t parameter_count() const;
};

/// theta = 1, W_up = b_up = 0, gamma = gamma_x = 1, LayerNorm affine at
/// identity, all biases zero. Dense weights are truncated normal scaled by
/// fan-in; depthwise kernels by 1/k.
HTParams init_ht(const HTConfig& config, std::uint64_t seed);

/// Closed-form parameter count of one adapter.
std::size_t ht_param_count(std::size_t D, std::size_t d, std::size_t h);

/// Intermediate maps of one adapter forward, for spectral probes.
struct HTProbe {
    Tensor f_in;    // B x d x S x S
    Tensor f_freq;  // B x d x S x S
    Tensor weights; // B x 3
};

/// H = Z + Dropout(GELU(Z_out)) W_up + b_up, Z: B x N x D with N square.
/// Adapter parameters are bound as trainable leaves of Z's graph.
Var ht_forward(Var z, const HTParams& p, const HTConfig& config, bool training, HTProbe* probe = nullptr);

/// Per-channel spectral filter on the bottleneck map.
Var ff_apply(Var f_in, Var theta);

/// GAP -> 1x1 conv (d->h) -> ReLU -> 1x1 conv (h->3) -> softmax. Returns B x 3.
Var ne_weights(Var f_freq, Var w1, Var b1, Var w2, Var b2);

/// F_sum = sum_i w_i DWConv_i(F_freq) + F_in; returns PWConv(F_sum) + F_sum.
/// w is B x 3 (or B x 3 x 1 x 1). Throws ConfigError unless the bank has
/// exactly three kernels.
Var ne_mix(Var f_freq, Var f_in, Var w, std::span<const Var> kernels, std::span<const Var> biases, Var w_pw, Var b_pw);

Checkpoint adapters_checkpoint(const std::vector<HTParams>& adapters, const HTConfig& config);
std::pair<HTConfig, std::vector<HTParams>> load_adapters(const Checkpoint& ckpt);

}  // namespace htune
