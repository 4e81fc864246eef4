#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "htune/adapter.hpp"
#include "htune/model.hpp"

namespace htune {

struct ThetaStats {
    double mean = 0.0, std = 0.0, min = 0.0, max = 0.0;
    /// "%.4f±%.4f" of mean and std.
    std::string formatted() const;
};

/// Per-layer statistics of theta; std is the sample standard deviation.
std::vector<ThetaStats> probe_theta(const std::vector<HTParams>& adapters);
/// Mean of the per-layer theta means.
double grand_mean_theta(const std::vector<HTParams>& adapters);

/// 100 (E_out - E_in) / E_in with E the full-spectrum energy summed over
/// every B x C map. E_in = 0 is a DegenerateSampleError.
double spectral_energy_change(const Tensor& f_in, const Tensor& f_freq);

/// Mean NE weights (w3, w5, w7) per layer over the probe images
/// (B x 1 x S x S). An empty probe set is an InputError.
std::vector<std::array<double, 3>> ne_weight_profile(const AdaptedModel& model, const Tensor& probes);

struct SpectralLayer {
    ThetaStats theta;
    double energy_change = 0.0;  // percent
    std::array<double, 3> ne{};
};
std::vector<SpectralLayer> spectral_report(const AdaptedModel& model, const Tensor& probes);

struct ParamCounts {
    std::size_t trainable = 0;
    std::size_t total = 0;
};
/// Trainable = adapter tensors; total adds the frozen backbone.
ParamCounts count_params(const AdaptedModel& model);
/// Shape-only count for a backbone that is never allocated.
std::size_t backbone_param_count(const ViTConfig& config);

struct FlopBreakdown {
    double backbone = 0.0;
    double adapters = 0.0;
    double total() const { return backbone + adapters; }
    double overhead_percent() const { return 100.0 * adapters / backbone; }
};

/// Multiply-add counting at two FLOPs per multiply-add. Linear layers cost
/// 2 m n per token, depthwise convolutions 2 k^2 per output element,
/// pointwise convolutions 2 C_in per output element, and each 2-D FFT
/// 5 HW log2(HW) per channel. Normalizations, activations and softmax are
/// not counted. input_shape is B x C x S x S; a zero extent marks a
/// dynamic dimension and is an UnsupportedError.
FlopBreakdown estimate_flops(const ViTConfig& vit, const std::optional<HTConfig>& ht, const Shape& input_shape);

struct LatencyReport {
    double mean_ms_per_image = 0.0;
    double std_ms_per_image = 0.0;
    double fps = 0.0;
    std::size_t reps = 0;
};

/// Evaluation-mode forward timing on a deterministic input. reps < 10 or
/// warmup < 3 is a ConfigError.
LatencyReport bench_latency(const AdaptedModel& model, std::size_t batch, std::size_t reps, std::size_t warmup = 3);

}  // namespace htune
