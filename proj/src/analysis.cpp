#include "htune/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "htune/errors.hpp"
#include "htune/fft.hpp"
#include "htune/metrics.hpp"
#include "htune/rng.hpp"

namespace htune {

std::string ThetaStats::formatted() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f±%.4f", mean, std);
    return buf;
}

std::vector<ThetaStats> probe_theta(const std::vector<HTParams>& adapters) {
    std::vector<ThetaStats> out;
    for (const auto& p : adapters) {
        const auto values = p.theta.data();
        const Summary s = summarize(std::vector<double>(values.begin(), values.end()));
        ThetaStats t;
        t.mean = s.mean;
        t.std = s.std;
        t.min = *std::min_element(values.begin(), values.end());
        t.max = *std::max_element(values.begin(), values.end());
        out.push_back(t);
    }
    return out;
}

double grand_mean_theta(const std::vector<HTParams>& adapters) {
    if (adapters.empty()) throw InputError("grand_mean_theta: no adapters");
    double sum = 0.0;
    for (const auto& t : probe_theta(adapters)) sum += t.mean;
    return sum / static_cast<double>(adapters.size());
}

namespace {

double map_energy(const Tensor& f) {
    if (f.rank() != 4) throw DimensionError("spectral energy: expected B x C x H x W, got " + shape_str(f.shape()));
    const std::size_t h = f.dim(2), w = f.dim(3), maps = f.dim(0) * f.dim(1);
    double e = 0.0;
    for (std::size_t m = 0; m < maps; ++m)
        e += fft::spectral_energy(fft::rfft2(f.data().subspan(m * h * w, h * w), h, w), h, w);
    return e;
}

}  // namespace

double spectral_energy_change(const Tensor& f_in, const Tensor& f_freq) {
    if (f_in.shape() != f_freq.shape())
        throw DimensionError("spectral_energy_change: " + shape_str(f_in.shape()) + " vs " + shape_str(f_freq.shape()));
    const double e_in = map_energy(f_in);
    if (e_in == 0.0) throw DegenerateSampleError("spectral_energy_change: input has zero spectral energy");
    return 100.0 * (map_energy(f_freq) - e_in) / e_in;
}

std::vector<SpectralLayer> spectral_report(const AdaptedModel& model, const Tensor& probes) {
    if (model.kind() != AdapterKind::ht) throw ConfigError("spectral analysis needs an HT-adapted model");
    if (probes.rank() != 4 || probes.dim(0) == 0) throw InputError("spectral analysis needs a non-empty probe batch");
    const auto theta = probe_theta(model.ht());
    std::vector<SpectralLayer> out(theta.size());
    std::vector<HTProbe> taps;
    {
        Graph g;
        model.forward(g, probes, false, &taps);
    }
    for (std::size_t l = 0; l < out.size(); ++l) {
        out[l].theta = theta[l];
        out[l].energy_change = spectral_energy_change(taps[l].f_in, taps[l].f_freq);
        const Tensor& w = taps[l].weights;
        const std::size_t b = w.dim(0);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t k = 0; k < 3; ++k) out[l].ne[k] += w[i * 3 + k] / static_cast<double>(b);
    }
    return out;
}

std::vector<std::array<double, 3>> ne_weight_profile(const AdaptedModel& model, const Tensor& probes) {
    if (probes.rank() != 4 || probes.dim(0) == 0) throw InputError("ne_weight_profile: empty probe set");
    std::vector<std::array<double, 3>> out;
    for (const auto& layer : spectral_report(model, probes)) out.push_back(layer.ne);
    return out;
}

std::size_t backbone_param_count(const ViTConfig& config) {
    std::size_t n = 0;
    for (const auto& [name, shape] : backbone_parameter_shapes(config)) n += shape_numel(shape);
    return n;
}

ParamCounts count_params(const AdaptedModel& model) {
    ParamCounts c;
    c.trainable = model.trainable_count();
    c.total = model.backbone().parameter_count() + c.trainable;
    return c;
}

FlopBreakdown estimate_flops(const ViTConfig& vit, const std::optional<HTConfig>& ht, const Shape& input_shape) {
    if (input_shape.size() != 4) throw DimensionError("estimate_flops: input shape must be B x C x S x S");
    for (std::size_t e : input_shape)
        if (e == 0) throw UnsupportedError("estimate_flops: dynamic input extent");
    if (input_shape[1] != vit.in_channels || input_shape[2] != vit.image_size || input_shape[3] != vit.image_size)
        throw DimensionError("estimate_flops: input " + shape_str(input_shape) + " does not match the backbone");
    const auto B = static_cast<double>(input_shape[0]);
    const auto N = static_cast<double>(vit.tokens());
    const auto D = static_cast<double>(vit.width);
    const auto hidden = static_cast<double>(vit.width * vit.mlp_ratio);
    auto linear = [](double m, double n, double tokens) { return 2.0 * m * n * tokens; };

    FlopBreakdown f;
    f.backbone = linear(static_cast<double>(vit.patch_dim()), D, N);
    const double per_block = 4.0 * linear(D, D, N)           // q, k, v, o
                             + 2.0 * 2.0 * N * N * D          // QK^T and AV
                             + linear(D, hidden, N) + linear(hidden, D, N);
    f.backbone += static_cast<double>(vit.depth) * per_block;
    f.backbone *= B;

    if (ht) {
        const auto d = static_cast<double>(ht->bottleneck);
        const auto h = static_cast<double>(ht->squeeze);
        const double hw = N;
        double per = linear(D, d, N) + linear(d, D, N);   // W_down, W_up
        per += 2.0 * d * 5.0 * hw * std::log2(hw);        // forward and inverse FFT
        per += linear(d, h, 1.0) + linear(h, 3.0, 1.0);   // squeeze on the pooled vector
        for (std::size_t k : ht->kernels) per += 2.0 * static_cast<double>(k * k) * d * hw;
        per += 2.0 * d * d * hw;                           // pointwise
        f.adapters = B * static_cast<double>(vit.depth) * per;
    }
    return f;
}

LatencyReport bench_latency(const AdaptedModel& model, std::size_t batch, std::size_t reps, std::size_t warmup) {
    if (reps < 10) throw ConfigError("bench_latency: need at least 10 repetitions");
    if (warmup < 3) throw ConfigError("bench_latency: need at least 3 warm-up passes");
    if (batch == 0) throw ConfigError("bench_latency: batch must be positive");
    const ViTConfig& c = model.vit_config();
    Rng rng(12345);
    Tensor images = uniform_tensor({batch, c.in_channels, c.image_size, c.image_size}, 0.0, 1.0, rng);
    for (std::size_t i = 0; i < warmup; ++i) (void)model.forward(images);
    std::vector<double> per_image;
    for (std::size_t i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)model.forward(images);
        const auto t1 = std::chrono::steady_clock::now();
        per_image.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(batch));
    }
    const Summary s = summarize(per_image);
    LatencyReport r;
    r.mean_ms_per_image = s.mean;
    r.std_ms_per_image = s.std;
    r.fps = 1000.0 / s.mean;
    r.reps = reps;
    return r;
}

}  // namespace htune
