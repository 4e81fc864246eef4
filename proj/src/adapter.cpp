#include "htune/adapter.hpp"

#include <cmath>

#include "htune/backbone.hpp"
#include "htune/errors.hpp"
#include "htune/ops.hpp"
#include "htune/rng.hpp"

namespace htune {

void HTConfig::validate() const {
    if (width == 0 || bottleneck == 0 || squeeze == 0) throw ConfigError("HT adapter dimensions must be positive");
    if (bottleneck >= width) throw ConfigError("HT bottleneck d must be smaller than the width D");
    for (std::size_t k : kernels)
        if (k % 2 == 0) throw ConfigError("HT depthwise kernel sizes must be odd, got " + std::to_string(k));
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("HT dropout rate must lie in [0, 1)");
}

HTConfig HTConfig::toy() { return HTConfig{}; }

HTConfig HTConfig::base() {
    HTConfig c;
    c.width = 768;
    c.bottleneck = 64;
    c.squeeze = 16;
    return c;
}

std::vector<std::pair<std::string, const Tensor*>> HTParams::named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [n, t] : const_cast<HTParams*>(this)->named_mut()) out.emplace_back(n, t);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> HTParams::named_mut() {
    std::vector<std::pair<std::string, Tensor*>> out{
        {"gamma", &gamma}, {"gamma_x", &gamma_x}, {"ln_scale", &ln_scale}, {"ln_shift", &ln_shift},
        {"w_down", &w_down}, {"b_down", &b_down}, {"theta", &theta},
        {"w_sq1", &w_sq1}, {"b_sq1", &b_sq1}, {"w_sq2", &w_sq2}, {"b_sq2", &b_sq2}};
    for (std::size_t i = 0; i < 3; ++i) {
        out.emplace_back("dw" + std::to_string(i), &dw[i]);
        out.emplace_back("dw_bias" + std::to_string(i), &dw_bias[i]);
    }
    out.insert(out.end(), {{"w_pw", &w_pw}, {"b_pw", &b_pw}, {"w_up", &w_up}, {"b_up", &b_up}});
    return out;
}

std::size_t HTParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->numel();
    return n;
}

HTParams init_ht(const HTConfig& c, std::uint64_t seed) {
    c.validate();
    const std::size_t D = c.width, d = c.bottleneck, h = c.squeeze;
    Rng rng(seed);
    auto normal = [&](Shape s, double std) {
        Tensor t = truncated_normal_tensor(std::move(s), std, rng);
        t.round_to_f32();
        return t;
    };
    auto dense = [&](Shape s, std::size_t fan_in) { return normal(std::move(s), 1.0 / std::sqrt(static_cast<double>(fan_in))); };
    HTParams p;
    p.gamma = Tensor::ones({D});
    p.gamma_x = Tensor::ones({D});
    p.ln_scale = Tensor::ones({D});
    p.ln_shift = Tensor::zeros({D});
    p.w_down = dense({D, d}, D);
    p.b_down = Tensor::zeros({d});
    p.theta = Tensor::ones({d});
    p.w_sq1 = dense({d, h}, d);
    p.b_sq1 = Tensor::zeros({h});
    // small gate logits so fresh kernel weights start close to uniform
    p.w_sq2 = normal({h, 3}, 0.02);
    p.b_sq2 = Tensor::zeros({3});
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t k = c.kernels[i];
        p.dw[i] = dense({d, k, k}, k * k);
        p.dw_bias[i] = Tensor::zeros({d});
    }
    p.w_pw = dense({d, d}, d);
    p.b_pw = Tensor::zeros({d});
    p.w_up = Tensor::zeros({d, D});
    p.b_up = Tensor::zeros({D});
    return p;
}

std::size_t ht_param_count(std::size_t D, std::size_t d, std::size_t h) {
    return 2 * D + 2 * D + (D * d + d) + d + (d * h + h) + (3 * h + 3) + d * (9 + 25 + 49) + 3 * d + (d * d + d) +
           (d * D + D);
}

Var ff_apply(Var f_in, Var theta) { return ops::rfft2_filter(f_in, theta); }

Var ne_weights(Var f_freq, Var w1, Var b1, Var w2, Var b2) {
    Var pooled = ops::global_avg_pool(f_freq);
    Var hidden = ops::relu(ops::add_lastdim(ops::matmul(pooled, w1), b1));
    return ops::softmax(ops::add_lastdim(ops::matmul(hidden, w2), b2));
}

Var ne_mix(Var f_freq, Var f_in, Var w, std::span<const Var> kernels, std::span<const Var> biases, Var w_pw, Var b_pw) {
    if (kernels.size() != 3 || biases.size() != 3)
        throw ConfigError("ne_mix: the depthwise bank must hold exactly 3 kernels, got " + std::to_string(kernels.size()));
    const std::size_t b = f_freq.dim(0);
    if (w.value().numel() != b * 3) throw DimensionError("ne_mix: weights " + shape_str(w.shape()) + " do not match batch " + std::to_string(b));
    if (w.value().rank() != 2) w = ops::reshape(w, {b, 3});
    Var sum = f_in;
    for (std::size_t i = 0; i < 3; ++i)
        sum = ops::add(sum, ops::batch_scale(ops::depthwise_conv2d(f_freq, kernels[i], biases[i]), ops::column(w, i)));
    return ops::add(ops::pointwise_conv2d(sum, w_pw, b_pw), sum);
}

Var ht_forward(Var z, const HTParams& p, const HTConfig& c, bool training, HTProbe* probe) {
    if (z.value().rank() != 3 || z.dim(2) != c.width || p.w_down.shape() != Shape{c.width, c.bottleneck} ||
        p.w_up.shape() != Shape{c.bottleneck, c.width})
        throw DimensionError("ht_forward: input " + shape_str(z.shape()) + " does not match adapter D=" +
                             std::to_string(c.width) + ", d=" + std::to_string(c.bottleneck));
    Graph& g = z.graph();
    auto P = [&](const Tensor& t) { return g.param(t); };

    Var normed = ops::add_lastdim(ops::mul_lastdim(ops::layer_norm(z), P(p.ln_scale)), P(p.ln_shift));
    Var scaled = ops::add(ops::mul_lastdim(normed, P(p.gamma)), ops::mul_lastdim(z, P(p.gamma_x)));
    Var z_in = ops::add_lastdim(ops::matmul(scaled, P(p.w_down)), P(p.b_down));

    Var f_in = tokens_to_map(z_in);
    Var f_freq = ff_apply(f_in, P(p.theta));
    Var w = ne_weights(f_freq, P(p.w_sq1), P(p.b_sq1), P(p.w_sq2), P(p.b_sq2));
    const std::array<Var, 3> kernels{P(p.dw[0]), P(p.dw[1]), P(p.dw[2])};
    const std::array<Var, 3> biases{P(p.dw_bias[0]), P(p.dw_bias[1]), P(p.dw_bias[2])};
    Var f_multi = ne_mix(f_freq, f_in, w, kernels, biases, P(p.w_pw), P(p.b_pw));

    if (probe) {
        probe->f_in = f_in.value();
        probe->f_freq = f_freq.value();
        probe->weights = w.value();
    }

    Var z_out = map_to_tokens(f_multi);
    Var act = ops::dropout(ops::gelu(z_out), c.dropout, training);
    Var up = ops::add_lastdim(ops::matmul(act, P(p.w_up)), P(p.b_up));
    return ops::add(z, up);
}

Checkpoint adapters_checkpoint(const std::vector<HTParams>& adapters, const HTConfig& c) {
    Checkpoint ckpt;
    ckpt.role = "ht-adapters";
    ckpt.config = {{"width", std::to_string(c.width)}, {"bottleneck", std::to_string(c.bottleneck)},
                   {"squeeze", std::to_string(c.squeeze)}, {"dropout", std::to_string(c.dropout)},
                   {"layers", std::to_string(adapters.size())}};
    for (std::size_t l = 0; l < adapters.size(); ++l)
        for (const auto& [name, t] : adapters[l].named())
            ckpt.tensors.emplace_back("layer" + std::to_string(l) + "." + name, *t);
    return ckpt;
}

std::pair<HTConfig, std::vector<HTParams>> load_adapters(const Checkpoint& ckpt) {
    if (ckpt.role != "ht-adapters") throw IntegrityError("checkpoint role '" + ckpt.role + "' is not ht-adapters");
    auto field = [&](const char* k) {
        auto it = ckpt.config.find(k);
        if (it == ckpt.config.end()) throw IntegrityError(std::string("adapter checkpoint lacks '") + k + "'");
        return it->second;
    };
    HTConfig c;
    c.width = std::stoul(field("width"));
    c.bottleneck = std::stoul(field("bottleneck"));
    c.squeeze = std::stoul(field("squeeze"));
    c.dropout = std::stod(field("dropout"));
    c.validate();
    const std::size_t layers = std::stoul(field("layers"));
    std::vector<HTParams> out;
    for (std::size_t l = 0; l < layers; ++l) {
        HTParams p = init_ht(c, 0);
        for (auto& [name, t] : p.named_mut()) {
            const Tensor& stored = ckpt.get("layer" + std::to_string(l) + "." + name);
            if (stored.shape() != t->shape())
                throw IntegrityError("adapter tensor layer" + std::to_string(l) + "." + name + " has shape " + shape_str(stored.shape()));
            *t = stored;
        }
        out.push_back(std::move(p));
    }
    return {c, out};
}

}  // namespace htune
