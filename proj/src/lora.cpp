#include "htune/lora.hpp"

#include <cmath>

#include "htune/errors.hpp"
#include "htune/ops.hpp"
#include "htune/rng.hpp"

namespace htune {

namespace {
constexpr const char* kProjectionNames[4] = {"q", "k", "v", "o"};
}

void LoRAConfig::validate() const {
    if (rank == 0) throw ConfigError("LoRA rank must be at least 1");
    if (!(alpha > 0.0)) throw ConfigError("LoRA alpha must be positive");
}

LoRAConfig make_lora_config(long long rank, double alpha) {
    if (rank <= 0) throw ConfigError("LoRA rank must be at least 1, got " + std::to_string(rank));
    LoRAConfig c{static_cast<std::size_t>(rank), alpha};
    c.validate();
    return c;
}

std::vector<std::pair<std::string, const Tensor*>> LoRAParams::named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [n, t] : const_cast<LoRAParams*>(this)->named_mut()) out.emplace_back(n, t);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> LoRAParams::named_mut() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t l = 0; l < a.size(); ++l)
        for (std::size_t p = 0; p < 4; ++p) {
            const std::string prefix = "block" + std::to_string(l) + "." + kProjectionNames[p];
            out.emplace_back(prefix + ".a", &a[l][p]);
            out.emplace_back(prefix + ".b", &b[l][p]);
        }
    return out;
}

std::size_t LoRAParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->numel();
    return n;
}

LoRAParams init_lora(const ViTConfig& vit, const LoRAConfig& config, std::uint64_t seed) {
    config.validate();
    vit.validate();
    const std::size_t D = vit.width, r = config.rank;
    const double bound = 1.0 / std::sqrt(static_cast<double>(D));
    Rng rng(seed);
    LoRAParams p;
    p.config = config;
    for (std::size_t l = 0; l < vit.depth; ++l) {
        std::array<Tensor, 4> as, bs;
        for (std::size_t i = 0; i < 4; ++i) {
            as[i] = uniform_tensor({D, r}, -bound, bound, rng);
            as[i].round_to_f32();
            bs[i] = Tensor::zeros({r, D});
        }
        p.a.push_back(std::move(as));
        p.b.push_back(std::move(bs));
    }
    return p;
}

std::size_t lora_param_count(std::size_t width, std::size_t depth, std::size_t rank, std::size_t projections) {
    return projections * 2 * width * rank * depth;
}

ProjectionHook lora_hook(const LoRAParams& params) {
    return [&params](std::size_t block, Projection which, Var input, Var frozen) {
        Graph& g = input.graph();
        const auto i = static_cast<std::size_t>(which);
        Var low = ops::matmul(ops::matmul(input, g.param(params.a[block][i])), g.param(params.b[block][i]));
        return ops::add(frozen, ops::scale(low, params.config.scale()));
    };
}

}  // namespace htune
