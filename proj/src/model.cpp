#include "htune/model.hpp"

#include "htune/errors.hpp"
#include "htune/rng.hpp"

namespace htune {

std::string to_string(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::none: return "none";
        case AdapterKind::ht: return "ht";
        case AdapterKind::lora: return "lora";
    }
    return "?";
}

AdapterKind parse_adapter_kind(const std::string& text) {
    if (text == "none" || text == "frozen") return AdapterKind::none;
    if (text == "ht") return AdapterKind::ht;
    if (text == "lora") return AdapterKind::lora;
    throw ConfigError("unknown adapter kind '" + text + "' (expected none, ht or lora)");
}

AdaptedModel::AdaptedModel(std::shared_ptr<const ViTWeights> weights, ViTConfig config)
    : weights_(std::move(weights)), config_(std::move(config)) {
    if (!weights_) throw ConfigError("AdaptedModel: null backbone");
    config_.validate();
    if (weights_->blocks.size() != config_.depth) throw ConfigError("AdaptedModel: backbone depth does not match config");
}

const HTConfig& AdaptedModel::ht_config() const {
    if (kind_ != AdapterKind::ht) throw ContractError("model carries no HT adapters");
    return ht_config_;
}
const std::vector<HTParams>& AdaptedModel::ht() const {
    if (kind_ != AdapterKind::ht) throw ContractError("model carries no HT adapters");
    return ht_;
}
std::vector<HTParams>& AdaptedModel::ht() {
    if (kind_ != AdapterKind::ht) throw ContractError("model carries no HT adapters");
    return ht_;
}
const LoRAParams& AdaptedModel::lora() const {
    if (kind_ != AdapterKind::lora) throw ContractError("model carries no LoRA parameters");
    return *lora_;
}
LoRAParams& AdaptedModel::lora() {
    if (kind_ != AdapterKind::lora) throw ContractError("model carries no LoRA parameters");
    return *lora_;
}

TapVars AdaptedModel::forward(Graph& g, const Tensor& images, bool training, std::vector<HTProbe>* probes) const {
    ForwardHooks hooks;
    if (kind_ == AdapterKind::ht) {
        if (probes) probes->assign(ht_.size(), HTProbe{});
        hooks.after_block = [&](std::size_t block, Var x) {
            return ht_forward(x, ht_[block], ht_config_, training, probes ? &(*probes)[block] : nullptr);
        };
    } else if (kind_ == AdapterKind::lora) {
        hooks.projection = lora_hook(*lora_);
    }
    return vit_forward(g, images, *weights_, config_, hooks);
}

TapSet AdaptedModel::forward(const Tensor& images) const {
    Graph g;
    TapVars vars = forward(g, images, false);
    TapSet out;
    for (const auto& [i, v] : vars.taps) out.taps.emplace(i, v.value());
    out.final = vars.final.value();
    return out;
}

std::vector<std::pair<std::string, Tensor*>> AdaptedModel::trainable() {
    std::vector<std::pair<std::string, Tensor*>> out;
    if (kind_ == AdapterKind::ht) {
        for (std::size_t l = 0; l < ht_.size(); ++l)
            for (auto& [name, t] : ht_[l].named_mut()) out.emplace_back("ht" + std::to_string(l) + "." + name, t);
    } else if (kind_ == AdapterKind::lora) {
        for (auto& [name, t] : lora_->named_mut()) out.emplace_back("lora." + name, t);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> AdaptedModel::trainable() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [n, t] : const_cast<AdaptedModel*>(this)->trainable()) out.emplace_back(n, t);
    return out;
}

std::size_t AdaptedModel::trainable_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : trainable()) n += t->numel();
    return n;
}

std::size_t AdaptedModel::total_count() const { return weights_->parameter_count() + trainable_count(); }

AdaptedModel attach_ht(std::shared_ptr<const ViTWeights> weights, ViTConfig config, HTConfig ht,
                       std::vector<HTParams> adapters) {
    AdaptedModel m(std::move(weights), std::move(config));
    ht.validate();
    if (adapters.size() != m.config_.depth)
        throw ConfigError("attach_ht: " + std::to_string(adapters.size()) + " adapters for a " +
                          std::to_string(m.config_.depth) + "-block backbone");
    if (ht.width != m.config_.width) throw ConfigError("attach_ht: adapter width differs from backbone width");
    m.kind_ = AdapterKind::ht;
    m.ht_config_ = ht;
    m.ht_ = std::move(adapters);
    return m;
}

AdaptedModel attach_ht(std::shared_ptr<const ViTWeights> weights, ViTConfig config, HTConfig ht, std::uint64_t seed) {
    std::vector<HTParams> adapters;
    for (std::size_t l = 0; l < config.depth; ++l) adapters.push_back(init_ht(ht, derive_seed(seed, l)));
    return attach_ht(std::move(weights), std::move(config), ht, std::move(adapters));
}

AdaptedModel attach_lora(std::shared_ptr<const ViTWeights> weights, ViTConfig config, LoRAParams params) {
    AdaptedModel m(std::move(weights), std::move(config));
    params.config.validate();
    if (params.a.size() != m.config_.depth || params.b.size() != m.config_.depth)
        throw ConfigError("attach_lora: parameter depth does not match the backbone");
    m.kind_ = AdapterKind::lora;
    m.lora_ = std::move(params);
    return m;
}

AdaptedModel attach_lora(std::shared_ptr<const ViTWeights> weights, ViTConfig config, LoRAConfig lora,
                         std::uint64_t seed) {
    LoRAParams p = init_lora(config, lora, seed);
    return attach_lora(std::move(weights), std::move(config), std::move(p));
}

}  // namespace htune
