#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "htune/adapter.hpp"
#include "htune/backbone.hpp"
#include "htune/lora.hpp"

namespace htune {

enum class AdapterKind { none, ht, lora };

std::string to_string(AdapterKind kind);
/// "none" | "frozen", "ht", "lora"; anything else is a ConfigError.
AdapterKind parse_adapter_kind(const std::string& text);

/// A frozen backbone shared by reference plus the trainable adapter state
/// owned by this model.
class AdaptedModel {
public:
    AdaptedModel(std::shared_ptr<const ViTWeights> weights, ViTConfig config);

    AdapterKind kind() const noexcept { return kind_; }
    const ViTConfig& vit_config() const noexcept { return config_; }
    const ViTWeights& backbone() const noexcept { return *weights_; }
    std::shared_ptr<const ViTWeights> shared_backbone() const noexcept { return weights_; }

    const HTConfig& ht_config() const;
    const std::vector<HTParams>& ht() const;
    std::vector<HTParams>& ht();
    const LoRAParams& lora() const;
    LoRAParams& lora();

    /// Taps are taken after the adapter of the tapped block. When probes is
    /// non-null it receives one entry per HT adapter.
    TapVars forward(Graph& g, const Tensor& images, bool training, std::vector<HTProbe>* probes = nullptr) const;
    /// Evaluation-mode forward without gradient bookkeeping for the caller.
    TapSet forward(const Tensor& images) const;

    std::vector<std::pair<std::string, Tensor*>> trainable();
    std::vector<std::pair<std::string, const Tensor*>> trainable() const;
    std::size_t trainable_count() const;
    std::size_t total_count() const;

private:
    friend AdaptedModel attach_ht(std::shared_ptr<const ViTWeights>, ViTConfig, HTConfig, std::vector<HTParams>);
    friend AdaptedModel attach_lora(std::shared_ptr<const ViTWeights>, ViTConfig, LoRAParams);

    std::shared_ptr<const ViTWeights> weights_;
    ViTConfig config_;
    AdapterKind kind_ = AdapterKind::none;
    HTConfig ht_config_;
    std::vector<HTParams> ht_;
    std::optional<LoRAParams> lora_;
};

/// One adapter per block; a count or width mismatch is a ConfigError.
AdaptedModel attach_ht(std::shared_ptr<const ViTWeights> weights, ViTConfig config, HTConfig ht,
                       std::vector<HTParams> adapters);
AdaptedModel attach_ht(std::shared_ptr<const ViTWeights> weights, ViTConfig config, HTConfig ht, std::uint64_t seed);
AdaptedModel attach_lora(std::shared_ptr<const ViTWeights> weights, ViTConfig config, LoRAParams params);
AdaptedModel attach_lora(std::shared_ptr<const ViTWeights> weights, ViTConfig config, LoRAConfig lora,
                         std::uint64_t seed);

}  // namespace htune
