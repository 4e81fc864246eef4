#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "htune/backbone.hpp"

namespace htune {

struct LoRAConfig {
    std::size_t rank = 16;
    double alpha = 16.0;

    /// Throws ConfigError for rank 0 or non-positive alpha.
    void validate() const;
    double scale() const { return alpha / static_cast<double>(rank); }
};

/// Low-rank pairs for the query, key, value and output projections of
/// every block. Effective projection: W + (alpha / r) A B.
struct LoRAParams {
    LoRAConfig config;
    std::vector<std::array<Tensor, 4>> a;  // D x r, indexed by Projection
    std::vector<std::array<Tensor, 4>> b;  // r x D, zero at init

    std::vector<std::pair<std::string, const Tensor*>> named() const;
    std::vector<std::pair<std::string, Tensor*>> named_mut();
    std::size_t parameter_count() const;
};

/// Signed rank, so a caller-supplied r <= 0 is reported rather than wrapped.
LoRAConfig make_lora_config(long long rank, double alpha);

LoRAParams init_lora(const ViTConfig& vit, const LoRAConfig& config, std::uint64_t seed);

std::size_t lora_param_count(std::size_t width, std::size_t depth, std::size_t rank, std::size_t projections = 4);

/// Projection hook adding the low-rank update; A and B are trainable leaves.
ProjectionHook lora_hook(const LoRAParams& params);

}  // namespace htune
