#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "htune/graph.hpp"
#include "htune/tensor_io.hpp"

namespace htune {

/// Frozen ViT geometry. Images are single-channel, square, and cut into
/// non-overlapping patches; every patch becomes one token (no class token).
struct ViTConfig {
    std::size_t image_size = 224;
    std::size_t patch_size = 16;
    std::size_t in_channels = 1;
    std::size_t depth = 4;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::vector<std::size_t> tap_indices;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t tokens() const { return grid() * grid(); }
    std::size_t patch_dim() const { return in_channels * patch_size * patch_size; }

    /// Throws ConfigError on an inconsistent configuration.
    void validate() const;

    /// D=64, L=4 desk-scale backbone at 224 px.
    static ViTConfig toy();
    /// ViT-B/16 dimensions (D=768, L=12); used for accounting only.
    static ViTConfig base();
};

/// Tap rule for a depth-L backbone: round(L * {3, 6, 9} / 12), clamped to
/// L - 1 and de-duplicated. Depth 12 gives {3, 6, 9}.
std::vector<std::size_t> default_tap_indices(std::size_t depth);

enum class Projection { query = 0, key = 1, value = 2, output = 3 };

struct BlockWeights {
    Tensor ln1_scale, ln1_shift;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_scale, ln2_shift;
    Tensor w_fc1, b_fc1, w_fc2, b_fc2;

    const Tensor& projection_weight(Projection p) const;
    const Tensor& projection_bias(Projection p) const;
};

struct ViTWeights {
    Tensor patch_weight;  // patch_dim x D
    Tensor patch_bias;    // D
    Tensor pos_embed;     // N x D
    std::vector<BlockWeights> blocks;
    Tensor final_scale, final_shift;

    std::vector<std::pair<std::string, const Tensor*>> named() const;
    std::vector<std::pair<std::string, Tensor*>> named_mut();
    std::uint64_t checksum() const;
    std::size_t parameter_count() const;
};

/// Deterministic truncated-normal (std 0.02) initialization; biases and
/// LayerNorm shifts zero, LayerNorm scales one. Values are f32-representable.
ViTWeights init_backbone(const ViTConfig& config, std::uint64_t seed);

/// Shape-only parameter enumeration (no allocation), matching init_backbone.
std::vector<std::pair<std::string, Shape>> backbone_parameter_shapes(const ViTConfig& config);

/// Intercepts the attention projections of one block. Receives the
/// projection input and the frozen projection output; returns the value used.
using ProjectionHook = std::function<Var(std::size_t block, Projection which, Var input, Var frozen)>;

/// Applied to each block output before it feeds the next block.
using BlockHook = std::function<Var(std::size_t block, Var tokens)>;

struct ForwardHooks {
    BlockHook after_block;
    ProjectionHook projection;
};

/// Graph-level taps: block outputs at the configured indices and the last
/// block output (both after any after_block hook).
struct TapVars {
    std::map<std::size_t, Var> taps;
    Var final;
};

struct TapSet {
    std::map<std::size_t, Tensor> taps;
    Tensor final;
};

/// Pre-norm transformer block: x + Attn(LN(x)); h + MLP(LN(h)).
Var transformer_block(Var x, const BlockWeights& w, std::size_t heads, std::size_t block_index = 0,
                      const ProjectionHook& hook = {});

/// B x C x S x S images -> B x N x (C*p*p) patch vectors, patch-major rows.
Tensor patchify(const Tensor& images, std::size_t patch_size);

/// Patch embedding plus positional embedding for a batch of images.
Var embed_patches(Graph& g, const Tensor& images, const ViTWeights& w, const ViTConfig& config);

/// Runs blocks [first, last) on token input x.
TapVars run_blocks(Var x, const ViTWeights& w, const ViTConfig& config, std::size_t first, std::size_t last,
                   const ForwardHooks& hooks = {});

TapVars vit_forward(Graph& g, const Tensor& images, const ViTWeights& w, const ViTConfig& config,
                    const ForwardHooks& hooks = {});

/// Frozen baseline forward without gradient tracking.
TapSet vit_forward(const Tensor& images, const ViTWeights& w, const ViTConfig& config);

/// B x N x D tokens -> B x D x sqrt(N) x sqrt(N); token t sits at (t / S, t % S).
Var tokens_to_map(Var tokens);
/// Inverse of tokens_to_map.
Var map_to_tokens(Var map);

Checkpoint backbone_checkpoint(const ViTWeights& w, const ViTConfig& config);
std::pair<ViTConfig, ViTWeights> load_backbone(const Checkpoint& ckpt);

}  // namespace htune
