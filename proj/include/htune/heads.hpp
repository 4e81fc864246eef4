#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "htune/graph.hpp"
#include "htune/tensor_io.hpp"

namespace htune {

enum class Task { seg, cls };

std::string to_string(Task task);
Task parse_task(const std::string& text);

struct HeadConfig {
    Task task = Task::seg;
    std::size_t width = 64;  // backbone D
    std::size_t reduced = 64;  // d_red
    std::size_t num_classes = 2;
    std::size_t cls_hidden = 256;
    double dropout = 0.1;
    std::size_t image_size = 224;
    std::vector<std::size_t> taps;

    void validate() const;
};

/// Per-tap projection D -> d_red followed by LayerNorm (with affine), a
/// d_red x d_red linear refinement and GELU.
struct TapProjection {
    Tensor w, b;
    Tensor ln_scale, ln_shift;
    Tensor ref_w, ref_b;
};

struct HeadParams {
    HeadConfig config;
    std::vector<TapProjection> taps;  // same order as config.taps
    Tensor seg_w, seg_b;              // num_classes x d_red, num_classes
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;

    std::vector<std::pair<std::string, const Tensor*>> named() const;
    std::vector<std::pair<std::string, Tensor*>> named_mut();
    std::size_t parameter_count() const;
};

HeadParams init_heads(const HeadConfig& config, std::uint64_t seed);

/// Sum of refined tap projections as a B x d_red x S x S map. A configured
/// tap missing from `taps` is a ConfigError.
Var aggregate(const std::map<std::size_t, Var>& taps, const HeadParams& p);

/// 1x1 conv to class logits, then bilinear upsample to image_size. The
/// order is swapped relative to upsample-then-conv; both are identical
/// because the bilinear weights of every output pixel sum to one.
Var seg_forward(Var f_agg, const HeadParams& p);

/// Adaptive average pool to 1x1, Linear -> ReLU -> Dropout -> Linear.
Var cls_forward(Var f_agg, const HeadParams& p, bool training);

Checkpoint heads_checkpoint(const HeadParams& p);
HeadParams load_heads(const Checkpoint& ckpt);

}  // namespace htune
