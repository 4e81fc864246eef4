#include "htune/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "htune/errors.hpp"
#include "htune/ops.hpp"
#include "htune/rng.hpp"

namespace htune {

std::vector<std::size_t> default_tap_indices(std::size_t depth) {
    std::vector<std::size_t> taps;
    for (double frac : {3.0, 6.0, 9.0}) {
        auto idx = static_cast<std::size_t>(std::lround(static_cast<double>(depth) * frac / 12.0));
        idx = std::min(idx, depth - 1);
        if (taps.empty() || taps.back() < idx) taps.push_back(idx);
    }
    return taps;
}

void ViTConfig::validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0)
        throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                          std::to_string(patch_size));
    if (depth == 0 || width == 0 || heads == 0 || mlp_ratio == 0 || in_channels == 0)
        throw ConfigError("backbone depth, width, heads, mlp_ratio and channels must be positive");
    if (width % heads != 0)
        throw ConfigError("width " + std::to_string(width) + " is not divisible by heads " + std::to_string(heads));
    for (std::size_t i = 0; i < tap_indices.size(); ++i) {
        if (tap_indices[i] >= depth) throw ConfigError("tap index " + std::to_string(tap_indices[i]) + " >= depth");
        if (i > 0 && tap_indices[i] <= tap_indices[i - 1]) throw ConfigError("tap indices must be strictly increasing");
    }
}

ViTConfig ViTConfig::toy() {
    ViTConfig c;
    c.tap_indices = default_tap_indices(c.depth);
    return c;
}

ViTConfig ViTConfig::base() {
    ViTConfig c;
    c.depth = 12;
    c.width = 768;
    c.heads = 12;
    c.tap_indices = default_tap_indices(12);
    return c;
}

const Tensor& BlockWeights::projection_weight(Projection p) const {
    switch (p) {
        case Projection::query: return wq;
        case Projection::key: return wk;
        case Projection::value: return wv;
        case Projection::output: return wo;
    }
    return wq;
}

const Tensor& BlockWeights::projection_bias(Projection p) const {
    switch (p) {
        case Projection::query: return bq;
        case Projection::key: return bk;
        case Projection::value: return bv;
        case Projection::output: return bo;
    }
    return bq;
}

std::vector<std::pair<std::string, Shape>> backbone_parameter_shapes(const ViTConfig& c) {
    const std::size_t d = c.width, hidden = c.width * c.mlp_ratio;
    std::vector<std::pair<std::string, Shape>> out{
        {"patch_weight", {c.patch_dim(), d}}, {"patch_bias", {d}}, {"pos_embed", {c.tokens(), d}}};
    for (std::size_t i = 0; i < c.depth; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        for (const char* n : {"ln1_scale", "ln1_shift"}) out.emplace_back(p + n, Shape{d});
        for (const char* n : {"wq", "wk", "wv", "wo"}) {
            out.emplace_back(p + n, Shape{d, d});
            out.emplace_back(p + "b" + std::string(n + 1), Shape{d});
        }
        for (const char* n : {"ln2_scale", "ln2_shift"}) out.emplace_back(p + n, Shape{d});
        out.emplace_back(p + "w_fc1", Shape{d, hidden});
        out.emplace_back(p + "b_fc1", Shape{hidden});
        out.emplace_back(p + "w_fc2", Shape{hidden, d});
        out.emplace_back(p + "b_fc2", Shape{d});
    }
    out.emplace_back("final_scale", Shape{d});
    out.emplace_back("final_shift", Shape{d});
    return out;
}

std::vector<std::pair<std::string, Tensor*>> ViTWeights::named_mut() {
    std::vector<std::pair<std::string, Tensor*>> out{
        {"patch_weight", &patch_weight}, {"patch_bias", &patch_bias}, {"pos_embed", &pos_embed}};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        BlockWeights& b = blocks[i];
        out.insert(out.end(), {{p + "ln1_scale", &b.ln1_scale}, {p + "ln1_shift", &b.ln1_shift},
                               {p + "wq", &b.wq}, {p + "bq", &b.bq}, {p + "wk", &b.wk}, {p + "bk", &b.bk},
                               {p + "wv", &b.wv}, {p + "bv", &b.bv}, {p + "wo", &b.wo}, {p + "bo", &b.bo},
                               {p + "ln2_scale", &b.ln2_scale}, {p + "ln2_shift", &b.ln2_shift},
                               {p + "w_fc1", &b.w_fc1}, {p + "b_fc1", &b.b_fc1},
                               {p + "w_fc2", &b.w_fc2}, {p + "b_fc2", &b.b_fc2}});
    }
    out.emplace_back("final_scale", &final_scale);
    out.emplace_back("final_shift", &final_shift);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ViTWeights::named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<ViTWeights*>(this)->named_mut()) out.emplace_back(std::move(name), t);
    return out;
}

std::uint64_t ViTWeights::checksum() const {
    std::uint64_t h = 0;
    for (const auto& [name, t] : named()) h = derive_seed(h, t->checksum());
    return h;
}

std::size_t ViTWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->numel();
    return n;
}

ViTWeights init_backbone(const ViTConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    constexpr double kStd = 0.02;
    auto matrix = [&](Shape s) {
        Tensor t = truncated_normal_tensor(std::move(s), kStd, rng);
        t.round_to_f32();
        return t;
    };
    const std::size_t d = config.width, hidden = config.width * config.mlp_ratio;
    ViTWeights w;
    w.patch_weight = matrix({config.patch_dim(), d});
    w.patch_bias = Tensor::zeros({d});
    w.pos_embed = matrix({config.tokens(), d});
    for (std::size_t i = 0; i < config.depth; ++i) {
        BlockWeights b;
        b.ln1_scale = Tensor::ones({d});
        b.ln1_shift = Tensor::zeros({d});
        b.wq = matrix({d, d});
        b.bq = Tensor::zeros({d});
        b.wk = matrix({d, d});
        b.bk = Tensor::zeros({d});
        b.wv = matrix({d, d});
        b.bv = Tensor::zeros({d});
        b.wo = matrix({d, d});
        b.bo = Tensor::zeros({d});
        b.ln2_scale = Tensor::ones({d});
        b.ln2_shift = Tensor::zeros({d});
        b.w_fc1 = matrix({d, hidden});
        b.b_fc1 = Tensor::zeros({hidden});
        b.w_fc2 = matrix({hidden, d});
        b.b_fc2 = Tensor::zeros({d});
        w.blocks.push_back(std::move(b));
    }
    w.final_scale = Tensor::ones({d});
    w.final_shift = Tensor::zeros({d});
    return w;
}

namespace {

Var linear(Var x, const Tensor& weight, const Tensor& bias) {
    Graph& g = x.graph();
    return ops::add_lastdim(ops::matmul(x, g.param(weight, false)), g.param(bias, false));
}

Var norm_affine(Var x, const Tensor& scale, const Tensor& shift) {
    Graph& g = x.graph();
    return ops::add_lastdim(ops::mul_lastdim(ops::layer_norm(x), g.param(scale, false)), g.param(shift, false));
}

}  // namespace

Var transformer_block(Var x, const BlockWeights& w, std::size_t heads, std::size_t block_index,
                      const ProjectionHook& hook) {
    const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    const std::size_t dh = d / heads;

    auto project = [&](Projection p, Var in) {
        Var out = linear(in, w.projection_weight(p), w.projection_bias(p));
        return hook ? hook(block_index, p, in, out) : out;
    };
    auto split = [&](Var t) { return ops::permute(ops::reshape(t, {b, n, heads, dh}), {0, 2, 1, 3}); };

    Var xn = norm_affine(x, w.ln1_scale, w.ln1_shift);
    Var q = split(project(Projection::query, xn));
    Var k = split(project(Projection::key, xn));
    Var v = split(project(Projection::value, xn));
    Var scores = ops::scale(ops::matmul(q, ops::transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = ops::matmul(ops::softmax(scores), v);
    Var merged = ops::reshape(ops::permute(attn, {0, 2, 1, 3}), {b, n, d});
    Var h = ops::add(x, project(Projection::output, merged));

    Var hn = norm_affine(h, w.ln2_scale, w.ln2_shift);
    Var mlp = linear(ops::gelu(linear(hn, w.w_fc1, w.b_fc1)), w.w_fc2, w.b_fc2);
    return ops::add(h, mlp);
}

Tensor patchify(const Tensor& images, std::size_t p) {
    if (images.rank() != 4) throw DimensionError("patchify: images must be B x C x H x W, got " + shape_str(images.shape()));
    const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (h % p != 0 || w % p != 0) throw DimensionError("patchify: image " + shape_str(images.shape()) + " not divisible by patch " + std::to_string(p));
    const std::size_t gh = h / p, gw = w / p;
    Tensor out(Shape{b, gh * gw, c * p * p});
    std::size_t o = 0;
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t py = 0; py < gh; ++py)
            for (std::size_t px = 0; px < gw; ++px)
                for (std::size_t ci = 0; ci < c; ++ci)
                    for (std::size_t y = 0; y < p; ++y)
                        for (std::size_t x = 0; x < p; ++x)
                            out[o++] = images[((bi * c + ci) * h + py * p + y) * w + px * p + x];
    return out;
}

Var embed_patches(Graph& g, const Tensor& images, const ViTWeights& w, const ViTConfig& config) {
    const Shape expected{images.rank() == 4 ? images.dim(0) : 0, config.in_channels, config.image_size, config.image_size};
    if (images.shape() != expected)
        throw DimensionError("vit_forward: expected images of shape B x " + std::to_string(config.in_channels) + " x " +
                             std::to_string(config.image_size) + " x " + std::to_string(config.image_size) + ", got " +
                             shape_str(images.shape()));
    if (!images.all_finite()) throw NumericError("vit_forward: non-finite pixel");
    for (double v : images.data())
        if (v < 0.0 || v > 1.0) throw InputError("vit_forward: pixel values must lie in [0, 1]");
    Var patches = g.input(patchify(images, config.patch_size));
    Var tokens = ops::add_lastdim(ops::matmul(patches, g.param(w.patch_weight, false)), g.param(w.patch_bias, false));
    // Positional embedding broadcast over the batch.
    const std::size_t b = images.dim(0);
    Tensor pos(Shape{b, config.tokens(), config.width});
    for (std::size_t bi = 0; bi < b; ++bi)
        std::copy(w.pos_embed.data().begin(), w.pos_embed.data().end(), pos.data().begin() + bi * w.pos_embed.numel());
    return ops::add(tokens, g.input(std::move(pos)));
}

TapVars run_blocks(Var x, const ViTWeights& w, const ViTConfig& config, std::size_t first, std::size_t last,
                   const ForwardHooks& hooks) {
    TapVars out;
    for (std::size_t i = first; i < last; ++i) {
        x = transformer_block(x, w.blocks[i], config.heads, i, hooks.projection);
        if (hooks.after_block) x = hooks.after_block(i, x);
        if (std::find(config.tap_indices.begin(), config.tap_indices.end(), i) != config.tap_indices.end())
            out.taps.emplace(i, x);
    }
    out.final = x;
    return out;
}

TapVars vit_forward(Graph& g, const Tensor& images, const ViTWeights& w, const ViTConfig& config,
                    const ForwardHooks& hooks) {
    if (w.blocks.size() != config.depth) throw ConfigError("backbone weights have a different depth than the config");
    return run_blocks(embed_patches(g, images, w, config), w, config, 0, config.depth, hooks);
}

TapSet vit_forward(const Tensor& images, const ViTWeights& w, const ViTConfig& config) {
    Graph g;
    TapVars vars = vit_forward(g, images, w, config);
    TapSet out;
    for (const auto& [i, v] : vars.taps) out.taps.emplace(i, v.value());
    out.final = vars.final.value();
    return out;
}

namespace {

std::size_t exact_sqrt(std::size_t n) {
    auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    return s * s == n ? s : 0;
}

}  // namespace

Var tokens_to_map(Var tokens) {
    if (tokens.value().rank() != 3) throw DimensionError("tokens_to_map: expected B x N x D, got " + shape_str(tokens.shape()));
    const std::size_t b = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
    const std::size_t s = exact_sqrt(n);
    if (s == 0) throw DimensionError("tokens_to_map: token count " + std::to_string(n) + " is not a perfect square");
    return ops::reshape(ops::permute(tokens, {0, 2, 1}), {b, d, s, s});
}

Var map_to_tokens(Var map) {
    if (map.value().rank() != 4) throw DimensionError("map_to_tokens: expected B x D x H x W, got " + shape_str(map.shape()));
    const std::size_t b = map.dim(0), d = map.dim(1), n = map.dim(2) * map.dim(3);
    return ops::permute(ops::reshape(map, {b, d, n}), {0, 2, 1});
}

Checkpoint backbone_checkpoint(const ViTWeights& w, const ViTConfig& c) {
    Checkpoint ckpt;
    ckpt.role = "backbone";
    ckpt.config = {{"image_size", std::to_string(c.image_size)}, {"patch_size", std::to_string(c.patch_size)},
                   {"in_channels", std::to_string(c.in_channels)}, {"depth", std::to_string(c.depth)},
                   {"width", std::to_string(c.width)}, {"heads", std::to_string(c.heads)},
                   {"mlp_ratio", std::to_string(c.mlp_ratio)}};
    std::ostringstream taps;
    for (std::size_t i = 0; i < c.tap_indices.size(); ++i) taps << (i ? "," : "") << c.tap_indices[i];
    ckpt.config["tap_indices"] = taps.str();
    for (const auto& [name, t] : w.named()) ckpt.tensors.emplace_back(name, *t);
    return ckpt;
}

std::pair<ViTConfig, ViTWeights> load_backbone(const Checkpoint& ckpt) {
    if (ckpt.role != "backbone") throw IntegrityError("checkpoint role '" + ckpt.role + "' is not a backbone");
    auto num = [&](const char* k) {
        auto it = ckpt.config.find(k);
        if (it == ckpt.config.end()) throw IntegrityError(std::string("backbone checkpoint lacks '") + k + "'");
        return static_cast<std::size_t>(std::stoul(it->second));
    };
    ViTConfig c;
    c.image_size = num("image_size");
    c.patch_size = num("patch_size");
    c.in_channels = num("in_channels");
    c.depth = num("depth");
    c.width = num("width");
    c.heads = num("heads");
    c.mlp_ratio = num("mlp_ratio");
    if (auto it = ckpt.config.find("tap_indices"); it != ckpt.config.end()) {
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) c.tap_indices.push_back(std::stoul(tok));
    }
    c.validate();
    ViTWeights w = init_backbone(c, 0);
    for (auto& [name, ptr] : w.named_mut()) {
        const Tensor& src = ckpt.get(name);
        if (src.shape() != ptr->shape()) throw IntegrityError("tensor '" + name + "' has shape " + shape_str(src.shape()));
        *ptr = src;
    }
    return {c, std::move(w)};
}

}  // namespace htune
