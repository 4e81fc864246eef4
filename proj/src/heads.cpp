#include "htune/heads.hpp"

#include <cmath>

#include "htune/backbone.hpp"
#include "htune/errors.hpp"
#include "htune/ops.hpp"
#include "htune/rng.hpp"

namespace htune {

std::string to_string(Task task) { return task == Task::seg ? "seg" : "cls"; }

Task parse_task(const std::string& text) {
    if (text == "seg") return Task::seg;
    if (text == "cls") return Task::cls;
    throw ConfigError("unknown task '" + text + "' (expected seg or cls)");
}

void HeadConfig::validate() const {
    if (width == 0 || reduced == 0 || cls_hidden == 0) throw ConfigError("head dimensions must be positive");
    if (num_classes == 0) throw ConfigError("heads need at least one class");
    if (taps.empty()) throw ConfigError("heads need at least one tap index");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("head dropout must lie in [0, 1)");
}

std::vector<std::pair<std::string, const Tensor*>> HeadParams::named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [n, t] : const_cast<HeadParams*>(this)->named_mut()) out.emplace_back(n, t);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> HeadParams::named_mut() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const std::string pre = "tap" + std::to_string(config.taps[i]) + ".";
        auto& t = taps[i];
        out.insert(out.end(), {{pre + "w", &t.w}, {pre + "b", &t.b}, {pre + "ln_scale", &t.ln_scale},
                               {pre + "ln_shift", &t.ln_shift}, {pre + "ref_w", &t.ref_w}, {pre + "ref_b", &t.ref_b}});
    }
    if (config.task == Task::seg) {
        out.insert(out.end(), {{"seg_w", &seg_w}, {"seg_b", &seg_b}});
    } else {
        out.insert(out.end(), {{"fc1_w", &fc1_w}, {"fc1_b", &fc1_b}, {"fc2_w", &fc2_w}, {"fc2_b", &fc2_b}});
    }
    return out;
}

std::size_t HeadParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->numel();
    return n;
}

HeadParams init_heads(const HeadConfig& c, std::uint64_t seed) {
    c.validate();
    Rng rng(seed);
    auto dense = [&](Shape s, std::size_t fan_in) {
        Tensor t = truncated_normal_tensor(std::move(s), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
        t.round_to_f32();
        return t;
    };
    HeadParams p;
    p.config = c;
    for (std::size_t i = 0; i < c.taps.size(); ++i) {
        TapProjection t;
        t.w = dense({c.width, c.reduced}, c.width);
        t.b = Tensor::zeros({c.reduced});
        t.ln_scale = Tensor::ones({c.reduced});
        t.ln_shift = Tensor::zeros({c.reduced});
        t.ref_w = dense({c.reduced, c.reduced}, c.reduced);
        t.ref_b = Tensor::zeros({c.reduced});
        p.taps.push_back(std::move(t));
    }
    if (c.task == Task::seg) {
        p.seg_w = dense({c.num_classes, c.reduced}, c.reduced);
        p.seg_b = Tensor::zeros({c.num_classes});
    } else {
        p.fc1_w = dense({c.reduced, c.cls_hidden}, c.reduced);
        p.fc1_b = Tensor::zeros({c.cls_hidden});
        p.fc2_w = dense({c.cls_hidden, c.num_classes}, c.cls_hidden);
        p.fc2_b = Tensor::zeros({c.num_classes});
    }
    return p;
}

Var aggregate(const std::map<std::size_t, Var>& taps, const HeadParams& p) {
    Var sum;
    for (std::size_t i = 0; i < p.config.taps.size(); ++i) {
        auto it = taps.find(p.config.taps[i]);
        if (it == taps.end()) throw ConfigError("aggregate: tap " + std::to_string(p.config.taps[i]) + " is missing");
        Var x = it->second;
        Graph& g = x.graph();
        const TapProjection& t = p.taps[i];
        Var h = ops::add_lastdim(ops::matmul(x, g.param(t.w)), g.param(t.b));
        h = ops::add_lastdim(ops::mul_lastdim(ops::layer_norm(h), g.param(t.ln_scale)), g.param(t.ln_shift));
        h = ops::gelu(ops::add_lastdim(ops::matmul(h, g.param(t.ref_w)), g.param(t.ref_b)));
        sum = sum.valid() ? ops::add(sum, h) : h;
    }
    return tokens_to_map(sum);
}

Var seg_forward(Var f_agg, const HeadParams& p) {
    if (p.config.task != Task::seg) throw ConfigError("seg_forward called with classification heads");
    Graph& g = f_agg.graph();
    Var logits = ops::pointwise_conv2d(f_agg, g.param(p.seg_w), g.param(p.seg_b));
    return ops::bilinear_upsample(logits, p.config.image_size, p.config.image_size);
}

Var cls_forward(Var f_agg, const HeadParams& p, bool training) {
    if (p.config.task != Task::cls) throw ConfigError("cls_forward called with segmentation heads");
    Graph& g = f_agg.graph();
    Var pooled = ops::reshape(ops::adaptive_avg_pool2d(f_agg, 1, 1), {f_agg.dim(0), f_agg.dim(1)});
    Var h = ops::relu(ops::add_lastdim(ops::matmul(pooled, g.param(p.fc1_w)), g.param(p.fc1_b)));
    h = ops::dropout(h, p.config.dropout, training);
    return ops::add_lastdim(ops::matmul(h, g.param(p.fc2_w)), g.param(p.fc2_b));
}

Checkpoint heads_checkpoint(const HeadParams& p) {
    const HeadConfig& c = p.config;
    Checkpoint ckpt;
    ckpt.role = to_string(c.task);
    std::string taps;
    for (std::size_t i = 0; i < c.taps.size(); ++i) taps += (i ? "," : "") + std::to_string(c.taps[i]);
    ckpt.config = {{"width", std::to_string(c.width)}, {"reduced", std::to_string(c.reduced)},
                   {"num_classes", std::to_string(c.num_classes)}, {"cls_hidden", std::to_string(c.cls_hidden)},
                   {"dropout", std::to_string(c.dropout)}, {"image_size", std::to_string(c.image_size)},
                   {"taps", taps}};
    for (const auto& [name, t] : p.named()) ckpt.tensors.emplace_back(name, *t);
    return ckpt;
}

HeadParams load_heads(const Checkpoint& ckpt) {
    HeadConfig c;
    c.task = parse_task(ckpt.role);
    auto field = [&](const char* k) {
        auto it = ckpt.config.find(k);
        if (it == ckpt.config.end()) throw IntegrityError(std::string("head checkpoint lacks '") + k + "'");
        return it->second;
    };
    c.width = std::stoul(field("width"));
    c.reduced = std::stoul(field("reduced"));
    c.num_classes = std::stoul(field("num_classes"));
    c.cls_hidden = std::stoul(field("cls_hidden"));
    c.dropout = std::stod(field("dropout"));
    c.image_size = std::stoul(field("image_size"));
    const std::string taps = field("taps");
    std::size_t pos = 0;
    while (pos < taps.size()) {
        std::size_t comma = taps.find(',', pos);
        if (comma == std::string::npos) comma = taps.size();
        c.taps.push_back(std::stoul(taps.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    HeadParams p = init_heads(c, 0);
    for (auto& [name, t] : p.named_mut()) {
        const Tensor& stored = ckpt.get(name);
        if (stored.shape() != t->shape()) throw IntegrityError("head tensor " + name + " has shape " + shape_str(stored.shape()));
        *t = stored;
    }
    return p;
}

}  // namespace htune
