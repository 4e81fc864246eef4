#include "htune/op_registry.hpp"

#include "htune/errors.hpp"
#include "htune/ops.hpp"

namespace htune {

const Primitive& OpRegistry::find(std::string_view name) const {
    for (const auto& p : primitives_)
        if (p.name == name) return p;
    throw InputError("unknown primitive '" + std::string(name) + "'");
}

std::vector<std::string> OpRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& p : primitives_) out.push_back(p.name);
    return out;
}

namespace {

Tensor normal(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

// Values bounded away from zero so kinks (ReLU) stay outside the FD stencil.
Tensor away_from_zero(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) {
        const double m = rng.uniform(0.05, 2.0);
        v = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

std::size_t extent(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

std::vector<Primitive> build() {
    using V = std::span<const Var>;
    std::vector<Primitive> p;
    auto same2 = [](Rng& r) {
        Shape s{extent(r, 1, 3), extent(r, 2, 4), extent(r, 2, 5)};
        return std::vector<Tensor>{normal(s, r), normal(s, r)};
    };
    p.push_back({"add", same2, [](V v) { return ops::add(v[0], v[1]); }});
    p.push_back({"sub", same2, [](V v) { return ops::sub(v[0], v[1]); }});
    p.push_back({"mul", same2, [](V v) { return ops::mul(v[0], v[1]); }});
    p.push_back({"scale",
                 [](Rng& r) { return std::vector<Tensor>{normal({extent(r, 1, 4), extent(r, 1, 4)}, r)}; },
                 [](V v) { return ops::scale(v[0], -1.7); }});
    auto lastdim = [](Rng& r) {
        const std::size_t d = extent(r, 2, 6);
        return std::vector<Tensor>{normal({extent(r, 1, 3), extent(r, 1, 4), d}, r), normal({d}, r)};
    };
    p.push_back({"add_lastdim", lastdim, [](V v) { return ops::add_lastdim(v[0], v[1]); }});
    p.push_back({"mul_lastdim", lastdim, [](V v) { return ops::mul_lastdim(v[0], v[1]); }});
    p.push_back({"matmul",
                 [](Rng& r) {
                     const std::size_t k = extent(r, 1, 5);
                     return std::vector<Tensor>{normal({extent(r, 1, 3), extent(r, 1, 4), k}, r),
                                                normal({k, extent(r, 1, 5)}, r)};
                 },
                 [](V v) { return ops::matmul(v[0], v[1]); }});
    p.push_back({"batched_matmul",
                 [](Rng& r) {
                     const std::size_t b = extent(r, 1, 3), k = extent(r, 1, 4);
                     return std::vector<Tensor>{normal({b, 2, extent(r, 1, 4), k}, r), normal({b, 2, k, extent(r, 1, 4)}, r)};
                 },
                 [](V v) { return ops::matmul(v[0], v[1]); }});
    p.push_back({"permute",
                 [](Rng& r) {
                     return std::vector<Tensor>{normal({extent(r, 1, 3), extent(r, 1, 3), extent(r, 1, 4), extent(r, 1, 3)}, r)};
                 },
                 [](V v) { return ops::permute(v[0], {2, 0, 3, 1}); }});
    p.push_back({"reshape", [](Rng& r) { return std::vector<Tensor>{normal({2, 3, extent(r, 1, 4)}, r)}; },
                 [](V v) { return ops::reshape(v[0], {v[0].value().numel()}); }});
    auto rows = [](Rng& r) { return std::vector<Tensor>{normal({extent(r, 1, 3), extent(r, 1, 3), extent(r, 2, 8)}, r)}; };
    p.push_back({"layer_norm", rows, [](V v) { return ops::layer_norm(v[0]); }});
    p.push_back({"softmax", rows, [](V v) { return ops::softmax(v[0]); }});
    p.push_back({"gelu", rows, [](V v) { return ops::gelu(v[0]); }});
    p.push_back({"relu", [](Rng& r) { return std::vector<Tensor>{away_from_zero({extent(r, 1, 3), extent(r, 2, 6)}, r)}; },
                 [](V v) { return ops::relu(v[0]); }});
    p.push_back({"dropout", rows, [](V v) { return ops::dropout(v[0], ops::kDefaultDropout, true, 1234); }});
    auto map4 = [](Rng& r) {
        return std::vector<Tensor>{normal({extent(r, 1, 2), extent(r, 1, 3), extent(r, 1, 6), extent(r, 1, 6)}, r)};
    };
    p.push_back({"global_avg_pool", map4, [](V v) { return ops::global_avg_pool(v[0]); }});
    p.push_back({"adaptive_avg_pool2d",
                 [](Rng& r) { return std::vector<Tensor>{normal({extent(r, 1, 2), 2, extent(r, 3, 7), extent(r, 3, 7)}, r)}; },
                 [](V v) { return ops::adaptive_avg_pool2d(v[0], 2, 3); }});
    p.push_back({"rfft2_filter",
                 [](Rng& r) {
                     const std::size_t c = extent(r, 1, 4);
                     return std::vector<Tensor>{normal({extent(r, 1, 2), c, extent(r, 1, 6), extent(r, 1, 6)}, r),
                                                normal({c}, r)};
                 },
                 [](V v) { return ops::rfft2_filter(v[0], v[1]); }});
    p.push_back({"depthwise_conv2d",
                 [](Rng& r) {
                     const std::size_t c = extent(r, 1, 3);
                     const std::size_t k = 2 * extent(r, 0, 3) + 1;
                     return std::vector<Tensor>{normal({extent(r, 1, 2), c, extent(r, 1, 6), extent(r, 1, 6)}, r),
                                                normal({c, k, k}, r), normal({c}, r)};
                 },
                 [](V v) { return ops::depthwise_conv2d(v[0], v[1], v[2]); }});
    p.push_back({"pointwise_conv2d",
                 [](Rng& r) {
                     const std::size_t c = extent(r, 1, 4), co = extent(r, 1, 4);
                     return std::vector<Tensor>{normal({extent(r, 1, 2), c, extent(r, 1, 4), extent(r, 1, 4)}, r),
                                                normal({co, c}, r), normal({co}, r)};
                 },
                 [](V v) { return ops::pointwise_conv2d(v[0], v[1], v[2]); }});
    p.push_back({"bilinear_upsample",
                 [](Rng& r) { return std::vector<Tensor>{normal({extent(r, 1, 2), extent(r, 1, 2), extent(r, 1, 4), extent(r, 1, 4)}, r)}; },
                 [](V v) { return ops::bilinear_upsample(v[0], 7, 9); }});
    p.push_back({"batch_scale",
                 [](Rng& r) {
                     const std::size_t b = extent(r, 1, 3);
                     return std::vector<Tensor>{normal({b, 2, extent(r, 1, 3), 2}, r), normal({b}, r)};
                 },
                 [](V v) { return ops::batch_scale(v[0], v[1]); }});
    p.push_back({"column", [](Rng& r) { return std::vector<Tensor>{normal({extent(r, 1, 3), 3}, r)}; },
                 [](V v) { return ops::column(v[0], 1); }});
    p.push_back({"token_mean", [](Rng& r) { return std::vector<Tensor>{normal({extent(r, 1, 3), extent(r, 1, 5), 3}, r)}; },
                 [](V v) { return ops::token_mean(v[0]); }});
    p.push_back({"l2_normalize_rows", [](Rng& r) { return std::vector<Tensor>{normal({extent(r, 1, 3), extent(r, 2, 6)}, r)}; },
                 [](V v) { return ops::l2_normalize_rows(v[0]); }});
    p.push_back({"sum", rows, [](V v) { return ops::sum(v[0]); }});
    p.push_back({"mean", rows, [](V v) { return ops::mean(v[0]); }});
    return p;
}

}  // namespace

const OpRegistry& core_op_set() {
    static const OpRegistry registry(build());
    return registry;
}

}  // namespace htune
