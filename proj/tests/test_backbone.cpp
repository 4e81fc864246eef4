#include <doctest.h>

#include <cmath>

#include "htune/backbone.hpp"
#include "htune/errors.hpp"
#include "htune/ops.hpp"
#include "htune/text_encoder.hpp"
#include "htune/zeroshot.hpp"
#include "oracles.hpp"

using namespace htune;

namespace {

ViTConfig small_vit() {
    ViTConfig c = ViTConfig::toy();
    c.image_size = 32;
    c.patch_size = 8;
    c.width = 16;
    c.heads = 2;
    c.tap_indices = default_tap_indices(c.depth);
    return c;
}

}  // namespace

TEST_CASE("backbone geometry and determinism") {
    ViTConfig toy = ViTConfig::toy();
    CHECK(toy.tokens() == 196);
    CHECK(toy.grid() == 14);
    CHECK(default_tap_indices(12) == std::vector<std::size_t>{3, 6, 9});
    CHECK(default_tap_indices(4) == std::vector<std::size_t>{1, 2, 3});

    ViTConfig base = ViTConfig::base();
    CHECK(base.width == 768);
    CHECK(base.depth == 12);
    std::size_t shaped = 0;
    for (const auto& [name, shape] : backbone_parameter_shapes(base)) shaped += shape_numel(shape);
    CHECK(shaped > 85'000'000);

    ViTConfig bad = toy;
    bad.patch_size = 15;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = toy;
    bad.heads = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    ViTConfig c = small_vit();
    CHECK(init_backbone(c, 3).checksum() == init_backbone(c, 3).checksum());
    CHECK(init_backbone(c, 3).checksum() != init_backbone(c, 4).checksum());
    ViTWeights w = init_backbone(c, 3);
    std::size_t enumerated = 0;
    for (const auto& [name, t] : w.named()) enumerated += t->numel();
    CHECK(enumerated == w.parameter_count());
    std::size_t shaped_small = 0;
    for (const auto& [name, shape] : backbone_parameter_shapes(c)) shaped_small += shape_numel(shape);
    CHECK(shaped_small == w.parameter_count());
}

TEST_CASE("backbone forward taps") {
    ViTConfig c = small_vit();
    ViTWeights w = init_backbone(c, 5);
    Rng rng(1);
    Tensor images = oracle::random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
    TapSet a = vit_forward(images, w, c);
    TapSet b = vit_forward(images, w, c);
    CHECK(a.taps.size() == c.tap_indices.size());
    for (const auto& [i, t] : a.taps) {
        CHECK(t.shape() == Shape{2, c.tokens(), c.width});
        CHECK(t == b.taps.at(i));
    }
    CHECK(a.final == b.final);

    TapSet zeros = vit_forward(Tensor({1, 1, 32, 32}, 0.0), w, c);
    TapSet ones = vit_forward(Tensor({1, 1, 32, 32}, 1.0), w, c);
    CHECK(max_abs_diff(zeros.final, ones.final) > 1e-6);

    CHECK_THROWS_AS(vit_forward(Tensor({1, 1, 24, 24}, 0.0), w, c), DimensionError);
}

TEST_CASE("patchify is patch-major") {
    Tensor img({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
    Tensor p = patchify(img, 2);
    CHECK(p.shape() == Shape{1, 4, 4});
    // Patch 1 is the top-right 2x2 block.
    CHECK(p[4 + 0] == 2.0);
    CHECK(p[4 + 1] == 3.0);
    CHECK(p[4 + 2] == 6.0);
    CHECK(p[4 + 3] == 7.0);
}

TEST_CASE("token and map layouts") {
    Rng rng(2);
    Tensor tokens = oracle::random_tensor({2, 196, 3}, rng);
    Graph g;
    Var map = tokens_to_map(g.input(tokens));
    CHECK(map.shape() == Shape{2, 3, 14, 14});
    for (std::size_t t : {0u, 13u, 14u, 100u, 195u})
        for (std::size_t ch = 0; ch < 3; ++ch)
            CHECK(map.value()[(1 * 3 + ch) * 196 + (t / 14) * 14 + t % 14] == tokens[(196 + t) * 3 + ch]);
    CHECK(map_to_tokens(map).value() == tokens);
    CHECK_THROWS_AS(tokens_to_map(g.input(Tensor({1, 5, 2}))), DimensionError);
}

TEST_CASE("backbone checkpoint roundtrip") {
    ViTConfig c = small_vit();
    ViTWeights w = init_backbone(c, 9);
    auto [c2, w2] = load_backbone(backbone_checkpoint(w, c));
    CHECK(c2.width == c.width);
    CHECK(c2.tap_indices == c.tap_indices);
    CHECK(w2.checksum() == w.checksum());
}

TEST_CASE("text encoder") {
    CHECK(tokenize("benign lymph node").size() == 3);
    CHECK(tokenize("Benign, LYMPH node!") == tokenize("benign lymph node"));
    for (auto id : tokenize("a quick brown fox")) CHECK(id < kTextVocab);

    TextEncoder enc({}, 11);
    Tensor a = enc.encode("ultrasound of a benign lymph node");
    Tensor b = enc.encode("ultrasound of a benign lymph node");
    CHECK(a == b);
    CHECK(a.shape() == Shape{64});
    CHECK(cosine(a.data(), a.data()) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(max_abs_diff(a, enc.encode("malignant breast nodule with shadowing")) > 1e-6);
    CHECK_THROWS_AS(enc.encode("   "), InputError);

    Tensor batch = enc.encode_batch({"one caption", "another caption"});
    CHECK(batch.shape() == Shape{2, 64});
    CHECK(TextEncoder({}, 11).checksum() == enc.checksum());
}
