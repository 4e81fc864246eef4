#include <doctest.h>

#include <cmath>

#include "htune/analysis.hpp"
#include "htune/errors.hpp"
#include "htune/lora.hpp"
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

HTConfig small_ht() {
    HTConfig h;
    h.width = 16;
    h.bottleneck = 4;
    h.squeeze = 2;
    return h;
}

}  // namespace

TEST_CASE("theta probe") {
    auto weights = std::make_shared<const ViTWeights>(init_backbone(small_vit(), 1));
    AdaptedModel m = attach_ht(weights, small_vit(), small_ht(), 2);
    for (const auto& s : probe_theta(m.ht())) {
        CHECK(s.mean == 1.0);
        CHECK(s.std == 0.0);
        CHECK(s.formatted() == "1.0000±0.0000");
    }
    CHECK(grand_mean_theta(m.ht()) == 1.0);

    m.ht()[0].theta = Tensor::from({4}, {0.99, 1.0, 0.98, 1.01});
    auto stats = probe_theta(m.ht());
    CHECK(stats[0].mean == doctest::Approx(0.995));
    CHECK(stats[0].std == doctest::Approx(std::sqrt((0.005 * 0.005 + 0.005 * 0.005 + 0.015 * 0.015 + 0.015 * 0.015) / 3.0)));
    CHECK(stats[0].min == 0.98);
    CHECK(stats[0].max == 1.01);
    CHECK(grand_mean_theta(m.ht()) == doctest::Approx((0.995 + 3.0) / 4.0));
}

TEST_CASE("spectral report and kernel-weight profile") {
    auto weights = std::make_shared<const ViTWeights>(init_backbone(small_vit(), 1));
    AdaptedModel m = attach_ht(weights, small_vit(), small_ht(), 2);
    Rng rng(3);
    Tensor probes = oracle::random_tensor({3, 1, 32, 32}, rng, 0.0, 1.0);

    auto report = spectral_report(m, probes);
    REQUIRE(report.size() == 4);
    for (const auto& layer : report) {
        CHECK(layer.energy_change == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(layer.ne[0] + layer.ne[1] + layer.ne[2] == doctest::Approx(1.0).epsilon(1e-6));
        for (double w : layer.ne) CHECK((w > 0.0 && w < 1.0));
    }
    {
        // default toy dims: fresh gates with zero squeeze biases stay near uniform
        const ViTConfig tv = [] {
            ViTConfig c = ViTConfig::toy();
            c.tap_indices = default_tap_indices(c.depth);
            return c;
        }();
        auto tw = std::make_shared<const ViTWeights>(init_backbone(tv, 1));
        const AdaptedModel tm = attach_ht(tw, tv, HTConfig::toy(), 2);
        for (const auto& layer : ne_weight_profile(tm, oracle::random_tensor({2, 1, 224, 224}, rng, 0.0, 1.0)))
            for (double w : layer) CHECK(std::abs(w - 1.0 / 3.0) < 0.05);
    }
    const auto profile = ne_weight_profile(m, probes);
    CHECK(profile == ne_weight_profile(m, probes));
    for (std::size_t l = 0; l < 4; ++l) CHECK(profile[l] == report[l].ne);

    m.ht()[2].theta = Tensor({4}, 0.9);
    CHECK(spectral_report(m, probes)[2].energy_change == doctest::Approx(-19.0).epsilon(1e-9));
    CHECK_THROWS_AS(ne_weight_profile(m, Tensor()), InputError);
}

TEST_CASE("parameter accounting") {
    ViTConfig v = small_vit();
    auto weights = std::make_shared<const ViTWeights>(init_backbone(v, 1));
    CHECK(count_params(AdaptedModel(weights, v)).trainable == 0);
    CHECK(count_params(AdaptedModel(weights, v)).total == weights->parameter_count());
    ParamCounts ht = count_params(attach_ht(weights, v, small_ht(), 1));
    CHECK(ht.trainable == 4 * ht_param_count(16, 4, 2));
    CHECK(ht.total == ht.trainable + weights->parameter_count());
    CHECK(backbone_param_count(v) == weights->parameter_count());

    std::size_t shaped = 0;
    for (const auto& [n, s] : backbone_parameter_shapes(ViTConfig::base())) shaped += shape_numel(s);
    CHECK(backbone_param_count(ViTConfig::base()) == shaped);
    CHECK(12 * init_ht(HTConfig::base(), 1).parameter_count() == 1'356'324);
    CHECK(lora_param_count(768, 12, 16) == 1'179'648);
}

TEST_CASE("FLOP accounting") {
    // A one-token backbone isolates the patch embedding as a single linear layer.
    ViTConfig one = ViTConfig::toy();
    one.image_size = one.patch_size = 16;
    one.depth = 1;
    one.tap_indices = {0};
    ViTConfig two = one;
    two.depth = 2;
    two.tap_indices = {0, 1};
    const double f1 = estimate_flops(one, std::nullopt, {1, 1, 16, 16}).backbone;
    const double f2 = estimate_flops(two, std::nullopt, {1, 1, 16, 16}).backbone;
    CHECK(f1 - (f2 - f1) == 2.0 * 256.0 * 64.0);

    ViTConfig base = ViTConfig::base();
    base.tap_indices = default_tap_indices(12);
    FlopBreakdown f = estimate_flops(base, HTConfig::base(), {1, 1, 224, 224});
    MESSAGE("ViT-B overhead " << f.overhead_percent() << "%");
    CHECK(f.overhead_percent() > 0.0);
    CHECK(f.overhead_percent() <= 2.0);

    // Independent count of the frozen backbone at the same convention.
    const double N = 196, D = 768, Hd = 3072;
    const double block = 4 * 2 * D * D * N + 4 * N * N * D + 2 * 2 * D * Hd * N;
    CHECK(f.backbone == doctest::Approx(2 * 256 * D * N + 12 * block).epsilon(1e-12));

    FlopBreakdown f2b = estimate_flops(base, HTConfig::base(), {2, 1, 224, 224});
    CHECK(f2b.backbone == 2.0 * f.backbone);
    CHECK(f2b.adapters == 2.0 * f.adapters);
    CHECK_THROWS_AS(estimate_flops(base, std::nullopt, {0, 1, 224, 224}), UnsupportedError);
}

TEST_CASE("latency benchmark") {
    ViTConfig v = small_vit();
    auto weights = std::make_shared<const ViTWeights>(init_backbone(v, 1));
    AdaptedModel frozen(weights, v);
    AdaptedModel ht = attach_ht(weights, v, small_ht(), 1);
    LatencyReport a = bench_latency(frozen, 2, 30);
    LatencyReport b = bench_latency(ht, 2, 30);
    LatencyReport a2 = bench_latency(frozen, 2, 30);
    CHECK(b.mean_ms_per_image >= a.mean_ms_per_image);
    CHECK(a.fps == doctest::Approx(1000.0 / a.mean_ms_per_image));
    CHECK(a.reps == 30);
    const double lo = std::max(a.mean_ms_per_image - 3 * a.std_ms_per_image, a2.mean_ms_per_image - 3 * a2.std_ms_per_image);
    const double hi = std::min(a.mean_ms_per_image + 3 * a.std_ms_per_image, a2.mean_ms_per_image + 3 * a2.std_ms_per_image);
    CHECK(lo <= hi);
    CHECK_THROWS_AS(bench_latency(frozen, 1, 5), ConfigError);
    CHECK_THROWS_AS(bench_latency(frozen, 1, 10, 2), ConfigError);
}
