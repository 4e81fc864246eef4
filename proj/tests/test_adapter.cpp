#include <doctest.h>

#include <cmath>
#include <complex>

#include "htune/adapter.hpp"
#include "htune/analysis.hpp"
#include "htune/errors.hpp"
#include "htune/grad_check.hpp"
#include "htune/lora.hpp"
#include "htune/model.hpp"
#include "htune/ops.hpp"
#include "oracles.hpp"

using namespace htune;

namespace {

HTConfig tiny_ht(std::size_t D, std::size_t d, std::size_t h) {
    HTConfig c;
    c.width = D;
    c.bottleneck = d;
    c.squeeze = h;
    return c;
}

// Every tensor drawn at random so that no branch is switched off.
HTParams random_ht(const HTConfig& c, Rng& rng) {
    HTParams p = init_ht(c, rng.next_u64());
    for (auto& [name, t] : p.named_mut()) {
        const bool around_one = name == "gamma" || name == "gamma_x" || name == "ln_scale" || name == "theta";
        *t = oracle::random_tensor(t->shape(), rng, around_one ? 0.5 : -0.5, around_one ? 1.5 : 0.5);
    }
    return p;
}

ViTConfig small_vit() {
    ViTConfig c = ViTConfig::toy();
    c.image_size = 32;
    c.patch_size = 8;
    c.width = 16;
    c.heads = 2;
    c.tap_indices = default_tap_indices(c.depth);
    return c;
}

using cd = std::complex<double>;

// Channel filter through a direct full-spectrum DFT and its inverse.
std::vector<double> filter_direct(const double* x, std::size_t s, double theta) {
    const auto spec = oracle::dft2(x, s, s);
    const double tau = 2.0 * std::acos(-1.0);
    std::vector<double> out(s * s);
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t xx = 0; xx < s; ++xx) {
            cd acc = 0.0;
            for (std::size_t ky = 0; ky < s; ++ky)
                for (std::size_t kx = 0; kx < s; ++kx) {
                    const double ang = tau * static_cast<double>(ky * y + kx * xx) / static_cast<double>(s);
                    acc += theta * spec[ky * s + kx] * cd(std::cos(ang), std::sin(ang));
                }
            out[y * s + xx] = acc.real() / static_cast<double>(s * s);
        }
    return out;
}

// Straight-line evaluation of one adapter for a single sample (N x D row-major).
std::vector<double> ht_reference(const std::vector<double>& z, std::size_t N, const HTParams& p, const HTConfig& c) {
    const std::size_t D = c.width, d = c.bottleneck, h = c.squeeze;
    const std::size_t S = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(N))));

    std::vector<double> scaled(N * D);
    for (std::size_t n = 0; n < N; ++n) {
        const auto ln = oracle::layer_norm_row(&z[n * D], D);
        for (std::size_t j = 0; j < D; ++j)
            scaled[n * D + j] = (ln[j] * p.ln_scale[j] + p.ln_shift[j]) * p.gamma[j] + z[n * D + j] * p.gamma_x[j];
    }
    auto z_in = oracle::matmul(scaled.data(), p.w_down.ptr(), N, D, d);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < d; ++j) z_in[n * d + j] += p.b_down[j];

    // Channel-major map: f[c][t], token t at (t / S, t % S).
    Tensor f_in({1, d, S, S}), f_freq({1, d, S, S});
    for (std::size_t ch = 0; ch < d; ++ch)
        for (std::size_t t = 0; t < N; ++t) f_in[ch * N + t] = z_in[t * d + ch];
    for (std::size_t ch = 0; ch < d; ++ch) {
        const auto filtered = filter_direct(f_in.ptr() + ch * N, S, p.theta[ch]);
        for (std::size_t t = 0; t < N; ++t) f_freq[ch * N + t] = filtered[t];
    }

    std::vector<double> pooled(d, 0.0);
    for (std::size_t ch = 0; ch < d; ++ch) {
        for (std::size_t t = 0; t < N; ++t) pooled[ch] += f_freq[ch * N + t];
        pooled[ch] /= static_cast<double>(N);
    }
    std::vector<double> hidden(h);
    for (std::size_t k = 0; k < h; ++k) {
        double a = p.b_sq1[k];
        for (std::size_t ch = 0; ch < d; ++ch) a += pooled[ch] * p.w_sq1[ch * h + k];
        hidden[k] = std::max(a, 0.0);
    }
    double logits[3], total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        logits[i] = p.b_sq2[i];
        for (std::size_t k = 0; k < h; ++k) logits[i] += hidden[k] * p.w_sq2[k * 3 + i];
    }
    const double mx = std::max({logits[0], logits[1], logits[2]});
    for (double& l : logits) total += (l = std::exp(l - mx));

    Tensor sum = f_in;
    for (std::size_t i = 0; i < 3; ++i) {
        const Tensor conv = oracle::depthwise(f_freq, p.dw[i], &p.dw_bias[i]);
        for (std::size_t k = 0; k < sum.numel(); ++k) sum[k] += logits[i] / total * conv[k];
    }
    Tensor multi = oracle::pointwise(sum, p.w_pw, &p.b_pw);
    for (std::size_t k = 0; k < multi.numel(); ++k) multi[k] += sum[k];

    std::vector<double> act(N * d);
    for (std::size_t t = 0; t < N; ++t)
        for (std::size_t ch = 0; ch < d; ++ch) act[t * d + ch] = oracle::gelu(multi[ch * N + t]);
    auto up = oracle::matmul(act.data(), p.w_up.ptr(), N, d, D);
    std::vector<double> out(N * D);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < D; ++j) out[n * D + j] = z[n * D + j] + up[n * D + j] + p.b_up[j];
    return out;
}

}  // namespace

TEST_CASE("parameter counts") {
    CHECK(ht_param_count(768, 64, 16) == 113'027);
    CHECK(12 * ht_param_count(768, 64, 16) == 1'356'324);
    CHECK(init_ht(HTConfig::base(), 1).parameter_count() == 113'027);
    CHECK(init_ht(tiny_ht(32, 8, 4), 1).parameter_count() == ht_param_count(32, 8, 4));
    CHECK(lora_param_count(768, 12, 16) == 1'179'648);

    ViTConfig v = small_vit();
    CHECK(init_lora(v, make_lora_config(4, 4.0), 1).parameter_count() == lora_param_count(16, 4, 4));
    CHECK_THROWS_AS(make_lora_config(0, 16.0), ConfigError);
    CHECK_THROWS_AS(make_lora_config(-3, 16.0), ConfigError);
    CHECK_THROWS_AS(tiny_ht(16, 16, 4).validate(), ConfigError);
}

TEST_CASE("adapter initialization") {
    HTParams p = init_ht(HTConfig::toy(), 3);
    for (double v : p.theta.data()) CHECK(v == 1.0);
    CHECK(p.w_up.max_abs() == 0.0);
    CHECK(p.b_up.max_abs() == 0.0);
    Tensor w = p.w_down;
    w.round_to_f32();
    CHECK(w == p.w_down);

    Rng rng(1);
    Tensor z = oracle::random_tensor({2, 16, 64}, rng);
    Graph g;
    Var out = ht_forward(g.input(z), p, HTConfig::toy(), true);
    CHECK(out.shape() == z.shape());
    CHECK(out.value() == z);

    Graph g2;
    CHECK_THROWS_AS(ht_forward(g2.input(Tensor({1, 16, 32})), p, HTConfig::toy(), false), DimensionError);
}

TEST_CASE("adapter forward matches the inline reference") {
    const HTConfig c = tiny_ht(8, 4, 2);
    Rng rng(42);
    for (int rep = 0; rep < 5; ++rep) {
        HTParams p = random_ht(c, rng);
        Tensor z = oracle::random_tensor({1, 4, 8}, rng);
        Graph g;
        Tensor got = ht_forward(g.input(z), p, c, false).value();
        const auto want = ht_reference({z.data().begin(), z.data().end()}, 4, p, c);
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
        CHECK(max_abs_diff(got, Tensor({1, 4, 8}, want)) < 1e-6);
    }
}

TEST_CASE("frequency filter step") {
    Rng rng(5);
    Tensor f = oracle::random_tensor({2, 4, 6, 6}, rng);
    Graph g;
    Var fin = g.input(f);
    CHECK(max_abs_diff(ff_apply(fin, g.input(Tensor::ones({4}))).value(), f) < 1e-6);

    Tensor out = ff_apply(fin, g.input(Tensor({4}, 0.9))).value();
    CHECK(oracle::energy(out) / oracle::energy(f) == doctest::Approx(0.81).epsilon(1e-4));
    CHECK(spectral_energy_change(f, out) == doctest::Approx(-19.0).epsilon(1e-6));

    Tensor th = Tensor::from({4}, {1.2, 0.0, 0.7, 1.0});
    Tensor killed = ff_apply(fin, g.input(th)).value();
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t p = 0; p < 36; ++p) CHECK(std::abs(killed[(b * 4 + 1) * 36 + p]) < 1e-12);
    double e_in = oracle::energy(f), e_out = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t ch = 0; ch < 4; ++ch)
            for (std::size_t p = 0; p < 36; ++p) {
                const double v = f[(b * 4 + ch) * 36 + p] * th[ch];
                e_out += v * v;
            }
    CHECK(spectral_energy_change(f, killed) == doctest::Approx(100.0 * (e_out - e_in) / e_in).epsilon(1e-6));
    CHECK_THROWS_AS(spectral_energy_change(Tensor({1, 1, 2, 2}, 0.0), Tensor({1, 1, 2, 2}, 0.0)), DegenerateSampleError);
}

TEST_CASE("kernel-selection weights") {
    Rng rng(6);
    Graph g;
    for (int rep = 0; rep < 10; ++rep) {
        Var f = g.input(oracle::random_tensor({3, 4, 5, 5}, rng, -3.0, 3.0));
        Tensor w = ne_weights(f, g.input(oracle::random_tensor({4, 2}, rng)), g.input(oracle::random_tensor({2}, rng)),
                              g.input(oracle::random_tensor({2, 3}, rng)), g.input(oracle::random_tensor({3}, rng)))
                       .value();
        CHECK(w.shape() == Shape{3, 3});
        for (std::size_t b = 0; b < 3; ++b) {
            CHECK(w[b * 3] + w[b * 3 + 1] + w[b * 3 + 2] == doctest::Approx(1.0).epsilon(1e-12));
            for (std::size_t i = 0; i < 3; ++i) CHECK((w[b * 3 + i] > 0.0 && w[b * 3 + i] < 1.0));
        }
    }
    // Zero input: the hidden layer sees only its bias.
    Tensor b1 = Tensor::from({2}, {0.5, -0.5}), w2 = Tensor::from({2, 3}, {1, 0, -1, 2, 2, 2});
    Tensor b2 = Tensor::from({3}, {0.1, 0.2, 0.3});
    Tensor w = ne_weights(g.input(Tensor({1, 4, 3, 3}, 0.0)), g.input(Tensor({4, 2}, 1.0)), g.input(b1), g.input(w2),
                          g.input(b2))
                   .value();
    const double l[3] = {0.5 + 0.1, 0.2, -0.5 + 0.3};
    const double z = std::exp(l[0]) + std::exp(l[1]) + std::exp(l[2]);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(std::exp(l[i]) / z).epsilon(1e-12));

    Tensor uniform = ne_weights(g.input(Tensor({1, 2, 2, 2}, 0.3)), g.input(Tensor({2, 2}, 0.0)),
                                g.input(Tensor({2}, 0.0)), g.input(Tensor({2, 3}, 0.0)), g.input(Tensor({3}, 1.0)))
                         .value();
    for (double v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("multi-kernel mixing") {
    Rng rng(7);
    const std::size_t B = 2, d = 3, S = 5;
    Tensor ff = oracle::random_tensor({B, d, S, S}, rng), fi = oracle::random_tensor({B, d, S, S}, rng);
    Graph g;
    auto zeros = [&](Shape s) { return g.input(Tensor(std::move(s), 0.0)); };

    Tensor eye3({d, 3, 3}, 0.0);
    for (std::size_t c = 0; c < d; ++c) eye3[c * 9 + 4] = 1.0;
    std::array<Var, 3> k{g.input(eye3), zeros({d, 5, 5}), zeros({d, 7, 7})};
    std::array<Var, 3> bias{zeros({d}), zeros({d}), zeros({d})};
    Tensor onehot({B, 3}, 0.0);
    onehot[0] = onehot[3] = 1.0;
    Tensor got = ne_mix(g.input(ff), g.input(fi), g.input(onehot), k, bias, zeros({d, d}), zeros({d})).value();
    for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == doctest::Approx(ff[i] + fi[i]).epsilon(1e-15));

    std::array<Var, 3> none{zeros({d, 3, 3}), zeros({d, 5, 5}), zeros({d, 7, 7})};
    CHECK(ne_mix(g.input(ff), g.input(fi), g.input(Tensor({B, 3}, 1.0 / 3)), none, bias, zeros({d, d}), zeros({d}))
              .value() == fi);

    std::array<Tensor, 3> kt{oracle::random_tensor({d, 3, 3}, rng), oracle::random_tensor({d, 5, 5}, rng),
                             oracle::random_tensor({d, 7, 7}, rng)};
    std::array<Tensor, 3> bt{oracle::random_tensor({d}, rng), oracle::random_tensor({d}, rng), oracle::random_tensor({d}, rng)};
    Tensor w = oracle::random_tensor({B, 3, 1, 1}, rng, 0.0, 1.0);
    Tensor pw = oracle::random_tensor({d, d}, rng), pb = oracle::random_tensor({d}, rng);
    std::array<Var, 3> kv{g.input(kt[0]), g.input(kt[1]), g.input(kt[2])};
    std::array<Var, 3> bv{g.input(bt[0]), g.input(bt[1]), g.input(bt[2])};
    Tensor out = ne_mix(g.input(ff), g.input(fi), g.input(w), kv, bv, g.input(pw), g.input(pb)).value();

    Tensor sum = fi;
    for (std::size_t i = 0; i < 3; ++i) {
        const Tensor conv = oracle::depthwise(ff, kt[i], &bt[i]);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < d * S * S; ++j) sum[b * d * S * S + j] += w[b * 3 + i] * conv[b * d * S * S + j];
    }
    Tensor want = oracle::pointwise(sum, pw, &pb);
    for (std::size_t i = 0; i < want.numel(); ++i) want[i] += sum[i];
    CHECK(max_abs_diff(out, want) < 1e-6);

    std::array<Var, 2> two{kv[0], kv[1]};
    CHECK_THROWS_AS(ne_mix(g.input(ff), g.input(fi), g.input(w), two, std::span<const Var>(bv).first(2), g.input(pw),
                           g.input(pb)),
                    ConfigError);
}

TEST_CASE("composite adapter gradients against finite differences") {
    const HTConfig c = tiny_ht(8, 4, 2);
    Rng rng(77);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const HTParams p = random_ht(c, rng);
        const Tensor z = oracle::random_tensor({1, 16, 8}, rng);
        const Tensor readout = oracle::random_tensor({1, 16, 8}, rng);

        Graph g;
        Var zv = g.variable(z);
        auto grads = g.backward(ops::weighted_sum(ht_forward(zv, p, c, false), readout));

        auto loss_with = [&](const HTParams& q, const Tensor& zz) {
            Graph h;
            return ops::weighted_sum(ht_forward(h.input(zz), q, c, false), readout).value().item();
        };
        worst = std::max(worst, relative_error(grads.of(zv), finite_diff_grad([&](const Tensor& t) { return loss_with(p, t); }, z)));
        for (const auto& [name, t] : p.named()) {
            const std::string field = name;
            auto f = [&](const Tensor& v) {
                HTParams q = p;
                for (auto& [n, ptr] : q.named_mut())
                    if (n == field) *ptr = v;
                return loss_with(q, z);
            };
            const double err = relative_error(grads.of(*t), finite_diff_grad(f, *t));
            INFO(name);
            CHECK(err < 1e-4);
            worst = std::max(worst, err);
        }
    }
    MESSAGE("worst composite relative error " << worst);
}

TEST_CASE("adapter checkpoint roundtrip") {
    const HTConfig c = tiny_ht(16, 4, 2);
    Rng rng(8);
    std::vector<HTParams> layers{random_ht(c, rng), random_ht(c, rng)};
    for (auto& l : layers)
        for (auto& [n, t] : l.named_mut()) t->round_to_f32();
    auto [c2, back] = load_adapters(adapters_checkpoint(layers, c));
    CHECK(c2.bottleneck == 4);
    REQUIRE(back.size() == 2);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t i = 0; i < layers[l].named().size(); ++i)
            CHECK(*back[l].named()[i].second == *layers[l].named()[i].second);
}

TEST_CASE("low-rank update algebra") {
    ViTConfig v = small_vit();
    LoRAParams p = init_lora(v, make_lora_config(1, 3.0), 5);
    Rng rng(9);
    p.b[2][1] = oracle::random_tensor({1, 16}, rng);
    ProjectionHook hook = lora_hook(p);
    Tensor x = oracle::random_tensor({2, 16, 16}, rng), frozen = oracle::random_tensor({2, 16, 16}, rng);

    Graph g;
    Tensor out = hook(2, Projection::key, g.input(x), g.input(frozen)).value();
    const auto xa = oracle::matmul(x.ptr(), p.a[2][1].ptr(), 32, 16, 1);
    const auto xab = oracle::matmul(xa.data(), p.b[2][1].ptr(), 32, 1, 16);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] - frozen[i] == doctest::Approx(3.0 * xab[i]).epsilon(1e-12));

    Graph g2;
    CHECK(hook(0, Projection::query, g2.input(x), g2.input(frozen)).value() == frozen);
}

TEST_CASE("adapted model transparency and sensitivity") {
    ViTConfig v = small_vit();
    auto weights = std::make_shared<const ViTWeights>(init_backbone(v, 2));
    Rng rng(10);
    Tensor images = oracle::random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
    TapSet frozen = vit_forward(images, *weights, v);

    AdaptedModel ht = attach_ht(weights, v, tiny_ht(16, 4, 2), 3);
    CHECK(ht.ht().size() == 4);
    CHECK(ht.kind() == AdapterKind::ht);
    AdaptedModel lora = attach_lora(weights, v, make_lora_config(4, 4.0), 3);
    AdaptedModel none(weights, v);
    for (const AdaptedModel* m : {&ht, &lora, &none}) {
        TapSet t = m->forward(images);
        CHECK(t.final == frozen.final);
        for (const auto& [i, tap] : frozen.taps) CHECK(t.taps.at(i) == tap);
    }
    CHECK(none.trainable_count() == 0);
    CHECK(ht.trainable_count() == 4 * ht_param_count(16, 4, 2));
    CHECK(ht.total_count() == ht.trainable_count() + weights->parameter_count());
    CHECK(lora.trainable_count() == lora_param_count(16, 4, 4));

    ht.ht()[0].w_up = oracle::random_tensor({4, 16}, rng, -0.1, 0.1);
    TapSet moved = ht.forward(images);
    for (const auto& [i, tap] : frozen.taps) CHECK(max_abs_diff(moved.taps.at(i), tap) > 0.0);
    CHECK(max_abs_diff(moved.final, frozen.final) > 0.0);

    CHECK_THROWS_AS(attach_ht(weights, v, tiny_ht(16, 4, 2), std::vector<HTParams>(3, init_ht(tiny_ht(16, 4, 2), 1))),
                    ConfigError);
    CHECK_THROWS_AS(attach_ht(weights, v, tiny_ht(32, 4, 2), 1), ConfigError);
    CHECK_THROWS_AS(parse_adapter_kind("prefix"), ConfigError);
    CHECK(parse_adapter_kind("frozen") == AdapterKind::none);
}

TEST_CASE("frozen backbone receives no gradient") {
    ViTConfig v = small_vit();
    auto weights = std::make_shared<const ViTWeights>(init_backbone(v, 2));
    AdaptedModel m = attach_ht(weights, v, tiny_ht(16, 4, 2), 1);
    m.ht()[1].w_up = Tensor({4, 16}, 0.01);
    Rng rng(11);
    Graph g;
    TapVars taps = m.forward(g, oracle::random_tensor({1, 1, 32, 32}, rng, 0.0, 1.0), true);
    auto grads = g.backward(ops::sum(taps.final));
    for (const auto& [name, t] : weights->named()) CHECK_FALSE(grads.contains(*t));
    for (const auto& [name, t] : m.trainable()) CHECK(grads.contains(*t));
}
