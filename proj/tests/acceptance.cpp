// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when all pass).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "htune/adapter.hpp"
#include "htune/analysis.hpp"
#include "htune/cross_domain.hpp"
#include "htune/errors.hpp"
#include "htune/fft.hpp"
#include "htune/grad_check.hpp"
#include "htune/lora.hpp"
#include "htune/metrics.hpp"
#include "htune/op_registry.hpp"
#include "htune/ops.hpp"
#include "htune/sampling.hpp"
#include "htune/stats.hpp"
#include "htune/text_encoder.hpp"
#include "htune/train.hpp"
#include "htune/zeroshot.hpp"
#include "oracles.hpp"
#include "oracles_eval.hpp"

using namespace htune;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void criterion(int id, const char* name, const std::function<void(Outcome&)>& body) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.str().c_str(), secs);
    std::fflush(stdout);
}

HTParams random_ht(const HTConfig& c, Rng& rng) {
    HTParams p = init_ht(c, rng.next_u64());
    for (auto& [name, t] : p.named_mut()) {
        const bool around_one = name == "gamma" || name == "gamma_x" || name == "ln_scale" || name == "theta";
        *t = oracle::random_tensor(t->shape(), rng, around_one ? 0.5 : -0.5, around_one ? 1.5 : 0.5);
    }
    return p;
}

// Worst relative gradient error over the input and every adapter tensor.
double composite_ht_error(const HTConfig& c, Rng& rng) {
    const HTParams p = random_ht(c, rng);
    const Tensor z = oracle::random_tensor({1, 16, c.width}, rng);
    const Tensor readout = oracle::random_tensor({1, 16, c.width}, rng);
    Graph g;
    Var zv = g.variable(z);
    auto grads = g.backward(ops::weighted_sum(ht_forward(zv, p, c, false), readout));
    auto loss_with = [&](const HTParams& q, const Tensor& zz) {
        Graph h;
        return ops::weighted_sum(ht_forward(h.input(zz), q, c, false), readout).value().item();
    };
    double worst = relative_error(grads.of(zv), finite_diff_grad([&](const Tensor& t) { return loss_with(p, t); }, z));
    for (const auto& [name, t] : p.named()) {
        const std::string field = name;
        auto f = [&](const Tensor& v) {
            HTParams q = p;
            for (auto& [n, ptr] : q.named_mut())
                if (n == field) *ptr = v;
            return loss_with(q, z);
        };
        worst = std::max(worst, relative_error(grads.of(*t), finite_diff_grad(f, *t)));
    }
    return worst;
}

void c1(Outcome& o) {
    const std::size_t one = ht_param_count(768, 64, 16);
    std::size_t enumerated = 0;
    for (int l = 0; l < 12; ++l) enumerated += init_ht(HTConfig::base(), static_cast<std::uint64_t>(l)).parameter_count();
    ViTConfig base = ViTConfig::base();
    base.tap_indices = default_tap_indices(12);
    const std::size_t lora = init_lora(base, make_lora_config(16, 16.0), 1).parameter_count();
    o.detail << "HT/layer=" << one << " HT x12=" << 12 * one << " enumerated=" << enumerated
             << " LoRA=" << lora_param_count(768, 12, 16) << " LoRA enumerated=" << lora;
    o.require(one == 113'027, "113,027 per layer");
    o.require(12 * one == 1'356'324 && enumerated == 1'356'324, "1,356,324 for 12 layers");
    o.require(std::lround(enumerated / 1e4) == 136, "rounds to 1.36 M");
    o.require(lora_param_count(768, 12, 16) == 1'179'648 && lora == 1'179'648, "LoRA 1,179,648");
    o.require(std::lround(lora / 1e4) == 118, "rounds to 1.18 M");
}

void c2(Outcome& o) {
    Rng rng(2);
    double worst_prim = 0.0;
    std::string worst_name;
    std::size_t count = 0;
    for (const auto& prim : core_op_set().primitives()) {
        for (int i = 0; i < 20; ++i) {
            const double e = check_primitive(prim, rng).max_relative_error;
            if (e > worst_prim) {
                worst_prim = e;
                worst_name = prim.name;
            }
        }
        ++count;
    }
    HTConfig c;
    c.width = 8;
    c.bottleneck = 4;
    c.squeeze = 2;
    double worst_ht = 0.0;
    for (int i = 0; i < 20; ++i) worst_ht = std::max(worst_ht, composite_ht_error(c, rng));
    o.detail << count << " primitives x 20, worst " << worst_prim << " (" << worst_name << "); HT block x 20, worst "
             << worst_ht;
    o.require(worst_prim < 1e-5, "primitive error < 1e-5");
    o.require(worst_ht < 1e-4, "composite error < 1e-4");
}

void c3(Outcome& o) {
    const ViTConfig v = [] {
        ViTConfig c = ViTConfig::toy();
        c.tap_indices = default_tap_indices(c.depth);
        return c;
    }();
    auto weights = std::make_shared<const ViTWeights>(init_backbone(v, 7));
    auto data = gen_dataset(Domain::a, 2, 5);
    const Tensor images = stack_images(data, {0, 1});
    const TapSet frozen = vit_forward(images, *weights, v);
    const AdaptedModel ht = attach_ht(weights, v, HTConfig::toy(), 3);
    const AdaptedModel lora = attach_lora(weights, v, make_lora_config(16, 16.0), 3);
    for (const auto* m : {&ht, &lora}) {
        const TapSet t = m->forward(images);
        bool same = t.final == frozen.final;
        for (const auto& [i, tap] : frozen.taps) same = same && t.taps.at(i) == tap;
        o.require(same, to_string(m->kind()) + " taps bit-identical");
    }
    o.detail << "taps {";
    for (const auto& [i, t] : frozen.taps) o.detail << i << (i == frozen.taps.rbegin()->first ? "" : ",");
    o.detail << "} + final identical for HT and LoRA at init";
}

void c4(Outcome& o) {
    Rng rng(4);
    double id_err = 0.0, scale_err = 0.0, parseval_err = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t B = 1 + rng.below(2), C = 1 + rng.below(6), H = 2 + rng.below(14), W = 2 + rng.below(14);
        const Tensor f = oracle::random_tensor({B, C, H, W}, rng, -2.0, 2.0);
        const Tensor theta = oracle::random_tensor({C}, rng, 0.0, 2.0);
        Graph g;
        const Tensor id = ops::rfft2_filter(g.input(f), g.input(Tensor::ones({C}))).value();
        const Tensor out = ops::rfft2_filter(g.input(f), g.input(theta)).value();
        id_err = std::max(id_err, max_abs_diff(id, f) / f.max_abs());
        Tensor direct = f;
        for (std::size_t i = 0; i < direct.numel(); ++i) direct[i] *= theta[(i / (H * W)) % C];
        scale_err = std::max(scale_err, max_abs_diff(out, direct));
        for (std::size_t m = 0; m < B * C; ++m) {
            const auto spec = fft::rfft2(std::span<const double>(f.ptr() + m * H * W, H * W), H, W);
            double e = 0.0;
            for (std::size_t p = 0; p < H * W; ++p) e += f[m * H * W + p] * f[m * H * W + p];
            const double rhs = static_cast<double>(H * W) * e;
            parseval_err = std::max(parseval_err, std::abs(fft::spectral_energy(spec, H, W) - rhs) / rhs);
        }
    }
    o.detail << "identity " << id_err << " x max|F|, scaling " << scale_err << ", Parseval " << parseval_err;
    o.require(id_err <= 1e-6, "identity");
    o.require(scale_err <= 1e-6, "channel scaling");
    o.require(parseval_err <= 1e-5, "Parseval");
}

Tensor fixture_mask(std::size_t h, std::size_t w, Rng& rng) {
    Tensor m({h, w}, 0.0);
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w), r = rng.uniform(0.5, 7.0);
    const bool noisy = rng.below(2) == 0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            m[y * w + x] = noisy ? (rng.uniform() < 0.35) : (std::hypot(y - cy, x - cx) <= r);
    return m;
}

void c5(Outcome& o) {
    Rng rng(5);
    double worst = 0.0;
    std::size_t masks = 0;
    for (std::size_t h = 1; h <= 16; ++h)
        for (std::size_t w = 1; w <= 16; w += 3)
            for (int rep = 0; rep < 3; ++rep) {
                const Tensor p = fixture_mask(h, w, rng), g = fixture_mask(h, w, rng);
                const SegEntry got = seg_metrics(p, g);
                const auto want = oracle::seg_truth(p, g);
                for (auto [a, b] : {std::pair{got.dice, want.dice}, {got.iou, want.iou}, {got.hd95, want.hd95}, {got.asd, want.asd}})
                    worst = std::max(worst, std::abs(a - b));
                ++masks;
            }
    double auc_worst = 0.0;
    for (std::size_t n = 2; n <= 50; ++n) {
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(10)) / 10.0;
            y[i] = static_cast<int>(rng.below(2));
        }
        y[0] = 0;
        y[1] = 1;
        auc_worst = std::max(auc_worst, std::abs(auc_rank(s, y) - oracle::auc_pairs(s, y)));
    }
    Tensor block({4, 4}, 0.0), column({4, 4}, 0.0), a({5, 5}, 0.0), b({5, 5}, 0.0);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 2; ++x) {
            column[y * 4 + x] = 1.0;
            if (y < 2) block[y * 4 + x] = 1.0;
        }
    a[0] = 1.0;
    b[3 * 5 + 4] = 1.0;
    const SegEntry hand = seg_metrics(block, column), pts = seg_metrics(a, b);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f/%.2f", hand.dice, hand.iou);
    o.detail << masks << " mask pairs worst |diff| " << worst << "; AUC n<=50 worst " << auc_worst << "; block Dice/IoU "
             << buf << "; point HD95 " << pts.hd95 << " ASD " << pts.asd;
    o.require(worst < 1e-9, "seg metrics vs brute force");
    o.require(auc_worst < 1e-12, "AUC vs pair counting");
    o.require(std::string(buf) == "66.67/50.00", "block fixture");
    o.require(pts.hd95 == 5.0 && pts.asd == 5.0, "point fixture");
}

struct ArmResult {
    std::vector<double> dice;
    std::vector<double> theta;
};

ArmResult c6_results;
bool c6_ran = false;

void c6(Outcome& o) {
    TrainConfig cfg;  // toy backbone: 224 px, patch 16, D = 64, L = 4
    cfg.batch_size = 8;
    cfg.base_lr = 1e-3;
    const std::size_t epochs = 10;
    const auto data = gen_dataset(Domain::a, 200, 2024);
    SplitSpec spec;
    spec.seed = 11;
    const Split split = split_dataset(data.size(), spec);
    auto backbone = make_backbone(cfg);

    std::vector<double> frozen;
    ArmResult ht;
    for (std::uint64_t seed : cfg.seeds) {
        TrainConfig none = cfg;
        none.adapter = "none";
        AdaptedModel base = make_model(backbone, none, seed);
        frozen.push_back(run_downstream(base, data, split.train, split.val, Task::seg, none, seed, epochs).best_metric);

        AdaptedModel m = make_model(backbone, cfg, seed);
        const double fresh = grand_mean_theta(m.ht());
        o.require(fresh == 1.0, "fresh theta exactly 1");
        DownstreamResult r = run_downstream(m, data, split.train, split.val, Task::seg, cfg, seed, epochs);
        ht.dice.push_back(r.best_metric);
        ht.theta.push_back(grand_mean_theta(m.ht()));
        o.require(r.backbone_checksum_before == r.backbone_checksum_after, "backbone untouched");
    }
    const double mf = summarize(frozen).mean, mh = summarize(ht.dice).mean;
    char buf[160];
    std::snprintf(buf, sizeof buf, "frozen %s, HT %s, gain %.2f Dice", format_pm(summarize(frozen)).c_str(),
                  format_pm(summarize(ht.dice)).c_str(), mh - mf);
    o.detail << buf;
    o.require(mh - mf >= 2.0, "gain >= 2 Dice points");
    c6_results = ht;
    c6_ran = true;
}

void c7(Outcome& o) {
    auto weights = make_backbone(TrainConfig{});
    const AdaptedModel fresh = make_model(weights, TrainConfig{}, 0);
    bool exact = true;
    for (const auto& s : probe_theta(fresh.ht())) exact = exact && s.mean == 1.0 && s.std == 0.0;
    o.require(exact, "fresh adapters report 1.0000±0.0000");
    o.require(c6_ran, "criterion 6 training available");
    if (!c6_ran) return;
    const double mean = summarize(c6_results.theta).mean;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", mean);
    o.detail << "grand-mean theta per seed {";
    for (std::size_t i = 0; i < c6_results.theta.size(); ++i) o.detail << (i ? ", " : "") << c6_results.theta[i];
    o.detail << "}, 3-seed mean " << buf << "; fresh 1.0000±0.0000";
    o.require(mean < 1.0, "3-seed mean theta < 1");
}

void c8(Outcome& o) {
    const Split a = split_dataset(100, {});
    const Split b = split_dataset(10, {{0.9, 0.1, 0.0}, 0, false});
    o.require(a.train.size() == 80 && a.val.size() == 10 && a.test.size() == 10, "80/10/10");
    o.require(b.train.size() == 9 && b.val.size() == 1 && b.test.empty(), "9/1");

    const auto& grid = fewshot_ratio_grid();
    o.require(grid == std::vector<double>{0.01, 0.02, 0.05, 0.10, 0.20, 0.35, 0.50}, "ratio grid");
    std::vector<std::size_t> labels(1000), ids(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        labels[i] = i % 2;
        ids[i] = i;
    }
    o.detail << "80/10/10 and 9/1/0; few-shot sizes {";
    for (double r : grid) {
        const std::size_t got = fewshot_sample(ids, labels, r, 3, 2).size();
        const std::size_t want = 2 * static_cast<std::size_t>(std::max(1LL, std::llround(r * 500.0)));
        o.require(got == want, "few-shot size at ratio " + std::to_string(r));
        o.detail << got << (r == grid.back() ? "" : ",");
    }
    o.detail << "}";

    std::vector<DomainSplit> domains;
    for (Domain d : {Domain::a, Domain::b}) {
        DomainSplit s;
        s.name = to_string(d);
        s.data = gen_dataset(d, 40, 8);
        const Split sp = split_dataset(40, {{0.8, 0.1, 0.1}, 8, false});
        s.train = sp.train;
        s.val = sp.val;
        s.test = sp.test;
        domains.push_back(std::move(s));
    }
    const CrossDomainReport r = cross_dataset_run(domains, fixture::threshold_method());
    double worst = 0.0;
    for (const auto& [k, v] : r.overall) {
        const double in = (r.cells[0][0].at(k) + r.cells[1][1].at(k)) / 2.0;
        const double cross = (r.cells[0][1].at(k) + r.cells[1][0].at(k)) / 2.0;
        worst = std::max({worst, std::abs(r.in_domain.at(k) - in), std::abs(r.cross_domain.at(k) - cross),
                          std::abs(v - (in + cross) / 2.0)});
    }
    std::ostringstream csv;
    write_cross_domain_csv(csv, r);
    const std::string text = csv.str();
    const bool rows = text.find("\nin-domain,") != std::string::npos && text.find("\ncross-domain,") != std::string::npos &&
                      text.find("\noverall,") != std::string::npos;
    o.require(rows, "aggregate rows emitted");
    o.require(worst < 1e-9, "aggregates match brute force");
    o.detail << "; cross-domain aggregates worst |diff| " << worst;
}

void c9(Outcome& o) {
    TrainConfig cfg;
    auto backbone = make_backbone(cfg);
    const AdaptedModel model = make_model(backbone, cfg, 1);
    const EmbeddingHead head = init_embedding_head(cfg.width, cfg.embed_dim, 2);
    const TextEncoder enc({}, 3);
    const auto images = gen_dataset(Domain::a, 4, 9);
    const Tensor emb = image_embedding(model, head, stack_images(images, {0, 1, 2, 3}));
    double worst = 0.0;
    bool invariant = true;
    std::size_t prompts = 0;
    for (const char* name : {"lymph_node", "breast"}) {
        const PromptBank bank = bundled_prompt_bank(name);
        for (const auto& [cls, list] : bank.classes) {
            o.require(list.size() == 10, std::string(name) + " has 10 prompts per class");
            prompts += list.size();
        }
        const EncodedBank encoded = encode_bank(bank, enc);
        for (std::size_t i = 0; i < 4; ++i) {
            Tensor row({cfg.embed_dim});
            std::copy(emb.ptr() + i * cfg.embed_dim, emb.ptr() + (i + 1) * cfg.embed_dim, row.ptr());
            const ZeroShotResult r = zero_shot_classify(row, encoded);
            for (std::size_t c = 0; c < bank.classes.size(); ++c) {
                double sum = 0.0;
                for (const auto& p : bank.classes[c].second) {
                    const Tensor e = enc.encode(p);
                    double dot = 0.0, na = 0.0, nb = 0.0;
                    for (std::size_t k = 0; k < e.numel(); ++k) {
                        dot += row[k] * e[k];
                        na += row[k] * row[k];
                        nb += e[k] * e[k];
                    }
                    sum += dot / std::sqrt(na * nb);
                }
                worst = std::max(worst, std::abs(r.scores[c].second - sum / static_cast<double>(bank.classes[c].second.size())));
            }
            for (double k : {0.01, 2.5, 1e3}) {
                auto scaled = r.scores;
                for (auto& [n, v] : scaled) v *= k;
                invariant = invariant && argmax_scores(scaled).predicted == r.predicted;
            }
        }
    }
    o.detail << prompts << " prompts in 2 banks; ensemble vs brute force worst " << worst << "; argmax invariant under rescaling";
    o.require(worst <= 1e-9, "ensemble equals brute-force average");
    o.require(invariant, "argmax invariance");
}

void c10(Outcome& o) {
    ViTConfig base = ViTConfig::base();
    base.tap_indices = default_tap_indices(12);
    const FlopBreakdown f = estimate_flops(base, HTConfig::base(), {1, 1, 224, 224});
    char buf[128];
    std::snprintf(buf, sizeof buf, "backbone %.3f GFLOPs, adapters %.3f GFLOPs, overhead %.3f%%", f.backbone / 1e9,
                  f.adapters / 1e9, f.overhead_percent());
    o.detail << buf;
    o.require(f.overhead_percent() <= 2.0, "overhead <= 2%");
}

void c11(Outcome& o) {
    const TTestResult r = paired_t_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
    o.detail << "t=" << r.t << " df=" << r.df << " p=" << r.p;
    o.require(std::abs(r.t - 4.2426) < 1e-4, "t = 4.2426");
    o.require(r.df == 4.0, "df = 4");
    o.require(std::abs(r.p - 0.0132) <= 1e-3, "p = 0.0132");
    bool degenerate = false;
    try {
        paired_t_test({1, 2, 3}, {1, 2, 3});
    } catch (const DegenerateSampleError&) {
        degenerate = true;
    }
    o.require(degenerate, "zero variance raises degenerate-sample error");
}

}  // namespace

int main() {
    criterion(1, "parameter accounting", c1);
    criterion(2, "gradient correctness", c2);
    criterion(3, "adapter transparency", c3);
    criterion(4, "frequency filter algebra", c4);
    criterion(5, "metric oracles", c5);
    criterion(6, "desk-scale learning signal", c6);
    criterion(7, "spectral direction", c7);
    criterion(8, "protocol fidelity", c8);
    criterion(9, "zero-shot mechanics", c9);
    criterion(10, "efficiency accounting", c10);
    criterion(11, "statistics", c11);
    std::printf("%d of 11 criteria failed\n", failures);
    return failures;
}
