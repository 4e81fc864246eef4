// htune: command-line front end over the library. Every subcommand writes
// CSV tables plus summary.txt into --out.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "htune/analysis.hpp"
#include "htune/config.hpp"
#include "htune/cross_domain.hpp"
#include "htune/dataset_io.hpp"
#include "htune/errors.hpp"
#include "htune/lora.hpp"
#include "htune/sampling.hpp"
#include "htune/tensor_io.hpp"
#include "htune/train.hpp"
#include "htune/zeroshot.hpp"

namespace fs = std::filesystem;
using namespace htune;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out = "out";
};

struct DataArgs {
    std::string dir;
    std::string domain = "a";
    std::size_t count = 200;
    std::uint64_t data_seed = 2024;
    std::uint64_t split_seed = 11;
};

struct Dataset {
    std::vector<PhantomSample> samples;
    Split split;
    std::string source;
};

TrainConfig load_config(const Common& c) {
    return c.config.empty() ? TrainConfig{} : load_train_config(c.config);
}

std::ofstream open_out(const Common& c, const std::string& name) {
    fs::create_directories(c.out);
    std::ofstream f(fs::path(c.out) / name);
    if (!f) throw InputError("cannot write " + (fs::path(c.out) / name).string());
    f.precision(10);
    return f;
}

// Summary lines are "key: value"; the config in effect is appended verbatim.
void write_summary(const Common& c, const std::string& command, const std::vector<std::pair<std::string, std::string>>& rows,
                   const TrainConfig* cfg = nullptr) {
    std::ofstream f = open_out(c, "summary.txt");
    f << "command: " << command << "\nseed: " << c.seed << "\n";
    for (const auto& [k, v] : rows) f << k << ": " << v << "\n";
    if (cfg) f << "\n# config\n" << to_text(*cfg);
    for (const auto& [k, v] : rows) std::cout << k << ": " << v << "\n";
}

std::string num(double v, int decimals = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::vector<std::size_t> labels_of(const std::vector<PhantomSample>& data) {
    std::vector<std::size_t> out;
    for (const auto& s : data) out.push_back(static_cast<std::size_t>(s.label));
    return out;
}

// A dataset directory keeps its recorded splits; otherwise samples are
// generated in memory and split 8:1:1.
Dataset load_data(const DataArgs& a) {
    Dataset d;
    if (!a.dir.empty()) {
        LoadedDataset loaded = read_dataset(a.dir);
        d.samples = std::move(loaded.samples);
        for (std::size_t i = 0; i < loaded.manifest.records.size(); ++i) {
            const std::string& s = loaded.manifest.records[i].split;
            (s == "train" ? d.split.train : s == "val" ? d.split.val : d.split.test).push_back(i);
        }
        if (d.split.train.empty()) d.split = split_dataset(d.samples.size(), {{0.8, 0.1, 0.1}, a.split_seed, false});
        d.source = a.dir;
        return d;
    }
    d.samples = gen_dataset(parse_domain(a.domain), a.count, a.data_seed);
    d.split = split_dataset(d.samples.size(), {{0.8, 0.1, 0.1}, a.split_seed, false});
    d.source = "generated domain " + a.domain + " x" + std::to_string(a.count) + " seed " + std::to_string(a.data_seed);
    return d;
}

void add_data_options(CLI::App* app, DataArgs& a) {
    app->add_option("--data", a.dir, "Dataset directory written by gen-data");
    app->add_option("--domain", a.domain, "Phantom domain when generating (a|b)");
    app->add_option("--count", a.count, "Samples to generate when --data is absent");
    app->add_option("--data-seed", a.data_seed, "Generator seed when --data is absent");
    app->add_option("--split-seed", a.split_seed, "Split seed when no recorded splits exist");
}

TextEncoder text_encoder(const TrainConfig& cfg) {
    TextEncoder::Config tc;
    tc.width = cfg.embed_dim;
    return TextEncoder(tc, cfg.backbone_seed);
}

Checkpoint embedding_checkpoint(const EmbeddingHead& h) {
    Checkpoint c;
    c.role = "embedding";
    c.tensors.emplace_back("projection", h.projection);
    return c;
}

AdaptedModel restore_model(const TrainConfig& cfg, std::uint64_t seed, const std::string& adapter_ckpt) {
    AdaptedModel m = make_model(make_backbone(cfg), cfg, seed);
    if (!adapter_ckpt.empty()) load_model_state(m, load_checkpoint(adapter_ckpt));
    return m;
}

void write_trace(const Common& c, const std::vector<TraceRow>& trace) {
    std::ofstream f = open_out(c, "trace.csv");
    write_trace_csv(f, trace);
}

void write_seg_metrics(std::ostream& f, const SegReport& r) {
    f << "metric,mean,std,n\n";
    for (auto [name, s] : {std::pair{"dice", r.dice}, {"iou", r.iou}, {"hd95", r.hd95}, {"asd", r.asd}})
        f << name << "," << s.mean << "," << s.std << "," << s.n << "\n";
}

void write_cls_metrics(std::ostream& f, const ClsReport& r) {
    f << "metric,value\nacc," << r.acc << "\nrec," << r.rec << "\npre," << r.pre << "\nf1," << r.f1 << "\nauc," << r.auc
      << "\ntp," << r.tp << "\nfp," << r.fp << "\ntn," << r.tn << "\nfn," << r.fn << "\n";
}

std::vector<std::pair<std::string, std::string>> seg_rows(const SegReport& r) {
    return {{"dice", format_pm(r.dice)}, {"iou", format_pm(r.iou)}, {"hd95", format_pm(r.hd95)},
            {"asd", format_pm(r.asd)}, {"flagged_one_empty", std::to_string(r.flagged)}};
}

std::vector<std::pair<std::string, std::string>> cls_rows(const ClsReport& r) {
    std::vector<std::pair<std::string, std::string>> rows{{"acc", num(r.acc, 2)}, {"rec", num(r.rec, 2)},
                                                          {"pre", num(r.pre, 2)}, {"f1", num(r.f1, 2)},
                                                          {"auc", num(r.auc, 2)}};
    if (r.precision_undefined) rows.emplace_back("note", "precision undefined (no positive predictions)");
    if (r.auc_undefined) rows.emplace_back("note", "auc undefined (single class)");
    return rows;
}

// ---- subcommands ----------------------------------------------------------

void cmd_gen_data(const Common& c, const DataArgs& a) {
    const auto samples = gen_dataset(parse_domain(a.domain), a.count, a.data_seed);
    const Split sp = split_dataset(samples.size(), {{0.8, 0.1, 0.1}, a.split_seed, false});
    std::vector<std::string> splits(samples.size());
    for (std::size_t i : sp.train) splits[i] = "train";
    for (std::size_t i : sp.val) splits[i] = "val";
    for (std::size_t i : sp.test) splits[i] = "test";
    const Manifest m = write_dataset(samples, splits, c.out, "domain-" + a.domain, a.data_seed);
    std::ofstream f = open_out(c, "samples.csv");
    f << "index,label,split,lesion_fraction,caption\n";
    std::size_t malignant = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        malignant += samples[i].label == Label::malignant;
        f << i << "," << to_string(samples[i].label) << "," << splits[i] << ","
          << samples[i].mask.sum() / static_cast<double>(samples[i].mask.numel()) << ",\"" << samples[i].caption << "\"\n";
    }
    write_summary(c, "gen-data",
                  {{"domain", a.domain}, {"count", std::to_string(m.records.size())},
                   {"malignant", std::to_string(malignant)}, {"train/val/test",
                   std::to_string(sp.train.size()) + "/" + std::to_string(sp.val.size()) + "/" + std::to_string(sp.test.size())}});
}

void cmd_finetune(const Common& c, const DataArgs& a, std::optional<std::size_t> epochs) {
    const TrainConfig cfg = load_config(c);
    const Dataset d = load_data(a);
    AdaptedModel m = make_model(make_backbone(cfg), cfg, c.seed);
    EmbeddingHead head = init_embedding_head(cfg.width, cfg.embed_dim, c.seed);
    const FinetuneResult r = run_finetune(m, head, text_encoder(cfg), d.samples, d.split.train, d.split.val, cfg, c.seed,
                                          epochs.value_or(cfg.epochs_finetune));
    write_trace(c, r.trace);
    if (m.kind() != AdapterKind::none) save_checkpoint(fs::path(c.out) / "adapter.ckpt", model_checkpoint(m));
    save_checkpoint(fs::path(c.out) / "embedding.ckpt", embedding_checkpoint(head));
    const TraceRow& last = r.trace.back();
    write_summary(c, "finetune",
                  {{"data", d.source}, {"adapter", cfg.adapter}, {"epochs", std::to_string(last.epoch)},
                   {"final_" + last.split + "_loss", num(last.loss)},
                   {"final_" + last.split + "_retrieval_acc", num(last.metric, 2)},
                   {"backbone_unchanged", r.backbone_checksum_before == r.backbone_checksum_after ? "yes" : "no"}},
                  &cfg);
}

void cmd_train(const Common& c, const DataArgs& a, Task task, std::optional<std::size_t> epochs, const std::string& init) {
    const TrainConfig cfg = load_config(c);
    const Dataset d = load_data(a);
    AdaptedModel m = restore_model(cfg, c.seed, init);
    const DownstreamResult r = run_downstream(m, d.samples, d.split.train, d.split.val, task, cfg, c.seed,
                                              epochs.value_or(cfg.epochs_downstream));
    write_trace(c, r.trace);
    if (m.kind() != AdapterKind::none) save_checkpoint(fs::path(c.out) / "adapter.ckpt", model_checkpoint(m));
    save_checkpoint(fs::path(c.out) / "heads.ckpt", heads_checkpoint(r.heads));

    std::vector<std::pair<std::string, std::string>> rows{
        {"data", d.source}, {"task", to_string(task)}, {"adapter", cfg.adapter},
        {"trainable_params", std::to_string(m.trainable_count())},
        {"best_epoch", std::to_string(r.best_epoch)}, {std::string("best_val_") + (task == Task::seg ? "dice" : "auc"), num(r.best_metric, 2)},
        {"backbone_unchanged", r.backbone_checksum_before == r.backbone_checksum_after ? "yes" : "no"}};
    if (!d.split.test.empty()) {
        std::ofstream f = open_out(c, "metrics.csv");
        if (task == Task::seg) {
            const SegEval e = evaluate_seg(m, r.heads, d.samples, d.split.test, cfg);
            write_seg_metrics(f, e.report);
            for (auto& row : seg_rows(e.report)) rows.emplace_back("test_" + row.first, row.second);
        } else {
            const ClsEval e = evaluate_cls(m, r.heads, d.samples, d.split.test, cfg);
            write_cls_metrics(f, e.report);
            for (auto& row : cls_rows(e.report)) rows.emplace_back("test_" + row.first, row.second);
        }
    }
    write_summary(c, task == Task::seg ? "train-seg" : "train-cls", rows, &cfg);
}

std::vector<std::size_t> pick_split(const Split& s, const std::string& name) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    if (name == "all") {
        std::vector<std::size_t> all = s.train;
        all.insert(all.end(), s.val.begin(), s.val.end());
        all.insert(all.end(), s.test.begin(), s.test.end());
        std::sort(all.begin(), all.end());
        return all;
    }
    throw ConfigError("unknown split '" + name + "' (train|val|test|all)");
}

void cmd_eval(const Common& c, const DataArgs& a, const std::string& adapter, const std::string& heads_path,
              const std::string& split) {
    const TrainConfig cfg = load_config(c);
    const Dataset d = load_data(a);
    const AdaptedModel m = restore_model(cfg, c.seed, adapter);
    const HeadParams heads = load_heads(load_checkpoint(heads_path));
    const auto idx = pick_split(d.split, split);
    if (idx.empty()) throw InputError("split '" + split + "' is empty");
    std::ofstream f = open_out(c, "metrics.csv");
    std::vector<std::pair<std::string, std::string>> rows{{"data", d.source}, {"split", split}, {"n", std::to_string(idx.size())}};
    if (heads.config.task == Task::seg) {
        const SegEval e = evaluate_seg(m, heads, d.samples, idx, cfg);
        write_seg_metrics(f, e.report);
        std::ofstream per = open_out(c, "per_sample.csv");
        per << "index,dice,iou,hd95,asd,one_empty\n";
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const SegEntry& s = e.report.samples[i];
            per << idx[i] << "," << s.dice << "," << s.iou << "," << s.hd95 << "," << s.asd << "," << s.one_empty << "\n";
        }
        for (auto& row : seg_rows(e.report)) rows.push_back(row);
    } else {
        const ClsEval e = evaluate_cls(m, heads, d.samples, idx, cfg);
        write_cls_metrics(f, e.report);
        std::ofstream per = open_out(c, "per_sample.csv");
        per << "index,label,p_malignant\n";
        for (std::size_t i = 0; i < idx.size(); ++i)
            per << idx[i] << "," << to_string(d.samples[idx[i]].label) << "," << e.scores[i] << "\n";
        for (auto& row : cls_rows(e.report)) rows.push_back(row);
    }
    write_summary(c, "eval", rows, &cfg);
}

void cmd_zeroshot(const Common& c, const DataArgs& a, const std::string& bank_arg, const std::string& adapter,
                  const std::string& embedding, const std::string& split) {
    const TrainConfig cfg = load_config(c);
    const Dataset d = load_data(a);
    const AdaptedModel m = restore_model(cfg, c.seed, adapter);
    EmbeddingHead head = init_embedding_head(cfg.width, cfg.embed_dim, c.seed);
    if (!embedding.empty()) head.projection = load_checkpoint(embedding).get("projection");
    const PromptBank bank = fs::exists(bank_arg) ? load_prompt_bank(bank_arg) : bundled_prompt_bank(bank_arg);
    const EncodedBank encoded = encode_bank(bank, text_encoder(cfg));
    const auto idx = pick_split(d.split, split);
    if (idx.empty()) throw InputError("split '" + split + "' is empty");

    std::ofstream f = open_out(c, "predictions.csv");
    f << "index,label,predicted";
    for (const auto& [name, prompts] : bank.classes) f << ",score_" << name;
    f << "\n";
    std::size_t hits = 0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
        const std::vector<std::size_t> batch(idx.begin() + start, idx.begin() + std::min(idx.size(), start + cfg.batch_size));
        const Tensor emb = image_embedding(m, head, stack_images(d.samples, batch));
        const std::size_t De = emb.dim(1);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            Tensor row({De});
            std::copy(emb.ptr() + b * De, emb.ptr() + (b + 1) * De, row.ptr());
            const ZeroShotResult r = zero_shot_classify(row, encoded);
            const std::string truth = to_string(d.samples[batch[b]].label);
            hits += r.predicted == truth;
            f << batch[b] << "," << truth << "," << r.predicted;
            for (const auto& [name, s] : r.scores) f << "," << s;
            f << "\n";
        }
    }
    write_summary(c, "zeroshot",
                  {{"data", d.source}, {"bank", bank_arg}, {"prompts", std::to_string(bank.prompt_count())},
                   {"split", split}, {"n", std::to_string(idx.size())},
                   {"accuracy", num(100.0 * static_cast<double>(hits) / static_cast<double>(idx.size()), 2)}},
                  &cfg);
}

void cmd_fewshot(const Common& c, const DataArgs& a, Task task, std::optional<std::size_t> epochs, std::vector<double> ratios) {
    const TrainConfig cfg = load_config(c);
    const Dataset d = load_data(a);
    if (ratios.empty()) ratios = fewshot_ratio_grid();
    const auto labels = labels_of(d.samples);
    auto backbone = make_backbone(cfg);
    std::ofstream f = open_out(c, "fewshot.csv");
    f << "ratio,train_n,best_val,test_metric\n";
    std::vector<std::pair<std::string, std::string>> rows{{"data", d.source}, {"task", to_string(task)}};
    for (double r : ratios) {
        const auto train = fewshot_sample(d.split.train, labels, r, c.seed, 2);
        AdaptedModel m = make_model(backbone, cfg, c.seed);
        const DownstreamResult res = run_downstream(m, d.samples, train, d.split.val, task, cfg, c.seed,
                                                    epochs.value_or(cfg.epochs_downstream));
        double test = 0.0;
        if (task == Task::seg)
            test = evaluate_seg(m, res.heads, d.samples, d.split.test, cfg).report.dice.mean;
        else
            test = evaluate_cls(m, res.heads, d.samples, d.split.test, cfg).report.auc;
        f << r << "," << train.size() << "," << res.best_metric << "," << test << "\n";
        rows.emplace_back("ratio " + num(100.0 * r, 0) + "%", std::to_string(train.size()) + " samples, test " +
                                                             (task == Task::seg ? "dice " : "auc ") + num(test, 2));
    }
    write_summary(c, "fewshot", rows, &cfg);
}

void cmd_cross_domain(const Common& c, const std::vector<std::string>& names, std::size_t count, std::uint64_t data_seed,
                      Task task, std::optional<std::size_t> epochs) {
    const TrainConfig cfg = load_config(c);
    std::vector<DomainSplit> domains;
    for (const auto& n : names) {
        DomainSplit s;
        s.name = n;
        s.data = gen_dataset(parse_domain(n), count, data_seed);
        const Split sp = split_dataset(count, {{0.8, 0.1, 0.1}, data_seed, false});
        s.train = sp.train;
        s.val = sp.val;
        s.test = sp.test;
        domains.push_back(std::move(s));
    }
    auto backbone = make_backbone(cfg);
    const std::size_t n_epochs = epochs.value_or(cfg.epochs_downstream);
    const Method method = [&](const DomainSplit& source) -> Evaluator {
        auto model = std::make_shared<AdaptedModel>(make_model(backbone, cfg, c.seed));
        const DownstreamResult r = run_downstream(*model, source.data, source.train, source.val, task, cfg, c.seed, n_epochs);
        return [model, heads = r.heads, &cfg, task](const DomainSplit& target) -> MetricMap {
            if (task == Task::seg) {
                const SegReport rep = evaluate_seg(*model, heads, target.data, target.test, cfg).report;
                return {{"dice", rep.dice.mean}, {"iou", rep.iou.mean}, {"hd95", rep.hd95.mean}, {"asd", rep.asd.mean}};
            }
            const ClsReport rep = evaluate_cls(*model, heads, target.data, target.test, cfg).report;
            return {{"acc", rep.acc}, {"f1", rep.f1}, {"auc", rep.auc}};
        };
    };
    const CrossDomainReport r = cross_dataset_run(domains, method);
    std::ofstream f = open_out(c, "cross_domain.csv");
    write_cross_domain_csv(f, r);
    std::vector<std::pair<std::string, std::string>> rows{{"task", to_string(task)}};
    for (const auto& [k, v] : r.overall)
        rows.emplace_back(k, "in-domain " + num(r.in_domain.at(k), 2) + ", cross-domain " + num(r.cross_domain.at(k), 2) +
                                 ", overall " + num(v, 2));
    write_summary(c, "cross-domain", rows, &cfg);
}

void cmd_analyze_spectrum(const Common& c, const std::string& adapter, std::size_t probes_per_domain) {
    const TrainConfig cfg = load_config(c);
    if (cfg.adapter != "ht") throw ConfigError("analyze-spectrum needs adapter=ht, config has '" + cfg.adapter + "'");
    const AdaptedModel m = restore_model(cfg, c.seed, adapter);
    // probes drawn equally from each phantom domain
    std::vector<PhantomSample> probes;
    for (Domain dom : {Domain::a, Domain::b}) {
        auto part = gen_dataset(dom, probes_per_domain, 99 + static_cast<std::uint64_t>(dom));
        probes.insert(probes.end(), part.begin(), part.end());
    }
    std::vector<std::size_t> idx(probes.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto report = spectral_report(m, stack_images(probes, idx));
    std::ofstream f = open_out(c, "spectrum.csv");
    f << "layer,theta_mean,theta_std,theta_min,theta_max,theta_deviation,energy_change_pct,w3,w5,w7\n";
    std::vector<std::pair<std::string, std::string>> rows{{"adapter_checkpoint", adapter.empty() ? "(fresh)" : adapter},
                                                          {"grand_mean_theta", num(grand_mean_theta(m.ht()), 6)}};
    for (std::size_t l = 0; l < report.size(); ++l) {
        const SpectralLayer& s = report[l];
        f << l << "," << s.theta.mean << "," << s.theta.std << "," << s.theta.min << "," << s.theta.max << ","
          << s.theta.mean - 1.0 << "," << s.energy_change << "," << s.ne[0] << "," << s.ne[1] << "," << s.ne[2] << "\n";
        rows.emplace_back("layer " + std::to_string(l), "theta " + s.theta.formatted() + ", energy " + num(s.energy_change, 3) +
                                                            "%, w = " + num(s.ne[0], 3) + "/" + num(s.ne[1], 3) + "/" + num(s.ne[2], 3));
    }
    write_summary(c, "analyze-spectrum", rows, &cfg);
}

void cmd_bench(const Common& c, std::size_t batch, std::size_t reps) {
    const TrainConfig cfg = load_config(c);
    auto backbone = make_backbone(cfg);
    std::ofstream f = open_out(c, "latency.csv");
    f << "adapter,trainable_params,ms_per_image,std_ms,fps,gflops_per_image\n";
    std::vector<std::pair<std::string, std::string>> rows;
    const ViTConfig vit = vit_config_from(cfg);
    for (const char* kind : {"none", "ht", "lora"}) {
        TrainConfig k = cfg;
        k.adapter = kind;
        const AdaptedModel m = make_model(backbone, k, c.seed);
        const LatencyReport r = bench_latency(m, batch, reps);
        std::optional<HTConfig> ht;
        if (k.adapter == "ht") ht = ht_config_from(k);
        const double gflops = estimate_flops(vit, ht, {1, 1, vit.image_size, vit.image_size}).total() / 1e9;
        f << kind << "," << m.trainable_count() << "," << r.mean_ms_per_image << "," << r.std_ms_per_image << "," << r.fps
          << "," << gflops << "\n";
        rows.emplace_back(kind, num(r.mean_ms_per_image, 3) + " ms/image, " + num(r.fps, 1) + " FPS");
    }
    write_summary(c, "bench", rows, &cfg);
}

void cmd_count_params(const Common& c) {
    const TrainConfig cfg = load_config(c);
    ViTConfig base = ViTConfig::base();
    base.tap_indices = default_tap_indices(base.depth);
    const ViTConfig toy = vit_config_from(cfg);
    const HTConfig base_ht = HTConfig::base(), toy_ht = ht_config_from(cfg);
    const LoRAConfig lc = lora_config_from(cfg);

    struct Row {
        std::string scale, adapter;
        std::size_t backbone, trainable;
        FlopBreakdown flops;
    };
    std::vector<Row> table;
    for (const auto& [scale, vit, ht] : {std::tuple{"vit-b", base, base_ht}, {"toy", toy, toy_ht}}) {
        const Shape in{1, 1, vit.image_size, vit.image_size};
        const std::size_t bb = backbone_param_count(vit);
        table.push_back({scale, "none", bb, 0, estimate_flops(vit, std::nullopt, in)});
        table.push_back({scale, "ht", bb, ht_param_count(ht.width, ht.bottleneck, ht.squeeze) * vit.depth, estimate_flops(vit, ht, in)});
        table.push_back({scale, "lora", bb, lora_param_count(vit.width, vit.depth, static_cast<std::size_t>(lc.rank)),
                         estimate_flops(vit, std::nullopt, in)});
    }
    std::ofstream f = open_out(c, "params.csv");
    f << "scale,adapter,backbone_params,trainable_params,backbone_gflops,adapter_gflops,overhead_pct\n";
    std::vector<std::pair<std::string, std::string>> rows;
    for (const Row& r : table) {
        f << r.scale << "," << r.adapter << "," << r.backbone << "," << r.trainable << "," << r.flops.backbone / 1e9 << ","
          << r.flops.adapters / 1e9 << "," << r.flops.overhead_percent() << "\n";
        rows.emplace_back(r.scale + " " + r.adapter, std::to_string(r.trainable) + " trainable (" +
                                                         num(static_cast<double>(r.trainable) / 1e6, 2) + " M), " +
                                                         num(r.flops.total() / 1e9, 3) + " GFLOPs");
    }
    rows.emplace_back("ht overhead (ViT-B dims)", num(table[1].flops.overhead_percent(), 3) + "%");
    write_summary(c, "count-params", rows, &cfg);
}

Task task_from(const std::string& s) { return parse_task(s); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid-tuning adapters on synthetic ultrasound phantoms"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config, "TrainConfig key=value file")->check(CLI::ExistingFile);
    app.add_option("--seed", common.seed, "Model seed");
    app.add_option("--out", common.out, "Output directory");
    app.fallthrough();

    std::optional<std::size_t> epochs;
    DataArgs data;
    std::string adapter_ckpt, heads_ckpt, embedding_ckpt, split = "test", bank = "breast", task = "seg";
    std::vector<double> ratios;
    std::vector<std::string> domains{"a", "b"};
    std::size_t batch = 1, reps = 20, probes = 8;

    auto* gen = app.add_subcommand("gen-data", "Generate a phantom dataset directory");
    add_data_options(gen, data);

    auto* finetune = app.add_subcommand("finetune", "Contrastive image-text adaptation");
    add_data_options(finetune, data);
    finetune->add_option("--epochs", epochs);

    auto* train_seg = app.add_subcommand("train-seg", "Train segmentation heads and adapter");
    auto* train_cls = app.add_subcommand("train-cls", "Train classification heads and adapter");
    for (auto* sub : {train_seg, train_cls}) {
        add_data_options(sub, data);
        sub->add_option("--epochs", epochs);
        sub->add_option("--init-adapter", adapter_ckpt, "Start from an adapter checkpoint")->check(CLI::ExistingFile);
    }

    auto* eval = app.add_subcommand("eval", "Evaluate saved heads on a split");
    add_data_options(eval, data);
    eval->add_option("--adapter", adapter_ckpt)->check(CLI::ExistingFile);
    eval->add_option("--heads", heads_ckpt)->required()->check(CLI::ExistingFile);
    eval->add_option("--split", split);

    auto* zeroshot = app.add_subcommand("zeroshot", "Prompt-ensemble zero-shot classification");
    add_data_options(zeroshot, data);
    zeroshot->add_option("--bank", bank, "Bundled bank name (breast|lymph_node) or a bank file");
    zeroshot->add_option("--adapter", adapter_ckpt)->check(CLI::ExistingFile);
    zeroshot->add_option("--embedding", embedding_ckpt)->check(CLI::ExistingFile);
    zeroshot->add_option("--split", split);

    auto* fewshot = app.add_subcommand("fewshot", "Train on stratified fractions of the training split");
    add_data_options(fewshot, data);
    fewshot->add_option("--task", task);
    fewshot->add_option("--epochs", epochs);
    fewshot->add_option("--ratios", ratios, "Fractions to run (default: full grid)")->delimiter(',');

    auto* cross = app.add_subcommand("cross-domain", "Leave-one-domain-out evaluation grid");
    cross->add_option("--domains", domains)->delimiter(',');
    cross->add_option("--count", data.count);
    cross->add_option("--data-seed", data.data_seed);
    cross->add_option("--task", task);
    cross->add_option("--epochs", epochs);

    auto* spectrum = app.add_subcommand("analyze-spectrum", "Frequency-filter and kernel-weight diagnostics");
    spectrum->add_option("--adapter", adapter_ckpt)->check(CLI::ExistingFile);
    spectrum->add_option("--probes", probes, "Probe images per domain");

    auto* bench = app.add_subcommand("bench", "Inference latency of frozen, HT and LoRA models");
    bench->add_option("--batch", batch);
    bench->add_option("--reps", reps);

    auto* count = app.add_subcommand("count-params", "Parameter and FLOP accounting");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) cmd_gen_data(common, data);
        else if (finetune->parsed()) cmd_finetune(common, data, epochs);
        else if (train_seg->parsed()) cmd_train(common, data, Task::seg, epochs, adapter_ckpt);
        else if (train_cls->parsed()) cmd_train(common, data, Task::cls, epochs, adapter_ckpt);
        else if (eval->parsed()) cmd_eval(common, data, adapter_ckpt, heads_ckpt, split);
        else if (zeroshot->parsed()) cmd_zeroshot(common, data, bank, adapter_ckpt, embedding_ckpt, split);
        else if (fewshot->parsed()) cmd_fewshot(common, data, task_from(task), epochs, ratios);
        else if (cross->parsed()) cmd_cross_domain(common, domains, data.count, data.data_seed, task_from(task), epochs);
        else if (spectrum->parsed()) cmd_analyze_spectrum(common, adapter_ckpt, probes);
        else if (bench->parsed()) cmd_bench(common, batch, reps);
        else if (count->parsed()) cmd_count_params(common);
    } catch (const Error& e) {
        std::cerr << e.category() << " error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
