#include "htune/train.hpp"

#include <cmath>
#include <limits>

#include "htune/errors.hpp"
#include "htune/losses.hpp"
#include "htune/ops.hpp"
#include "htune/optim.hpp"
#include "htune/rng.hpp"

namespace htune {

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
    out << "epoch,split,loss,metric\n";
    out.precision(10);
    for (const auto& r : trace) out << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.metric << '\n';
}

ViTConfig vit_config_from(const TrainConfig& cfg) {
    ViTConfig c;
    c.image_size = cfg.image_size;
    c.patch_size = cfg.patch_size;
    c.depth = cfg.depth;
    c.width = cfg.width;
    c.heads = cfg.heads;
    c.tap_indices = default_tap_indices(cfg.depth);
    c.validate();
    return c;
}

HTConfig ht_config_from(const TrainConfig& cfg) {
    HTConfig c;
    c.width = cfg.width;
    c.bottleneck = cfg.bottleneck;
    c.squeeze = cfg.squeeze;
    c.dropout = cfg.dropout;
    c.validate();
    return c;
}

LoRAConfig lora_config_from(const TrainConfig& cfg) {
    LoRAConfig c{cfg.lora_rank, cfg.lora_alpha};
    c.validate();
    return c;
}

HeadConfig head_config_from(const TrainConfig& cfg, const ViTConfig& vit, Task task) {
    HeadConfig c;
    c.task = task;
    c.width = vit.width;
    c.reduced = cfg.reduced;
    c.num_classes = 2;
    c.cls_hidden = cfg.cls_hidden;
    c.dropout = cfg.dropout;
    c.image_size = vit.image_size;
    c.taps = vit.tap_indices;
    c.validate();
    return c;
}

std::shared_ptr<const ViTWeights> make_backbone(const TrainConfig& cfg) {
    return std::make_shared<const ViTWeights>(init_backbone(vit_config_from(cfg), cfg.backbone_seed));
}

AdaptedModel make_model(std::shared_ptr<const ViTWeights> backbone, const TrainConfig& cfg, std::uint64_t seed) {
    const ViTConfig vit = vit_config_from(cfg);
    switch (parse_adapter_kind(cfg.adapter)) {
        case AdapterKind::none: return AdaptedModel(std::move(backbone), vit);
        case AdapterKind::ht: return attach_ht(std::move(backbone), vit, ht_config_from(cfg), seed);
        case AdapterKind::lora: return attach_lora(std::move(backbone), vit, lora_config_from(cfg), seed);
    }
    throw ConfigError("unknown adapter");
}

Tensor stack_images(const std::vector<PhantomSample>& data, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw InputError("stack_images: empty batch");
    const Shape& s = data[idx[0]].image.shape();
    Tensor out(Shape{idx.size(), 1, s[0], s[1]});
    const std::size_t n = s[0] * s[1];
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Tensor& img = data[idx[i]].image;
        if (img.shape() != s) throw DimensionError("stack_images: mixed image sizes");
        std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

Checkpoint model_checkpoint(const AdaptedModel& model) {
    Checkpoint ckpt;
    ckpt.role = "adapter";
    ckpt.config["kind"] = to_string(model.kind());
    if (model.kind() == AdapterKind::ht) {
        const HTConfig& c = model.ht_config();
        ckpt.config["width"] = std::to_string(c.width);
        ckpt.config["bottleneck"] = std::to_string(c.bottleneck);
        ckpt.config["squeeze"] = std::to_string(c.squeeze);
    } else if (model.kind() == AdapterKind::lora) {
        ckpt.config["rank"] = std::to_string(model.lora().config.rank);
        ckpt.config["alpha"] = std::to_string(model.lora().config.alpha);
    }
    for (const auto& [name, t] : model.trainable()) ckpt.tensors.emplace_back(name, *t);
    return ckpt;
}

void load_model_state(AdaptedModel& model, const Checkpoint& ckpt) {
    if (ckpt.role != "adapter") throw IntegrityError("checkpoint role '" + ckpt.role + "' is not an adapter state");
    auto it = ckpt.config.find("kind");
    if (it == ckpt.config.end() || it->second != to_string(model.kind()))
        throw IntegrityError("adapter checkpoint kind does not match the model");
    for (auto& [name, t] : model.trainable()) {
        const Tensor& stored = ckpt.get(name);
        if (stored.shape() != t->shape()) throw IntegrityError("adapter tensor " + name + " has shape " + shape_str(stored.shape()));
        *t = stored;
    }
}

namespace {

constexpr std::size_t kEvalBatch = 8;

using TapCache = std::map<std::size_t, std::vector<Tensor>>;  // tap index -> per-sample N x D

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& idx, std::size_t size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < idx.size(); i += size)
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(i + size, idx.size())));
    return out;
}

TapCache build_cache(const AdaptedModel& model, const std::vector<PhantomSample>& data, const std::vector<std::size_t>& idx) {
    TapCache cache;
    const std::size_t count = data.size();
    for (std::size_t t : model.vit_config().tap_indices) cache[t].resize(count);
    for (const auto& batch : batches(idx, kEvalBatch)) {
        TapSet taps = vit_forward(stack_images(data, batch), model.backbone(), model.vit_config());
        for (auto& [t, tensor] : taps.taps) {
            const std::size_t per = tensor.numel() / batch.size();
            const Shape shape{tensor.dim(1), tensor.dim(2)};
            for (std::size_t i = 0; i < batch.size(); ++i) {
                Tensor one(shape);
                std::copy(tensor.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                          tensor.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per), one.data().begin());
                cache[t][batch[i]] = std::move(one);
            }
        }
    }
    return cache;
}

std::map<std::size_t, Var> tap_vars(Graph& g, const AdaptedModel& model, const std::vector<PhantomSample>& data,
                                    const std::vector<std::size_t>& batch, bool training, const TapCache* cache) {
    std::map<std::size_t, Var> out;
    if (cache && model.kind() == AdapterKind::none) {
        for (const auto& [t, per_sample] : *cache) {
            const Tensor& first = per_sample[batch[0]];
            if (!first.defined()) throw ContractError("tap cache misses a sample");
            Tensor stacked(Shape{batch.size(), first.dim(0), first.dim(1)});
            for (std::size_t i = 0; i < batch.size(); ++i)
                std::copy(per_sample[batch[i]].data().begin(), per_sample[batch[i]].data().end(),
                          stacked.data().begin() + static_cast<std::ptrdiff_t>(i * first.numel()));
            out.emplace(t, g.input(std::move(stacked)));
        }
        return out;
    }
    TapVars tv = model.forward(g, stack_images(data, batch), training);
    return tv.taps;
}

Tensor stack_masks(const std::vector<PhantomSample>& data, const std::vector<std::size_t>& batch) {
    const Shape& s = data[batch[0]].mask.shape();
    Tensor out(Shape{batch.size(), s[0], s[1]});
    const std::size_t n = s[0] * s[1];
    for (std::size_t i = 0; i < batch.size(); ++i)
        std::copy(data[batch[i]].mask.data().begin(), data[batch[i]].mask.data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
    return out;
}

std::vector<std::size_t> batch_labels(const std::vector<PhantomSample>& data, const std::vector<std::size_t>& batch) {
    std::vector<std::size_t> out;
    for (std::size_t i : batch) out.push_back(static_cast<std::size_t>(data[i].label));
    return out;
}

// Argmax mask of sample i of B x C x H x W logits.
Tensor predicted_mask(const Tensor& logits, std::size_t i) {
    const std::size_t C = logits.dim(1), H = logits.dim(2), W = logits.dim(3), HW = H * W;
    Tensor out(Shape{H, W});
    const double* z = logits.ptr() + i * C * HW;
    for (std::size_t px = 0; px < HW; ++px) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
            if (z[c * HW + px] > z[best * HW + px]) best = c;
        out[px] = best == 0 ? 0.0 : 1.0;
    }
    return out;
}

double positive_probability(const Tensor& logits, std::size_t i) {
    const std::size_t C = logits.dim(1);
    const double* z = logits.ptr() + i * C;
    double mx = z[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(z[c] - mx);
    return std::exp(z[1] - mx) / s;
}

DiceCeWeights dice_weights(const TrainConfig& cfg) { return {cfg.dice_weight, cfg.ce_weight, 1.0}; }
FocalParams focal_params(const TrainConfig& cfg) { return {cfg.focal_alpha, cfg.focal_gamma}; }

void check_loss(const TrainConfig& cfg, Task task) {
    if (cfg.loss == "auto") return;
    if (task == Task::seg && cfg.loss != "dice_ce") throw ConfigError("segmentation trains with dice_ce, not " + cfg.loss);
    if (task == Task::cls && cfg.loss != "focal") throw ConfigError("classification trains with focal, not " + cfg.loss);
}

void check_dataset(const std::vector<PhantomSample>& data, const std::vector<std::size_t>& idx, Task task,
                   const ViTConfig& vit) {
    for (std::size_t i : idx) {
        if (i >= data.size()) throw InputError("sample index " + std::to_string(i) + " out of range");
        const auto& s = data[i];
        if (s.image.shape() != Shape{vit.image_size, vit.image_size})
            throw ConfigError("sample image " + shape_str(s.image.shape()) + " does not match the backbone input");
        if (task == Task::seg && s.mask.shape() != s.image.shape())
            throw ConfigError("segmentation needs a mask for every sample");
    }
}

SegEval eval_seg(const AdaptedModel& model, const HeadParams& heads, const std::vector<PhantomSample>& data,
                 const std::vector<std::size_t>& idx, const TrainConfig& cfg, const TapCache* cache) {
    std::vector<SegEntry> entries;
    double loss = 0.0;
    for (const auto& batch : batches(idx, kEvalBatch)) {
        Graph g;
        Var logits = seg_forward(aggregate(tap_vars(g, model, data, batch, false, cache), heads), heads);
        loss += dice_ce_loss(logits, stack_masks(data, batch), dice_weights(cfg)).value().item() * batch.size();
        for (std::size_t i = 0; i < batch.size(); ++i)
            entries.push_back(seg_metrics(predicted_mask(logits.value(), i), data[batch[i]].mask));
    }
    SegEval out;
    out.report = summarize_seg(std::move(entries));
    out.loss = idx.empty() ? 0.0 : loss / static_cast<double>(idx.size());
    return out;
}

ClsEval eval_cls(const AdaptedModel& model, const HeadParams& heads, const std::vector<PhantomSample>& data,
                 const std::vector<std::size_t>& idx, const TrainConfig& cfg, const TapCache* cache) {
    ClsEval out;
    std::vector<int> labels;
    double loss = 0.0;
    for (const auto& batch : batches(idx, kEvalBatch)) {
        Graph g;
        Var logits = cls_forward(aggregate(tap_vars(g, model, data, batch, false, cache), heads), heads, false);
        loss += focal_loss(logits, batch_labels(data, batch), focal_params(cfg)).value().item() * batch.size();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            out.scores.push_back(positive_probability(logits.value(), i));
            labels.push_back(static_cast<int>(data[batch[i]].label));
        }
    }
    out.report = cls_metrics(out.scores, labels);
    out.loss = loss / static_cast<double>(idx.size());
    return out;
}

std::vector<const Tensor*> collect_grads(const Gradients& grads, const std::vector<Tensor*>& params,
                                         std::vector<Tensor>& zeros) {
    std::vector<const Tensor*> out;
    zeros.clear();
    zeros.reserve(params.size());
    for (Tensor* p : params) {
        if (grads.contains(*p)) {
            out.push_back(&grads.of(*p));
        } else {
            zeros.push_back(Tensor::zeros(p->shape()));
            out.push_back(&zeros.back());
        }
    }
    return out;
}

AdamWConfig adamw_config(const TrainConfig& cfg) { return {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay}; }

}  // namespace

SegEval evaluate_seg(const AdaptedModel& model, const HeadParams& heads, const std::vector<PhantomSample>& data,
                     const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
    if (idx.empty()) throw InputError("evaluate_seg: no samples");
    return eval_seg(model, heads, data, idx, cfg, nullptr);
}

ClsEval evaluate_cls(const AdaptedModel& model, const HeadParams& heads, const std::vector<PhantomSample>& data,
                     const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
    if (idx.empty()) throw InputError("evaluate_cls: no samples");
    return eval_cls(model, heads, data, idx, cfg, nullptr);
}

DownstreamResult run_downstream(AdaptedModel& model, const std::vector<PhantomSample>& data,
                                const std::vector<std::size_t>& train_idx, const std::vector<std::size_t>& val_idx,
                                Task task, const TrainConfig& cfg, std::uint64_t seed, std::size_t epochs,
                                const std::function<void(const TraceRow&)>& on_row) {
    cfg.validate();
    check_loss(cfg, task);
    if (train_idx.empty() || val_idx.empty()) throw InputError("run_downstream: empty train or validation split");
    check_dataset(data, train_idx, task, model.vit_config());
    check_dataset(data, val_idx, task, model.vit_config());

    DownstreamResult result;
    result.backbone_checksum_before = model.backbone().checksum();
    HeadParams heads = init_heads(head_config_from(cfg, model.vit_config(), task), derive_seed(seed, 0x4eadULL));

    std::optional<TapCache> cache;
    if (model.kind() == AdapterKind::none) {
        std::vector<std::size_t> all(train_idx);
        all.insert(all.end(), val_idx.begin(), val_idx.end());
        cache = build_cache(model, data, all);
    }
    const TapCache* cache_ptr = cache ? &*cache : nullptr;

    std::vector<Tensor*> params;
    for (auto& [name, t] : model.trainable()) params.push_back(t);
    for (auto& [name, t] : heads.named_mut()) params.push_back(t);
    AdamW opt(params, adamw_config(cfg));

    auto emit = [&](TraceRow row) {
        if (on_row) on_row(row);
        result.trace.push_back(std::move(row));
    };
    auto validate = [&](std::size_t epoch) {
        double metric = 0.0, loss = 0.0;
        if (task == Task::seg) {
            SegEval e = eval_seg(model, heads, data, val_idx, cfg, cache_ptr);
            metric = e.report.dice.mean;
            loss = e.loss;
        } else {
            ClsEval e = eval_cls(model, heads, data, val_idx, cfg, cache_ptr);
            metric = e.report.auc;
            loss = e.loss;
        }
        emit({epoch, "val", loss, metric});
        if (epoch == 0 || metric > result.best_metric) {
            result.best_metric = metric;
            result.best_epoch = epoch;
            result.heads = heads;
            result.adapter_state = model_checkpoint(model);
        }
    };

    validate(0);
    std::uint64_t step = 0;
    std::vector<Tensor> zero_grads;
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        const double lr = cosine_lr(epoch - 1, epochs, cfg.base_lr, cfg.lr_floor);
        std::vector<std::size_t> order(train_idx);
        Rng shuffle_rng(derive_seed(seed, 0x50000ULL + epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::vector<double> dice, scores;
        std::vector<int> labels;
        for (const auto& batch : batches(order, cfg.batch_size)) {
            Graph g(derive_seed(seed, 0xd0000000ULL + step++));
            Var f_agg = aggregate(tap_vars(g, model, data, batch, true, cache_ptr), heads);
            Var loss;
            if (task == Task::seg) {
                Var logits = seg_forward(f_agg, heads);
                loss = dice_ce_loss(logits, stack_masks(data, batch), dice_weights(cfg));
                for (std::size_t i = 0; i < batch.size(); ++i)
                    dice.push_back(seg_metrics(predicted_mask(logits.value(), i), data[batch[i]].mask).dice);
            } else {
                Var logits = cls_forward(f_agg, heads, true);
                loss = focal_loss(logits, batch_labels(data, batch), focal_params(cfg));
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    scores.push_back(positive_probability(logits.value(), i));
                    labels.push_back(static_cast<int>(data[batch[i]].label));
                }
            }
            loss_sum += loss.value().item() * static_cast<double>(batch.size());
            Gradients grads = g.backward(loss);
            opt.step(collect_grads(grads, params, zero_grads), lr);
            for (Tensor* p : params) p->round_to_f32();
        }
        const double train_metric =
            task == Task::seg ? summarize(dice).mean : cls_metrics(scores, labels).auc;
        emit({epoch, "train", loss_sum / static_cast<double>(train_idx.size()), train_metric});
        validate(epoch);
    }

    load_model_state(model, result.adapter_state);
    result.backbone_checksum_after = model.backbone().checksum();
    return result;
}

EmbeddingHead init_embedding_head(std::size_t width, std::size_t embed_dim, std::uint64_t seed) {
    Rng rng(seed);
    EmbeddingHead h{truncated_normal_tensor({width, embed_dim}, 1.0 / std::sqrt(static_cast<double>(width)), rng)};
    h.projection.round_to_f32();
    return h;
}

Var image_embedding(Graph& g, const AdaptedModel& model, const EmbeddingHead& head, const Tensor& images, bool training) {
    TapVars tv = model.forward(g, images, training);
    const ViTWeights& w = model.backbone();
    Var normed = ops::add_lastdim(ops::mul_lastdim(ops::layer_norm(tv.final), g.param(w.final_scale, false)),
                                  g.param(w.final_shift, false));
    return ops::l2_normalize_rows(ops::matmul(ops::token_mean(normed), g.param(head.projection)));
}

Tensor image_embedding(const AdaptedModel& model, const EmbeddingHead& head, const Tensor& images) {
    Graph g;
    return image_embedding(g, model, head, images, false).value();
}

namespace {

Tensor stack_rows(const std::vector<Tensor>& rows, const std::vector<std::size_t>& idx) {
    const std::size_t d = rows[idx[0]].numel();
    Tensor out(Shape{idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(rows[idx[i]].data().begin(), rows[idx[i]].data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    return out;
}

}  // namespace

FinetuneResult run_finetune(AdaptedModel& model, EmbeddingHead& head, const TextEncoder& text,
                            const std::vector<PhantomSample>& corpus, const std::vector<std::size_t>& train_idx,
                            const std::vector<std::size_t>& val_idx, const TrainConfig& cfg, std::uint64_t seed,
                            std::size_t epochs, const std::function<void(const TraceRow&)>& on_row) {
    cfg.validate();
    if (cfg.loss != "auto" && cfg.loss != "info_nce") throw ConfigError("fine-tuning trains with info_nce, not " + cfg.loss);
    if (corpus.empty() || train_idx.empty()) throw InputError("run_finetune: empty corpus");
    if (head.projection.dim(1) != text.config().width)
        throw ConfigError("run_finetune: projection width differs from the text embedding width");

    FinetuneResult result;
    result.backbone_checksum_before = model.backbone().checksum();
    std::vector<Tensor> captions(corpus.size());
    std::vector<std::size_t> all(train_idx);
    all.insert(all.end(), val_idx.begin(), val_idx.end());
    for (std::size_t i : all) captions[i] = text.encode(corpus[i].caption);

    std::vector<Tensor*> params;
    for (auto& [name, t] : model.trainable()) params.push_back(t);
    params.push_back(&head.projection);
    AdamW opt(params, adamw_config(cfg));

    auto emit = [&](TraceRow row) {
        if (on_row) on_row(row);
        result.trace.push_back(std::move(row));
    };
    auto validate = [&](std::size_t epoch) {
        if (val_idx.empty()) return;
        std::vector<Tensor> emb(corpus.size());
        double loss = 0.0;
        for (const auto& batch : batches(val_idx, cfg.batch_size)) {
            Graph g;
            Var img = image_embedding(g, model, head, stack_images(corpus, batch), false);
            loss += info_nce(img, g.input(stack_rows(captions, batch)), cfg.tau).value().item() * batch.size();
            const std::size_t d = img.dim(1);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                Tensor row(Shape{d});
                std::copy(img.value().data().begin() + static_cast<std::ptrdiff_t>(i * d),
                          img.value().data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d), row.data().begin());
                emb[batch[i]] = std::move(row);
            }
        }
        // Top-1 retrieval over the validation captions.
        std::size_t hits = 0;
        for (std::size_t i : val_idx) {
            std::size_t best = val_idx[0];
            double best_sim = -std::numeric_limits<double>::infinity();
            for (std::size_t j : val_idx) {
                double s = 0.0;
                for (std::size_t k = 0; k < emb[i].numel(); ++k) s += emb[i][k] * captions[j][k];
                if (s > best_sim) {
                    best_sim = s;
                    best = j;
                }
            }
            hits += corpus[best].caption == corpus[i].caption;
        }
        emit({epoch, "val", loss / static_cast<double>(val_idx.size()),
              100.0 * static_cast<double>(hits) / static_cast<double>(val_idx.size())});
    };

    validate(0);
    std::uint64_t step = 0;
    std::vector<Tensor> zero_grads;
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        const double lr = cosine_lr(epoch - 1, epochs, cfg.base_lr, cfg.lr_floor);
        std::vector<std::size_t> order(train_idx);
        Rng shuffle_rng(derive_seed(seed, 0x50000ULL + epoch));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (const auto& batch : batches(order, cfg.batch_size)) {
            Graph g(derive_seed(seed, 0xf0000000ULL + step++));
            Var img = image_embedding(g, model, head, stack_images(corpus, batch), true);
            Var loss = info_nce(img, g.input(stack_rows(captions, batch)), cfg.tau);
            loss_sum += loss.value().item() * static_cast<double>(batch.size());
            Gradients grads = g.backward(loss);
            opt.step(collect_grads(grads, params, zero_grads), lr);
            for (Tensor* p : params) p->round_to_f32();
        }
        emit({epoch, "train", loss_sum / static_cast<double>(train_idx.size()), 0.0});
        validate(epoch);
    }
    result.backbone_checksum_after = model.backbone().checksum();
    return result;
}

}  // namespace htune
