#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "htune/config.hpp"
#include "htune/heads.hpp"
#include "htune/metrics.hpp"
#include "htune/model.hpp"
#include "htune/phantom.hpp"
#include "htune/text_encoder.hpp"

namespace htune {

struct TraceRow {
    std::size_t epoch = 0;
    std::string split;  // train | val
    double loss = 0.0;
    double metric = 0.0;
};

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

/// Backbone, adapter and head shapes taken from a TrainConfig.
ViTConfig vit_config_from(const TrainConfig& cfg);
HTConfig ht_config_from(const TrainConfig& cfg);
LoRAConfig lora_config_from(const TrainConfig& cfg);
HeadConfig head_config_from(const TrainConfig& cfg, const ViTConfig& vit, Task task);

/// Frozen backbone built from cfg.backbone_seed.
std::shared_ptr<const ViTWeights> make_backbone(const TrainConfig& cfg);
/// Backbone plus the adapter named by cfg.adapter, initialized from seed.
AdaptedModel make_model(std::shared_ptr<const ViTWeights> backbone, const TrainConfig& cfg, std::uint64_t seed);

/// Stacks sample images into B x 1 x S x S.
Tensor stack_images(const std::vector<PhantomSample>& data, const std::vector<std::size_t>& idx);

/// Trainable adapter state (HT or LoRA) as a checkpoint, and its inverse
/// into a model of the same structure.
Checkpoint model_checkpoint(const AdaptedModel& model);
void load_model_state(AdaptedModel& model, const Checkpoint& ckpt);

struct SegEval {
    SegReport report;
    double loss = 0.0;
};
struct ClsEval {
    ClsReport report;
    double loss = 0.0;
    std::vector<double> scores;  // P(malignant)
};

SegEval evaluate_seg(const AdaptedModel& model, const HeadParams& heads, const std::vector<PhantomSample>& data,
                     const std::vector<std::size_t>& idx, const TrainConfig& cfg);
ClsEval evaluate_cls(const AdaptedModel& model, const HeadParams& heads, const std::vector<PhantomSample>& data,
                     const std::vector<std::size_t>& idx, const TrainConfig& cfg);

struct DownstreamResult {
    HeadParams heads;              // best-validation heads
    Checkpoint adapter_state;      // best-validation adapter tensors
    std::vector<TraceRow> trace;
    double best_metric = 0.0;      // Dice % (seg) or AUC % (cls)
    std::size_t best_epoch = 0;
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
};

/// Trains adapter and heads with AdamW on a per-epoch cosine schedule. The
/// model is left holding its best-validation adapter state. With no
/// adapter, tap features are computed once and reused.
DownstreamResult run_downstream(AdaptedModel& model, const std::vector<PhantomSample>& data,
                                const std::vector<std::size_t>& train_idx, const std::vector<std::size_t>& val_idx,
                                Task task, const TrainConfig& cfg, std::uint64_t seed,
                                std::size_t epochs, const std::function<void(const TraceRow&)>& on_row = {});

/// Learned map from pooled backbone features to the text embedding space.
struct EmbeddingHead {
    Tensor projection;  // D x D_e
};
EmbeddingHead init_embedding_head(std::size_t width, std::size_t embed_dim, std::uint64_t seed);

/// Unit-norm image embeddings, B x D_e: final block tokens -> final norm ->
/// token mean -> projection -> L2 normalize.
Var image_embedding(Graph& g, const AdaptedModel& model, const EmbeddingHead& head, const Tensor& images, bool training);
Tensor image_embedding(const AdaptedModel& model, const EmbeddingHead& head, const Tensor& images);

struct FinetuneResult {
    std::vector<TraceRow> trace;  // metric column holds retrieval accuracy (%)
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
};

/// InfoNCE over (image, caption) pairs; trains adapter and projection only.
FinetuneResult run_finetune(AdaptedModel& model, EmbeddingHead& head, const TextEncoder& text,
                            const std::vector<PhantomSample>& corpus, const std::vector<std::size_t>& train_idx,
                            const std::vector<std::size_t>& val_idx, const TrainConfig& cfg, std::uint64_t seed,
                            std::size_t epochs, const std::function<void(const TraceRow&)>& on_row = {});

}  // namespace htune
