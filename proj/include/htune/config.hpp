#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace htune {

/// Training hyper-parameters and model dimensions. Serialized as flat
/// key=value text whose keys are the field names below.
struct TrainConfig {
    std::size_t epochs_finetune = 32;
    std::size_t epochs_downstream = 200;
    double base_lr = 1e-4;
    double lr_floor = 0.0;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    std::size_t batch_size = 32;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::string loss = "auto";  // auto | dice_ce | focal | info_nce
    double tau = 0.07;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double dice_weight = 0.5;
    double ce_weight = 0.5;

    std::string adapter = "ht";  // none | ht | lora
    std::uint64_t backbone_seed = 7;
    std::size_t image_size = 224;
    std::size_t patch_size = 16;
    std::size_t depth = 4;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t bottleneck = 16;
    std::size_t squeeze = 4;
    double dropout = 0.1;
    std::size_t lora_rank = 16;
    double lora_alpha = 16.0;
    std::size_t reduced = 64;
    std::size_t cls_hidden = 256;
    std::size_t embed_dim = 64;

    /// Throws ConfigError on a non-positive constant or repeated seed.
    void validate() const;
};

/// Lines are `key=value`; blank lines and lines starting with '#' are
/// skipped. Unknown keys and malformed values are ConfigErrors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string to_text(const TrainConfig& config);

/// Generic key=value reader shared by the other config-style files.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

}  // namespace htune
