#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "htune/text_encoder.hpp"

namespace htune {

/// Classes in file order, each with its prompt list.
struct PromptBank {
    std::vector<std::pair<std::string, std::vector<std::string>>> classes;

    std::size_t prompt_count() const;
};

/// One prompt per line; `# class: <name>` starts a class. Blank lines are
/// skipped. An empty bank or a class without prompts is a ConfigError.
PromptBank parse_prompt_bank(const std::string& text);
PromptBank load_prompt_bank(const std::filesystem::path& path);
/// Bundled bank by name ("lymph_node" or "breast").
PromptBank bundled_prompt_bank(const std::string& name);

struct ZeroShotResult {
    std::string predicted;
    std::vector<std::pair<std::string, double>> scores;  // bank order
};

/// Argmax over class scores; ties go to the lexicographically first name.
ZeroShotResult argmax_scores(std::vector<std::pair<std::string, double>> scores);

/// Per-class mean over prompts of cosine(img_emb, prompt embedding).
ZeroShotResult zero_shot_classify(const Tensor& img_emb, const PromptBank& bank, const TextEncoder& encoder);

/// Same, with prompt embeddings computed once (rows in bank order).
struct EncodedBank {
    std::vector<std::string> names;
    std::vector<Tensor> embeddings;  // per class: prompts x D, unit rows
};
EncodedBank encode_bank(const PromptBank& bank, const TextEncoder& encoder);
ZeroShotResult zero_shot_classify(const Tensor& img_emb, const EncodedBank& bank);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace htune
