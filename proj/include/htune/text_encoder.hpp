#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "htune/backbone.hpp"

namespace htune {

inline constexpr std::size_t kTextVocab = 1024;

/// Lowercases, splits on non-alphanumerics and maps every token to
/// FNV-1a-64(token) mod vocab.
std::vector<std::uint32_t> tokenize(std::string_view caption, std::size_t vocab = kTextVocab);

/// Frozen two-block transformer over hashed tokens; a deliberately crude
/// stand-in for a pretrained text tower.
class TextEncoder {
public:
    struct Config {
        std::size_t vocab = kTextVocab;
        std::size_t width = 64;
        std::size_t heads = 4;
        std::size_t depth = 2;
        std::size_t mlp_ratio = 4;
        std::size_t max_tokens = 77;
    };

    TextEncoder(Config config, std::uint64_t vocab_seed);

    /// Mean-pooled, unit-norm embedding of length width. Throws InputError on
    /// a caption that is empty after whitespace stripping.
    Tensor encode(std::string_view caption) const;
    /// Rows are encode() of each caption.
    Tensor encode_batch(const std::vector<std::string>& captions) const;

    const Config& config() const noexcept { return config_; }
    std::uint64_t checksum() const;

private:
    Config config_;
    Tensor token_embed_;  // vocab x width
    Tensor pos_embed_;    // max_tokens x width
    std::vector<BlockWeights> blocks_;
    Tensor final_scale_, final_shift_;
};

}  // namespace htune
