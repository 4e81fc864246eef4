#include "htune/text_encoder.hpp"

#include <cctype>

#include "htune/errors.hpp"
#include "htune/ops.hpp"
#include "htune/rng.hpp"

namespace htune {

std::vector<std::uint32_t> tokenize(std::string_view caption, std::size_t vocab) {
    std::vector<std::uint32_t> ids;
    std::uint64_t h = 0;
    bool in_token = false;
    auto flush = [&] {
        if (in_token) ids.push_back(static_cast<std::uint32_t>(h % vocab));
        in_token = false;
    };
    for (char ch : caption) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            if (!in_token) {
                h = 1469598103934665603ull;
                in_token = true;
            }
            h ^= static_cast<std::uint64_t>(std::tolower(c));
            h *= 1099511628211ull;
        } else {
            flush();
        }
    }
    flush();
    return ids;
}

TextEncoder::TextEncoder(Config config, std::uint64_t vocab_seed) : config_(config) {
    ViTConfig shape;
    shape.image_size = 16;
    shape.patch_size = 16;
    shape.depth = config.depth;
    shape.width = config.width;
    shape.heads = config.heads;
    shape.mlp_ratio = config.mlp_ratio;
    shape.validate();
    ViTWeights tower = init_backbone(shape, derive_seed(vocab_seed, 1));
    blocks_ = std::move(tower.blocks);
    final_scale_ = std::move(tower.final_scale);
    final_shift_ = std::move(tower.final_shift);

    Rng rng(derive_seed(vocab_seed, 2));
    token_embed_ = truncated_normal_tensor({config.vocab, config.width}, 0.02, rng);
    pos_embed_ = truncated_normal_tensor({config.max_tokens, config.width}, 0.01, rng);
    token_embed_.round_to_f32();
    pos_embed_.round_to_f32();
}

Tensor TextEncoder::encode(std::string_view caption) const {
    auto ids = tokenize(caption, config_.vocab);
    if (ids.empty()) throw InputError("text_encode: caption is empty after stripping");
    if (ids.size() > config_.max_tokens) ids.resize(config_.max_tokens);

    const std::size_t n = ids.size(), d = config_.width;
    Tensor x(Shape{1, n, d});
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < d; ++i) x[t * d + i] = token_embed_[ids[t] * d + i] + pos_embed_[t * d + i];

    Graph g;
    Var h = g.input(std::move(x));
    for (std::size_t b = 0; b < blocks_.size(); ++b) h = transformer_block(h, blocks_[b], config_.heads, b);
    h = ops::add_lastdim(ops::mul_lastdim(ops::layer_norm(h), g.param(final_scale_, false)), g.param(final_shift_, false));
    Var pooled = ops::l2_normalize_rows(ops::token_mean(h));
    return pooled.value().reshaped({d});
}

Tensor TextEncoder::encode_batch(const std::vector<std::string>& captions) const {
    if (captions.empty()) throw InputError("text_encode: empty caption batch");
    Tensor out(Shape{captions.size(), config_.width});
    for (std::size_t i = 0; i < captions.size(); ++i) {
        Tensor e = encode(captions[i]);
        std::copy(e.data().begin(), e.data().end(), out.data().begin() + i * config_.width);
    }
    return out;
}

std::uint64_t TextEncoder::checksum() const {
    std::uint64_t h = derive_seed(token_embed_.checksum(), pos_embed_.checksum());
    for (const auto& b : blocks_) h = derive_seed(h, b.wq.checksum() ^ b.w_fc1.checksum());
    return h;
}

}  // namespace htune
