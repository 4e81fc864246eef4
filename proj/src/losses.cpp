#include "htune/losses.hpp"

#include <algorithm>
#include <cmath>

#include "htune/errors.hpp"

namespace htune {

namespace {

void require_finite(const char* op, const Tensor& t) {
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

// Row-wise softmax of an R x C matrix stored contiguously with a stride
// between class entries (stride = pixels for B x C x H x W layouts).
void softmax_strided(const double* z, double* p, std::size_t classes, std::size_t stride) {
    double mx = z[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[c * stride]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        p[c * stride] = std::exp(z[c * stride] - mx);
        s += p[c * stride];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c * stride] /= s;
}

}  // namespace

Var dice_ce_loss(Var logits, const Tensor& mask, const DiceCeWeights& w) {
    const Tensor& z = logits.value();
    if (z.rank() != 4) throw DimensionError("dice_ce_loss: logits must be B x C x H x W, got " + shape_str(z.shape()));
    const std::size_t B = z.dim(0), C = z.dim(1), H = z.dim(2), W = z.dim(3), HW = H * W;
    if (C < 2) throw ConfigError("dice_ce_loss: need at least 2 classes");
    if (mask.shape() != Shape{B, H, W})
        throw DimensionError("dice_ce_loss: mask " + shape_str(mask.shape()) + " does not match logits " + shape_str(z.shape()));
    require_finite("dice_ce_loss", z);

    std::vector<std::size_t> label(B * HW);
    for (std::size_t i = 0; i < label.size(); ++i) {
        const double v = mask[i];
        if (!(v >= 0.0) || v >= static_cast<double>(C) || v != std::floor(v))
            throw InputError("dice_ce_loss: mask value " + std::to_string(v) + " is not a class id in [0, " + std::to_string(C) + ")");
        label[i] = static_cast<std::size_t>(v);
    }

    Tensor prob(z.shape());
    double ce = 0.0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t px = 0; px < HW; ++px) {
            const std::size_t base = b * C * HW + px;
            softmax_strided(z.ptr() + base, prob.ptr() + base, C, HW);
            ce -= std::log(std::max(prob[base + label[b * HW + px] * HW], 1e-300));
        }
    ce /= static_cast<double>(B * HW);

    // Per (sample, foreground class): intersection, prediction mass, target mass.
    const std::size_t K = B * (C - 1);
    std::vector<double> inter(K, 0.0), psum(K, 0.0), gsum(K, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 1; c < C; ++c) {
            const std::size_t k = b * (C - 1) + c - 1;
            const double* p = prob.ptr() + (b * C + c) * HW;
            for (std::size_t px = 0; px < HW; ++px) {
                const double g = label[b * HW + px] == c ? 1.0 : 0.0;
                inter[k] += p[px] * g;
                psum[k] += p[px];
                gsum[k] += g;
            }
        }
    double dice = 0.0;
    for (std::size_t k = 0; k < K; ++k) dice += (2.0 * inter[k] + w.smooth) / (psum[k] + gsum[k] + w.smooth);
    const double dice_loss = 1.0 - dice / static_cast<double>(K);

    Tensor out = Tensor::scalar(w.dice * dice_loss + w.ce * ce);
    return logits.graph().record(
        "dice_ce_loss", {logits}, std::move(out),
        [prob = std::move(prob), label = std::move(label), inter = std::move(inter), psum = std::move(psum),
         gsum = std::move(gsum), w, B, C, HW, K](const Tensor& g, std::span<Tensor* const> gi) {
            const double seed = g[0];
            double* dz = gi[0]->ptr();
            std::vector<double> dp(C);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t px = 0; px < HW; ++px) {
                    const std::size_t base = b * C * HW + px;
                    const std::size_t y = label[b * HW + px];
                    // dL/dp for the Dice part; CE is handled in logit space below.
                    dp[0] = 0.0;
                    for (std::size_t c = 1; c < C; ++c) {
                        const std::size_t k = b * (C - 1) + c - 1;
                        const double den = psum[k] + gsum[k] + w.smooth;
                        const double num = 2.0 * inter[k] + w.smooth;
                        const double gt = y == c ? 1.0 : 0.0;
                        dp[c] = -w.dice / static_cast<double>(K) * (2.0 * gt * den - num) / (den * den);
                    }
                    double dot = 0.0;
                    for (std::size_t c = 0; c < C; ++c) dot += prob[base + c * HW] * dp[c];
                    const double ce_scale = w.ce / static_cast<double>(B * HW);
                    for (std::size_t c = 0; c < C; ++c) {
                        const double p = prob[base + c * HW];
                        const double d = p * (dp[c] - dot) + ce_scale * (p - (c == y ? 1.0 : 0.0));
                        dz[base + c * HW] += seed * d;
                    }
                }
        });
}

Var focal_loss(Var logits, const std::vector<std::size_t>& labels, const FocalParams& fp) {
    const Tensor& z = logits.value();
    if (z.rank() != 2) throw DimensionError("focal_loss: logits must be B x C, got " + shape_str(z.shape()));
    const std::size_t B = z.dim(0), C = z.dim(1);
    if (labels.size() != B) throw DimensionError("focal_loss: " + std::to_string(labels.size()) + " labels for batch " + std::to_string(B));
    if (fp.gamma < 0.0) throw ConfigError("focal_loss: gamma must be non-negative");
    require_finite("focal_loss", z);
    for (std::size_t y : labels)
        if (y >= C) throw InputError("focal_loss: label " + std::to_string(y) + " out of range for " + std::to_string(C) + " classes");

    Tensor prob(z.shape());
    std::vector<double> logp(B);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* row = z.ptr() + b * C;
        softmax_strided(row, prob.ptr() + b * C, C, 1);
        const double mx = *std::max_element(row, row + C);
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
        logp[b] = row[labels[b]] - mx - std::log(s);
        const double pt = std::exp(logp[b]);
        const double at = labels[b] == 1 ? fp.alpha : 1.0 - fp.alpha;
        total += -at * std::pow(1.0 - pt, fp.gamma) * logp[b];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(B));
    return logits.graph().record(
        "focal_loss", {logits}, std::move(out),
        [prob = std::move(prob), logp = std::move(logp), labels, fp, B, C](const Tensor& g, std::span<Tensor* const> gi) {
            double* dz = gi[0]->ptr();
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t y = labels[b];
                const double pt = std::exp(logp[b]);
                const double q = 1.0 - pt;
                const double at = y == 1 ? fp.alpha : 1.0 - fp.alpha;
                // d/dp_t of -a (1-p)^g ln p, multiplied by p_t.
                double mod_term = 0.0;
                if (fp.gamma != 0.0 && q > 0.0) mod_term = fp.gamma * std::pow(q, fp.gamma - 1.0) * logp[b] * pt;
                const double d = -at * (-mod_term + std::pow(q, fp.gamma)) * g[0] / static_cast<double>(B);
                for (std::size_t c = 0; c < C; ++c) {
                    const double p = prob[b * C + c];
                    dz[b * C + c] += d * ((c == y ? 1.0 : 0.0) - p);
                }
            }
        });
}

Var info_nce(Var img, Var txt, double tau) {
    if (img.value().rank() != 2 || img.shape() != txt.shape())
        throw DimensionError("info_nce: embeddings " + shape_str(img.shape()) + " and " + shape_str(txt.shape()) + " must be equal B x D matrices");
    if (!(tau > 0.0)) throw ConfigError("info_nce: temperature must be positive");
    const std::size_t B = img.dim(0), D = img.dim(1);
    if (B == 0) throw InputError("info_nce: empty batch");
    require_finite("info_nce", img.value());
    require_finite("info_nce", txt.value());
    const double* x = img.value().ptr();
    const double* t = txt.value().ptr();

    std::vector<double> s(B * B);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < B; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < D; ++k) acc += x[i * D + k] * t[j * D + k];
            s[i * B + j] = acc / tau;
        }
    // Row softmax (image -> text) and column softmax (text -> image).
    std::vector<double> pr(B * B), pc(B * B);
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        double mx = s[i * B];
        for (std::size_t j = 1; j < B; ++j) mx = std::max(mx, s[i * B + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < B; ++j) z += std::exp(s[i * B + j] - mx);
        for (std::size_t j = 0; j < B; ++j) pr[i * B + j] = std::exp(s[i * B + j] - mx) / z;
        loss -= s[i * B + i] - mx - std::log(z);
    }
    for (std::size_t j = 0; j < B; ++j) {
        double mx = s[j];
        for (std::size_t i = 1; i < B; ++i) mx = std::max(mx, s[i * B + j]);
        double z = 0.0;
        for (std::size_t i = 0; i < B; ++i) z += std::exp(s[i * B + j] - mx);
        for (std::size_t i = 0; i < B; ++i) pc[i * B + j] = std::exp(s[i * B + j] - mx) / z;
        loss -= s[j * B + j] - mx - std::log(z);
    }
    Tensor out = Tensor::scalar(loss / (2.0 * static_cast<double>(B)));
    return img.graph().record(
        "info_nce", {img, txt}, std::move(out),
        [img, txt, pr = std::move(pr), pc = std::move(pc), B, D, tau](const Tensor& g, std::span<Tensor* const> gi) {
            std::vector<double> ds(B * B);
            const double c = g[0] / (2.0 * static_cast<double>(B) * tau);
            for (std::size_t i = 0; i < B; ++i)
                for (std::size_t j = 0; j < B; ++j)
                    ds[i * B + j] = c * (pr[i * B + j] + pc[i * B + j] - (i == j ? 2.0 : 0.0));
            const double* x = img.value().ptr();
            const double* t = txt.value().ptr();
            if (gi[0])
                for (std::size_t i = 0; i < B; ++i)
                    for (std::size_t j = 0; j < B; ++j)
                        for (std::size_t k = 0; k < D; ++k) gi[0]->ptr()[i * D + k] += ds[i * B + j] * t[j * D + k];
            if (gi[1])
                for (std::size_t i = 0; i < B; ++i)
                    for (std::size_t j = 0; j < B; ++j)
                        for (std::size_t k = 0; k < D; ++k) gi[1]->ptr()[j * D + k] += ds[i * B + j] * x[i * D + k];
        });
}

}  // namespace htune
