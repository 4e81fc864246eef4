#include "htune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "htune/errors.hpp"

namespace htune {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One-dimensional lower envelope of parabolas (Felzenszwalb & Huttenlocher).
void edt_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
    std::size_t k = 0;
    std::size_t first = n;
    for (std::size_t q = 0; q < n; ++q)
        if (f[q] < kInf) {
            first = q;
            break;
        }
    if (first == n) {
        std::fill(d, d + n, kInf);
        return;
    }
    v[0] = first;
    z[0] = -kInf;
    z[1] = kInf;
    for (std::size_t q = first + 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        const auto fq = static_cast<double>(q);
        double s = 0.0;
        while (true) {
            const auto vk = static_cast<double>(v[k]);
            s = ((f[q] + fq * fq) - (f[v[k]] + vk * vk)) / (2.0 * fq - 2.0 * vk);
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {
            // k == 0 and the new parabola dominates everywhere.
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const auto fq = static_cast<double>(q);
        while (z[k + 1] < fq) ++k;
        const auto vk = static_cast<double>(v[k]);
        d[q] = (fq - vk) * (fq - vk) + f[v[k]];
    }
}

std::vector<char> to_binary(const Tensor& m) {
    std::vector<char> out(m.numel());
    for (std::size_t i = 0; i < m.numel(); ++i) out[i] = m[i] != 0.0;
    return out;
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<char>& sites, std::size_t h, std::size_t w) {
    const std::size_t n = std::max(h, w);
    std::vector<std::size_t> v(n);
    std::vector<double> z(n + 1), f(n), d(n);
    std::vector<double> out(h * w);
    for (std::size_t i = 0; i < h * w; ++i) out[i] = sites[i] ? 0.0 : kInf;
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) f[y] = out[y * w + x];
        edt_1d(f.data(), d.data(), h, v, z);
        for (std::size_t y = 0; y < h; ++y) out[y * w + x] = d[y];
    }
    for (std::size_t y = 0; y < h; ++y) {
        edt_1d(out.data() + y * w, d.data(), w, v, z);
        std::copy(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(w), out.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> boundary_pixels(const Tensor& mask) {
    if (mask.rank() != 2) throw DimensionError("boundary_pixels: expected H x W mask, got " + shape_str(mask.shape()));
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    auto on = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) return false;
        return mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] != 0.0;
    };
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
            if (on(yy, xx) && !(on(yy - 1, xx) && on(yy + 1, xx) && on(yy, xx - 1) && on(yy, xx + 1)))
                out.emplace_back(y, x);
        }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InputError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SegEntry seg_metrics(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape() || pred.rank() != 2)
        throw DimensionError("seg_metrics: pred " + shape_str(pred.shape()) + " vs gt " + shape_str(gt.shape()));
    const std::size_t h = pred.dim(0), w = pred.dim(1);
    const auto p = to_binary(pred), g = to_binary(gt);
    std::size_t np = 0, ng = 0, inter = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        np += p[i];
        ng += g[i];
        inter += p[i] && g[i];
    }
    SegEntry e;
    if (np == 0 && ng == 0) {
        e.dice = e.iou = 100.0;
        return e;
    }
    if (np == 0 || ng == 0) {
        e.one_empty = true;
        e.hd95 = e.asd = std::hypot(static_cast<double>(h), static_cast<double>(w));
        return e;
    }
    e.dice = 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
    e.iou = 100.0 * static_cast<double>(inter) / static_cast<double>(np + ng - inter);

    const auto bp = boundary_pixels(pred), bg = boundary_pixels(gt);
    std::vector<char> sp(h * w, 0), sg(h * w, 0);
    for (auto [y, x] : bp) sp[y * w + x] = 1;
    for (auto [y, x] : bg) sg[y * w + x] = 1;
    const auto dp = squared_distance_transform(sp, h, w);
    const auto dg = squared_distance_transform(sg, h, w);
    std::vector<double> dists;
    dists.reserve(bp.size() + bg.size());
    for (auto [y, x] : bp) dists.push_back(std::sqrt(dg[y * w + x]));
    for (auto [y, x] : bg) dists.push_back(std::sqrt(dp[y * w + x]));
    e.hd95 = percentile(dists, 95.0);
    e.asd = std::accumulate(dists.begin(), dists.end(), 0.0) / static_cast<double>(dists.size());
    return e;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.n = values.size();
    if (s.n == 0) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

std::string format_pm(const Summary& s, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, s.mean, decimals, s.std);
    return buf;
}

SegReport summarize_seg(std::vector<SegEntry> entries) {
    SegReport r;
    std::vector<double> d, i, h, a;
    for (const auto& e : entries) {
        d.push_back(e.dice);
        i.push_back(e.iou);
        h.push_back(e.hd95);
        a.push_back(e.asd);
        r.flagged += e.one_empty;
    }
    r.dice = summarize(d);
    r.iou = summarize(i);
    r.hd95 = summarize(h);
    r.asd = summarize(a);
    r.samples = std::move(entries);
    return r;
}

double auc_rank(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == 1) {
            pos += 1.0;
            rank_sum += rank[i];
        }
    const double neg = static_cast<double>(n) - pos;
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

ClsReport cls_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty()) throw InputError("cls_metrics: no samples");
    if (scores.size() != labels.size()) throw DimensionError("cls_metrics: scores and labels differ in length");
    ClsReport r;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw InputError("cls_metrics: label " + std::to_string(labels[i]) + " is not 0 or 1");
        if (!std::isfinite(scores[i])) throw NumericError("cls_metrics: non-finite score");
        const bool predicted = scores[i] >= 0.5;
        if (labels[i] == 1) (predicted ? r.tp : r.fn)++;
        else (predicted ? r.fp : r.tn)++;
    }
    const auto n = static_cast<double>(scores.size());
    r.acc = 100.0 * static_cast<double>(r.tp + r.tn) / n;
    r.recall_undefined = r.tp + r.fn == 0;
    r.precision_undefined = r.tp + r.fp == 0;
    const double rec = r.recall_undefined ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
    const double pre = r.precision_undefined ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
    r.rec = 100.0 * rec;
    r.pre = 100.0 * pre;
    r.f1 = pre + rec > 0.0 ? 100.0 * 2.0 * pre * rec / (pre + rec) : 0.0;
    const bool both = r.tp + r.fn > 0 && r.tn + r.fp > 0;
    r.auc_undefined = !both;
    r.auc = both ? 100.0 * auc_rank(scores, labels) : 50.0;
    return r;
}

}  // namespace htune
