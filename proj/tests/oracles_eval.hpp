#pragma once

// Brute-force references for the evaluation metrics and the t distribution.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "htune/tensor.hpp"

namespace oracle {

struct SegTruth {
    double dice, iou, hd95, asd;
};

inline std::vector<std::pair<long, long>> boundary(const htune::Tensor& m) {
    const long H = static_cast<long>(m.dim(0)), W = static_cast<long>(m.dim(1));
    auto fg = [&](long y, long x) { return y >= 0 && x >= 0 && y < H && x < W && m[y * W + x] != 0.0; };
    std::vector<std::pair<long, long>> out;
    for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x)
            if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) out.emplace_back(y, x);
    return out;
}

inline double interp_percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Exhaustive pairwise boundary distances; both-empty and one-empty follow
// the documented conventions.
inline SegTruth seg_truth(const htune::Tensor& p, const htune::Tensor& g) {
    double np = 0, ng = 0, inter = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        np += p[i] != 0.0;
        ng += g[i] != 0.0;
        inter += p[i] != 0.0 && g[i] != 0.0;
    }
    const double diag = std::hypot(static_cast<double>(p.dim(0)), static_cast<double>(p.dim(1)));
    if (np == 0 && ng == 0) return {100, 100, 0, 0};
    if (np == 0 || ng == 0) return {0, 0, diag, diag};
    const auto bp = boundary(p), bg = boundary(g);
    std::vector<double> d;
    auto directed = [&](const auto& from, const auto& to) {
        for (auto [y, x] : from) {
            double best = std::numeric_limits<double>::infinity();
            for (auto [yy, xx] : to) best = std::min(best, std::hypot(double(y - yy), double(x - xx)));
            d.push_back(best);
        }
    };
    directed(bp, bg);
    directed(bg, bp);
    double sum = 0.0;
    for (double v : d) sum += v;
    return {200.0 * inter / (np + ng), 100.0 * inter / (np + ng - inter), interp_percentile(d, 95.0),
            sum / static_cast<double>(d.size())};
}

// Fraction of (positive, negative) pairs ranked correctly, ties one half.
inline double auc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
    double good = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1.0;
                good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return good / pairs;
}

// Two-sided Student t tail by the finite trigonometric series for integer
// degrees of freedom.
inline double t_two_sided(double t, int df) {
    const double theta = std::atan(std::abs(t) / std::sqrt(static_cast<double>(df)));
    const double s = std::sin(theta), c = std::cos(theta);
    double a;
    if (df % 2 == 0) {
        double term = 1.0, sum = 1.0;
        for (int k = 2; k <= df - 2; k += 2) {
            term *= c * c * static_cast<double>(k - 1) / static_cast<double>(k);
            sum += term;
        }
        a = s * sum;
    } else {
        double sum = 0.0;
        if (df > 1) {
            double term = 1.0;
            sum = 1.0;
            for (int k = 3; k <= df - 2; k += 2) {
                term *= c * c * static_cast<double>(k - 1) / static_cast<double>(k);
                sum += term;
            }
            sum *= s * c;
        }
        a = 2.0 / std::numbers::pi * (theta + sum);
    }
    return 1.0 - a;
}

}  // namespace oracle
