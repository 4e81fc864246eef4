#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "htune/tensor.hpp"

namespace htune {

struct SegEntry {
    double dice = 0.0;  // percent
    double iou = 0.0;   // percent
    double hd95 = 0.0;  // pixels
    double asd = 0.0;   // pixels
    bool one_empty = false;  // exactly one mask empty; distances hold the image diagonal
};

/// Binary H x W masks (nonzero = foreground). Boundary pixels are the
/// 4-connected erosion residue, with outside-the-image counted as
/// background. HD95 is the linearly interpolated 95th percentile of the
/// pooled directed distances of both boundaries; ASD is their mean.
SegEntry seg_metrics(const Tensor& pred, const Tensor& gt);

/// Foreground pixels with at least one 4-neighbour outside the mask.
std::vector<std::pair<std::size_t, std::size_t>> boundary_pixels(const Tensor& mask);

/// Exact squared Euclidean distance from every pixel to the nearest
/// nonzero `sites` pixel (infinity when there is none).
std::vector<double> squared_distance_transform(const std::vector<char>& sites, std::size_t h, std::size_t w);

/// Linear-interpolation percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1); 0 for n < 2
    std::size_t n = 0;
};
Summary summarize(const std::vector<double>& values);
/// "mean±std" with the given number of decimals.
std::string format_pm(const Summary& s, int decimals = 2);

struct SegReport {
    std::vector<SegEntry> samples;
    Summary dice, iou, hd95, asd;
    std::size_t flagged = 0;
};
SegReport summarize_seg(std::vector<SegEntry> entries);

struct ClsReport {
    double acc = 0.0, rec = 0.0, pre = 0.0, f1 = 0.0, auc = 0.0;  // percent
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool auc_undefined = false;
};

/// Hard predictions use score >= 0.5. AUC is the rank statistic with ties
/// credited one half; with a single class present it is reported as 50
/// and flagged. Undefined precision or recall is reported as 0 and flagged.
ClsReport cls_metrics(const std::vector<double>& scores, const std::vector<int>& labels);

/// Rank-based AUC in [0, 1].
double auc_rank(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace htune
