#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace htune {

struct SplitSpec {
    std::array<double, 3> ratios{0.8, 0.1, 0.1};  // train, val, test
    std::uint64_t seed = 0;
    bool stratify = false;

    /// Train ratio must be positive, the others non-negative, summing to 1.
    void validate() const;
};

struct Split {
    std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle, then val and test take floor(n * ratio) items each and
/// the remainder goes to train. With stratify, the rule runs per label.
Split split_dataset(std::size_t count, const SplitSpec& spec, const std::vector<std::size_t>& labels = {});

/// From each class among `train`, keep max(1, round(ratio * class_count))
/// items chosen by a seeded shuffle; the result keeps the order of `train`.
/// labels is indexed by item id. A class in [0, num_classes) with no member
/// in `train` is a SamplingError.
std::vector<std::size_t> fewshot_sample(const std::vector<std::size_t>& train, const std::vector<std::size_t>& labels,
                                        double ratio, std::uint64_t seed, std::size_t num_classes);

/// The few-shot ratio grid: 1, 2, 5, 10, 20, 35, 50 percent.
const std::vector<double>& fewshot_ratio_grid();

}  // namespace htune
