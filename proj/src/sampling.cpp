#include "htune/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "htune/errors.hpp"
#include "htune/rng.hpp"

namespace htune {

void SplitSpec::validate() const {
    if (!(ratios[0] > 0.0)) throw ConfigError("split: train ratio must be positive");
    for (double r : ratios)
        if (!(r >= 0.0)) throw ConfigError("split: ratios must be non-negative");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split: ratios must sum to 1");
}

namespace {

void split_group(std::vector<std::size_t> items, const SplitSpec& spec, std::uint64_t seed, Split& out) {
    Rng rng(seed);
    rng.shuffle(items);
    const auto n = static_cast<double>(items.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * spec.ratios[1] + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * spec.ratios[2] + 1e-9));
    const std::size_t n_train = items.size() - n_val - n_test;
    out.train.insert(out.train.end(), items.begin(), items.begin() + n_train);
    out.val.insert(out.val.end(), items.begin() + n_train, items.begin() + n_train + n_val);
    out.test.insert(out.test.end(), items.begin() + n_train + n_val, items.end());
}

}  // namespace

Split split_dataset(std::size_t count, const SplitSpec& spec, const std::vector<std::size_t>& labels) {
    spec.validate();
    if (count == 0) throw InputError("split_dataset: no items");
    Split out;
    if (!spec.stratify) {
        std::vector<std::size_t> all(count);
        std::iota(all.begin(), all.end(), 0);
        split_group(std::move(all), spec, spec.seed, out);
        return out;
    }
    if (labels.size() != count) throw DimensionError("split_dataset: stratified split needs one label per item");
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < count; ++i) groups[labels[i]].push_back(i);
    for (auto& [label, members] : groups) split_group(std::move(members), spec, derive_seed(spec.seed, label), out);
    return out;
}

std::vector<std::size_t> fewshot_sample(const std::vector<std::size_t>& train, const std::vector<std::size_t>& labels,
                                        double ratio, std::uint64_t seed, std::size_t num_classes) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("fewshot_sample: ratio must lie in (0, 1]");
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t id : train) {
        if (id >= labels.size()) throw InputError("fewshot_sample: item " + std::to_string(id) + " has no label");
        if (labels[id] >= num_classes) throw InputError("fewshot_sample: label out of range");
        by_class[labels[id]].push_back(id);
    }
    std::vector<char> keep(labels.size(), 0);
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& members = by_class[c];
        if (members.empty()) throw SamplingError("fewshot_sample: class " + std::to_string(c) + " has no training items");
        const auto want = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(members.size()))));
        Rng rng(derive_seed(seed, c));
        rng.shuffle(members);
        for (std::size_t i = 0; i < std::min(want, members.size()); ++i) keep[members[i]] = 1;
    }
    std::vector<std::size_t> out;
    for (std::size_t id : train)
        if (keep[id]) out.push_back(id);
    return out;
}

const std::vector<double>& fewshot_ratio_grid() {
    static const std::vector<double> grid{0.01, 0.02, 0.05, 0.10, 0.20, 0.35, 0.50};
    return grid;
}

}  // namespace htune
