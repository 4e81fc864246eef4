#pragma once

// Small-image phantoms and a matching config so training smoke tests run in
// seconds.

#include <algorithm>
#include <vector>

#include "htune/config.hpp"
#include "htune/cross_domain.hpp"
#include "htune/phantom.hpp"
#include "htune/rng.hpp"

namespace fixture {

inline htune::TrainConfig small_config() {
    htune::TrainConfig c;
    c.image_size = 64;
    c.patch_size = 8;
    c.width = 32;
    c.heads = 2;
    c.depth = 4;
    c.bottleneck = 8;
    c.squeeze = 4;
    c.reduced = 16;
    c.cls_hidden = 16;
    c.embed_dim = 64;
    c.batch_size = 4;
    c.base_lr = 3e-3;
    return c;
}

inline std::vector<htune::PhantomSample> small_phantoms(std::size_t count, std::uint64_t seed,
                                                        htune::Domain domain = htune::Domain::a) {
    std::vector<htune::PhantomSample> out;
    for (std::size_t i = 0; i < count; ++i) {
        htune::Rng rng(htune::derive_seed(seed, i));
        htune::PhantomSpec s = htune::domain_preset(domain);
        s.image_size = 64;
        auto& l = s.lesion;
        const bool malignant = i % 2 == 1;
        l.b = rng.uniform(7.0, 10.0);
        l.a = l.b * (malignant ? rng.uniform(1.0, 1.2) : rng.uniform(1.5, 2.0));
        l.intensity = malignant ? -0.32 : -0.24;
        l.rotation = rng.uniform(-0.4, 0.4);
        l.phase = rng.uniform(0.0, 6.0);
        l.cx = rng.uniform(22.0, 42.0);
        l.cy = rng.uniform(22.0, 42.0);
        out.push_back(htune::gen_phantom(s, htune::derive_seed(seed, 1000 + i)));
    }
    return out;
}

inline std::vector<std::size_t> iota(std::size_t from, std::size_t to) {
    std::vector<std::size_t> out;
    for (std::size_t i = from; i < to; ++i) out.push_back(i);
    return out;
}

// A cheap stand-in learner: threshold on mean lesion-region darkness fitted
// on the source training split. Scores accuracy and mean mask coverage.
inline double lesion_contrast(const htune::PhantomSample& s) {
    double in = 0.0, out = 0.0, n_in = 0.0;
    for (std::size_t i = 0; i < s.image.numel(); ++i) {
        (s.mask[i] > 0.0 ? in : out) += s.image[i];
        n_in += s.mask[i] > 0.0;
    }
    const double n_out = static_cast<double>(s.image.numel()) - n_in;
    return out / n_out - in / n_in;
}

inline htune::Method threshold_method() {
    return [](const htune::DomainSplit& source) -> htune::Evaluator {
        double mal = 0.0, ben = 0.0, nm = 0.0, nb = 0.0;
        for (std::size_t i : source.train) {
            const bool m = source.data[i].label == htune::Label::malignant;
            (m ? mal : ben) += lesion_contrast(source.data[i]);
            (m ? nm : nb) += 1.0;
        }
        const double cut = 0.5 * (mal / std::max(nm, 1.0) + ben / std::max(nb, 1.0));
        return [cut](const htune::DomainSplit& target) {
            double hits = 0.0, cover = 0.0;
            for (std::size_t i : target.test) {
                const bool pred = lesion_contrast(target.data[i]) > cut;
                hits += pred == (target.data[i].label == htune::Label::malignant);
                cover += target.data[i].mask.sum() / static_cast<double>(target.data[i].mask.numel());
            }
            const double n = static_cast<double>(target.test.size());
            return htune::MetricMap{{"acc", 100.0 * hits / n}, {"coverage", 100.0 * cover / n}};
        };
    };
}

}  // namespace fixture
