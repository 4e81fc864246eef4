#include "htune/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "htune/errors.hpp"

namespace htune {

std::string to_string(Label label) { return label == Label::benign ? "benign" : "malignant"; }

void PhantomSpec::validate() const {
    if (image_size < 8) throw ConfigError("phantom: image too small");
    if (!(speckle_sigma > 0.0)) throw ConfigError("phantom: speckle sigma must be positive");
    if (artifact_period < 2) throw ConfigError("phantom: artifact period must be at least 2 px");
    if (artifact_amplitude < 0.0) throw ConfigError("phantom: artifact amplitude must be non-negative");
    if (!(lesion.a > 0.0 && lesion.b > 0.0)) throw ConfigError("phantom: lesion semi-axes must be positive");
    if (lesion.irregularity < 0.0) throw ConfigError("phantom: irregularity must be non-negative");
    if (shadow_attenuation < 0.0 || shadow_attenuation > 1.0) throw ConfigError("phantom: shadow attenuation must lie in [0, 1]");
    const double reach = std::max(lesion.a, lesion.b) * (1.0 + lesion.irregularity / std::min(lesion.a, lesion.b));
    const double hi = static_cast<double>(image_size) - 1.0;
    if (lesion.cx - reach < 0.0 || lesion.cx + reach > hi || lesion.cy - reach < 0.0 || lesion.cy + reach > hi)
        throw ConfigError("phantom: lesion ellipse does not fit inside the image");
}

Tensor speckle(std::size_t h, std::size_t w, double sigma, std::uint64_t seed) {
    if (!(sigma > 0.0)) throw ConfigError("speckle: sigma must be positive");
    Rng rng(seed);
    Tensor out(Shape{h, w});
    for (double& v : out.data()) {
        const double re = rng.normal(0.0, sigma);
        const double im = rng.normal(0.0, sigma);
        v = std::hypot(re, im);
        // A zero modulus has probability zero; keep the field strictly positive.
        if (v == 0.0) v = std::numeric_limits<double>::min();
    }
    return out;
}

bool inside_lesion(const LesionSpec& l, double x, double y) {
    const double c = std::cos(l.rotation), s = std::sin(l.rotation);
    const double dx = x - l.cx, dy = y - l.cy;
    const double u = (c * dx + s * dy) / l.a;
    const double v = (-s * dx + c * dy) / l.b;
    const double rho = std::hypot(u, v);
    double limit = 1.0;
    if (l.irregularity > 0.0) {
        const double phi = std::atan2(v, u);
        limit += l.irregularity / std::min(l.a, l.b) * std::sin(static_cast<double>(l.lobes) * phi + l.phase);
    }
    return rho <= limit;
}

Label malignancy_label(const PhantomSpec& spec) {
    const auto& l = spec.lesion;
    const double ratio = std::max(l.a, l.b) / std::min(l.a, l.b);
    const bool irregular = l.irregularity > spec.irregularity_ratio_threshold * std::min(l.a, l.b);
    return irregular || ratio < spec.axis_ratio_threshold ? Label::malignant : Label::benign;
}

std::string caption_for(const PhantomSpec& spec) {
    const auto& l = spec.lesion;
    const Label label = malignancy_label(spec);
    const double ratio = std::max(l.a, l.b) / std::min(l.a, l.b);
    const bool irregular = l.irregularity > spec.irregularity_ratio_threshold * std::min(l.a, l.b);
    std::string out = "ultrasound of a " + to_string(label) + " " + spec.organ;
    out += ratio < spec.axis_ratio_threshold ? " with a round shape" : " with an oval shape";
    out += irregular ? " and irregular, ill-defined margins" : " and circumscribed margins";
    out += l.intensity < -0.28 ? ", markedly hypoechoic" : (l.intensity < 0.0 ? ", hypoechoic" : ", hyperechoic");
    if (spec.shadow) out += ", with posterior acoustic shadowing";
    return out;
}

PhantomSample gen_phantom(const PhantomSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::size_t S = spec.image_size;
    const Tensor field = speckle(S, S, spec.speckle_sigma, seed);
    const auto& l = spec.lesion;

    PhantomSample out;
    out.image = Tensor(Shape{S, S});
    out.mask = Tensor(Shape{S, S});
    // Shadow columns span the lesion's horizontal extent, below its centre.
    const double half_width = std::hypot(l.a * std::cos(l.rotation), l.b * std::sin(l.rotation));
    for (std::size_t y = 0; y < S; ++y) {
        const double fy = static_cast<double>(y);
        const double gain = spec.base_level * (1.0 - spec.depth_falloff * fy / static_cast<double>(S - 1));
        const double band =
            spec.artifact_amplitude * std::sin(2.0 * std::numbers::pi * fy / static_cast<double>(spec.artifact_period));
        for (std::size_t x = 0; x < S; ++x) {
            const double fx = static_cast<double>(x);
            const bool in = inside_lesion(l, fx, fy);
            double v = gain * field[y * S + x] + (in ? l.intensity : 0.0) + band;
            if (spec.shadow && fy > l.cy && std::abs(fx - l.cx) <= half_width) v *= spec.shadow_attenuation;
            out.image[y * S + x] = std::clamp(v, 0.0, 1.0);
            out.mask[y * S + x] = in ? 1.0 : 0.0;
        }
    }
    if (out.mask.sum() == 0.0) throw ConfigError("phantom: lesion covers no pixel centre");
    out.label = malignancy_label(spec);
    out.caption = caption_for(spec);
    out.seed = seed;
    out.spec = spec;
    return out;
}

std::string to_string(Domain d) { return d == Domain::a ? "A" : "B"; }

Domain parse_domain(const std::string& text) {
    if (text == "A" || text == "a") return Domain::a;
    if (text == "B" || text == "b") return Domain::b;
    throw ConfigError("unknown phantom domain '" + text + "' (expected A or B)");
}

PhantomSpec domain_preset(Domain d) {
    PhantomSpec s;
    if (d == Domain::a) {
        s.artifact_period = 8;
        s.artifact_amplitude = 0.3;
        s.speckle_sigma = 0.9;
        s.shadow = false;
        s.organ = "lymph node";
    } else {
        s.artifact_period = 14;
        s.artifact_amplitude = 0.2;
        s.speckle_sigma = 0.6;
        s.base_level = 0.55;
        s.shadow = true;
        s.shadow_attenuation = 0.6;
        s.organ = "breast nodule";
    }
    return s;
}

PhantomSpec sample_spec(Domain d, Rng& rng) {
    PhantomSpec s = domain_preset(d);
    auto& l = s.lesion;
    const bool malignant = rng.below(2) == 1;
    const double minor = rng.uniform(16.0, 28.0);
    double ratio = rng.uniform(1.45, 2.2);
    double irr = rng.uniform(0.0, 0.08) * minor;
    l.intensity = rng.uniform(-0.27, -0.2);
    if (malignant) {
        if (rng.below(2) == 0) {
            ratio = rng.uniform(1.0, 1.2);
        } else {
            irr = rng.uniform(0.22, 0.32) * minor;
        }
        l.intensity = rng.uniform(-0.34, -0.29);
    }
    l.b = minor;
    l.a = minor * ratio;
    l.irregularity = irr;
    l.lobes = 4 + rng.below(5);
    l.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    l.rotation = rng.uniform(-0.5, 0.5);
    const double reach = std::max(l.a, l.b) * (1.0 + irr / std::min(l.a, l.b)) + 1.0;
    const double hi = static_cast<double>(s.image_size) - 1.0 - reach;
    l.cx = rng.uniform(reach, hi);
    l.cy = rng.uniform(reach, hi);
    return s;
}

std::vector<PhantomSample> gen_dataset(Domain d, std::size_t count, std::uint64_t seed) {
    std::vector<PhantomSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, 2 * i));
        PhantomSpec spec = sample_spec(d, rng);
        out.push_back(gen_phantom(spec, derive_seed(seed, 2 * i + 1)));
    }
    return out;
}

}  // namespace htune
