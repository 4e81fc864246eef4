#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "htune/rng.hpp"
#include "htune/tensor.hpp"

namespace htune {

struct LesionSpec {
    double cx = 112.0, cy = 112.0;  // pixel-centre coordinates
    double a = 40.0, b = 25.0;      // semi-axes in px
    double rotation = 0.0;          // radians
    double intensity = -0.25;       // added inside the lesion
    double irregularity = 0.0;      // boundary perturbation amplitude in px
    std::size_t lobes = 6;
    double phase = 0.0;
};

struct PhantomSpec {
    std::size_t image_size = 224;
    double base_level = 0.4;
    double depth_falloff = 0.2;  // fractional gain loss from top to bottom row
    double speckle_sigma = 0.9;
    LesionSpec lesion;
    std::size_t artifact_period = 8;
    double artifact_amplitude = 0.3;
    bool shadow = false;
    double shadow_attenuation = 0.5;
    double irregularity_ratio_threshold = 0.15;  // malignant above this x min(a, b)
    double axis_ratio_threshold = 1.3;           // malignant below this long/short ratio
    std::string organ = "lymph node";

    /// Throws ConfigError when the lesion leaves the image or a knob is out of range.
    void validate() const;
};

enum class Label : std::uint8_t { benign = 0, malignant = 1 };
std::string to_string(Label label);

struct PhantomSample {
    Tensor image;  // S x S in [0, 1]
    Tensor mask;   // S x S in {0, 1}
    Label label = Label::benign;
    std::string caption;
    std::uint64_t seed = 0;
    PhantomSpec spec;
};

/// Rayleigh envelope |N(0, s) + i N(0, s)| per pixel.
Tensor speckle(std::size_t h, std::size_t w, double sigma, std::uint64_t seed);

/// Whether pixel centre (x, y) lies inside the perturbed ellipse.
bool inside_lesion(const LesionSpec& l, double x, double y);

Label malignancy_label(const PhantomSpec& spec);

/// Deterministic caption built from the spec's shape, margin and
/// echogenicity descriptors.
std::string caption_for(const PhantomSpec& spec);

PhantomSample gen_phantom(const PhantomSpec& spec, std::uint64_t seed);

enum class Domain { a, b };
std::string to_string(Domain d);
Domain parse_domain(const std::string& text);

/// Domain presets: A has period-8 bands, strong speckle and no shadow; B
/// has period-14 bands, weaker speckle and posterior shadowing.
PhantomSpec domain_preset(Domain d);

/// Random lesion geometry on top of a domain preset, balanced between labels.
PhantomSpec sample_spec(Domain d, Rng& rng);

std::vector<PhantomSample> gen_dataset(Domain d, std::size_t count, std::uint64_t seed);

}  // namespace htune
