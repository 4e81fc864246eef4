#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "htune/dataset_io.hpp"
#include "htune/errors.hpp"
#include "htune/fft.hpp"
#include "htune/phantom.hpp"

using namespace htune;

TEST_CASE("speckle field") {
    const double sigma = 0.9;
    Tensor f = speckle(224, 224, sigma, 5);
    double mean = 0.0;
    for (double v : f.data()) {
        CHECK(v > 0.0);
        mean += v;
    }
    mean /= static_cast<double>(f.numel());
    const double rayleigh_mean = sigma * std::sqrt(std::numbers::pi / 2.0);
    const double rayleigh_std = sigma * std::sqrt((4.0 - std::numbers::pi) / 2.0);
    CHECK(std::abs(mean - rayleigh_mean) < 3.0 * rayleigh_std / std::sqrt(static_cast<double>(f.numel())));
    CHECK(speckle(16, 16, 0.5, 7) == speckle(16, 16, 0.5, 7));
    CHECK_FALSE(speckle(16, 16, 0.5, 7) == speckle(16, 16, 0.5, 8));
}

TEST_CASE("lesion rasterization matches the ellipse area") {
    for (auto [a, b, rot] : {std::tuple{40.0, 25.0, 0.0}, {30.0, 30.0, 0.0}, {50.0, 20.0, 0.6}}) {
        PhantomSpec s = domain_preset(Domain::a);
        s.lesion.a = a;
        s.lesion.b = b;
        s.lesion.rotation = rot;
        s.lesion.irregularity = 0.0;
        PhantomSample p = gen_phantom(s, 3);
        const double area = std::numbers::pi * a * b;
        const double h = (a - b) * (a - b) / ((a + b) * (a + b));
        const double perimeter = std::numbers::pi * (a + b) * (1.0 + 3.0 * h / (10.0 + std::sqrt(4.0 - 3.0 * h)));
        CHECK(std::abs(p.mask.sum() - area) <= perimeter);
        for (double v : p.image.data()) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("artifact bands dominate the row spectrum") {
    PhantomSpec s = domain_preset(Domain::a);
    CHECK(s.artifact_period == 8);
    CHECK(s.artifact_amplitude == 0.3);
    PhantomSample p = gen_phantom(s, 11);
    const std::size_t S = 224;
    std::vector<fft::cd> rows(S);
    for (std::size_t y = 0; y < S; ++y) {
        double m = 0.0;
        for (std::size_t x = 0; x < S; ++x) m += p.image[y * S + x];
        rows[y] = m / static_cast<double>(S);
    }
    fft::transform(rows, false);
    std::size_t peak = 1;
    for (std::size_t k = 1; k <= S / 2; ++k)
        if (std::abs(rows[k]) > std::abs(rows[peak])) peak = k;
    CHECK(peak == 28);
}

TEST_CASE("labels and captions") {
    PhantomSpec s = domain_preset(Domain::a);
    s.lesion.a = 40.0;
    s.lesion.b = 20.0;
    s.lesion.irregularity = 0.0;
    CHECK(malignancy_label(s) == Label::benign);
    const std::string cap = caption_for(s);
    CHECK(cap.find("benign") != std::string::npos);
    CHECK(cap == caption_for(s));

    s.lesion.irregularity = 0.2 * 20.0;
    CHECK(malignancy_label(s) == Label::malignant);
    s.lesion.irregularity = 0.0;
    s.lesion.a = 22.0;
    CHECK(malignancy_label(s) == Label::malignant);

    PhantomSpec b = domain_preset(Domain::b);
    CHECK(caption_for(b).find("shadowing") != std::string::npos);

    for (Domain d : {Domain::a, Domain::b})
        for (const auto& sample : gen_dataset(d, 40, 3)) {
            CHECK(sample.caption.size() >= 20);
            CHECK(sample.label == malignancy_label(sample.spec));
            CHECK(sample.mask.sum() > 0.0);
        }
}

TEST_CASE("dataset generation is seeded and roughly balanced") {
    auto a = gen_dataset(Domain::a, 60, 9), b = gen_dataset(Domain::a, 60, 9);
    std::size_t malignant = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image == b[i].image);
        malignant += a[i].label == Label::malignant;
    }
    CHECK(malignant > 15);
    CHECK(malignant < 45);
    CHECK(parse_domain("B") == Domain::b);
    CHECK_THROWS_AS(parse_domain("C"), ConfigError);

    PhantomSpec bad = domain_preset(Domain::a);
    bad.lesion.cx = 5.0;
    CHECK_THROWS_AS(gen_phantom(bad, 1), ConfigError);
}

TEST_CASE("dataset files roundtrip") {
    const auto dir = std::filesystem::temp_directory_path() / "htune_dataset_test";
    std::filesystem::remove_all(dir);
    auto samples = gen_dataset(Domain::b, 5, 4);
    std::vector<std::string> splits{"train", "train", "train", "val", "test"};
    write_dataset(samples, splits, dir, "demo", 4);
    LoadedDataset back = read_dataset(dir);
    CHECK(back.manifest.name == "demo");
    CHECK(back.manifest.seed == 4);
    CHECK(back.manifest.generator_version == kGeneratorVersion);
    REQUIRE(back.samples.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(back.samples[i].mask == samples[i].mask);
        CHECK(max_abs_diff(back.samples[i].image, samples[i].image) <= 1.0 / 255.0 + 1e-12);
        CHECK(back.samples[i].label == samples[i].label);
        CHECK(back.samples[i].caption == samples[i].caption);
        CHECK(back.manifest.records[i].split == splits[i]);
    }
    std::filesystem::remove(dir / back.manifest.records[2].image_path);
    CHECK_THROWS_AS(read_dataset(dir), IntegrityError);
    std::filesystem::remove_all(dir);
}
