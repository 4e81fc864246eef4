#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "htune/phantom.hpp"

namespace htune {

inline constexpr const char* kGeneratorVersion = "phantom-1";

struct ManifestRecord {
    std::string image_path;  // relative to the dataset directory
    std::string mask_path;
    Label label = Label::benign;
    std::string split;  // train | val | test | ""
    std::string caption;
};

struct Manifest {
    std::string name;
    std::string generator_version = kGeneratorVersion;
    std::uint64_t seed = 0;
    std::vector<ManifestRecord> records;
};

/// 8-bit binary graymap. Values are v * 255 rounded, clamped to [0, 255].
void write_pgm(const std::filesystem::path& path, const Tensor& image);
/// Returns an H x W tensor scaled to [0, 1].
Tensor read_pgm(const std::filesystem::path& path);

/// Writes images/NNNN.pgm, masks/NNNN.pgm and manifest.tsv. splits may be
/// empty or hold one entry per sample.
Manifest write_dataset(const std::vector<PhantomSample>& samples, const std::vector<std::string>& splits,
                       const std::filesystem::path& dir, const std::string& name, std::uint64_t seed);

struct LoadedDataset {
    Manifest manifest;
    std::vector<PhantomSample> samples;  // image, mask, label and caption populated
};

/// A missing file is an IntegrityError naming the path.
LoadedDataset read_dataset(const std::filesystem::path& dir);

}  // namespace htune
