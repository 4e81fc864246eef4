#include "htune/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "htune/errors.hpp"

namespace htune {

namespace fs = std::filesystem;

void write_pgm(const fs::path& path, const Tensor& image) {
    if (image.rank() != 2) throw DimensionError("write_pgm: expected H x W, got " + shape_str(image.shape()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IntegrityError("cannot write " + path.string());
    const std::size_t h = image.dim(0), w = image.dim(1);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(h * w);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::clamp(std::lround(image[i] * 255.0), 0L, 255L));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IntegrityError("short write to " + path.string());
}

Tensor read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("missing file " + path.string());
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w == 0 || h == 0 || maxval != 255) throw IntegrityError("not an 8-bit P5 graymap: " + path.string());
    in.get();
    std::vector<unsigned char> bytes(w * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IntegrityError("truncated graymap " + path.string());
    Tensor out(Shape{h, w});
    for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
    return out;
}

Manifest write_dataset(const std::vector<PhantomSample>& samples, const std::vector<std::string>& splits,
                       const fs::path& dir, const std::string& name, std::uint64_t seed) {
    if (!splits.empty() && splits.size() != samples.size())
        throw DimensionError("write_dataset: " + std::to_string(splits.size()) + " split tags for " + std::to_string(samples.size()) + " samples");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    Manifest m;
    m.name = name;
    m.seed = seed;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "%05zu.pgm", i);
        ManifestRecord r;
        r.image_path = std::string("images/") + stem;
        r.mask_path = std::string("masks/") + stem;
        r.label = samples[i].label;
        r.split = splits.empty() ? "" : splits[i];
        r.caption = samples[i].caption;
        if (r.caption.find_first_of("\t\n") != std::string::npos) throw InputError("write_dataset: caption contains a tab or newline");
        write_pgm(dir / r.image_path, samples[i].image);
        write_pgm(dir / r.mask_path, samples[i].mask);
        m.records.push_back(std::move(r));
    }
    std::ofstream out(dir / "manifest.tsv");
    if (!out) throw IntegrityError("cannot write " + (dir / "manifest.tsv").string());
    out << "# dataset: " << m.name << "\n# generator: " << m.generator_version << "\n# seed: " << m.seed << "\n";
    for (const auto& r : m.records)
        out << r.image_path << '\t' << r.mask_path << '\t' << to_string(r.label) << '\t' << r.split << '\t' << r.caption << '\n';
    return m;
}

LoadedDataset read_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.tsv";
    std::ifstream in(manifest_path);
    if (!in) throw IntegrityError("missing file " + manifest_path.string());
    LoadedDataset out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto value = [&](const std::string& key) { return line.substr(key.size()); };
            if (line.rfind("# dataset: ", 0) == 0) out.manifest.name = value("# dataset: ");
            else if (line.rfind("# generator: ", 0) == 0) out.manifest.generator_version = value("# generator: ");
            else if (line.rfind("# seed: ", 0) == 0) out.manifest.seed = std::stoull(value("# seed: "));
            continue;
        }
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() == 4) cols.emplace_back();
        if (cols.size() != 5) throw IntegrityError("manifest line has " + std::to_string(cols.size()) + " columns: " + line);
        ManifestRecord r{cols[0], cols[1], Label::benign, cols[3], cols[4]};
        if (cols[2] == "malignant") r.label = Label::malignant;
        else if (cols[2] != "benign") throw IntegrityError("manifest label '" + cols[2] + "' is neither benign nor malignant");

        PhantomSample s;
        s.image = read_pgm(dir / r.image_path);
        s.mask = read_pgm(dir / r.mask_path);
        for (double& v : s.mask.data()) v = v >= 0.5 ? 1.0 : 0.0;
        s.label = r.label;
        s.caption = r.caption;
        out.samples.push_back(std::move(s));
        out.manifest.records.push_back(std::move(r));
    }
    return out;
}

}  // namespace htune
