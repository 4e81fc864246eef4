#include "htune/zeroshot.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "htune/errors.hpp"

namespace htune {

std::size_t PromptBank::prompt_count() const {
    std::size_t n = 0;
    for (const auto& [name, prompts] : classes) n += prompts.size();
    return n;
}

PromptBank parse_prompt_bank(const std::string& text) {
    PromptBank bank;
    std::istringstream in(text);
    std::string line;
    const std::string header = "# class:";
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (line.rfind(header, 0) == 0) {
            std::string name = line.substr(header.size());
            name.erase(0, name.find_first_not_of(" \t"));
            if (name.empty()) throw ConfigError("prompt bank: class header without a name");
            bank.classes.emplace_back(name, std::vector<std::string>{});
            continue;
        }
        if (bank.classes.empty()) throw ConfigError("prompt bank: prompt before the first class header");
        bank.classes.back().second.push_back(line);
    }
    if (bank.classes.empty()) throw ConfigError("prompt bank is empty");
    for (const auto& [name, prompts] : bank.classes)
        if (prompts.empty()) throw ConfigError("prompt bank: class '" + name + "' has no prompts");
    return bank;
}

PromptBank load_prompt_bank(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open prompt bank " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_prompt_bank(ss.str());
}

PromptBank bundled_prompt_bank(const std::string& name) {
    return load_prompt_bank(std::filesystem::path(HTUNE_DATA_DIR) / "prompts" / (name + ".txt"));
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("cosine: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm embedding");
    return dot / std::sqrt(na * nb);
}

ZeroShotResult argmax_scores(std::vector<std::pair<std::string, double>> scores) {
    if (scores.empty()) throw ConfigError("zero-shot: no classes");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const double s = scores[i].second, b = scores[best].second;
        if (s > b || (s == b && scores[i].first < scores[best].first)) best = i;
    }
    ZeroShotResult r;
    r.predicted = scores[best].first;
    r.scores = std::move(scores);
    return r;
}

EncodedBank encode_bank(const PromptBank& bank, const TextEncoder& encoder) {
    if (bank.classes.empty()) throw ConfigError("zero-shot: empty prompt bank");
    EncodedBank out;
    for (const auto& [name, prompts] : bank.classes) {
        if (prompts.empty()) throw ConfigError("zero-shot: class '" + name + "' has no prompts");
        out.names.push_back(name);
        out.embeddings.push_back(encoder.encode_batch(prompts));
    }
    return out;
}

ZeroShotResult zero_shot_classify(const Tensor& img_emb, const EncodedBank& bank) {
    if (bank.names.empty()) throw ConfigError("zero-shot: empty prompt bank");
    std::vector<std::pair<std::string, double>> scores;
    for (std::size_t c = 0; c < bank.names.size(); ++c) {
        const Tensor& e = bank.embeddings[c];
        const std::size_t n = e.dim(0), d = e.dim(1);
        if (img_emb.numel() != d) throw DimensionError("zero-shot: image embedding length " + std::to_string(img_emb.numel()) + " vs text width " + std::to_string(d));
        double sum = 0.0;
        for (std::size_t p = 0; p < n; ++p) sum += cosine(img_emb.data(), e.data().subspan(p * d, d));
        scores.emplace_back(bank.names[c], sum / static_cast<double>(n));
    }
    return argmax_scores(std::move(scores));
}

ZeroShotResult zero_shot_classify(const Tensor& img_emb, const PromptBank& bank, const TextEncoder& encoder) {
    return zero_shot_classify(img_emb, encode_bank(bank, encoder));
}

}  // namespace htune
