#include "htune/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "htune/errors.hpp"

namespace htune {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Field {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        T out{};
        if constexpr (std::is_same_v<T, double>) {
            out = std::stod(v, &used);
        } else {
            if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
            out = static_cast<T>(std::stoull(v, &used));
        }
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::logic_error&) {
        throw ConfigError("config: bad value '" + v + "' for key '" + key + "'");
    }
}

template <typename T>
Field number(T TrainConfig::*member) {
    return {[member](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>("", v); },
            [member](const TrainConfig& c) {
                std::ostringstream os;
                os.precision(17);
                os << c.*member;
                return os.str();
            }};
}

Field text(std::string TrainConfig::*member) {
    return {[member](TrainConfig& c, const std::string& v) { c.*member = v; },
            [member](const TrainConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table{
        {"epochs_finetune", number(&TrainConfig::epochs_finetune)},
        {"epochs_downstream", number(&TrainConfig::epochs_downstream)},
        {"base_lr", number(&TrainConfig::base_lr)},
        {"lr_floor", number(&TrainConfig::lr_floor)},
        {"weight_decay", number(&TrainConfig::weight_decay)},
        {"beta1", number(&TrainConfig::beta1)},
        {"beta2", number(&TrainConfig::beta2)},
        {"eps", number(&TrainConfig::eps)},
        {"batch_size", number(&TrainConfig::batch_size)},
        {"seeds",
         {[](TrainConfig& c, const std::string& v) {
              c.seeds.clear();
              std::stringstream ss(v);
              std::string tok;
              while (std::getline(ss, tok, ',')) c.seeds.push_back(parse_number<std::uint64_t>("seeds", trim(tok)));
          },
          [](const TrainConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
              return s;
          }}},
        {"loss", text(&TrainConfig::loss)},
        {"tau", number(&TrainConfig::tau)},
        {"focal_alpha", number(&TrainConfig::focal_alpha)},
        {"focal_gamma", number(&TrainConfig::focal_gamma)},
        {"dice_weight", number(&TrainConfig::dice_weight)},
        {"ce_weight", number(&TrainConfig::ce_weight)},
        {"adapter", text(&TrainConfig::adapter)},
        {"backbone_seed", number(&TrainConfig::backbone_seed)},
        {"image_size", number(&TrainConfig::image_size)},
        {"patch_size", number(&TrainConfig::patch_size)},
        {"depth", number(&TrainConfig::depth)},
        {"width", number(&TrainConfig::width)},
        {"heads", number(&TrainConfig::heads)},
        {"bottleneck", number(&TrainConfig::bottleneck)},
        {"squeeze", number(&TrainConfig::squeeze)},
        {"dropout", number(&TrainConfig::dropout)},
        {"lora_rank", number(&TrainConfig::lora_rank)},
        {"lora_alpha", number(&TrainConfig::lora_alpha)},
        {"reduced", number(&TrainConfig::reduced)},
        {"cls_hidden", number(&TrainConfig::cls_hidden)},
        {"embed_dim", number(&TrainConfig::embed_dim)},
    };
    return table;
}

}  // namespace

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) throw ConfigError(std::string("config: ") + name + " must be positive");
    };
    positive(base_lr, "base_lr");
    positive(eps, "eps");
    positive(static_cast<double>(batch_size), "batch_size");
    positive(tau, "tau");
    positive(focal_alpha, "focal_alpha");
    if (focal_gamma < 0.0) throw ConfigError("config: focal_gamma must be non-negative");
    if (weight_decay < 0.0 || lr_floor < 0.0) throw ConfigError("config: weight_decay and lr_floor must be non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("config: betas must lie in (0, 1)");
    if (dice_weight < 0.0 || ce_weight < 0.0 || dice_weight + ce_weight <= 0.0)
        throw ConfigError("config: dice_weight and ce_weight must be non-negative and not both zero");
    if (seeds.empty()) throw ConfigError("config: at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("config: seeds must be distinct");
    for (auto v : {image_size, patch_size, depth, width, heads, bottleneck, squeeze, lora_rank, reduced, cls_hidden, embed_dim})
        if (v == 0) throw ConfigError("config: model dimensions must be positive");
    if (loss != "auto" && loss != "dice_ce" && loss != "focal" && loss != "info_nce")
        throw ConfigError("config: unknown loss '" + loss + "'");
    if (adapter != "none" && adapter != "frozen" && adapter != "ht" && adapter != "lora")
        throw ConfigError("config: unknown adapter '" + adapter + "'");
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return out;
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
    for (const auto& [key, value] : parse_key_values(text)) {
        const auto& table = fields();
        auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
        if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
        try {
            it->second.set(base, value);
        } catch (const ConfigError&) {
            throw ConfigError("config: bad value '" + value + "' for key '" + key + "'");
        }
    }
    base.validate();
    return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str(), std::move(base));
}

std::string to_text(const TrainConfig& c) {
    std::string out;
    for (const auto& [key, f] : fields()) out += key + "=" + f.get(c) + "\n";
    return out;
}

}  // namespace htune
