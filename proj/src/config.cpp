#include "msca/config.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "msca/errors.hpp"

namespace msca {

std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::AtteFFB: return "atteffb";
        case FusionMode::Add: return "add";
        case FusionMode::None: return "none";
    }
    return "?";
}

FusionMode parse_fusion_mode(const std::string& text) {
    std::string t;
    for (char ch : text) t += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (t == "atteffb" || t == "atte-ffb" || t == "atte_ffb") return FusionMode::AtteFFB;
    if (t == "add") return FusionMode::Add;
    if (t == "none") return FusionMode::None;
    throw ConfigError("unknown fusion_mode '" + text + "' (expected atteffb, add, none)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (image_size < 16 || image_size % kPatch != 0) fail("image_size must be a positive multiple of 16");
    if (width < 8 || width % 8 != 0) fail("width must be a positive multiple of 8");
    if (embed_dim < 2 || embed_dim % 2 != 0) fail("embed_dim must be even");
    if (heads < 1 || embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
    if (depth < 0) fail("depth must be >= 0");
    if (fusion_mode != FusionMode::None && !cbrnet_enabled) fail("fusion_mode " + to_string(fusion_mode) + " requires cbrnet_enabled");
    if (fusion_mode == FusionMode::None && cbrnet_enabled) fail("fusion_mode none ignores the CBR-Net; set cbrnet_enabled=false");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0,1]");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) fail("lr and weight_decay must be non-negative");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (epochs < 0) fail("epochs must be >= 0");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) fail("train_fraction must lie in (0,1]");
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "image_size=" << image_size << "\n"
       << "width=" << width << "\n"
       << "embed_dim=" << embed_dim << "\n"
       << "depth=" << depth << "\n"
       << "heads=" << heads << "\n"
       << "adapter_enabled=" << (adapter_enabled ? "true" : "false") << "\n"
       << "fusion_mode=" << to_string(fusion_mode) << "\n"
       << "cbrnet_enabled=" << (cbrnet_enabled ? "true" : "false") << "\n"
       << "freeze_backbone=" << (freeze_backbone ? "true" : "false") << "\n"
       << "alpha=" << fmt_double(alpha) << "\n"
       << "lr=" << fmt_double(lr) << "\n"
       << "weight_decay=" << fmt_double(weight_decay) << "\n"
       << "batch_size=" << batch_size << "\n"
       << "epochs=" << epochs << "\n"
       << "seed=" << seed << "\n"
       << "train_fraction=" << fmt_double(train_fraction) << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto as_int = [](int& field) {
        return Setter([&field](const std::string& k, const std::string& v) {
            try {
                std::size_t used = 0;
                field = std::stoi(v, &used);
                if (used != v.size()) throw std::invalid_argument(v);
            } catch (const std::exception&) {
                throw ConfigError("config key '" + k + "' expects an integer, got '" + v + "'");
            }
        });
    };
    auto as_double = [](double& field) {
        return Setter([&field](const std::string& k, const std::string& v) {
            try {
                std::size_t used = 0;
                field = std::stod(v, &used);
                if (used != v.size()) throw std::invalid_argument(v);
            } catch (const std::exception&) {
                throw ConfigError("config key '" + k + "' expects a number, got '" + v + "'");
            }
        });
    };
    auto as_bool = [](bool& field) {
        return Setter([&field](const std::string& k, const std::string& v) { field = parse_bool(k, v); });
    };
    const std::map<std::string, Setter> setters{
        {"image_size", as_int(cfg.image_size)},
        {"S", as_int(cfg.image_size)},
        {"width", as_int(cfg.width)},
        {"c", as_int(cfg.width)},
        {"embed_dim", as_int(cfg.embed_dim)},
        {"d", as_int(cfg.embed_dim)},
        {"depth", as_int(cfg.depth)},
        {"L", as_int(cfg.depth)},
        {"heads", as_int(cfg.heads)},
        {"adapter_enabled", as_bool(cfg.adapter_enabled)},
        {"fusion_mode", [&cfg](const std::string&, const std::string& v) { cfg.fusion_mode = parse_fusion_mode(v); }},
        {"cbrnet_enabled", as_bool(cfg.cbrnet_enabled)},
        {"freeze_backbone", as_bool(cfg.freeze_backbone)},
        {"alpha", as_double(cfg.alpha)},
        {"lr", as_double(cfg.lr)},
        {"weight_decay", as_double(cfg.weight_decay)},
        {"batch_size", as_int(cfg.batch_size)},
        {"epochs", as_int(cfg.epochs)},
        {"seed", [&cfg](const std::string& k, const std::string& v) {
             try {
                 cfg.seed = std::stoull(v);
             } catch (const std::exception&) {
                 throw ConfigError("config key '" + k + "' expects an unsigned integer");
             }
         }},
        {"train_fraction", as_double(cfg.train_fraction)},
    };
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

void ModelConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config file " + path);
    out << to_text();
}

}  // namespace msca
