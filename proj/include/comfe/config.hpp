#pragma once

// Model and training hyperparameters, and the flat key=value text format
// used for config files and the checkpoint config echo.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "comfe/errors.hpp"
#include "comfe/prototypes.hpp"

namespace comfe {

enum class CarlForm { dot, literal };

struct LossWeights {
    double cluster = 1.0;
    double discrim = 1.0;
    double p_discrim = 1.0;
    double contrast = 1.0;
    double carl = 1.0;
};

struct ModelConfig {
    // Filled from the data when left at zero.
    std::size_t num_classes = 0;
    std::size_t dim = 0;

    double tau1 = 0.1;
    double tau2 = 0.02;
    double tau_c = 0.02;
    double alpha = 0.1;

    std::size_t n_prototypes = 5;
    std::size_t per_class = 3;
    std::optional<std::size_t> n_background;  // defaults to 3 * num_classes
    bool background = true;

    std::size_t layers = 2;
    std::size_t heads = 8;
    std::size_t d_ff = 0;  // 0 selects 4 * dim
    double dropout = 0.0;

    LossWeights weights;
    CarlForm carl_form = CarlForm::dot;

    std::size_t resolved_d_ff() const { return d_ff ? d_ff : 4 * dim; }

    AssociationLayout layout() const {
        AssociationLayout l;
        l.num_classes = num_classes;
        l.per_class = per_class;
        l.n_background = background ? n_background.value_or(3 * num_classes) : 0;
        l.alpha = alpha;
        return l;
    }

    void validate() const {
        if (num_classes < 1) throw ConfigError("num_classes must be at least 1");
        if (dim < 2) throw ConfigError("dim must be at least 2");
        if (!(tau1 > 0 && tau2 > 0 && tau_c > 0)) throw ConfigError("temperatures must be positive");
        if (!(alpha >= 0 && alpha < 1)) throw ConfigError("alpha must lie in [0, 1)");
        if (n_prototypes < 1) throw ConfigError("n_prototypes must be at least 1");
        if (per_class < 1) throw ConfigError("per_class must be at least 1");
        if (background && n_background && *n_background == 0) {
            throw ConfigError("background enabled with n_background = 0");
        }
        if (layers < 1) throw ConfigError("layers must be at least 1");
        if (heads < 1 || dim % heads != 0) {
            throw ConfigError("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
        }
        if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
    }
};

struct TrainConfig {
    ModelConfig model;
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double base_lr = 5e-4;
    double warmup_fraction = 0.1;
    double weight_decay = 0.04;
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const {
        model.validate();
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw ConfigError("warmup_fraction must lie in [0, 1)");
        if (!(base_lr >= 0)) throw ConfigError("base_lr must be non-negative");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
        if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
        if (!(eps > 0)) throw ConfigError("eps must be positive");
        if (threads < 1) throw ConfigError("threads must be at least 1");
    }
};

// ---------------------------------------------------------------- key=value text

using KeyValues = std::map<std::string, std::string>;

// Parses `key = value` lines; '#' starts a comment. Duplicate keys are an error.
inline KeyValues parse_key_values(std::istream &in, const std::string &source = "config") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, value).second) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
    }
    return kv;
}

inline KeyValues read_key_values(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return parse_key_values(in, path);
}

namespace detail {

inline double parse_double(const std::string &key, const std::string &v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception &) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_uint(const std::string &key, const std::string &v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

inline bool parse_bool(const std::string &key, const std::string &v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::string format_double(double d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

}  // namespace detail

// Applies recognized keys onto `cfg`; returns the keys it did not recognize.
inline std::vector<std::string> apply_model_keys(ModelConfig &cfg, const KeyValues &kv) {
    std::vector<std::string> unknown;
    using namespace detail;
    for (const auto &[k, v] : kv) {
        if (k == "num_classes") cfg.num_classes = parse_uint(k, v);
        else if (k == "dim") cfg.dim = parse_uint(k, v);
        else if (k == "tau1") cfg.tau1 = parse_double(k, v);
        else if (k == "tau2") cfg.tau2 = parse_double(k, v);
        else if (k == "tau_c") cfg.tau_c = parse_double(k, v);
        else if (k == "alpha") cfg.alpha = parse_double(k, v);
        else if (k == "n_prototypes") cfg.n_prototypes = parse_uint(k, v);
        else if (k == "per_class") cfg.per_class = parse_uint(k, v);
        else if (k == "n_background") {
            if (v == "auto") cfg.n_background.reset();
            else cfg.n_background = parse_uint(k, v);
        } else if (k == "background") cfg.background = parse_bool(k, v);
        else if (k == "layers") cfg.layers = parse_uint(k, v);
        else if (k == "heads") cfg.heads = parse_uint(k, v);
        else if (k == "d_ff") cfg.d_ff = parse_uint(k, v);
        else if (k == "dropout") cfg.dropout = parse_double(k, v);
        else if (k == "w_cluster") cfg.weights.cluster = parse_double(k, v);
        else if (k == "w_discrim") cfg.weights.discrim = parse_double(k, v);
        else if (k == "w_p_discrim") cfg.weights.p_discrim = parse_double(k, v);
        else if (k == "w_contrast") cfg.weights.contrast = parse_double(k, v);
        else if (k == "w_carl") cfg.weights.carl = parse_double(k, v);
        else if (k == "carl_form") {
            if (v == "dot") cfg.carl_form = CarlForm::dot;
            else if (v == "literal") cfg.carl_form = CarlForm::literal;
            else throw ConfigError("carl_form must be 'dot' or 'literal', got '" + v + "'");
        } else unknown.push_back(k);
    }
    return unknown;
}

inline TrainConfig train_config_from(const KeyValues &kv) {
    TrainConfig cfg;
    using namespace detail;
    for (const auto &k : apply_model_keys(cfg.model, kv)) {
        const auto &v = kv.at(k);
        if (k == "epochs") cfg.epochs = parse_uint(k, v);
        else if (k == "batch_size") cfg.batch_size = parse_uint(k, v);
        else if (k == "base_lr") cfg.base_lr = parse_double(k, v);
        else if (k == "warmup_fraction") cfg.warmup_fraction = parse_double(k, v);
        else if (k == "weight_decay") cfg.weight_decay = parse_double(k, v);
        else if (k == "clip_norm") cfg.clip_norm = parse_double(k, v);
        else if (k == "beta1") cfg.beta1 = parse_double(k, v);
        else if (k == "beta2") cfg.beta2 = parse_double(k, v);
        else if (k == "eps") cfg.eps = parse_double(k, v);
        else if (k == "seed") cfg.seed = parse_uint(k, v);
        else if (k == "threads") cfg.threads = parse_uint(k, v);
        else throw ConfigError("unknown key '" + k + "'");
    }
    return cfg;
}

inline std::string to_key_values(const TrainConfig &cfg) {
    using detail::format_double;
    const auto &m = cfg.model;
    std::ostringstream os;
    os << "num_classes=" << m.num_classes << "\n"
       << "dim=" << m.dim << "\n"
       << "tau1=" << format_double(m.tau1) << "\n"
       << "tau2=" << format_double(m.tau2) << "\n"
       << "tau_c=" << format_double(m.tau_c) << "\n"
       << "alpha=" << format_double(m.alpha) << "\n"
       << "n_prototypes=" << m.n_prototypes << "\n"
       << "per_class=" << m.per_class << "\n"
       << "n_background=" << (m.n_background ? std::to_string(*m.n_background) : std::string("auto")) << "\n"
       << "background=" << (m.background ? "true" : "false") << "\n"
       << "layers=" << m.layers << "\n"
       << "heads=" << m.heads << "\n"
       << "d_ff=" << m.d_ff << "\n"
       << "dropout=" << format_double(m.dropout) << "\n"
       << "w_cluster=" << format_double(m.weights.cluster) << "\n"
       << "w_discrim=" << format_double(m.weights.discrim) << "\n"
       << "w_p_discrim=" << format_double(m.weights.p_discrim) << "\n"
       << "w_contrast=" << format_double(m.weights.contrast) << "\n"
       << "w_carl=" << format_double(m.weights.carl) << "\n"
       << "carl_form=" << (m.carl_form == CarlForm::dot ? "dot" : "literal") << "\n"
       << "epochs=" << cfg.epochs << "\n"
       << "batch_size=" << cfg.batch_size << "\n"
       << "base_lr=" << format_double(cfg.base_lr) << "\n"
       << "warmup_fraction=" << format_double(cfg.warmup_fraction) << "\n"
       << "weight_decay=" << format_double(cfg.weight_decay) << "\n"
       << "clip_norm=" << format_double(cfg.clip_norm) << "\n"
       << "beta1=" << format_double(cfg.beta1) << "\n"
       << "beta2=" << format_double(cfg.beta2) << "\n"
       << "eps=" << format_double(cfg.eps) << "\n"
       << "seed=" << cfg.seed << "\n"
       << "threads=" << cfg.threads << "\n";
    return os.str();
}

}  // namespace comfe
