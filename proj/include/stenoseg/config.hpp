#pragma once

// Flat dotted-key run configuration (model.variant=umamba_bot). Unknown keys
// are errors; the fully resolved configuration is echoed into every output
// directory for provenance.

#include <map>
#include <sstream>
#include <string>

#include "stenoseg/train.hpp"

namespace stenoseg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // model
    Variant variant = Variant::UMambaBot;
    std::string size = "tiny";  // preset name
    // data
    std::string annotations;
    std::string images_dir;
    std::string cache_dir;
    std::size_t sample_size = 512;
    std::size_t fold_count = 5;
    bool synthetic = false;
    std::size_t synthetic_count = 16;
    std::size_t synthetic_size = 64;
    // training
    OptimConfig optim;
    LossConfig loss;
    std::size_t eval_every = 25;
    double target_f1 = 0.0;
    double threshold = 0.5;
    std::uint64_t seed = 0;

    ModelSpec model_spec() const { return preset(variant, size); }
};

namespace detail {
inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

template <class F>
inline void apply_key(RunConfig& c, const std::string& key, const std::string& value, F&& fail) {
    auto to_u = [&](const std::string& v) -> std::uint64_t {
        try {
            return std::stoull(v);
        } catch (...) {
            fail("value of '" + key + "' is not an unsigned integer: " + v);
            return 0;
        }
    };
    auto to_d = [&](const std::string& v) -> double {
        try {
            return std::stod(v);
        } catch (...) {
            fail("value of '" + key + "' is not a number: " + v);
            return 0;
        }
    };
    if (key == "model.variant") {
        auto v = variant_from_name(value);
        if (!v) fail("unknown model.variant: " + value);
        c.variant = *v;
    } else if (key == "model.size") {
        if (value != "tiny" && value != "full") fail("model.size must be tiny or full");
        c.size = value;
    } else if (key == "data.annotations") {
        c.annotations = value;
    } else if (key == "data.images_dir") {
        c.images_dir = value;
    } else if (key == "data.cache_dir") {
        c.cache_dir = value;
    } else if (key == "data.sample_size") {
        c.sample_size = to_u(value);
    } else if (key == "data.fold_count") {
        c.fold_count = to_u(value);
    } else if (key == "data.synthetic") {
        if (value != "true" && value != "false") fail("data.synthetic must be true or false");
        c.synthetic = value == "true";
    } else if (key == "data.synthetic_count") {
        c.synthetic_count = to_u(value);
    } else if (key == "data.synthetic_size") {
        c.synthetic_size = to_u(value);
    } else if (key == "train.algo") {
        if (value == "adam")
            c.optim.algo = OptimConfig::Algo::Adam;
        else if (value == "sgd")
            c.optim.algo = OptimConfig::Algo::SgdMomentum;
        else
            fail("train.algo must be adam or sgd");
    } else if (key == "train.lr") {
        c.optim.lr = to_d(value);
    } else if (key == "train.momentum") {
        c.optim.momentum = to_d(value);
    } else if (key == "train.weight_decay") {
        c.optim.weight_decay = to_d(value);
    } else if (key == "train.clip_norm") {
        c.optim.clip_norm = to_d(value);
    } else if (key == "train.steps") {
        c.optim.steps = to_u(value);
    } else if (key == "train.batch_size") {
        c.optim.batch_size = to_u(value);
    } else if (key == "train.eval_every") {
        c.eval_every = to_u(value);
    } else if (key == "train.target_f1") {
        c.target_f1 = to_d(value);
    } else if (key == "loss.dice_weight") {
        c.loss.dice_weight = to_d(value);
    } else if (key == "loss.ce_weight") {
        c.loss.ce_weight = to_d(value);
    } else if (key == "loss.gamma") {
        c.loss.gamma = to_d(value);
    } else if (key == "loss.eps") {
        c.loss.eps = to_d(value);
    } else if (key == "eval.threshold") {
        c.threshold = to_d(value);
    } else if (key == "seed") {
        c.seed = to_u(value);
        c.optim.seed = c.seed;
    } else {
        fail("unknown configuration key: " + key);
    }
}
}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        detail::apply_key(c, key, value, [&](const std::string& msg) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + msg);
        });
    }
    c.loss.validate();
    c.optim.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// Fully resolved configuration, every key explicit, stable order.
inline std::string echo_config(const RunConfig& c) {
    std::ostringstream out;
    auto d = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    out << "data.annotations=" << c.annotations << "\n"
        << "data.cache_dir=" << c.cache_dir << "\n"
        << "data.fold_count=" << c.fold_count << "\n"
        << "data.images_dir=" << c.images_dir << "\n"
        << "data.sample_size=" << c.sample_size << "\n"
        << "data.synthetic=" << (c.synthetic ? "true" : "false") << "\n"
        << "data.synthetic_count=" << c.synthetic_count << "\n"
        << "data.synthetic_size=" << c.synthetic_size << "\n"
        << "eval.threshold=" << d(c.threshold) << "\n"
        << "loss.ce_weight=" << d(c.loss.ce_weight) << "\n"
        << "loss.dice_weight=" << d(c.loss.dice_weight) << "\n"
        << "loss.eps=" << d(c.loss.eps) << "\n"
        << "loss.gamma=" << d(c.loss.gamma) << "\n"
        << "model.size=" << c.size << "\n"
        << "model.variant=" << variant_name(c.variant) << "\n"
        << "seed=" << c.seed << "\n"
        << "train.algo=" << (c.optim.algo == OptimConfig::Algo::Adam ? "adam" : "sgd") << "\n"
        << "train.batch_size=" << c.optim.batch_size << "\n"
        << "train.clip_norm=" << d(c.optim.clip_norm) << "\n"
        << "train.eval_every=" << c.eval_every << "\n"
        << "train.lr=" << d(c.optim.lr) << "\n"
        << "train.momentum=" << d(c.optim.momentum) << "\n"
        << "train.steps=" << c.optim.steps << "\n"
        << "train.target_f1=" << d(c.target_f1) << "\n"
        << "train.weight_decay=" << d(c.optim.weight_decay) << "\n";
    return out.str();
}

}  // namespace stenoseg
