#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dflat/errors.hpp"
#include "dflat/model.hpp"
#include "dflat/train.hpp"

namespace dflat {

// Flat key=value run configuration (UTF-8, '#' comments). Unknown keys are
// rejected; CLI flags override file values; every run writes the fully
// resolved config next to its outputs.
struct RunConfig {
    std::string variant = "dflat";
    std::size_t H = 32, W = 32, h = 8, w = 8;
    std::size_t d = 32;
    std::size_t n_classes = 3;
    std::size_t n_h = 4, L = 2, n_p = 4, n_w = 4;
    bool group_pool = false;
    bool interactive = true;
    std::size_t ffn_hidden = 0;  // 0 -> 2*d
    std::uint64_t seed = 0;

    std::size_t steps = 500;
    std::size_t batch_size = 4;
    double learning_rate = 1e-3;
    std::string optimizer = "adam";
    std::string task = "stripes";
    std::size_t train_samples = 32;
    std::size_t holdout_samples = 8;
    std::size_t eval_every = 50;

    void set(const std::string& key, const std::string& value) {
        if (key == "variant") {
            variant_from_name(value);  // validates
            variant = value;
        } else if (key == "H") {
            H = parse_size(key, value);
        } else if (key == "W") {
            W = parse_size(key, value);
        } else if (key == "h") {
            h = parse_size(key, value);
        } else if (key == "w") {
            w = parse_size(key, value);
        } else if (key == "d") {
            d = parse_size(key, value);
        } else if (key == "n_classes") {
            n_classes = parse_size(key, value);
        } else if (key == "n_h") {
            n_h = parse_size(key, value);
        } else if (key == "L") {
            L = parse_size(key, value);
        } else if (key == "n_p") {
            n_p = parse_size(key, value);
        } else if (key == "n_w") {
            n_w = parse_size(key, value);
        } else if (key == "group_pool") {
            group_pool = parse_bool(key, value);
        } else if (key == "interactive") {
            interactive = parse_bool(key, value);
        } else if (key == "ffn_hidden") {
            ffn_hidden = parse_size(key, value);
        } else if (key == "seed") {
            seed = parse_u64(key, value);
        } else if (key == "steps") {
            steps = parse_size(key, value);
        } else if (key == "batch_size") {
            batch_size = parse_size(key, value);
        } else if (key == "learning_rate") {
            learning_rate = parse_double(key, value);
        } else if (key == "optimizer") {
            optimizer_from_name(value);
            optimizer = value;
        } else if (key == "task") {
            task_from_name(value);
            task = value;
        } else if (key == "train_samples") {
            train_samples = parse_size(key, value);
        } else if (key == "holdout_samples") {
            holdout_samples = parse_size(key, value);
        } else if (key == "eval_every") {
            eval_every = parse_size(key, value);
        } else {
            throw ConfigError("unknown config key: " + key);
        }
    }

    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) {
            throw IoError("config file not found: " + path);
        }
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) {
                line.erase(hash);
            }
            const std::string trimmed = trim(line);
            if (trimmed.empty()) {
                continue;
            }
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + trimmed + "'");
            }
            set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
        }
    }

    // key=value override of the form accepted by --set.
    void apply_override(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }

    ModelConfig model_config() const {
        ModelConfig m;
        m.variant = variant_from_name(variant);
        m.H = H;
        m.W = W;
        m.h = h;
        m.w = w;
        m.d = d;
        m.n_classes = n_classes;
        m.seed = seed;
        m.attn.d = d;
        m.attn.n_h = n_h;
        m.attn.L = L;
        m.attn.n_p = n_p;
        m.attn.n_w = n_w;
        m.attn.ffn_hidden = ffn_hidden;
        m.attn.use_group_pool = group_pool;
        m.attn.use_interactive = interactive;
        m.validate();
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.steps = steps;
        t.batch_size = batch_size;
        t.learning_rate = learning_rate;
        t.optimizer = optimizer_from_name(optimizer);
        t.task = task_from_name(task);
        t.train_samples = train_samples;
        t.holdout_samples = holdout_samples;
        t.eval_every = eval_every;
        t.validate();
        return t;
    }

    // Canonical serialization, fixed key order, suitable for byte comparison.
    std::string serialize() const {
        std::ostringstream os;
        os << "variant=" << variant << "\n";
        os << "H=" << H << "\n";
        os << "W=" << W << "\n";
        os << "h=" << h << "\n";
        os << "w=" << w << "\n";
        os << "d=" << d << "\n";
        os << "n_classes=" << n_classes << "\n";
        os << "n_h=" << n_h << "\n";
        os << "L=" << L << "\n";
        os << "n_p=" << n_p << "\n";
        os << "n_w=" << n_w << "\n";
        os << "group_pool=" << (group_pool ? 1 : 0) << "\n";
        os << "interactive=" << (interactive ? 1 : 0) << "\n";
        os << "ffn_hidden=" << ffn_hidden << "\n";
        os << "seed=" << seed << "\n";
        os << "steps=" << steps << "\n";
        os << "batch_size=" << batch_size << "\n";
        os << "learning_rate=" << format_double(learning_rate) << "\n";
        os << "optimizer=" << optimizer << "\n";
        os << "task=" << task << "\n";
        os << "train_samples=" << train_samples << "\n";
        os << "holdout_samples=" << holdout_samples << "\n";
        os << "eval_every=" << eval_every << "\n";
        return os.str();
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) {
            return "";
        }
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static std::size_t parse_size(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const long long n = std::stoll(v, &pos);
            if (pos != v.size() || n < 0) {
                throw std::invalid_argument(v);
            }
            return static_cast<std::size_t>(n);
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": expected a non-negative integer, got '" +
                              v + "'");
        }
    }

    static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const unsigned long long n = std::stoull(v, &pos);
            if (pos != v.size()) {
                throw std::invalid_argument(v);
            }
            return n;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": expected an unsigned integer, got '" + v +
                              "'");
        }
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) {
                throw std::invalid_argument(v);
            }
            return x;
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": expected a real number, got '" + v + "'");
        }
    }

    static bool parse_bool(const std::string& key, const std::string& v) {
        if (v == "1" || v == "true" || v == "on") {
            return true;
        }
        if (v == "0" || v == "false" || v == "off") {
            return false;
        }
        throw ConfigError("config key " + key + ": expected a boolean (0/1), got '" + v + "'");
    }

    static std::string format_double(double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }
};

}  // namespace dflat
