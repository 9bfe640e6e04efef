#pragma once
// Flat key=value configuration files.
//
//   # comment
//   n_patients = 60
//   class_ratios = 0.1, 0.8, 0.1
//
// Values are parsed on request; keys that nobody asked for are rejected by
// reject_unknown() so a typo never silently falls back to a default.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "datagen.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "model.hpp"

namespace ordchange {

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

} // namespace detail

class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text, std::string source = "<config>") {
        KeyValueConfig cfg;
        cfg.source_ = std::move(source);
        cfg.text_ = std::string(text);
        std::istringstream in(cfg.text_);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto body = detail::trim(line);
            if (body.empty()) continue;
            const auto eq = body.find('=');
            if (eq == std::string::npos)
                throw ConfigError(cfg.source_ + ":" + std::to_string(lineno) + ": expected key = value");
            const auto key = detail::trim(std::string_view(body).substr(0, eq));
            const auto value = detail::trim(std::string_view(body).substr(eq + 1));
            if (key.empty()) throw ConfigError(cfg.source_ + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.entries_.count(key))
                throw ConfigError(cfg.source_ + ":" + std::to_string(lineno) + ": field '" + key + "' set twice");
            cfg.entries_[key] = Entry{value, lineno, false};
        }
        return cfg;
    }

    static KeyValueConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read config " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    const std::string& text() const { return text_; }
    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::optional<std::string> get_string(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        it->second.used = true;
        return it->second.value;
    }

    template <typename T>
    std::optional<T> get_number(const std::string& key) {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        T v{};
        if (!detail::parse_number(*s, v)) fail(key, "'" + *s + "' is not a valid number");
        return v;
    }

    std::optional<bool> get_bool(const std::string& key) {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        if (*s == "true" || *s == "1" || *s == "yes") return true;
        if (*s == "false" || *s == "0" || *s == "no") return false;
        fail(key, "'" + *s + "' is not a boolean");
    }

    template <typename T>
    std::optional<std::vector<T>> get_list(const std::string& key) {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        std::vector<T> out;
        if (s->empty()) return out;
        for (const auto& part : detail::split(*s, ',')) {
            T v{};
            if (!detail::parse_number(part, v)) fail(key, "'" + part + "' is not a valid number");
            out.push_back(v);
        }
        return out;
    }

    template <typename T>
    void read(const std::string& key, T& target) {
        if constexpr (std::is_same_v<T, bool>) {
            if (auto v = get_bool(key)) target = *v;
        } else {
            if (auto v = get_number<T>(key)) target = *v;
        }
    }

    [[noreturn]] void fail(const std::string& key, const std::string& why) const {
        auto it = entries_.find(key);
        const std::string where = it == entries_.end() ? source_ : source_ + ":" + std::to_string(it->second.line);
        throw ConfigError(where + ": field '" + key + "': " + why);
    }

    void reject_unknown() const {
        for (const auto& [key, e] : entries_)
            if (!e.used) throw ConfigError(source_ + ":" + std::to_string(e.line) + ": unknown field '" + key + "'");
    }

private:
    struct Entry {
        std::string value;
        int line = 0;
        bool used = false;
    };
    std::string source_;
    std::string text_;
    std::map<std::string, Entry> entries_;
};

// Runs `validate` and re-raises its message tagged with the offending field
// when the message names one.
template <typename F>
void validate_fields(KeyValueConfig& kv, const std::vector<std::string>& fields, F&& validate) {
    try {
        validate();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        for (const auto& f : fields)
            if (msg.find(f) != std::string::npos && kv.has(f)) kv.fail(f, msg);
        throw;
    }
}

inline GenConfig parse_gen_config(KeyValueConfig& kv) {
    GenConfig g;
    if (auto t = kv.get_string("task")) {
        try {
            g.task = parse_task(*t);
        } catch (const ConfigError& e) {
            kv.fail("task", e.what());
        }
    }
    if (g.task == Task::T1) g.visits_min = std::max(g.visits_min, 2);
    kv.read("n_patients", g.n_patients);
    kv.read("visits_min", g.visits_min);
    kv.read("visits_max", g.visits_max);
    kv.read("bscans_min", g.bscans_min);
    kv.read("bscans_max", g.bscans_max);
    kv.read("feature_dim", g.feature_dim);
    if (auto r = kv.get_list<double>("class_ratios")) g.class_ratios = *r;
    if (auto d = kv.get_list<double>("ordinal_direction")) g.ordinal_direction = *d;
    kv.read("step_size", g.step_size);
    kv.read("noise_sigma", g.noise_sigma);
    kv.read("patient_sigma", g.patient_sigma);
    kv.read("other_rate", g.other_rate);
    kv.read("seed", g.seed);
    kv.reject_unknown();
    validate_fields(kv,
                    {"n_patients", "visits", "bscans", "feature_dim", "class_ratios", "ordinal_direction",
                     "step_size", "noise_sigma", "patient_sigma", "other_rate"},
                    [&] { g.validate(); });
    return g;
}

/// How cmd_train splits patients into training and validation.
struct SplitConfig {
    int folds = 0;          // > 1: k-fold, one model per fold
    double val_ratio = 0.2; // used when folds <= 1
};

inline std::vector<std::size_t> parse_widths(KeyValueConfig& kv, const std::string& key,
                                             std::vector<std::size_t> fallback) {
    auto v = kv.get_list<std::size_t>(key);
    if (!v) return fallback;
    for (auto w : *v)
        if (w == 0) kv.fail(key, "layer widths must be positive");
    return *v;
}

inline TrainConfig parse_train_config(KeyValueConfig& kv, SplitConfig* split = nullptr) {
    TrainConfig c;
    if (auto t = kv.get_string("task")) {
        try {
            c.task = parse_task(*t);
        } catch (const ConfigError& e) {
            kv.fail("task", e.what());
        }
    }
    c.encoder_hidden = parse_widths(kv, "encoder_hidden", c.encoder_hidden);
    c.head_hidden = parse_widths(kv, "head_hidden", c.head_hidden);
    kv.read("dropout", c.dropout);
    kv.read("epochs", c.epochs);
    kv.read("warmup_epochs", c.warmup_epochs);
    kv.read("freeze_head_epochs", c.freeze_head_epochs);
    kv.read("lr", c.lr);
    kv.read("lr_decay", c.lr_decay);
    kv.read("batch_size", c.batch_size);
    kv.read("seed", c.seed);
    if (auto l = kv.get_string("loss")) {
        try {
            c.loss_kind = parse_loss_kind(*l);
        } catch (const ConfigError& e) {
            kv.fail("loss", e.what());
        }
    }
    kv.read("alpha", c.loss.alpha);
    kv.read("gamma", c.loss.gamma);
    kv.read("focal_weight", c.loss.focal_weight);
    kv.read("emd_weight", c.loss.emd_weight);
    kv.read("epsilon", c.loss.epsilon);
    kv.read("balanced_batches", c.balanced_batches);
    kv.read("undersample_majority", c.undersample_majority);
    if (auto o = kv.get_string("optimizer")) {
        if (*o == "sgd") c.optimizer.kind = OptimizerKind::SGD;
        else if (*o == "adam" || *o == "adamw") c.optimizer.kind = OptimizerKind::Adam;
        else kv.fail("optimizer", "expected sgd, adam or adamw");
    }
    kv.read("beta1", c.optimizer.beta1);
    kv.read("beta2", c.optimizer.beta2);
    kv.read("adam_eps", c.optimizer.eps);
    kv.read("weight_decay", c.optimizer.weight_decay);
    kv.read("early_stop_patience", c.early_stop_patience);
    if (split) {
        kv.read("folds", split->folds);
        kv.read("val_ratio", split->val_ratio);
        if (!(split->val_ratio > 0.0 && split->val_ratio < 1.0)) kv.fail("val_ratio", "must lie in (0, 1)");
        if (split->folds < 0) kv.fail("folds", "must be >= 0");
    }
    kv.reject_unknown();
    validate_fields(kv,
                    {"epochs", "warmup_epochs", "freeze_head_epochs", "lr_decay", "lr", "batch_size",
                     "undersample_majority", "early_stop_patience", "dropout", "alpha", "gamma", "focal_weight",
                     "emd_weight", "epsilon"},
                    [&] { c.validate(); });
    return c;
}

} // namespace ordchange
