#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sraa/engine.hpp"
#include "sraa/errors.hpp"

namespace sraa {

/// Which runs a config describes: evaluation protocol, shot count, fold, and
/// whether the finetuning baseline runs alongside the main method.
struct RunOptions {
    enum class Protocol { Single, Multi };

    Protocol protocol = Protocol::Single;
    std::size_t shots = 1;
    std::optional<std::size_t> fold = 0;  // nullopt = every fold
    bool with_finetune_baseline = false;
};

inline std::string protocol_name(RunOptions::Protocol p) {
    return p == RunOptions::Protocol::Single ? "single" : "multi";
}

inline RunOptions::Protocol parse_protocol(const std::string& s) {
    if (s == "single") return RunOptions::Protocol::Single;
    if (s == "multi") return RunOptions::Protocol::Multi;
    throw ConfigError("protocol must be 'single' or 'multi', got '" + s + "'");
}

/// Full description of an experiment. Every field has a default, so an empty
/// JSON document is a valid config; a minimal real one names only the
/// protocol and shot count.
struct RunConfig {
    TrainConfig train;
    VisualEncoder::Config encoder;
    std::size_t images_per_class = 20;
    std::size_t eval_per_class = 5;
    std::size_t semantic_dim = 16;
    RunOptions options;
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "runs";

    void validate() const {
        train.validate();
        if (images_per_class == 0 || eval_per_class == 0) {
            throw ConfigError("RunConfig: images_per_class and eval_per_class "
                              "must be positive");
        }
        if (encoder.widths.empty()) throw ConfigError("RunConfig: encoder has no layers");
        if (semantic_dim != encoder.widths.back()) {
            throw ConfigError("RunConfig: semantic_dim must equal the encoder's "
                              "output width");
        }
        if (options.shots != 1 && options.shots != 2 && options.shots != 5) {
            throw ConfigError("RunConfig: shots must be 1, 2, or 5");
        }
        if (options.fold && *options.fold >= 9) {
            throw ConfigError("RunConfig: fold must be below 9");
        }
    }

    std::uint64_t hash() const {
        std::uint64_t h = train.hash();
        h = fnv1a64(encoder.widths.data(), encoder.widths.size() * sizeof(std::size_t), h);
        h = fnv1a64(encoder.strides.data(), encoder.strides.size() * sizeof(std::size_t), h);
        h = fnv1a64(&encoder.kernel_size, sizeof(encoder.kernel_size), h);
        h = fnv1a64(&images_per_class, sizeof(images_per_class), h);
        h = fnv1a64(&eval_per_class, sizeof(eval_per_class), h);
        h = fnv1a64(&semantic_dim, sizeof(semantic_dim), h);
        const std::uint64_t proto = static_cast<std::uint64_t>(options.protocol);
        h = fnv1a64(&proto, sizeof(proto), h);
        h = fnv1a64(&options.shots, sizeof(options.shots), h);
        const std::uint64_t fold = options.fold ? *options.fold + 1 : 0;
        h = fnv1a64(&fold, sizeof(fold), h);
        return h;
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const char* where,
                                std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError(std::string("config: unknown key '") + key + "' in " +
                              where);
        }
    }
}

template <typename T>
T field_or(const nlohmann::json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    detail::reject_unknown_keys(j, "top level",
                                {"train", "encoder", "data", "run", "paths"});
    RunConfig cfg;

    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown_keys(
            t, "train",
            {"epochs_base", "epochs_inc", "lr_base", "lr_inc", "poly_power",
             "lambda_align", "lambda_kd", "temperature", "batch_size", "seed",
             "align_background"});
        cfg.train.epochs_base = detail::field_or(t, "epochs_base", cfg.train.epochs_base);
        cfg.train.epochs_inc = detail::field_or(t, "epochs_inc", cfg.train.epochs_inc);
        cfg.train.lr_base = detail::field_or(t, "lr_base", cfg.train.lr_base);
        cfg.train.lr_inc = detail::field_or(t, "lr_inc", cfg.train.lr_inc);
        cfg.train.poly_power = detail::field_or(t, "poly_power", cfg.train.poly_power);
        cfg.train.lambda_align = detail::field_or(t, "lambda_align", cfg.train.lambda_align);
        cfg.train.lambda_kd = detail::field_or(t, "lambda_kd", cfg.train.lambda_kd);
        cfg.train.temperature = detail::field_or(t, "temperature", cfg.train.temperature);
        cfg.train.batch_size = detail::field_or(t, "batch_size", cfg.train.batch_size);
        cfg.train.seed = detail::field_or(t, "seed", cfg.train.seed);
        cfg.train.align_background =
            detail::field_or(t, "align_background", cfg.train.align_background);
    }

    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        detail::reject_unknown_keys(e, "encoder", {"widths", "strides", "kernel_size"});
        cfg.encoder.widths = detail::field_or(e, "widths", cfg.encoder.widths);
        cfg.encoder.strides = detail::field_or(e, "strides", cfg.encoder.strides);
        cfg.encoder.kernel_size = detail::field_or(e, "kernel_size", cfg.encoder.kernel_size);
    }

    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::reject_unknown_keys(
            d, "data", {"images_per_class", "eval_per_class", "semantic_dim"});
        cfg.images_per_class = detail::field_or(d, "images_per_class", cfg.images_per_class);
        cfg.eval_per_class = detail::field_or(d, "eval_per_class", cfg.eval_per_class);
        cfg.semantic_dim = detail::field_or(d, "semantic_dim", cfg.semantic_dim);
    }

    if (j.contains("run")) {
        const auto& r = j.at("run");
        detail::reject_unknown_keys(r, "run", {"protocol", "shots", "fold", "baseline"});
        cfg.options.protocol = parse_protocol(
            detail::field_or<std::string>(r, "protocol", protocol_name(cfg.options.protocol)));
        cfg.options.shots = detail::field_or(r, "shots", cfg.options.shots);
        if (r.contains("fold")) {
            if (r.at("fold").is_string()) {
                if (r.at("fold").get<std::string>() != "all") {
                    throw ConfigError("config: fold must be a number or \"all\"");
                }
                cfg.options.fold.reset();
            } else {
                cfg.options.fold = detail::field_or<std::size_t>(r, "fold", 0);
            }
        }
        const std::string baseline = detail::field_or<std::string>(r, "baseline", "none");
        if (baseline == "ft") {
            cfg.options.with_finetune_baseline = true;
        } else if (baseline != "none") {
            throw ConfigError("config: baseline must be \"ft\" or \"none\"");
        }
    }

    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        detail::reject_unknown_keys(p, "paths", {"data_dir", "out_dir"});
        cfg.data_dir = detail::field_or<std::string>(p, "data_dir", cfg.data_dir.string());
        cfg.out_dir = detail::field_or<std::string>(p, "out_dir", cfg.out_dir.string());
    }

    cfg.validate();
    return cfg;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["train"] = {{"epochs_base", cfg.train.epochs_base},
                  {"epochs_inc", cfg.train.epochs_inc},
                  {"lr_base", cfg.train.lr_base},
                  {"lr_inc", cfg.train.lr_inc},
                  {"poly_power", cfg.train.poly_power},
                  {"lambda_align", cfg.train.lambda_align},
                  {"lambda_kd", cfg.train.lambda_kd},
                  {"temperature", cfg.train.temperature},
                  {"batch_size", cfg.train.batch_size},
                  {"seed", cfg.train.seed},
                  {"align_background", cfg.train.align_background}};
    j["encoder"] = {{"widths", cfg.encoder.widths},
                    {"strides", cfg.encoder.strides},
                    {"kernel_size", cfg.encoder.kernel_size}};
    j["data"] = {{"images_per_class", cfg.images_per_class},
                 {"eval_per_class", cfg.eval_per_class},
                 {"semantic_dim", cfg.semantic_dim}};
    j["run"] = {{"protocol", protocol_name(cfg.options.protocol)},
                {"shots", cfg.options.shots},
                {"baseline", cfg.options.with_finetune_baseline ? "ft" : "none"}};
    if (cfg.options.fold) {
        j["run"]["fold"] = *cfg.options.fold;
    } else {
        j["run"]["fold"] = "all";
    }
    j["paths"] = {{"data_dir", cfg.data_dir.string()},
                  {"out_dir", cfg.out_dir.string()}};
    return j;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_config: cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("load_config: invalid JSON in " + path.string() + ": " +
                          e.what());
    }
    return config_from_json(j);
}

inline void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("save_config: cannot open " + path.string());
    os << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace sraa
