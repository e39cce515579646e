#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advprop/data.hpp"
#include "advprop/rational.hpp"
#include "advprop/trainers.hpp"

namespace advprop {

using json = nlohmann::json;

inline TrainMode mode_from_string(const std::string& s) {
    if (s == "vanilla") return TrainMode::vanilla;
    if (s == "advprop") return TrainMode::advprop;
    if (s == "fast") return TrainMode::fast;
    throw ConfigError(concat("mode: unknown value '", s, "' (vanilla|advprop|fast)"));
}

inline StatsMode stats_mode_from_string(const std::string& s) {
    if (s == "batch") return StatsMode::batch;
    if (s == "running") return StatsMode::running;
    throw ConfigError(concat("stats_mode: unknown value '", s, "' (batch|running)"));
}

struct DataConfig {
    std::string kind = "synth";  // synth | idx | file
    // synth
    int n = 10000;
    int val_n = 2000;
    int classes = 4;
    int channels = 1;
    int hw = 16;
    double separation = 0.45;
    uint64_t seed = 12345;  // dataset identity is independent of the run seed
    // idx
    std::string images, labels, val_images, val_labels;
    // file (serialized container)
    std::string train_file, val_file;

    void validate() const {
        if (kind == "synth") {
            if (n < classes) throw ConfigError("data.n must be >= data.classes");
            if (classes < 2) throw ConfigError("data.classes must be >= 2");
            if (hw < 4) throw ConfigError("data.hw must be >= 4");
            if (channels < 1) throw ConfigError("data.channels must be >= 1");
            if (separation < 0) throw ConfigError("data.separation must be >= 0");
        } else if (kind == "idx") {
            if (images.empty() || labels.empty())
                throw ConfigError("data.kind=idx needs data.images and data.labels");
        } else if (kind == "file") {
            if (train_file.empty()) throw ConfigError("data.kind=file needs data.train_file");
        } else {
            throw ConfigError(concat("data.kind: unknown value '", kind, "' (synth|idx|file)"));
        }
    }
};

struct ModelConfig {
    std::vector<int> conv_channels = {8, 16};
    int pool = 2;
};

struct ExperimentConfig {
    TrainConfig train;
    DataConfig data;
    ModelConfig model;
    std::string precision = "f32";
    int eval_batch = 256;

    void validate() const {
        train.validate();
        data.validate();
        if (precision != "f32" && precision != "f64")
            throw ConfigError(concat("precision: unknown value '", precision, "' (f32|f64)"));
        if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
        if (model.conv_channels.empty()) throw ConfigError("model.conv_channels must not be empty");
        if (model.pool < 2) throw ConfigError("model.pool must be >= 2");
    }
};

// ---------------------------------------------------------------------------
// JSON round trip. Unknown keys are rejected so typos surface as config
// errors instead of silently keeping defaults.

namespace detail {

inline void check_keys(const json& j, const std::vector<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError(concat(where, ": unknown field '", it.key(), "'"));
    }
}

inline Rational rational_field(const json& j, const std::string& key, Rational fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j[key];
    if (v.is_string()) return parse_rational(v.get<std::string>());
    if (v.is_number_integer()) return Rational(v.get<long long>(), 1);
    if (v.is_number()) return parse_rational(concat(v.get<double>()));
    throw ConfigError(concat(key, ": expected a number or fraction string"));
}

inline double real_field(const json& j, const std::string& key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j[key];
    if (v.is_string()) return parse_rational(v.get<std::string>()).value();
    if (v.is_number()) return v.get<double>();
    throw ConfigError(concat(key, ": expected a number"));
}

}  // namespace detail

inline AttackConfig attack_from_json(const json& j) {
    detail::check_keys(j, {"epsilon", "steps", "random_init", "targeted", "stats_mode", "step_size",
                           "clip_images"},
                       "attack");
    AttackConfig a;
    a.epsilon = detail::real_field(j, "epsilon", a.epsilon);
    a.steps = j.value("steps", a.steps);
    a.random_init = j.value("random_init", a.random_init);
    a.targeted = j.value("targeted", a.targeted);
    if (j.contains("stats_mode")) a.stats_mode = stats_mode_from_string(j["stats_mode"].get<std::string>());
    a.step_size = detail::real_field(j, "step_size", a.step_size);
    a.clip_images = j.value("clip_images", a.clip_images);
    return a;
}

inline json attack_to_json(const AttackConfig& a) {
    return json{{"epsilon", a.epsilon},
                {"steps", a.steps},
                {"random_init", a.random_init},
                {"targeted", a.targeted},
                {"stats_mode", a.stats_mode == StatsMode::batch ? "batch" : "running"},
                {"step_size", a.step_size},
                {"clip_images", a.clip_images}};
}

inline ExperimentConfig config_from_json(const json& j) {
    detail::check_keys(j, {"mode", "p_adv", "beta", "base_epochs", "decay_epochs", "lr", "momentum",
                           "weight_decay", "batch_size", "shards", "attack", "shuffle_bn", "rebalance",
                           "sync_update_speed", "equal_budget", "aux_weight_decay",
                           "rescale_before_combine", "seed", "data", "model", "precision", "eval_batch"},
                       "config");
    ExperimentConfig cfg;
    if (!j.contains("mode")) throw ConfigError("mode: required (vanilla|advprop|fast)");
    cfg.train.mode = mode_from_string(j["mode"].get<std::string>());
    cfg.train.p_adv = detail::rational_field(j, "p_adv", cfg.train.p_adv);
    cfg.train.beta = detail::real_field(j, "beta", cfg.train.beta);
    cfg.train.base_epochs = j.value("base_epochs", cfg.train.base_epochs);
    if (j.contains("decay_epochs")) cfg.train.decay_epochs = j["decay_epochs"].get<std::vector<int>>();
    cfg.train.lr = detail::real_field(j, "lr", cfg.train.lr);
    cfg.train.momentum = detail::real_field(j, "momentum", cfg.train.momentum);
    cfg.train.weight_decay = detail::real_field(j, "weight_decay", cfg.train.weight_decay);
    cfg.train.batch_size = j.value("batch_size", cfg.train.batch_size);
    cfg.train.shards = j.value("shards", cfg.train.shards);
    if (j.contains("attack")) cfg.train.attack = attack_from_json(j["attack"]);
    cfg.train.shuffle_bn = j.value("shuffle_bn", cfg.train.shuffle_bn);
    cfg.train.rebalance = j.value("rebalance", cfg.train.rebalance);
    cfg.train.sync_update_speed = j.value("sync_update_speed", cfg.train.sync_update_speed);
    cfg.train.equal_budget = j.value("equal_budget", cfg.train.equal_budget);
    cfg.train.aux_weight_decay = j.value("aux_weight_decay", cfg.train.aux_weight_decay);
    cfg.train.rescale_before_combine = j.value("rescale_before_combine", cfg.train.rescale_before_combine);
    cfg.train.seed = j.value("seed", cfg.train.seed);
    if (j.contains("data")) {
        const auto& d = j["data"];
        detail::check_keys(d, {"kind", "n", "val_n", "classes", "channels", "hw", "separation", "seed",
                               "images", "labels", "val_images", "val_labels", "train_file", "val_file"},
                           "data");
        cfg.data.kind = d.value("kind", cfg.data.kind);
        cfg.data.n = d.value("n", cfg.data.n);
        cfg.data.val_n = d.value("val_n", cfg.data.val_n);
        cfg.data.classes = d.value("classes", cfg.data.classes);
        cfg.data.channels = d.value("channels", cfg.data.channels);
        cfg.data.hw = d.value("hw", cfg.data.hw);
        cfg.data.separation = d.value("separation", cfg.data.separation);
        cfg.data.seed = d.value("seed", cfg.data.seed);
        cfg.data.images = d.value("images", cfg.data.images);
        cfg.data.labels = d.value("labels", cfg.data.labels);
        cfg.data.val_images = d.value("val_images", cfg.data.val_images);
        cfg.data.val_labels = d.value("val_labels", cfg.data.val_labels);
        cfg.data.train_file = d.value("train_file", cfg.data.train_file);
        cfg.data.val_file = d.value("val_file", cfg.data.val_file);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        detail::check_keys(m, {"conv_channels", "pool"}, "model");
        if (m.contains("conv_channels")) cfg.model.conv_channels = m["conv_channels"].get<std::vector<int>>();
        cfg.model.pool = m.value("pool", cfg.model.pool);
    }
    cfg.precision = j.value("precision", cfg.precision);
    cfg.eval_batch = j.value("eval_batch", cfg.eval_batch);
    return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["mode"] = to_string(cfg.train.mode);
    j["p_adv"] = to_string(cfg.train.p_adv);
    j["beta"] = cfg.train.beta;
    j["base_epochs"] = cfg.train.base_epochs;
    j["decay_epochs"] = cfg.train.decay_epochs;
    j["lr"] = cfg.train.lr;
    j["momentum"] = cfg.train.momentum;
    j["weight_decay"] = cfg.train.weight_decay;
    j["batch_size"] = cfg.train.batch_size;
    j["shards"] = cfg.train.shards;
    j["attack"] = attack_to_json(cfg.train.attack);
    j["shuffle_bn"] = cfg.train.shuffle_bn;
    j["rebalance"] = cfg.train.rebalance;
    j["sync_update_speed"] = cfg.train.sync_update_speed;
    j["equal_budget"] = cfg.train.equal_budget;
    j["aux_weight_decay"] = cfg.train.aux_weight_decay;
    j["rescale_before_combine"] = cfg.train.rescale_before_combine;
    j["seed"] = cfg.train.seed;
    j["data"] = json{{"kind", cfg.data.kind},       {"n", cfg.data.n},
                     {"val_n", cfg.data.val_n},     {"classes", cfg.data.classes},
                     {"channels", cfg.data.channels}, {"hw", cfg.data.hw},
                     {"separation", cfg.data.separation}, {"seed", cfg.data.seed}};
    if (cfg.data.kind == "idx") {
        j["data"]["images"] = cfg.data.images;
        j["data"]["labels"] = cfg.data.labels;
        j["data"]["val_images"] = cfg.data.val_images;
        j["data"]["val_labels"] = cfg.data.val_labels;
    }
    if (cfg.data.kind == "file") {
        j["data"]["train_file"] = cfg.data.train_file;
        j["data"]["val_file"] = cfg.data.val_file;
    }
    j["model"] = json{{"conv_channels", cfg.model.conv_channels}, {"pool", cfg.model.pool}};
    j["precision"] = cfg.precision;
    j["eval_batch"] = cfg.eval_batch;
    return j;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(concat("cannot open config '", path, "'"));
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw ConfigError(concat("config '", path, "' is not valid JSON"));
    return config_from_json(j);
}

inline void save_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw IoError(concat("cannot write config '", path, "'"));
    os << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace advprop
