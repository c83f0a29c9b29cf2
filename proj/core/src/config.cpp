#include "ept/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ept {

using nlohmann::json;

void CliConfig::validate() const {
    protocol.validate();
    train.validate();
    nep.validate();
    if (pool.d_t < 0) throw ConfigError("config: pool.d_t must be >= 0");
    if (pool.d_h < 1) throw ConfigError("config: pool.d_h must be >= 1");
    if (!(pool.alpha > 0)) throw ConfigError("config: pool.alpha must be > 0");
    if (bias_shift < 0) throw ConfigError("config: bias_shift must be >= 0");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
}

bool CliConfig::operator==(const CliConfig& o) const {
    return protocol.base_classes == o.protocol.base_classes &&
           protocol.stages == o.protocol.stages && protocol.ways == o.protocol.ways &&
           protocol.shots == o.protocol.shots &&
           protocol.test_per_class == o.protocol.test_per_class &&
           train.base_epochs == o.train.base_epochs && train.inc_epochs == o.train.inc_epochs &&
           train.batch_size == o.train.batch_size && train.lambda_inter == o.train.lambda_inter &&
           train.temperature == o.train.temperature &&
           train.learning_rate == o.train.learning_rate &&
           train.adam_beta1 == o.train.adam_beta1 && train.adam_beta2 == o.train.adam_beta2 &&
           train.adam_eps == o.train.adam_eps && train.seed == o.train.seed &&
           train.train_logits == o.train.train_logits && nep.lambda_reg == o.nep.lambda_reg &&
           nep.eps == o.nep.eps && pool == o.pool && ablation == o.ablation &&
           bias_shift == o.bias_shift && threads == o.threads && out == o.out;
}

namespace {

void reject_unknown(const json& obj, const char* where,
                    std::initializer_list<const char*> known) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) ok = true;
        if (!ok)
            throw ConfigError(std::string("config: unknown key \"") + key + "\" in " + where);
    }
}

template <class T>
T get_num(const json& obj, const char* where, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(std::string("config: ") + where + "." + key +
                                              " must be a number");
    } else {
        if (!v.is_number_integer() && !v.is_number_unsigned())
            throw ConfigError(std::string("config: ") + where + "." + key +
                              " must be an integer");
    }
    return v.get<T>();
}

bool get_bool(const json& obj, const char* where, const char* key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_boolean())
        throw ConfigError(std::string("config: ") + where + "." + key + " must be a boolean");
    return v.get<bool>();
}

}  // namespace

CliConfig parse_cli_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: top level must be an object");
    reject_unknown(root, "top level",
                   {"protocol", "train", "nep", "pool", "ablation", "train_logits", "bias_shift",
                    "seed", "threads", "out"});

    CliConfig cfg;

    if (!root.contains("protocol")) throw ConfigError("config: \"protocol\" is required");
    {
        const json& p = root.at("protocol");
        if (!p.is_object()) throw ConfigError("config: protocol must be an object");
        reject_unknown(p, "protocol", {"base_classes", "stages", "ways", "shots", "test_per_class"});
        cfg.protocol.base_classes = get_num<std::uint32_t>(p, "protocol", "base_classes", 0);
        cfg.protocol.stages = get_num<std::uint32_t>(p, "protocol", "stages", 0);
        cfg.protocol.ways = get_num<std::uint32_t>(p, "protocol", "ways", 1);
        cfg.protocol.shots = get_num<std::uint32_t>(p, "protocol", "shots", 5);
        if (p.contains("test_per_class")) {
            const json& v = p.at("test_per_class");
            if (v.is_string() && v.get<std::string>() == "all")
                cfg.protocol.test_per_class.reset();
            else if (v.is_number_integer() || v.is_number_unsigned())
                cfg.protocol.test_per_class = v.get<std::uint32_t>();
            else
                throw ConfigError("config: protocol.test_per_class must be an integer or \"all\"");
        }
    }

    if (root.contains("train")) {
        const json& t = root.at("train");
        if (!t.is_object()) throw ConfigError("config: train must be an object");
        reject_unknown(t, "train",
                       {"base_epochs", "inc_epochs", "batch_size", "lambda_inter", "temperature",
                        "learning_rate", "adam_beta1", "adam_beta2", "adam_eps"});
        cfg.train.base_epochs = get_num<int>(t, "train", "base_epochs", cfg.train.base_epochs);
        cfg.train.inc_epochs = get_num<int>(t, "train", "inc_epochs", cfg.train.inc_epochs);
        cfg.train.batch_size = get_num<int>(t, "train", "batch_size", cfg.train.batch_size);
        cfg.train.lambda_inter = get_num<double>(t, "train", "lambda_inter", cfg.train.lambda_inter);
        cfg.train.temperature = get_num<double>(t, "train", "temperature", cfg.train.temperature);
        cfg.train.learning_rate =
            get_num<double>(t, "train", "learning_rate", cfg.train.learning_rate);
        cfg.train.adam_beta1 = get_num<double>(t, "train", "adam_beta1", cfg.train.adam_beta1);
        cfg.train.adam_beta2 = get_num<double>(t, "train", "adam_beta2", cfg.train.adam_beta2);
        cfg.train.adam_eps = get_num<double>(t, "train", "adam_eps", cfg.train.adam_eps);
    }

    if (root.contains("nep")) {
        const json& n = root.at("nep");
        if (!n.is_object()) throw ConfigError("config: nep must be an object");
        reject_unknown(n, "nep", {"lambda_reg", "epsilon"});
        cfg.nep.lambda_reg = get_num<double>(n, "nep", "lambda_reg", cfg.nep.lambda_reg);
        cfg.nep.eps = get_num<double>(n, "nep", "epsilon", cfg.nep.eps);
    }

    if (root.contains("pool")) {
        const json& p = root.at("pool");
        if (!p.is_object()) throw ConfigError("config: pool must be an object");
        reject_unknown(p, "pool", {"d_t", "d_h", "alpha", "projector_sharing"});
        cfg.pool.d_t = get_num<std::int64_t>(p, "pool", "d_t", cfg.pool.d_t);
        cfg.pool.d_h = get_num<std::int64_t>(p, "pool", "d_h", cfg.pool.d_h);
        cfg.pool.alpha = get_num<double>(p, "pool", "alpha", cfg.pool.alpha);
        if (p.contains("projector_sharing")) {
            const std::string s = p.at("projector_sharing").is_string()
                                      ? p.at("projector_sharing").get<std::string>()
                                      : std::string();
            if (s == "per_class")
                cfg.pool.sharing = ProjectorSharing::PerClass;
            else if (s == "per_task")
                cfg.pool.sharing = ProjectorSharing::PerTask;
            else
                throw ConfigError(
                    "config: pool.projector_sharing must be \"per_class\" or \"per_task\"");
        }
    }

    if (root.contains("ablation")) {
        const json& a = root.at("ablation");
        if (!a.is_object()) throw ConfigError("config: ablation must be an object");
        reject_unknown(a, "ablation", {"nep", "cs_offset", "ta_offset"});
        cfg.ablation.nep = get_bool(a, "ablation", "nep", cfg.ablation.nep);
        cfg.ablation.cs_offset = get_bool(a, "ablation", "cs_offset", cfg.ablation.cs_offset);
        cfg.ablation.ta_offset = get_bool(a, "ablation", "ta_offset", cfg.ablation.ta_offset);
    }

    if (root.contains("train_logits")) {
        const std::string s = root.at("train_logits").is_string()
                                  ? root.at("train_logits").get<std::string>()
                                  : std::string();
        if (s == "nep")
            cfg.train.train_logits = LogitMode::Nep;
        else if (s == "distance")
            cfg.train.train_logits = LogitMode::Distance;
        else
            throw ConfigError("config: train_logits must be \"nep\" or \"distance\"");
    }

    cfg.bias_shift = get_num<double>(root, "top level", "bias_shift", 0.0);
    cfg.train.seed = get_num<std::uint64_t>(root, "top level", "seed", 0);
    cfg.threads = get_num<int>(root, "top level", "threads", 1);
    if (root.contains("out")) {
        if (!root.at("out").is_string()) throw ConfigError("config: out must be a string");
        cfg.out = root.at("out").get<std::string>();
    }

    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

CliConfig load_cli_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_cli_config(buf.str());
}

std::string to_json(const CliConfig& cfg) {
    json root;
    root["protocol"]["base_classes"] = cfg.protocol.base_classes;
    root["protocol"]["stages"] = cfg.protocol.stages;
    root["protocol"]["ways"] = cfg.protocol.ways;
    root["protocol"]["shots"] = cfg.protocol.shots;
    if (cfg.protocol.test_per_class)
        root["protocol"]["test_per_class"] = *cfg.protocol.test_per_class;
    else
        root["protocol"]["test_per_class"] = "all";

    root["train"]["base_epochs"] = cfg.train.base_epochs;
    root["train"]["inc_epochs"] = cfg.train.inc_epochs;
    root["train"]["batch_size"] = cfg.train.batch_size;
    root["train"]["lambda_inter"] = cfg.train.lambda_inter;
    root["train"]["temperature"] = cfg.train.temperature;
    root["train"]["learning_rate"] = cfg.train.learning_rate;
    root["train"]["adam_beta1"] = cfg.train.adam_beta1;
    root["train"]["adam_beta2"] = cfg.train.adam_beta2;
    root["train"]["adam_eps"] = cfg.train.adam_eps;

    root["nep"]["lambda_reg"] = cfg.nep.lambda_reg;
    root["nep"]["epsilon"] = cfg.nep.eps;

    root["pool"]["d_t"] = std::int64_t(cfg.pool.d_t);
    root["pool"]["d_h"] = std::int64_t(cfg.pool.d_h);
    root["pool"]["alpha"] = cfg.pool.alpha;
    root["pool"]["projector_sharing"] =
        cfg.pool.sharing == ProjectorSharing::PerClass ? "per_class" : "per_task";

    root["ablation"]["nep"] = cfg.ablation.nep;
    root["ablation"]["cs_offset"] = cfg.ablation.cs_offset;
    root["ablation"]["ta_offset"] = cfg.ablation.ta_offset;

    root["train_logits"] = cfg.train.train_logits == LogitMode::Nep ? "nep" : "distance";
    root["bias_shift"] = cfg.bias_shift;
    root["seed"] = cfg.train.seed;
    root["threads"] = cfg.threads;
    if (cfg.out) root["out"] = *cfg.out;

    return root.dump(2);
}

}  // namespace ept
