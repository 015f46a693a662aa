#include "hiergeo/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "hiergeo/errors.hpp"
#include "hiergeo/rng.hpp"

namespace hiergeo {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

double parse_number(const std::string& token, std::size_t lineno) {
    std::size_t consumed = 0;
    double value;
    try {
        value = std::stod(token, &consumed);
    } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": invalid number '" + token + "'");
    }
    if (consumed != token.size())
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": invalid number '" + token + "'");
    return value;
}

ConfigValue parse_value(const std::string& raw, std::size_t lineno) {
    ConfigValue v;
    const std::string token = trim(raw);
    if (token.empty())
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": missing value");
    if (token.front() == '"') {
        if (token.size() < 2 || token.back() != '"')
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": unterminated string");
        v.kind = ConfigValue::Kind::text;
        v.text = token.substr(1, token.size() - 2);
        return v;
    }
    if (token == "true" || token == "false") {
        v.kind = ConfigValue::Kind::boolean;
        v.boolean = token == "true";
        return v;
    }
    if (token.front() == '[') {
        if (token.back() != ']')
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": unterminated array");
        v.kind = ConfigValue::Kind::array;
        const std::string body = token.substr(1, token.size() - 2);
        std::string item;
        std::istringstream ss(body);
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            v.array.push_back(parse_number(item, lineno));
        }
        return v;
    }
    v.kind = ConfigValue::Kind::number;
    v.number = parse_number(token, lineno);
    return v;
}

}  // namespace

std::map<std::string, ConfigValue> parse_config_text(const std::string& text) {
    std::map<std::string, ConfigValue> out;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (out.count(full))
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": duplicate key " + full);
        out[full] = parse_value(line.substr(eq + 1), lineno);
    }
    return out;
}

namespace {

struct ConfigReader {
    std::map<std::string, ConfigValue> values;

    double number(const std::string& key, double fallback) {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (it->second.kind != ConfigValue::Kind::number)
            throw ConfigError("config key " + key + " must be a number");
        consumed.insert(key);
        return it->second.number;
    }
    int integer(const std::string& key, int fallback) {
        const double v = number(key, fallback);
        const int i = static_cast<int>(v);
        if (static_cast<double>(i) != v)
            throw ConfigError("config key " + key + " must be an integer");
        return i;
    }
    bool boolean(const std::string& key, bool fallback) {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (it->second.kind != ConfigValue::Kind::boolean)
            throw ConfigError("config key " + key + " must be a boolean");
        consumed.insert(key);
        return it->second.boolean;
    }
    std::string text(const std::string& key, const std::string& fallback) {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (it->second.kind != ConfigValue::Kind::text)
            throw ConfigError("config key " + key + " must be a string");
        consumed.insert(key);
        return it->second.text;
    }
    std::vector<double> array(const std::string& key,
                              const std::vector<double>& fallback) {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (it->second.kind != ConfigValue::Kind::array)
            throw ConfigError("config key " + key + " must be an array");
        consumed.insert(key);
        return it->second.array;
    }
    std::vector<int> int_array(const std::string& key,
                               const std::vector<int>& fallback) {
        std::vector<double> fb(fallback.begin(), fallback.end());
        const auto values64 = array(key, fb);
        std::vector<int> out;
        for (double v : values64) {
            const int i = static_cast<int>(v);
            if (static_cast<double>(i) != v)
                throw ConfigError("config key " + key +
                                  " must hold integers");
            out.push_back(i);
        }
        return out;
    }
    void reject_unknown() const {
        for (const auto& [key, value] : values)
            if (!consumed.count(key))
                throw ConfigError("unknown config key: " + key);
    }

    std::set<std::string> consumed;
};

}  // namespace

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();

    ConfigReader reader{parse_config_text(buffer.str())};
    PipelineConfig cfg;

    cfg.seed = static_cast<std::uint64_t>(reader.number("seed", 1.0));
    cfg.geo.thresholds = reader.array("geo.thresholds", cfg.geo.thresholds);

    cfg.synth.n_buildings_train =
        reader.integer("synth.n_buildings_train", cfg.synth.n_buildings_train);
    cfg.synth.n_buildings_test =
        reader.integer("synth.n_buildings_test", cfg.synth.n_buildings_test);
    cfg.synth.area_side = reader.number("synth.area_side", cfg.synth.area_side);
    cfg.synth.drone_images_per_building =
        reader.integer("synth.drone_images_per_building",
                       cfg.synth.drone_images_per_building);
    cfg.synth.satellite_images_per_building =
        reader.integer("synth.satellite_images_per_building",
                       cfg.synth.satellite_images_per_building);
    cfg.synth.raw_dim = reader.integer("synth.raw_dim", cfg.synth.raw_dim);
    cfg.synth.identity_strength =
        reader.number("synth.identity_strength", cfg.synth.identity_strength);
    cfg.synth.context_strength =
        reader.number("synth.context_strength", cfg.synth.context_strength);
    cfg.synth.context_length_scale =
        reader.number("synth.context_length_scale",
                      cfg.synth.context_length_scale);
    cfg.synth.noise_sigma =
        reader.number("synth.noise_sigma", cfg.synth.noise_sigma);

    cfg.trainer.embed_dim =
        reader.integer("trainer.embed_dim", cfg.trainer.embed_dim);
    cfg.trainer.batch_buildings =
        reader.integer("trainer.batch_buildings", cfg.trainer.batch_buildings);
    cfg.trainer.steps_per_epoch =
        reader.integer("trainer.steps_per_epoch", cfg.trainer.steps_per_epoch);
    cfg.trainer.epochs = reader.integer("trainer.epochs", cfg.trainer.epochs);
    cfg.trainer.learning_rate =
        reader.number("trainer.learning_rate", cfg.trainer.learning_rate);
    cfg.trainer.momentum =
        reader.number("trainer.momentum", cfg.trainer.momentum);

    cfg.loss.tau = reader.number("dycl.tau", cfg.loss.tau);
    cfg.loss.margin_schedule.margins =
        reader.array("dycl.margins", cfg.loss.margin_schedule.margins);
    cfg.loss.lambda1 = reader.number("loss.lambda1", cfg.loss.lambda1);
    cfg.loss.lambda2 = reader.number("loss.lambda2", cfg.loss.lambda2);
    cfg.loss.lambda3 = reader.number("loss.lambda3", cfg.loss.lambda3);
    cfg.loss.third_term_enabled =
        reader.boolean("loss.third_term", cfg.loss.third_term_enabled);

    cfg.rerank.k = reader.integer("rerank.k", cfg.rerank.k);
    cfg.rerank.lambda_fuse =
        reader.number("rerank.lambda", cfg.rerank.lambda_fuse);
    cfg.rerank.k_expand = reader.integer("rerank.k_expand", cfg.rerank.k_expand);
    cfg.rerank.mu = reader.number("rerank.mu", cfg.rerank.mu);
    cfg.rerank.k_floor = reader.integer("rerank.k_floor", cfg.rerank.k_floor);
    cfg.rerank_schedule = reader.int_array("rerank.schedule", cfg.rerank_schedule);

    cfg.eval_gains = reader.array("eval.gains", cfg.eval_gains);
    cfg.eval_ks = reader.int_array("eval.ks", cfg.eval_ks);

    cfg.out_dir = reader.text("io.out_dir", cfg.out_dir);

    reader.reject_unknown();
    cfg.propagate_seed();
    cfg.validate();
    return cfg;
}

void PipelineConfig::propagate_seed() {
    synth.seed = Rng::mix(seed + 0x100);
    trainer.seed = Rng::mix(seed + 0x200);
}

MetricConfig PipelineConfig::metric_config() const {
    MetricConfig mc = MetricConfig::defaults(geo.levels());
    if (!eval_gains.empty()) mc.gains = eval_gains;
    mc.recall_ks = eval_ks;
    return mc;
}

void PipelineConfig::validate() const {
    geo.validate();
    synth.validate();
    trainer.validate();
    loss.validate();
    rerank.validate();
    if (!rerank_schedule.empty()) {
        KSchedule s{rerank_schedule};
        s.validate();
    }
    metric_config().validate(geo.levels());
    if (out_dir.empty()) throw ConfigError("io.out_dir must be non-empty");
}

std::string PipelineConfig::canonical() const {
    std::ostringstream out;
    out.precision(17);
    auto arr = [&](const auto& v) {
        out << '[';
        for (std::size_t i = 0; i < v.size(); ++i)
            out << (i ? "," : "") << v[i];
        out << ']';
    };
    out << "seed=" << seed << '\n';
    out << "geo.thresholds=";
    arr(geo.thresholds);
    out << '\n';
    out << "synth.n_buildings_train=" << synth.n_buildings_train << '\n'
        << "synth.n_buildings_test=" << synth.n_buildings_test << '\n'
        << "synth.area_side=" << synth.area_side << '\n'
        << "synth.drone_images_per_building="
        << synth.drone_images_per_building << '\n'
        << "synth.satellite_images_per_building="
        << synth.satellite_images_per_building << '\n'
        << "synth.raw_dim=" << synth.raw_dim << '\n'
        << "synth.identity_strength=" << synth.identity_strength << '\n'
        << "synth.context_strength=" << synth.context_strength << '\n'
        << "synth.context_length_scale=" << synth.context_length_scale << '\n'
        << "synth.noise_sigma=" << synth.noise_sigma << '\n'
        << "trainer.embed_dim=" << trainer.embed_dim << '\n'
        << "trainer.batch_buildings=" << trainer.batch_buildings << '\n'
        << "trainer.steps_per_epoch=" << trainer.steps_per_epoch << '\n'
        << "trainer.epochs=" << trainer.epochs << '\n'
        << "trainer.learning_rate=" << trainer.learning_rate << '\n'
        << "trainer.momentum=" << trainer.momentum << '\n'
        << "dycl.tau=" << loss.tau << '\n';
    out << "dycl.margins=";
    arr(loss.margin_schedule.margins);
    out << '\n';
    out << "loss.lambda1=" << loss.lambda1 << '\n'
        << "loss.lambda2=" << loss.lambda2 << '\n'
        << "loss.lambda3=" << loss.lambda3 << '\n'
        << "loss.third_term=" << (loss.third_term_enabled ? 1 : 0) << '\n'
        << "rerank.k=" << rerank.k << '\n'
        << "rerank.lambda=" << rerank.lambda_fuse << '\n'
        << "rerank.k_expand=" << rerank.k_expand << '\n'
        << "rerank.mu=" << rerank.mu << '\n'
        << "rerank.k_floor=" << rerank.k_floor << '\n';
    out << "rerank.schedule=";
    arr(rerank_schedule);
    out << '\n';
    out << "eval.gains=";
    arr(eval_gains);
    out << '\n';
    out << "eval.ks=";
    arr(eval_ks);
    out << '\n';
    out << "io.out_dir=" << out_dir << '\n';
    return out.str();
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot hash missing file: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace hiergeo
