#include "posemine/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace posemine {

using nlohmann::json;

namespace {

// One row per field keeps parsing, validation messages, unknown-key rejection,
// and write-back in a single place.
struct Schema {
    std::set<std::string> keys;
    const json& doc;
    const std::string& origin;

    const json* get(const std::string& key, const char* type_name, bool (json::*is_type)() const) {
        keys.insert(key);
        const auto it = doc.find(key);
        if (it == doc.end()) return nullptr;
        if (!((*it).*is_type)())
            throw ConfigError(origin + ": field '" + key + "' must be " + type_name);
        return &*it;
    }

    void read(const std::string& key, int& out) {
        if (const json* v = get(key, "an integer", &json::is_number_integer)) out = v->get<int>();
    }
    void read(const std::string& key, uint64_t& out) {
        if (const json* v = get(key, "an integer", &json::is_number_integer))
            out = v->get<uint64_t>();
    }
    void read(const std::string& key, double& out) {
        if (const json* v = get(key, "a number", &json::is_number)) out = v->get<double>();
    }
    void read(const std::string& key, bool& out) {
        if (const json* v = get(key, "a boolean", &json::is_boolean)) out = v->get<bool>();
    }
    void read(const std::string& key, std::string& out) {
        if (const json* v = get(key, "a string", &json::is_string)) out = v->get<std::string>();
    }
    void read(const std::string& key, std::vector<int>& out) {
        if (const json* v = get(key, "an integer array", &json::is_array)) {
            std::vector<int> parsed;
            for (const json& e : *v) {
                if (!e.is_number_integer())
                    throw ConfigError(origin + ": field '" + key + "' must be an integer array");
                parsed.push_back(e.get<int>());
            }
            out = std::move(parsed);
        }
    }
};

void bind_fields(Schema& s, RunConfig& cfg) {
    s.read("seed", cfg.seed);
    s.read("k_total", cfg.k_total);
    s.read("heads", cfg.heads);
    s.read("layers", cfg.layers);
    s.read("channels", cfg.channels);
    s.read("samples", cfg.samples);
    s.read("alpha", cfg.alpha);
    s.read("beta", cfg.beta);
    s.read("sigma_h", cfg.sigma_h);
    s.read("image_size", cfg.image_size);
    s.read("pyramid_strides", cfg.pyramid_strides);
    s.read("backbone_widths", cfg.backbone_widths);
    s.read("share_layer_weights", cfg.share_layer_weights);
    s.read("base_classes", cfg.base_classes);
    s.read("novel_classes", cfg.novel_classes);
    s.read("instances_per_class", cfg.instances_per_class);
    s.read("min_keypoints", cfg.min_keypoints);
    s.read("max_keypoints", cfg.max_keypoints);
    s.read("train_iters", cfg.train_iters);
    s.read("lr", cfg.lr);
    s.read("log_interval", cfg.log_interval);
    s.read("eval_interval", cfg.eval_interval);
    s.read("eval_episodes", cfg.eval_episodes);
    s.read("shots", cfg.shots);
    s.read("out_dir", cfg.out_dir);
}

}  // namespace

void RunConfig::validate() const {
    try {
        model_config().validate();
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    if (min_keypoints < 2)
        throw ConfigError("config: min_keypoints must be at least 2");
    if (max_keypoints < min_keypoints)
        throw ConfigError("config: max_keypoints below min_keypoints");
    if (k_total < max_keypoints)
        throw ConfigError("config: k_total " + std::to_string(k_total) +
                          " below max_keypoints " + std::to_string(max_keypoints));
    if (base_classes < 1 || novel_classes < 1)
        throw ConfigError("config: base_classes and novel_classes must be positive");
    if (shots < 1) throw ConfigError("config: shots must be at least 1");
    if (instances_per_class < shots + 1)
        throw ConfigError("config: instances_per_class must exceed shots");
    if (train_iters < 0) throw ConfigError("config: train_iters must be non-negative");
    if (lr < 0.0) throw ConfigError("config: lr must be non-negative");
    if (log_interval < 1) throw ConfigError("config: log_interval must be positive");
    if (eval_interval < 0) throw ConfigError("config: eval_interval must be non-negative");
    if (eval_interval > 0 && eval_episodes < 1)
        throw ConfigError("config: eval_episodes must be positive when eval_interval is set");
    if (out_dir.empty()) throw ConfigError("config: out_dir must be non-empty");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.k_total = k_total;
    m.heads = heads;
    m.layers = layers;
    m.channels = channels;
    m.samples = samples;
    m.alpha = alpha;
    m.beta = beta;
    m.sigma_h = sigma_h;
    m.image_size = image_size;
    m.pyramid_strides = pyramid_strides;
    m.backbone_widths = backbone_widths;
    m.share_layer_weights = share_layer_weights;
    return m;
}

SyntheticDataset RunConfig::dataset() const {
    return make_dataset(seed, base_classes + novel_classes, instances_per_class, image_size,
                        min_keypoints, max_keypoints);
}

std::vector<int> RunConfig::base_split() const {
    std::vector<int> split;
    for (int c = 0; c < base_classes; ++c) split.push_back(c);
    return split;
}

std::vector<int> RunConfig::novel_split() const {
    std::vector<int> split;
    for (int c = 0; c < novel_classes; ++c) split.push_back(base_classes + c);
    return split;
}

std::string RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["k_total"] = k_total;
    j["heads"] = heads;
    j["layers"] = layers;
    j["channels"] = channels;
    j["samples"] = samples;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["sigma_h"] = sigma_h;
    j["image_size"] = image_size;
    j["pyramid_strides"] = pyramid_strides;
    j["backbone_widths"] = backbone_widths;
    j["share_layer_weights"] = share_layer_weights;
    j["base_classes"] = base_classes;
    j["novel_classes"] = novel_classes;
    j["instances_per_class"] = instances_per_class;
    j["min_keypoints"] = min_keypoints;
    j["max_keypoints"] = max_keypoints;
    j["train_iters"] = train_iters;
    j["lr"] = lr;
    j["log_interval"] = log_interval;
    j["eval_interval"] = eval_interval;
    j["eval_episodes"] = eval_episodes;
    j["shots"] = shots;
    j["out_dir"] = out_dir;
    return j.dump(2);
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": parse error at byte " + std::to_string(e.byte) + ": " +
                          e.what());
    }
    if (!doc.is_object()) throw ConfigError(origin + ": config must be a JSON object");

    RunConfig cfg;
    Schema schema{{}, doc, origin};
    bind_fields(schema, cfg);
    for (const auto& [key, value] : doc.items())
        if (!schema.keys.contains(key))
            throw ConfigError(origin + ": unknown field '" + key + "'");
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), path);
}

}  // namespace posemine
