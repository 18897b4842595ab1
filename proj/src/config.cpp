#include "urbanln/config.hpp"

#include <set>

namespace urbanln {

CaptureConfig CaptureSettings::to_capture_config() const {
    CaptureConfig cfg;
    cfg.weights = weights;
    cfg.stop_phrases.insert(stop_phrases.begin(), stop_phrases.end());
    return cfg;
}

namespace {

// Tracks visited keys of one JSON object and rejects leftovers.
class StrictObject {
public:
    StrictObject(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) {
            throw ConfigError("config section '" + label() + "' must be an object");
        }
    }

    std::string label() const { return prefix_.empty() ? "<root>" : prefix_; }
    std::string qual(const char* key) const {
        return prefix_.empty() ? key : prefix_ + "." + key;
    }

    bool has(const char* key) {
        return j_.contains(key);
    }

    double number(const char* key, double def) {
        auto it = touch(key);
        if (it == j_.end()) {
            return def;
        }
        if (!it->is_number()) {
            throw ConfigError("config key '" + qual(key) + "' must be a number");
        }
        return it->get<double>();
    }

    std::int64_t integer(const char* key, std::int64_t def) {
        auto it = touch(key);
        if (it == j_.end()) {
            return def;
        }
        if (!it->is_number_integer()) {
            throw ConfigError("config key '" + qual(key) + "' must be an integer");
        }
        return it->get<std::int64_t>();
    }

    bool boolean(const char* key, bool def) {
        auto it = touch(key);
        if (it == j_.end()) {
            return def;
        }
        if (!it->is_boolean()) {
            throw ConfigError("config key '" + qual(key) + "' must be a boolean");
        }
        return it->get<bool>();
    }

    std::string str(const char* key, const std::string& def) {
        auto it = touch(key);
        if (it == j_.end()) {
            return def;
        }
        if (!it->is_string()) {
            throw ConfigError("config key '" + qual(key) + "' must be a string");
        }
        return it->get<std::string>();
    }

    std::vector<std::string> str_list(const char* key) {
        auto it = touch(key);
        std::vector<std::string> out;
        if (it == j_.end()) {
            return out;
        }
        if (!it->is_array()) {
            throw ConfigError("config key '" + qual(key) + "' must be a list of strings");
        }
        for (const auto& v : *it) {
            if (!v.is_string()) {
                throw ConfigError("config key '" + qual(key) + "' must be a list of strings");
            }
            out.push_back(v.get<std::string>());
        }
        return out;
    }

    const json* section(const char* key) {
        auto it = touch(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError("unknown config key '" + qual(it.key().c_str()) + "'");
            }
        }
    }

private:
    json::const_iterator touch(const char* key) {
        seen_.insert(key);
        return j_.find(key);
    }

    const json& j_;
    std::string prefix_;
    std::set<std::string> seen_;
};

void check_range(bool ok, const std::string& msg) {
    if (!ok) {
        throw ConfigError(msg);
    }
}

} // namespace

PipelineConfig config_from_json(const json& doc) {
    PipelineConfig cfg;
    StrictObject root(doc, "");

    cfg.seed = static_cast<std::uint64_t>(root.integer("seed", static_cast<std::int64_t>(cfg.seed)));

    if (const json* j = root.section("capture")) {
        StrictObject s(*j, "capture");
        cfg.capture.weights.alpha = s.number("alpha", cfg.capture.weights.alpha);
        cfg.capture.weights.beta = s.number("beta", cfg.capture.weights.beta);
        cfg.capture.weights.gamma = s.number("gamma", cfg.capture.weights.gamma);
        cfg.capture.stop_phrases = s.str_list("stop_phrases");
        cfg.capture.soft_matching = s.boolean("soft_matching", cfg.capture.soft_matching);
        cfg.capture.fallback_parser = s.str("fallback_parser", cfg.capture.fallback_parser);
        s.finish();
        check_range(cfg.capture.weights.alpha >= 0 && cfg.capture.weights.beta >= 0 &&
                        cfg.capture.weights.gamma >= 0 &&
                        cfg.capture.weights.alpha + cfg.capture.weights.beta +
                                cfg.capture.weights.gamma > 0,
                    "capture weights must be non-negative with alpha + beta + gamma > 0");
        check_range(cfg.capture.fallback_parser == "error" ||
                        cfg.capture.fallback_parser == "keyword",
                    "capture.fallback_parser must be 'error' or 'keyword'");
    }

    if (const json* j = root.section("refine")) {
        StrictObject s(*j, "refine");
        cfg.refine.phrase_score_threshold =
            s.number("phrase_score_threshold", cfg.refine.phrase_score_threshold);
        cfg.refine.box_iou_threshold = s.number("box_iou_threshold", cfg.refine.box_iou_threshold);
        cfg.refine.max_boxes = static_cast<int>(s.integer("max_boxes", cfg.refine.max_boxes));
        cfg.refine.min_mask_area_fraction =
            s.number("min_mask_area_fraction", cfg.refine.min_mask_area_fraction);
        s.finish();
        cfg.refine.validate();
    }

    if (const json* j = root.section("ipsi")) {
        StrictObject s(*j, "ipsi");
        cfg.ipsi.lambda = static_cast<int>(s.integer("lambda", cfg.ipsi.lambda));
        s.finish();
        check_range(cfg.ipsi.lambda >= 1, "ipsi.lambda must be an integer >= 1");
    }

    if (const json* j = root.section("encoder")) {
        StrictObject s(*j, "encoder");
        cfg.encoder.depth = static_cast<int>(s.integer("depth", cfg.encoder.depth));
        cfg.encoder.d_model = static_cast<int>(s.integer("d_model", cfg.encoder.d_model));
        cfg.encoder.heads = static_cast<int>(s.integer("heads", cfg.encoder.heads));
        cfg.encoder.mlp_ratio = static_cast<int>(s.integer("mlp_ratio", cfg.encoder.mlp_ratio));
        cfg.encoder.embed_dim = static_cast<int>(s.integer("embed_dim", cfg.encoder.embed_dim));
        cfg.encoder.vocab_size = static_cast<int>(s.integer("vocab_size", cfg.encoder.vocab_size));
        cfg.encoder.pos_base_len =
            static_cast<int>(s.integer("pos_base_len", cfg.encoder.pos_base_len));
        cfg.encoder.patch_count =
            static_cast<int>(s.integer("patch_count", cfg.encoder.patch_count));
        cfg.encoder.patch_dim = static_cast<int>(s.integer("patch_dim", cfg.encoder.patch_dim));
        s.finish();
        cfg.encoder.validate();
    }

    if (const json* j = root.section("train")) {
        StrictObject s(*j, "train");
        cfg.train.mu = s.number("mu", cfg.train.mu);
        cfg.train.momentum = s.number("momentum", cfg.train.momentum);
        cfg.train.queue_capacity =
            static_cast<int>(s.integer("queue_capacity", cfg.train.queue_capacity));
        cfg.train.batch_size = static_cast<int>(s.integer("batch_size", cfg.train.batch_size));
        cfg.train.learning_rate = s.number("learning_rate", cfg.train.learning_rate);
        cfg.train.weight_decay = s.number("weight_decay", cfg.train.weight_decay);
        cfg.train.epochs = static_cast<int>(s.integer("epochs", cfg.train.epochs));
        cfg.train.tau_init = s.number("tau_init", cfg.train.tau_init);
        cfg.train.tau_min = s.number("tau_min", cfg.train.tau_min);
        cfg.train.tau_max = s.number("tau_max", cfg.train.tau_max);
        s.finish();
        // Config files keep mu strictly inside (0,1); the endpoints exist for tests only.
        check_range(cfg.train.mu > 0.0 && cfg.train.mu < 1.0, "train.mu must be in (0,1)");
        cfg.train.validate();
    }
    cfg.train.seed = derive_seed(cfg.seed, "pretrain");

    if (const json* j = root.section("head")) {
        StrictObject s(*j, "head");
        cfg.head.hidden_layers = static_cast<int>(s.integer("hidden_layers", cfg.head.hidden_layers));
        cfg.head.hidden_width = static_cast<int>(s.integer("hidden_width", cfg.head.hidden_width));
        cfg.head.learning_rate = s.number("learning_rate", cfg.head.learning_rate);
        cfg.head.weight_decay = s.number("weight_decay", cfg.head.weight_decay);
        cfg.head.batch_size = static_cast<int>(s.integer("batch_size", cfg.head.batch_size));
        cfg.head.max_epochs = static_cast<int>(s.integer("max_epochs", cfg.head.max_epochs));
        cfg.head.patience = static_cast<int>(s.integer("patience", cfg.head.patience));
        s.finish();
        cfg.head.validate();
    }

    if (const json* j = root.section("downstream")) {
        StrictObject s(*j, "downstream");
        cfg.downstream.indicator = s.str("indicator", cfg.downstream.indicator);
        cfg.downstream.imagery = s.str("imagery", cfg.downstream.imagery);
        s.finish();
        check_range(cfg.downstream.imagery == "street" || cfg.downstream.imagery == "satellite",
                    "downstream.imagery must be 'street' or 'satellite'");
    }

    if (const json* j = root.section("paths")) {
        StrictObject s(*j, "paths");
        cfg.paths.fixtures = s.str("fixtures", cfg.paths.fixtures);
        cfg.paths.candidates = s.str("candidates", cfg.paths.candidates);
        cfg.paths.pairs = s.str("pairs", cfg.paths.pairs);
        cfg.paths.imagestore = s.str("imagestore", cfg.paths.imagestore);
        cfg.paths.regions = s.str("regions", cfg.paths.regions);
        cfg.paths.checkpoint = s.str("checkpoint", cfg.paths.checkpoint);
        cfg.paths.embeddings = s.str("embeddings", cfg.paths.embeddings);
        cfg.paths.predictions = s.str("predictions", cfg.paths.predictions);
        cfg.paths.out_root = s.str("out_root", cfg.paths.out_root);
        s.finish();
    }

    root.finish();
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::string text = read_text_file(path);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        return config_from_json(json::object());
    }
    return config_from_json(parse_json(text, "config file " + path));
}

json to_json(const EncoderConfig& c) {
    return json{{"depth", c.depth},           {"d_model", c.d_model},
                {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
                {"embed_dim", c.embed_dim},   {"vocab_size", c.vocab_size},
                {"pos_base_len", c.pos_base_len}, {"patch_count", c.patch_count},
                {"patch_dim", c.patch_dim}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c;
    c.depth = j.at("depth").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.pos_base_len = j.at("pos_base_len").get<int>();
    c.patch_count = j.at("patch_count").get<int>();
    c.patch_dim = j.at("patch_dim").get<int>();
    return c;
}

json to_json(const ipsi::IpsiConfig& c) {
    return json{{"lambda", c.lambda}};
}

ipsi::IpsiConfig ipsi_config_from_json(const json& j) {
    ipsi::IpsiConfig c;
    c.lambda = j.at("lambda").get<int>();
    return c;
}

json to_json(const TrainConfig& c) {
    return json{{"mu", c.mu},
                {"momentum", c.momentum},
                {"queue_capacity", c.queue_capacity},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"tau_init", c.tau_init},
                {"tau_min", c.tau_min},
                {"tau_max", c.tau_max}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.mu = j.at("mu").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.queue_capacity = j.at("queue_capacity").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.tau_init = j.at("tau_init").get<double>();
    c.tau_min = j.at("tau_min").get<double>();
    c.tau_max = j.at("tau_max").get<double>();
    return c;
}

} // namespace urbanln
