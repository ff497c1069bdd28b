#include "mgb/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "mgb/graph_io.hpp"

namespace mgb {

namespace {

using nlohmann::json;

void expect_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

SamplerConfig parse_sampler(const json& j) {
    expect_keys(j, "sampler",
                {"k_shot", "budget", "walk_length", "r_min", "r_max", "query_docs", "balanced_query",
                 "epoch_views"});
    SamplerConfig s;
    get_if(j, "k_shot", s.k_shot);
    get_if(j, "budget", s.budget);
    get_if(j, "walk_length", s.walk_length);
    get_if(j, "r_min", s.r_min);
    get_if(j, "r_max", s.r_max);
    get_if(j, "query_docs", s.query_docs);
    get_if(j, "balanced_query", s.balanced_query);
    get_if(j, "epoch_views", s.epoch_views);
    return s;
}

ModelConfig parse_model(const json& j) {
    expect_keys(j, "model",
                {"head_dim", "n_heads", "n_gat_layers", "mlp_dim", "dropout_input", "dropout_hidden",
                 "dropout_attn", "leaky_slope"});
    ModelConfig m;
    get_if(j, "head_dim", m.head_dim);
    get_if(j, "n_heads", m.n_heads);
    get_if(j, "n_gat_layers", m.n_gat_layers);
    get_if(j, "mlp_dim", m.mlp_dim);
    get_if(j, "dropout_input", m.dropout_input);
    get_if(j, "dropout_hidden", m.dropout_hidden);
    get_if(j, "dropout_attn", m.dropout_attn);
    get_if(j, "leaky_slope", m.leaky_slope);
    return m;
}

TrainConfig parse_train(const json& j) {
    expect_keys(j, "train",
                {"paradigm", "outer_lr", "weight_decay", "inner_lr", "t_inner", "max_steps",
                 "episode_batch", "batch_docs", "val_episodes", "val_every"});
    TrainConfig t;
    if (j.contains("paradigm")) t.paradigm = paradigm_from_string(j.at("paradigm").get<std::string>());
    get_if(j, "outer_lr", t.outer_lr);
    get_if(j, "weight_decay", t.weight_decay);
    get_if(j, "inner_lr", t.inner_lr);
    get_if(j, "t_inner", t.t_inner);
    get_if(j, "max_steps", t.max_steps);
    get_if(j, "episode_batch", t.episode_batch);
    get_if(j, "batch_docs", t.batch_docs);
    get_if(j, "val_episodes", t.val_episodes);
    get_if(j, "val_every", t.val_every);
    // Paradigms without an inner loop ignore the defaults instead of
    // tripping the validation.
    if (t.paradigm == Paradigm::ProtoNet || !paradigm_is_episodic(t.paradigm)) {
        if (!j.contains("t_inner")) t.t_inner = 0;
    }
    return t;
}

SyntheticSpec parse_synthetic(const json& j) {
    expect_keys(j, "synthetic",
                {"n_docs", "n_users", "num_classes", "class_proportions", "proportion_preset",
                 "feature_dim", "separation", "homophily", "pareto_alpha", "n_communities",
                 "intra_edge_rate", "inter_edge_rate", "max_users_per_doc", "rotation_angle_deg",
                 "mean_translation", "seed"});
    SyntheticSpec s;
    get_if(j, "n_docs", s.n_docs);
    get_if(j, "n_users", s.n_users);
    get_if(j, "num_classes", s.num_classes);
    if (j.contains("proportion_preset")) {
        s.class_proportions = proportion_preset(j.at("proportion_preset").get<std::string>());
        s.num_classes = static_cast<int32_t>(s.class_proportions.size());
    }
    get_if(j, "class_proportions", s.class_proportions);
    get_if(j, "feature_dim", s.feature_dim);
    get_if(j, "separation", s.separation);
    get_if(j, "homophily", s.homophily);
    get_if(j, "pareto_alpha", s.pareto_alpha);
    get_if(j, "n_communities", s.n_communities);
    get_if(j, "intra_edge_rate", s.intra_edge_rate);
    get_if(j, "inter_edge_rate", s.inter_edge_rate);
    get_if(j, "max_users_per_doc", s.max_users_per_doc);
    get_if(j, "rotation_angle_deg", s.rotation_angle_deg);
    get_if(j, "mean_translation", s.mean_translation);
    get_if(j, "seed", s.seed);
    return s;
}

EvalSettings parse_eval(const json& j) {
    expect_keys(j, "eval", {"episodes", "k", "query_docs", "adaptation_low", "adaptation_high"});
    EvalSettings e;
    get_if(j, "episodes", e.episodes);
    get_if(j, "k", e.k_grid);
    get_if(j, "query_docs", e.query_docs);
    const auto parse_adapt = [&](const char* key) -> std::optional<EvalAdaptation> {
        if (!j.contains(key)) return std::nullopt;
        const json& a = j.at(key);
        expect_keys(a, key, {"inner_lr", "t_inner"});
        EvalAdaptation out;
        get_if(a, "inner_lr", out.inner_lr);
        get_if(a, "t_inner", out.t_inner);
        return out;
    };
    e.low = parse_adapt("adaptation_low");
    e.high = parse_adapt("adaptation_high");
    return e;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IngestError("cannot open config file '" + path + "'");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IngestError(std::string("config parse error: ") + e.what());
    }
    try {
        expect_keys(j, "config",
                    {"version", "seed", "folds", "graph", "synthetic", "model", "sampler", "train", "eval"});
        if (!j.contains("version") || j.at("version").get<int>() != 1) {
            throw ConfigError("config: missing or unsupported version (expected 1)");
        }
        ExperimentConfig cfg;
        get_if(j, "seed", cfg.seed);
        get_if(j, "folds", cfg.folds);
        if (j.contains("graph")) {
            expect_keys(j.at("graph"), "graph", {"nodes", "edges", "features"});
            GraphFiles gf;
            gf.nodes = j.at("graph").at("nodes").get<std::string>();
            gf.edges = j.at("graph").at("edges").get<std::string>();
            gf.features = j.at("graph").at("features").get<std::string>();
            cfg.graph = std::move(gf);
        }
        if (j.contains("synthetic")) cfg.synthetic = parse_synthetic(j.at("synthetic"));
        if (cfg.graph && cfg.synthetic) throw ConfigError("config: give either 'graph' or 'synthetic', not both");
        if (!cfg.graph && !cfg.synthetic) throw ConfigError("config: a 'graph' or 'synthetic' section is required");
        if (j.contains("model")) cfg.model = parse_model(j.at("model"));
        if (j.contains("sampler")) cfg.sampler = parse_sampler(j.at("sampler"));
        if (j.contains("train")) cfg.train = parse_train(j.at("train"));
        if (j.contains("eval")) cfg.eval = parse_eval(j.at("eval"));
        if (cfg.folds < 2) throw ConfigError("config: folds must be >= 2");
        cfg.train.seed = cfg.seed;
        cfg.sampler.seed = cfg.seed;
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

EvalAdaptation ExperimentConfig::adaptation_profile(const std::string& name) const {
    if (name == "low") {
        if (eval.low) return *eval.low;
        return EvalAdaptation{train.inner_lr, train.t_inner};
    }
    if (name == "high") {
        if (eval.high) return *eval.high;
        return EvalAdaptation{train.inner_lr * 5.0, std::max(1, train.t_inner * 2)};
    }
    throw ConfigError("unknown adaptation profile '" + name + "' (expected low|high)");
}

SocialGraph load_experiment_graph(const ExperimentConfig& cfg) {
    SocialGraph g = cfg.graph ? load_graph(cfg.graph->nodes, cfg.graph->edges, cfg.graph->features)
                              : generate(*cfg.synthetic);
    return largest_connected_component(g).graph;
}

}  // namespace mgb
