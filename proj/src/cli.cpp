#include "mgb/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mgb/config.hpp"
#include "mgb/eval.hpp"
#include "mgb/graph_io.hpp"
#include "mgb/homophily.hpp"
#include "mgb/meta.hpp"

namespace mgb {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<uint64_t> seed;
    int workers = 1;
};

void archive_config(const std::string& config_path, const std::string& out_dir) {
    std::ifstream in(config_path, std::ios::binary);
    std::ofstream out(fs::path(out_dir) / "config.json", std::ios::binary);
    out << in.rdbuf();
}

ExperimentConfig load_config(const CommonArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    if (args.seed) {
        cfg.seed = *args.seed;
        cfg.train.seed = *args.seed;
        cfg.sampler.seed = *args.seed;
    }
    return cfg;
}

ModelConfig resolve_model_config(const ExperimentConfig& cfg, const SocialGraph& g) {
    ModelConfig m = cfg.model;
    m.input_dim = g.feature_dim();
    m.num_classes = g.num_classes();
    m.validate();
    return m;
}

nlohmann::json graph_stats(const SocialGraph& g) {
    std::vector<int64_t> per_class(static_cast<size_t>(g.num_classes()), 0);
    for (NodeId v : g.doc_nodes()) ++per_class[static_cast<size_t>(g.label_of(v))];
    return {{"nodes", g.num_nodes()}, {"documents", g.num_docs()},   {"users", g.num_users()},
            {"edges", g.num_edges()}, {"classes", g.num_classes()},  {"feature_dim", g.feature_dim()},
            {"docs_per_class", per_class}};
}

int cmd_generate(const CommonArgs& args) {
    const ExperimentConfig cfg = load_config(args);
    if (!cfg.synthetic) throw ConfigError("generate: config must contain a 'synthetic' section");
    SyntheticSpec spec = *cfg.synthetic;
    if (args.seed) spec.seed = *args.seed;
    const SocialGraph g = generate(spec);
    fs::create_directories(args.out_dir);
    const fs::path out(args.out_dir);
    save_graph(g, (out / "nodes.tsv").string(), (out / "edges.tsv").string(),
               (out / "features.mgbf").string());
    write_json(graph_stats(g), (out / "graph_meta.json").string());
    archive_config(args.config_path, args.out_dir);
    std::cout << "generated graph: " << g.num_docs() << " documents, " << g.num_users() << " users, "
              << g.num_edges() << " edges\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const ExperimentConfig cfg = load_config(args);
    const SocialGraph g = load_experiment_graph(cfg);
    const ModelConfig mcfg = resolve_model_config(cfg, g);
    cfg.train.validate();
    cfg.sampler.validate(g.num_classes());

    fs::create_directories(args.out_dir);
    archive_config(args.config_path, args.out_dir);
    const fs::path out(args.out_dir);

    const auto folds = stratified_kfold(g, cfg.folds, cfg.seed);
    nlohmann::json folds_json = nlohmann::json::array();
    for (const auto& f : folds) {
        folds_json.push_back({{"fold", f.fold_id},
                              {"train_docs", f.train_docs},
                              {"val_docs", f.val_docs}});
    }
    write_json({{"seed", cfg.seed}, {"folds", std::move(folds_json)}}, (out / "folds.json").string());

    for (const auto& fold : folds) {
        TrainConfig tcfg = cfg.train;
        tcfg.seed = derive_seed(cfg.seed, "fold", static_cast<uint64_t>(fold.fold_id));
        const std::string log_path =
            (out / ("train_log_fold" + std::to_string(fold.fold_id) + ".jsonl")).string();
        const TrainResult r = train_model(g, fold, mcfg, cfg.sampler, tcfg, log_path, args.workers);
        const std::string ckpt =
            (out / ("ckpt_fold" + std::to_string(fold.fold_id) + ".mgbc")).string();
        save_checkpoint(r.state, ckpt);
        std::cout << "fold " << fold.fold_id << ": best val loss " << r.best_val_loss << " at step "
                  << r.best_step << " (" << r.steps_run << " steps), checkpoint " << ckpt << "\n";
    }
    return 0;
}

std::vector<std::string> find_checkpoints(const std::string& dir) {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("ckpt_", 0) == 0 && entry.path().extension() == ".mgbc") {
            out.push_back(entry.path().string());
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IngestError("no ckpt_*.mgbc checkpoints in '" + dir + "'");
    return out;
}

struct EvalArgs {
    std::string checkpoints_dir;
    std::vector<int> k_grid;
    int episodes = 0;  // 0 = config value
    std::string adaptation = "low";
    bool zero_shot = false;
    std::string mode = "transfer";
};

struct PoolSpec {
    std::vector<NodeId> support;
    std::vector<NodeId> query;
};

// Within-graph evaluation reuses the training folds (recomputed from the
// archived seed); transfer evaluation treats every document as usable.
std::vector<PoolSpec> eval_pools(const SocialGraph& g, const EvalArgs& eargs, size_t n_checkpoints) {
    std::vector<PoolSpec> pools;
    if (eargs.mode == "within") {
        const ExperimentConfig train_cfg =
            ExperimentConfig::load((fs::path(eargs.checkpoints_dir) / "config.json").string());
        const auto folds = stratified_kfold(g, train_cfg.folds, train_cfg.seed);
        if (folds.size() < n_checkpoints) throw ConfigError("evaluate: more checkpoints than folds");
        for (size_t i = 0; i < n_checkpoints; ++i) {
            pools.push_back({folds[i].train_docs, folds[i].val_docs});
        }
    } else if (eargs.mode == "transfer") {
        std::vector<NodeId> all(g.doc_nodes().begin(), g.doc_nodes().end());
        for (size_t i = 0; i < n_checkpoints; ++i) pools.push_back({all, all});
    } else {
        throw ConfigError("evaluate: --mode must be within|transfer");
    }
    return pools;
}

void run_evaluation(const ExperimentConfig& cfg, const SocialGraph& g, const EvalArgs& eargs,
                    const CommonArgs& args, const std::vector<ModelState>& states, Paradigm paradigm,
                    const std::string& file_prefix) {
    const fs::path out(args.out_dir);
    const auto pools = eval_pools(g, eargs, states.size());
    const EvalAdaptation adapt = cfg.adaptation_profile(eargs.adaptation);
    const int episodes = eargs.episodes > 0 ? eargs.episodes : cfg.eval.episodes;
    const std::vector<int> k_grid = eargs.zero_shot ? std::vector<int>{0}
                                    : !eargs.k_grid.empty() ? eargs.k_grid
                                                            : cfg.eval.k_grid;

    for (int k : k_grid) {
        SamplerConfig scfg = cfg.sampler;
        if (!eargs.zero_shot) scfg.k_shot = k;
        const std::string label = eargs.zero_shot ? "zeroshot" : "k" + std::to_string(k);
        std::vector<EvalRun> runs;
        for (size_t i = 0; i < states.size(); ++i) {
            EvalConfig ecfg;
            ecfg.episodes = episodes;
            ecfg.query_docs = cfg.eval.query_docs;
            ecfg.zero_shot = eargs.zero_shot;
            ecfg.adapt = adapt;
            ecfg.workers = args.workers;
            ecfg.seed = derive_seed(cfg.seed, "evaluate", static_cast<uint64_t>(k), static_cast<uint64_t>(i));
            EvalRun run = evaluate_model(g, states[i], paradigm, pools[i].support, pools[i].query, scfg, ecfg);
            nlohmann::json meta{{"paradigm", paradigm_to_string(paradigm)},
                                {"k_shot", eargs.zero_shot ? 0 : k},
                                {"zero_shot", eargs.zero_shot},
                                {"episodes", episodes},
                                {"adaptation", eargs.adaptation},
                                {"checkpoint", static_cast<int64_t>(i)},
                                {"mode", eargs.mode},
                                {"seed", cfg.seed}};
            write_json(eval_report_json(run, std::move(meta)),
                       (out / (file_prefix + label + "_fold" + std::to_string(i) + ".json")).string());
            runs.push_back(std::move(run));
        }
        nlohmann::json meta{{"paradigm", paradigm_to_string(paradigm)},
                            {"k_shot", eargs.zero_shot ? 0 : k},
                            {"zero_shot", eargs.zero_shot},
                            {"episodes", episodes},
                            {"adaptation", eargs.adaptation},
                            {"mode", eargs.mode},
                            {"seed", cfg.seed}};
        const nlohmann::json pooled = pooled_report_json(runs, std::move(meta));
        write_json(pooled, (out / (file_prefix + label + "_pooled.json")).string());
        std::ofstream table(out / (file_prefix + label + ".txt"));
        table << render_report_table(pooled);
        std::cout << file_prefix << label << ": pooled MCC "
                  << pooled.at("pooled").at("mcc").at("mean").get<double>() << "\n";
    }
}

Paradigm checkpoint_paradigm(const std::string& checkpoints_dir) {
    const ExperimentConfig train_cfg =
        ExperimentConfig::load((fs::path(checkpoints_dir) / "config.json").string());
    return train_cfg.train.paradigm;
}

int cmd_evaluate(const CommonArgs& args, const EvalArgs& eargs) {
    const ExperimentConfig cfg = load_config(args);
    const SocialGraph g = load_experiment_graph(cfg);
    fs::create_directories(args.out_dir);
    archive_config(args.config_path, args.out_dir);

    const Paradigm paradigm = checkpoint_paradigm(eargs.checkpoints_dir);
    std::vector<ModelState> states;
    for (const auto& path : find_checkpoints(eargs.checkpoints_dir)) {
        states.push_back(load_checkpoint(path));
    }
    run_evaluation(cfg, g, eargs, args, states, paradigm, "report_");
    return 0;
}

int cmd_ablate(const CommonArgs& args, const EvalArgs& eargs) {
    const ExperimentConfig cfg = load_config(args);
    const SocialGraph g = load_experiment_graph(cfg);
    fs::create_directories(args.out_dir);
    archive_config(args.config_path, args.out_dir);

    const Paradigm paradigm = checkpoint_paradigm(eargs.checkpoints_dir);
    std::vector<ModelState> trained;
    std::vector<ModelState> reset;
    size_t idx = 0;
    for (const auto& path : find_checkpoints(eargs.checkpoints_dir)) {
        trained.push_back(load_checkpoint(path));
        reset.push_back(reset_weights(trained.back(), derive_seed(cfg.seed, "reset", idx)));
        ++idx;
    }
    run_evaluation(cfg, g, eargs, args, trained, paradigm, "ablate_trained_");
    run_evaluation(cfg, g, eargs, args, reset, paradigm, "ablate_reset_");
    return 0;
}

int cmd_homophily(const CommonArgs& args, int n_views, const std::string& manifest) {
    const ExperimentConfig cfg = load_config(args);
    const SocialGraph g = load_experiment_graph(cfg);
    fs::create_directories(args.out_dir);
    archive_config(args.config_path, args.out_dir);
    const fs::path out(args.out_dir);

    std::vector<ViewForProfile> views;
    if (!manifest.empty()) {
        std::ifstream f(manifest);
        if (!f) throw IngestError("cannot open episode manifest '" + manifest + "'");
        std::string line;
        size_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw IngestError(manifest + ":" + std::to_string(lineno) + ": " + e.what());
            }
            ViewForProfile support;
            support.nodes = j.at("support_nodes").get<std::vector<NodeId>>();
            for (NodeId v : support.nodes) {
                if (v >= 0 && v < g.num_nodes() && g.is_doc(v)) support.labelled.push_back(v);
            }
            views.push_back(std::move(support));
            ViewForProfile query;
            query.nodes = j.at("query_nodes").get<std::vector<NodeId>>();
            query.labelled = j.at("query_targets").get<std::vector<NodeId>>();
            if (!query.nodes.empty()) views.push_back(std::move(query));
        }
    } else {
        std::vector<NodeId> all(g.doc_nodes().begin(), g.doc_nodes().end());
        SamplerConfig scfg = cfg.sampler;
        scfg.seed = derive_seed(cfg.seed, "homophily");
        EpisodeStream stream(g, scfg, all, all);
        for (const Episode& e : stream.take(0, n_views, args.workers)) {
            ViewForProfile support;
            support.nodes = e.support.nodes;
            for (NodeId v : support.nodes) {
                if (g.is_doc(v)) support.labelled.push_back(v);
            }
            views.push_back(std::move(support));
            ViewForProfile query;
            query.nodes = e.query.nodes;
            query.labelled = e.query.targets;
            views.push_back(std::move(query));
        }
    }

    const HomophilyReport report = homophily_profile(g, views, 2);
    nlohmann::json j{{"edge_homophily", report.edge},
                     {"class_prevalence", report.class_prevalence},
                     {"views", views.size()},
                     {"skipped", report.skipped_nodes},
                     {"seed", cfg.seed}};
    if (report.class_insensitive) j["class_insensitive_excess"] = *report.class_insensitive;
    write_json(j, (out / "homophily_report.json").string());
    std::ofstream raw(out / "homophily_values.jsonl");
    for (const auto& r : report.view_values) {
        raw << nlohmann::json{{"view", r.view_id}, {"class", r.cls}, {"value", r.value}}.dump() << "\n";
    }
    std::cout << "homophily: edge " << report.edge << ", " << report.view_values.size()
              << " view records\n";
    return 0;
}

int cmd_baselines(const CommonArgs& args) {
    const ExperimentConfig cfg = load_config(args);
    const SocialGraph g = load_experiment_graph(cfg);
    fs::create_directories(args.out_dir);
    archive_config(args.config_path, args.out_dir);
    const fs::path out(args.out_dir);

    const auto folds = stratified_kfold(g, cfg.folds, cfg.seed);
    std::vector<EvalRun> text_runs, user_runs;
    for (const auto& fold : folds) {
        TrainConfig tcfg = cfg.train;
        tcfg.seed = derive_seed(cfg.seed, "text-fold", static_cast<uint64_t>(fold.fold_id));
        const TextModel tm = train_text_baseline(g, fold, cfg.model.mlp_dim, tcfg);

        Tensor rows(static_cast<int64_t>(fold.val_docs.size()), g.feature_dim());
        for (size_t i = 0; i < fold.val_docs.size(); ++i) {
            const int32_t r = g.doc_row(fold.val_docs[i]);
            std::copy_n(&g.doc_features().v[static_cast<size_t>(r) * static_cast<size_t>(g.feature_dim())],
                        g.feature_dim(), &rows.v[i * static_cast<size_t>(g.feature_dim())]);
        }
        ad::Tape tape;
        const Tensor probs = ad::softmax_rows(text_logits(tape, tm, rows).val());
        std::vector<int32_t> preds;
        std::vector<double> pos;
        for (int64_t i = 0; i < probs.rows; ++i) {
            int32_t best = 0;
            for (int32_t c = 1; c < g.num_classes(); ++c) {
                if (probs.at(i, c) > probs.at(i, best)) best = c;
            }
            preds.push_back(best);
            if (g.num_classes() == 2) pos.push_back(probs.at(i, 1));
        }
        EvalRun text_run;
        text_run.num_classes = g.num_classes();
        text_run.episodes.push_back(
            score_predictions(g, fold.val_docs, preds, g.num_classes() == 2 ? &pos : nullptr));
        text_runs.push_back(std::move(text_run));

        const auto votes = user_id_baseline(g, fold.train_docs);
        std::vector<int32_t> upreds;
        for (NodeId v : fold.val_docs) upreds.push_back(votes[static_cast<size_t>(g.doc_row(v))]);
        EvalRun user_run;
        user_run.num_classes = g.num_classes();
        user_run.episodes.push_back(score_predictions(g, fold.val_docs, upreds));
        user_runs.push_back(std::move(user_run));
    }
    const auto write_all = [&](const std::vector<EvalRun>& runs, const std::string& name) {
        for (size_t i = 0; i < runs.size(); ++i) {
            write_json(eval_report_json(runs[i], {{"baseline", name}, {"fold", static_cast<int64_t>(i)}}),
                       (out / ("baseline_" + name + "_fold" + std::to_string(i) + ".json")).string());
        }
        const nlohmann::json pooled = pooled_report_json(runs, {{"baseline", name}, {"seed", cfg.seed}});
        write_json(pooled, (out / ("baseline_" + name + "_pooled.json")).string());
        std::cout << "baseline " << name << ": pooled MCC "
                  << pooled.at("pooled").at("mcc").at("mean").get<double>() << "\n";
    };
    write_all(text_runs, "text");
    write_all(user_runs, "user_id");
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"few-shot social-graph learning workbench"};
    app.require_subcommand(1);

    CommonArgs args;
    EvalArgs eargs;
    int homophily_views = 200;
    std::string manifest;

    const auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
        cmd->add_option("--config", args.config_path, "experiment config file")->required();
        if (needs_out) cmd->add_option("--out", args.out_dir, "output directory")->required();
        cmd->add_option("--seed", args.seed, "override the config seed");
        cmd->add_option("--workers", args.workers, "parallel episode workers")->check(CLI::PositiveNumber);
    };

    auto* c_gen = app.add_subcommand("generate", "write a synthetic graph in the ingestion format");
    add_common(c_gen);

    auto* c_train = app.add_subcommand("train", "train one checkpoint per stratified fold");
    add_common(c_train);

    auto* c_eval = app.add_subcommand("evaluate", "episodic evaluation of fold checkpoints");
    add_common(c_eval);
    c_eval->add_option("--checkpoints", eargs.checkpoints_dir, "directory with ckpt_*.mgbc")->required();
    c_eval->add_option("--k", eargs.k_grid, "k-shot grid (default from config)");
    c_eval->add_option("--episodes", eargs.episodes, "episodes per checkpoint");
    c_eval->add_option("--adaptation", eargs.adaptation, "adaptation profile: low|high");
    c_eval->add_flag("--zero-shot", eargs.zero_shot, "evaluate without adaptation");
    c_eval->add_option("--mode", eargs.mode, "within|transfer evaluation pools");

    auto* c_ablate = app.add_subcommand("ablate", "paired trained-vs-reset evaluation");
    add_common(c_ablate);
    c_ablate->add_option("--checkpoints", eargs.checkpoints_dir, "directory with ckpt_*.mgbc")->required();
    c_ablate->add_option("--k", eargs.k_grid, "k-shot grid (default from config)");
    c_ablate->add_option("--episodes", eargs.episodes, "episodes per checkpoint");
    c_ablate->add_option("--adaptation", eargs.adaptation, "adaptation profile: low|high");
    c_ablate->add_option("--mode", eargs.mode, "within|transfer evaluation pools");

    auto* c_hom = app.add_subcommand("homophily", "graph and subgraph homophily metrics");
    add_common(c_hom);
    c_hom->add_option("--views", homophily_views, "sampled views when no manifest is given");
    c_hom->add_option("--manifest", manifest, "episode manifest to profile instead of sampling");

    auto* c_base = app.add_subcommand("baselines", "text and user-id baselines per fold");
    add_common(c_base);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (c_gen->parsed()) return cmd_generate(args);
        if (c_train->parsed()) return cmd_train(args);
        if (c_eval->parsed()) return cmd_evaluate(args, eargs);
        if (c_ablate->parsed()) return cmd_ablate(args, eargs);
        if (c_hom->parsed()) return cmd_homophily(args, homophily_views, manifest);
        if (c_base->parsed()) return cmd_baselines(args);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const IngestError& e) {
        std::cerr << "ingestion error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mgb
