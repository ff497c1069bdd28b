#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mgb/datagen.hpp"
#include "mgb/eval.hpp"
#include "mgb/meta.hpp"
#include "mgb/sampler.hpp"

namespace mgb {

struct GraphFiles {
    std::string nodes;
    std::string edges;
    std::string features;
};

struct EvalSettings {
    int episodes = 256;
    std::vector<int> k_grid{4, 8, 12, 16};
    int query_docs = 0;
    std::optional<EvalAdaptation> low;   // defaults to the training values
    std::optional<EvalAdaptation> high;  // defaults to 5x inner_lr, 2x t_inner
};

// One experiment: graph source, module configs, seed. Parsed from a strict,
// versioned JSON document; unknown keys are configuration errors. A run's
// config file is archived verbatim beside its outputs.
struct ExperimentConfig {
    uint64_t seed = 0;
    int folds = 5;
    std::optional<GraphFiles> graph;
    std::optional<SyntheticSpec> synthetic;
    ModelConfig model;  // input_dim / num_classes are derived from the graph
    SamplerConfig sampler;
    TrainConfig train;
    EvalSettings eval;

    static ExperimentConfig load(const std::string& path);

    EvalAdaptation adaptation_profile(const std::string& name) const;  // "low" | "high"
};

// Loads the configured graph (files or synthetic) and keeps only the largest
// connected component.
SocialGraph load_experiment_graph(const ExperimentConfig& cfg);

}  // namespace mgb
