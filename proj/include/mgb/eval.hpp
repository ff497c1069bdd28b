#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgb/meta.hpp"
#include "mgb/metrics.hpp"

namespace mgb {

// Evaluation-time adaptation strength; defaults mirror training, the "high"
// profile is configured separately (aggressive inner loop).
struct EvalAdaptation {
    double inner_lr = 0.05;
    int t_inner = 5;
};

struct EvalConfig {
    int episodes = 256;
    int query_docs = 0;  // query targets per episode; 0 = whole pool
    bool zero_shot = false;
    EvalAdaptation adapt;
    uint64_t seed = 0;
    int workers = 1;
};

struct EpisodeScore {
    bool skipped = false;           // guardrail exhausted (non-finite logits)
    int64_t scored = 0;             // query targets counted
    int64_t excluded_support = 0;   // targets flagged as support nodes
    std::vector<double> f1;         // per class
    double mcc = 0.0;
    std::optional<double> aupr;     // binary tasks only
    std::vector<double> prevalence; // realised query class prevalence
    std::vector<double> random_f1;  // always-positive baseline per class
};

struct EvalRun {
    int32_t num_classes = 0;
    std::vector<EpisodeScore> episodes;

    std::vector<double> mcc_values() const;
    std::vector<double> f1_values(int32_t cls) const;
    std::vector<double> aupr_values() const;
    int64_t skipped() const;
};

// Class probabilities for the query targets of one episode (row order =
// ep.query.targets). Adaptation follows the paradigm; non-finite logits
// trigger the guardrail that halves inner_lr, up to 5 times, after which
// NumericError propagates.
Tensor eval_episode_probs(const ModelState& state, Paradigm p, const SocialGraph& g, const Episode& ep,
                          const EvalAdaptation& adapt, bool zero_shot, Rng& rng);

// Episodic evaluation protocol: `episodes` support samples (zero-shot: a
// single pass over the whole query pool), per-episode metrics with
// support-flagged targets excluded.
EvalRun evaluate_model(const SocialGraph& g, const ModelState& state, Paradigm p,
                       std::vector<NodeId> support_pool, std::vector<NodeId> query_pool,
                       const SamplerConfig& scfg, const EvalConfig& ecfg);

// Non-episodic scoring of fixed per-document predictions (baselines).
EpisodeScore score_predictions(const SocialGraph& g, std::span<const NodeId> docs,
                               const std::vector<int32_t>& predictions,
                               const std::vector<double>* positive_scores = nullptr);

// ---- reports ---------------------------------------------------------------

// Per-checkpoint report: summaries plus exported per-episode values.
nlohmann::json eval_report_json(const EvalRun& run, nlohmann::json meta);
// Fixed-effect pooling across checkpoints (inverse-variance weights).
nlohmann::json pooled_report_json(const std::vector<EvalRun>& runs, nlohmann::json meta);
// Table-shaped rendering of a pooled report (per-class F1, AUPR, MCC with CI
// brackets).
std::string render_report_table(const nlohmann::json& pooled);

void write_json(const nlohmann::json& j, const std::string& path);

}  // namespace mgb
