#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgb/graph.hpp"
#include "mgb/rng.hpp"

namespace mgb {

struct SamplerConfig {
    int k_shot = 4;
    int budget = 2048;      // maximum support-graph node count (plus walk slack)
    int walk_length = 5;
    int r_min = 2;
    int r_max = 5;
    int query_docs = 16;    // query targets per training episode; 0 = whole pool
    bool balanced_query = true;
    int epoch_views = 64;   // window for inverse-frequency unmask counts
    uint64_t seed = 0;

    void validate(int32_t num_classes) const;
};

// Node subset of a parent graph. Induced edges are those of the parent graph
// between view nodes; they are materialised on demand (NodeBatch), which
// keeps the invariant that induced edges only connect nodes inside the view.
struct SubgraphView {
    std::vector<NodeId> nodes;  // sorted ascending
    NodeId anchor = kInvalidNode;
    int radius = 0;
    std::vector<NodeId> targets;  // query views: the scored documents

    bool contains(NodeId v) const;
};

struct Episode {
    int64_t index = 0;
    SubgraphView support;
    std::vector<std::vector<NodeId>> unmasked;  // per class, exactly k_shot docs
    SubgraphView query;
};

// Uniform random walk of at most `length` steps starting at `start`,
// restricted to nodes where allowed[v] != 0 (empty mask = unrestricted).
// Terminates early at nodes with no admissible neighbour.
std::vector<NodeId> random_walk(const SocialGraph& g, NodeId start, int length, Rng& rng,
                                std::span<const uint8_t> allowed = {});

// Few-shot support sampling: picks the smallest radius in [r_min, r_max]
// whose anchor neighbourhood holds k_shot label-pool documents of every
// class, then grows the view with class-round-robin random walks until the
// budget is reached or growth stalls. Returns nullopt (rejection) if no
// radius qualifies or the grown view is not a valid k-shot graph.
// label_pool is a node bitmap of the documents eligible for unmasking.
std::optional<SubgraphView> sample_support(const SocialGraph& g, const SamplerConfig& cfg, NodeId anchor,
                                           std::span<const uint8_t> label_pool, Rng& rng);

// Within each view, for each class, samples k_shot label-pool documents
// without replacement with weight 1/count(v), where count(v) is the number
// of views in this batch containing v. Fills Episode::unmasked.
void unmask_labels(const SocialGraph& g, const SamplerConfig& cfg, std::span<const uint8_t> label_pool,
                   std::vector<Episode>& batch, Rng& rng);

// Union of the r-radius neighbourhoods of n_docs documents sampled from
// doc_pool (all of it when n_docs = 0; clamped when n_docs exceeds the
// pool). The sampled documents become the view's targets.
SubgraphView sample_query(const SocialGraph& g, std::span<const NodeId> doc_pool, int n_docs, int radius,
                          Rng& rng, bool class_balanced = false);

// Deterministic episode source. Episodes are generated in windows of
// cfg.epoch_views so inverse-frequency unmask counts have a defined scope;
// episode i only depends on (seed, i / epoch_views, i % epoch_views) and its
// window, so parallel and serial generation produce identical sets.
class EpisodeStream {
  public:
    // build_query = false skips query-view construction (support-only
    // consumers such as the subgraphs paradigm).
    EpisodeStream(const SocialGraph& g, SamplerConfig cfg, std::vector<NodeId> support_pool,
                  std::vector<NodeId> query_pool, bool build_query = true);

    // Episodes [first, first + count). Throws ConfigError when an episode
    // exhausts its 1000 anchor attempts (graph too sparse for k_shot).
    std::vector<Episode> take(int64_t first, int count, int workers) const;

    const SocialGraph& graph() const { return *g_; }
    const SamplerConfig& config() const { return cfg_; }

  private:
    Episode make_episode(int64_t epoch, int slot) const;

    const SocialGraph* g_;
    SamplerConfig cfg_;
    std::vector<NodeId> support_pool_;   // sorted docs eligible for unmasking
    std::vector<uint8_t> pool_mask_;
    std::vector<NodeId> query_pool_;     // sorted docs eligible as query targets
    std::vector<NodeId> users_;
    bool build_query_ = true;
};

// One line-delimited record per episode: anchor, radius, node ids, unmasked
// ids, query targets. For reproducibility audits.
void write_episode_manifest(const std::vector<Episode>& episodes, const std::string& path);

}  // namespace mgb
