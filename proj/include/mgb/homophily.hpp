#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mgb/graph.hpp"

namespace mgb {

// Ratio of same-labelled pairs among document pairs that share at least one
// user (documents are never directly adjacent, so co-adjacency at radius 2 is
// the edge analogue for this graph family).
double edge_homophily(const SocialGraph& g);

// Fraction of same-labelled documents among the documents within radius r of
// v (v excluded), restricted to the induced subgraph on view_nodes.
// Empty document neighbourhood -> nullopt (caller skips / tallies).
std::optional<double> neigh_homophily(const SocialGraph& g, std::span<const NodeId> view_nodes, NodeId v,
                                      int radius);

// Mean over labelled class-c documents of (h_neigh(v) - p_c) / (1 - p_c),
// where p_c is the prevalence of class c among the view's labelled documents.
// labelled lists the documents whose scores contribute (query views omit the
// unlabelled ones); nodes with empty document neighbourhoods are skipped.
// Returns nullopt when no class-c document has a defined score or p_c = 1.
std::optional<double> relative_excess(const SocialGraph& g, std::span<const NodeId> view_nodes,
                                      std::span<const NodeId> labelled, int32_t cls, int radius);

// Class-insensitive excess homophily of the whole graph at radius r:
// (1/(C-1)) * sum_c max(0, h_c - p_c), with h_c the ratio-of-sums
// neighbourhood homophily over all class-c documents. Absent for C = 1.
std::optional<double> class_insensitive_excess(const SocialGraph& g, int radius);

struct HomophilyRecord {
    int64_t view_id = 0;
    int32_t cls = 0;
    double value = 0.0;
};

struct HomophilyReport {
    double edge = 0.0;
    std::optional<double> class_insensitive;
    std::vector<double> class_prevalence;          // whole graph
    std::vector<HomophilyRecord> view_values;      // raw per-view relative excess
    int64_t skipped_nodes = 0;                     // empty-neighbourhood tally
};

struct ViewForProfile {
    std::vector<NodeId> nodes;     // sorted
    std::vector<NodeId> labelled;  // documents contributing scores
};

// Per-class relative-excess across a set of views plus graph-level metrics.
HomophilyReport homophily_profile(const SocialGraph& g, const std::vector<ViewForProfile>& views,
                                  int radius);

}  // namespace mgb
