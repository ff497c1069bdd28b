#include "mgb/homophily.hpp"

#include <algorithm>
#include <cmath>

namespace mgb {

namespace {

bool in_view(std::span<const NodeId> view_nodes, NodeId v) {
    return std::binary_search(view_nodes.begin(), view_nodes.end(), v);
}

// Documents within radius r of v in the induced subgraph, v excluded.
std::vector<NodeId> doc_neighbourhood(const SocialGraph& g, std::span<const NodeId> view_nodes, NodeId v,
                                      int radius) {
    std::vector<NodeId> docs;
    std::vector<NodeId> frontier{v};
    std::vector<NodeId> next;
    std::vector<NodeId> visited{v};
    // Views are small; a sorted visited vector keeps this allocation-light.
    auto seen = [&](NodeId u) { return std::binary_search(visited.begin(), visited.end(), u); };
    for (int hop = 0; hop < radius && !frontier.empty(); ++hop) {
        next.clear();
        for (NodeId u : frontier) {
            for (NodeId w : g.neighbors(u)) {
                if (!in_view(view_nodes, w) || seen(w)) continue;
                next.push_back(w);
                visited.insert(std::lower_bound(visited.begin(), visited.end(), w), w);
                if (g.is_doc(w)) docs.push_back(w);
            }
        }
        frontier.swap(next);
    }
    return docs;
}

}  // namespace

double edge_homophily(const SocialGraph& g) {
    // Enumerate unordered doc pairs sharing a user, deduplicated.
    std::vector<int64_t> pair_keys;
    for (NodeId u = 0; u < g.num_nodes(); ++u) {
        if (g.is_doc(u)) continue;
        const auto nbrs = g.neighbors(u);
        std::vector<NodeId> docs;
        for (NodeId w : nbrs) {
            if (g.is_doc(w)) docs.push_back(w);
        }
        for (size_t i = 0; i < docs.size(); ++i) {
            for (size_t j = i + 1; j < docs.size(); ++j) {
                pair_keys.push_back(static_cast<int64_t>(docs[i]) * g.num_nodes() + docs[j]);
            }
        }
    }
    std::sort(pair_keys.begin(), pair_keys.end());
    pair_keys.erase(std::unique(pair_keys.begin(), pair_keys.end()), pair_keys.end());
    if (pair_keys.empty()) return 1.0;
    int64_t same = 0;
    for (int64_t key : pair_keys) {
        const NodeId a = static_cast<NodeId>(key / g.num_nodes());
        const NodeId b = static_cast<NodeId>(key % g.num_nodes());
        if (g.label_of(a) == g.label_of(b)) ++same;
    }
    return static_cast<double>(same) / static_cast<double>(pair_keys.size());
}

std::optional<double> neigh_homophily(const SocialGraph& g, std::span<const NodeId> view_nodes, NodeId v,
                                      int radius) {
    if (!g.is_doc(v)) throw std::invalid_argument("neigh_homophily: node is not a document");
    const auto docs = doc_neighbourhood(g, view_nodes, v, radius);
    if (docs.empty()) return std::nullopt;
    const int32_t y = g.label_of(v);
    int64_t same = 0;
    for (NodeId d : docs) {
        if (g.label_of(d) == y) ++same;
    }
    return static_cast<double>(same) / static_cast<double>(docs.size());
}

std::optional<double> relative_excess(const SocialGraph& g, std::span<const NodeId> view_nodes,
                                      std::span<const NodeId> labelled, int32_t cls, int radius) {
    int64_t labelled_total = 0;
    int64_t labelled_cls = 0;
    for (NodeId v : labelled) {
        if (!g.is_doc(v)) continue;
        ++labelled_total;
        if (g.label_of(v) == cls) ++labelled_cls;
    }
    if (labelled_cls == 0 || labelled_total == labelled_cls) return std::nullopt;  // p_c in {0, 1}
    const double p_c = static_cast<double>(labelled_cls) / static_cast<double>(labelled_total);

    double acc = 0.0;
    int64_t n_scored = 0;
    for (NodeId v : labelled) {
        if (!g.is_doc(v) || g.label_of(v) != cls) continue;
        const auto h = neigh_homophily(g, view_nodes, v, radius);
        if (!h) continue;
        acc += (*h - p_c) / (1.0 - p_c);
        ++n_scored;
    }
    if (n_scored == 0) return std::nullopt;
    return acc / static_cast<double>(n_scored);
}

std::optional<double> class_insensitive_excess(const SocialGraph& g, int radius) {
    const int32_t C = g.num_classes();
    if (C < 2) return std::nullopt;
    std::vector<NodeId> all(static_cast<size_t>(g.num_nodes()));
    for (NodeId v = 0; v < g.num_nodes(); ++v) all[static_cast<size_t>(v)] = v;

    std::vector<int64_t> class_count(static_cast<size_t>(C), 0);
    for (NodeId v : g.doc_nodes()) ++class_count[static_cast<size_t>(g.label_of(v))];
    const double n_docs = static_cast<double>(g.num_docs());

    // Ratio-of-sums form: same-label neighbour counts over neighbourhood
    // sizes, accumulated across all class-c documents.
    std::vector<int64_t> same(static_cast<size_t>(C), 0), tot(static_cast<size_t>(C), 0);
    for (NodeId v : g.doc_nodes()) {
        const int32_t y = g.label_of(v);
        const auto docs = doc_neighbourhood(g, all, v, radius);
        tot[static_cast<size_t>(y)] += static_cast<int64_t>(docs.size());
        for (NodeId d : docs) {
            if (g.label_of(d) == y) ++same[static_cast<size_t>(y)];
        }
    }
    double acc = 0.0;
    for (int32_t c = 0; c < C; ++c) {
        if (tot[static_cast<size_t>(c)] == 0) continue;
        const double h_c = static_cast<double>(same[static_cast<size_t>(c)]) /
                           static_cast<double>(tot[static_cast<size_t>(c)]);
        const double p_c = static_cast<double>(class_count[static_cast<size_t>(c)]) / n_docs;
        acc += std::max(0.0, h_c - p_c);
    }
    return acc / static_cast<double>(C - 1);
}

HomophilyReport homophily_profile(const SocialGraph& g, const std::vector<ViewForProfile>& views,
                                  int radius) {
    HomophilyReport report;
    report.edge = edge_homophily(g);
    report.class_insensitive = class_insensitive_excess(g, radius);
    report.class_prevalence.assign(static_cast<size_t>(g.num_classes()), 0.0);
    for (NodeId v : g.doc_nodes()) report.class_prevalence[static_cast<size_t>(g.label_of(v))] += 1.0;
    for (auto& p : report.class_prevalence) p /= static_cast<double>(g.num_docs());

    for (size_t i = 0; i < views.size(); ++i) {
        for (int32_t c = 0; c < g.num_classes(); ++c) {
            const auto val = relative_excess(g, views[i].nodes, views[i].labelled, c, radius);
            if (!val) {
                ++report.skipped_nodes;
                continue;
            }
            report.view_values.push_back({static_cast<int64_t>(i), c, *val});
        }
    }
    return report;
}

}  // namespace mgb
