#include "mgb/graph.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

#include "mgb/rng.hpp"

namespace mgb {

SocialGraph SocialGraph::build(std::vector<NodeKind> kinds, std::vector<std::pair<NodeId, NodeId>> edges,
                               Tensor doc_features, std::vector<int32_t> doc_labels, int32_t num_classes) {
    SocialGraph g;
    g.kinds_ = std::move(kinds);
    const int64_t n = g.num_nodes();
    if (num_classes < 2) throw ConfigError("graph requires at least 2 classes");
    g.num_classes_ = num_classes;

    g.doc_index_.assign(static_cast<size_t>(n), -1);
    for (NodeId v = 0; v < n; ++v) {
        if (g.kinds_[static_cast<size_t>(v)] == NodeKind::Document) {
            g.doc_index_[static_cast<size_t>(v)] = static_cast<int32_t>(g.doc_nodes_.size());
            g.doc_nodes_.push_back(v);
        }
    }
    if (doc_features.rows != g.num_docs()) {
        throw IngestError("feature row count " + std::to_string(doc_features.rows) +
                          " does not match document count " + std::to_string(g.num_docs()));
    }
    if (static_cast<int64_t>(doc_labels.size()) != g.num_docs()) {
        throw IngestError("label count does not match document count");
    }
    for (int32_t y : doc_labels) {
        if (y < 0 || y >= num_classes) throw IngestError("document label out of range [0, C)");
    }
    g.features_ = std::move(doc_features);
    g.labels_ = std::move(doc_labels);

    // Symmetrise and deduplicate; validate against doc-doc and self edges.
    std::vector<std::pair<NodeId, NodeId>> sym;
    sym.reserve(edges.size());
    for (auto [a, b] : edges) {
        if (a < 0 || a >= n || b < 0 || b >= n) throw IngestError("edge endpoint out of range");
        if (a == b) throw IngestError("self-edge on node " + std::to_string(a));
        if (g.kinds_[static_cast<size_t>(a)] == NodeKind::Document &&
            g.kinds_[static_cast<size_t>(b)] == NodeKind::Document) {
            throw IngestError("document-document edge " + std::to_string(a) + "-" + std::to_string(b));
        }
        sym.emplace_back(std::min(a, b), std::max(a, b));
    }
    std::sort(sym.begin(), sym.end());
    sym.erase(std::unique(sym.begin(), sym.end()), sym.end());

    std::vector<int64_t> deg(static_cast<size_t>(n), 0);
    for (auto [a, b] : sym) {
        ++deg[static_cast<size_t>(a)];
        ++deg[static_cast<size_t>(b)];
    }
    g.adj_offsets_.assign(static_cast<size_t>(n) + 1, 0);
    for (int64_t i = 0; i < n; ++i) g.adj_offsets_[static_cast<size_t>(i) + 1] = g.adj_offsets_[static_cast<size_t>(i)] + deg[static_cast<size_t>(i)];
    g.adj_.resize(static_cast<size_t>(g.adj_offsets_.back()));
    std::vector<int64_t> fill(g.adj_offsets_.begin(), g.adj_offsets_.end() - 1);
    for (auto [a, b] : sym) {
        g.adj_[static_cast<size_t>(fill[static_cast<size_t>(a)]++)] = b;
        g.adj_[static_cast<size_t>(fill[static_cast<size_t>(b)]++)] = a;
    }
    // Sorted insert order follows from sorted sym for the first endpoint only;
    // sort each row to make neighbour order canonical.
    for (int64_t i = 0; i < n; ++i) {
        std::sort(g.adj_.begin() + g.adj_offsets_[static_cast<size_t>(i)],
                  g.adj_.begin() + g.adj_offsets_[static_cast<size_t>(i) + 1]);
    }

    for (NodeId v : g.doc_nodes_) {
        if (g.degree(v) == 0) throw IngestError("document " + std::to_string(v) + " has no incident edge");
    }
    return g;
}

int32_t SocialGraph::label_of(NodeId v) const {
    const int32_t row = doc_row(v);
    if (row < 0) throw std::invalid_argument("label_of: node " + std::to_string(v) + " is not a document");
    return labels_[static_cast<size_t>(row)];
}

std::span<const NodeId> SocialGraph::neighbors(NodeId v) const {
    const size_t i = check(v);
    return {adj_.data() + adj_offsets_[i], static_cast<size_t>(adj_offsets_[i + 1] - adj_offsets_[i])};
}

std::vector<NodeId> SocialGraph::user_nodes() const {
    std::vector<NodeId> out;
    out.reserve(static_cast<size_t>(num_users()));
    for (NodeId v = 0; v < num_nodes(); ++v) {
        if (kinds_[static_cast<size_t>(v)] == NodeKind::User) out.push_back(v);
    }
    return out;
}

std::vector<NodeId> neighbourhood(const SocialGraph& g, NodeId v, int radius) {
    if (radius < 0) throw std::invalid_argument("neighbourhood: negative radius");
    std::vector<NodeId> out{v};
    g.kind(v);  // validates the id
    if (radius == 0) return out;
    std::vector<uint8_t> seen(static_cast<size_t>(g.num_nodes()), 0);
    seen[static_cast<size_t>(v)] = 1;
    std::vector<NodeId> frontier{v};
    std::vector<NodeId> next;
    for (int hop = 0; hop < radius && !frontier.empty(); ++hop) {
        next.clear();
        for (NodeId u : frontier) {
            for (NodeId w : g.neighbors(u)) {
                if (!seen[static_cast<size_t>(w)]) {
                    seen[static_cast<size_t>(w)] = 1;
                    next.push_back(w);
                    out.push_back(w);
                }
            }
        }
        frontier.swap(next);
    }
    std::sort(out.begin(), out.end());
    return out;
}

ComponentResult largest_connected_component(const SocialGraph& g) {
    const int64_t n = g.num_nodes();
    if (n == 0) throw std::invalid_argument("largest_connected_component: empty graph");
    std::vector<int32_t> comp(static_cast<size_t>(n), -1);
    int32_t n_comp = 0;
    std::vector<int64_t> comp_size;
    std::vector<NodeId> stack;
    for (NodeId s = 0; s < n; ++s) {
        if (comp[static_cast<size_t>(s)] >= 0) continue;
        const int32_t c = n_comp++;
        comp_size.push_back(0);
        stack.push_back(s);
        comp[static_cast<size_t>(s)] = c;
        while (!stack.empty()) {
            NodeId u = stack.back();
            stack.pop_back();
            ++comp_size[static_cast<size_t>(c)];
            for (NodeId w : g.neighbors(u)) {
                if (comp[static_cast<size_t>(w)] < 0) {
                    comp[static_cast<size_t>(w)] = c;
                    stack.push_back(w);
                }
            }
        }
    }
    // Seeds are scanned in ascending id, so on a size tie the first maximal
    // component is the one containing the smallest node id.
    int32_t best = 0;
    for (int32_t c = 1; c < n_comp; ++c) {
        if (comp_size[static_cast<size_t>(c)] > comp_size[static_cast<size_t>(best)]) best = c;
    }

    std::vector<NodeId> old_to_new(static_cast<size_t>(n), kInvalidNode);
    std::vector<NodeKind> kinds;
    std::vector<NodeId> kept;
    for (NodeId v = 0; v < n; ++v) {
        if (comp[static_cast<size_t>(v)] == best) {
            old_to_new[static_cast<size_t>(v)] = static_cast<NodeId>(kept.size());
            kept.push_back(v);
            kinds.push_back(g.kind(v));
        }
    }
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (NodeId v : kept) {
        for (NodeId w : g.neighbors(v)) {
            if (v < w && old_to_new[static_cast<size_t>(w)] != kInvalidNode) {
                edges.emplace_back(old_to_new[static_cast<size_t>(v)], old_to_new[static_cast<size_t>(w)]);
            }
        }
    }
    int64_t n_docs = 0;
    for (NodeId v : kept) {
        if (g.is_doc(v)) ++n_docs;
    }
    Tensor features(n_docs, g.feature_dim());
    std::vector<int32_t> labels;
    labels.reserve(static_cast<size_t>(n_docs));
    int64_t row = 0;
    for (NodeId v : kept) {
        if (!g.is_doc(v)) continue;
        const int32_t old_row = g.doc_row(v);
        std::copy_n(&g.doc_features().v[static_cast<size_t>(old_row) * static_cast<size_t>(g.feature_dim())],
                    g.feature_dim(), &features.v[static_cast<size_t>(row) * static_cast<size_t>(g.feature_dim())]);
        labels.push_back(g.doc_labels()[static_cast<size_t>(old_row)]);
        ++row;
    }
    return ComponentResult{
        SocialGraph::build(std::move(kinds), std::move(edges), std::move(features), std::move(labels),
                           g.num_classes()),
        std::move(old_to_new)};
}

std::vector<FoldSplit> stratified_kfold(const SocialGraph& g, int k, uint64_t seed) {
    if (k < 2) throw ConfigError("stratified_kfold: k must be >= 2");
    std::vector<std::vector<NodeId>> by_class(static_cast<size_t>(g.num_classes()));
    for (NodeId v : g.doc_nodes()) by_class[static_cast<size_t>(g.label_of(v))].push_back(v);
    for (int32_t c = 0; c < g.num_classes(); ++c) {
        if (static_cast<int>(by_class[static_cast<size_t>(c)].size()) < k) {
            throw ConfigError("class " + std::to_string(c) + " has fewer than k=" + std::to_string(k) +
                              " documents");
        }
    }
    std::vector<FoldSplit> folds(static_cast<size_t>(k));
    for (int f = 0; f < k; ++f) folds[static_cast<size_t>(f)].fold_id = f;

    Rng rng = make_rng(derive_seed(seed, "kfold"));
    for (auto& docs : by_class) {
        // Fisher-Yates, then deal round-robin so fold sizes differ by at most 1.
        for (size_t i = docs.size(); i > 1; --i) {
            std::swap(docs[i - 1], docs[rand_index(rng, i)]);
        }
        for (size_t i = 0; i < docs.size(); ++i) {
            folds[i % static_cast<size_t>(k)].val_docs.push_back(docs[i]);
        }
    }
    for (auto& f : folds) {
        std::sort(f.val_docs.begin(), f.val_docs.end());
        std::vector<uint8_t> in_val(static_cast<size_t>(g.num_nodes()), 0);
        for (NodeId v : f.val_docs) in_val[static_cast<size_t>(v)] = 1;
        for (NodeId v : g.doc_nodes()) {
            if (!in_val[static_cast<size_t>(v)]) f.train_docs.push_back(v);
        }
    }
    return folds;
}

}  // namespace mgb
