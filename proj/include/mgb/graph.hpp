#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgb/error.hpp"
#include "mgb/tensor.hpp"

namespace mgb {

using NodeId = int32_t;
constexpr NodeId kInvalidNode = -1;

enum class NodeKind : uint8_t { Document, User };

// Heterogeneous social graph of document and user nodes. Documents carry
// features and labels; users are anonymous. Edges are undirected, stored
// without duplicates or self-edges; documents never connect to documents.
// Immutable after construction, safe for unsynchronised concurrent reads.
class SocialGraph {
  public:
    // nodes[i] gives the kind of node i. Edges are symmetrised and
    // deduplicated. doc_features has one row per document, ordered by node
    // id; doc_labels likewise. num_classes must cover all labels.
    static SocialGraph build(std::vector<NodeKind> kinds, std::vector<std::pair<NodeId, NodeId>> edges,
                             Tensor doc_features, std::vector<int32_t> doc_labels, int32_t num_classes);

    int64_t num_nodes() const { return static_cast<int64_t>(kinds_.size()); }
    int64_t num_docs() const { return static_cast<int64_t>(doc_nodes_.size()); }
    int64_t num_users() const { return num_nodes() - num_docs(); }
    int64_t num_edges() const { return static_cast<int64_t>(adj_.size()) / 2; }
    int32_t num_classes() const { return num_classes_; }
    int64_t feature_dim() const { return features_.cols; }

    NodeKind kind(NodeId v) const { return kinds_[check(v)]; }
    bool is_doc(NodeId v) const { return kind(v) == NodeKind::Document; }

    // Dense document row of a document node, -1 for users.
    int32_t doc_row(NodeId v) const { return doc_index_[check(v)]; }
    NodeId doc_node(int32_t row) const { return doc_nodes_[static_cast<size_t>(row)]; }
    int32_t label_of(NodeId v) const;

    std::span<const NodeId> neighbors(NodeId v) const;
    int64_t degree(NodeId v) const { return static_cast<int64_t>(neighbors(v).size()); }

    const Tensor& doc_features() const { return features_; }
    const std::vector<int32_t>& doc_labels() const { return labels_; }
    std::span<const NodeId> doc_nodes() const { return doc_nodes_; }
    std::vector<NodeId> user_nodes() const;

  private:
    size_t check(NodeId v) const {
        if (v < 0 || v >= num_nodes()) throw std::invalid_argument("unknown node id " + std::to_string(v));
        return static_cast<size_t>(v);
    }

    std::vector<NodeKind> kinds_;
    std::vector<int32_t> doc_index_;   // node -> doc row or -1
    std::vector<NodeId> doc_nodes_;    // doc row -> node
    std::vector<int64_t> adj_offsets_; // CSR over sorted unique neighbours
    std::vector<NodeId> adj_;
    Tensor features_;                  // docs x d
    std::vector<int32_t> labels_;      // per doc row
    int32_t num_classes_ = 0;
};

// N_r(v): all nodes within shortest-path distance r of v, always including v.
// Returned sorted ascending.
std::vector<NodeId> neighbourhood(const SocialGraph& g, NodeId v, int radius);

struct ComponentResult {
    SocialGraph graph;
    std::vector<NodeId> old_to_new;  // -1 for dropped nodes
};

// Induced subgraph on the largest connected component. Ties are broken
// towards the component containing the smallest node id. Node ids are
// re-densified preserving relative order.
ComponentResult largest_connected_component(const SocialGraph& g);

struct FoldSplit {
    int fold_id = 0;
    std::vector<NodeId> train_docs;  // sorted
    std::vector<NodeId> val_docs;    // sorted
};

// Stratified k-fold split over document nodes. Validation sets are disjoint
// and cover all documents; per-class proportions in each validation set match
// the graph within two percentage points. Deterministic for a fixed seed.
// User nodes are not partitioned. Classes with fewer than k documents are a
// configuration error.
std::vector<FoldSplit> stratified_kfold(const SocialGraph& g, int k, uint64_t seed);

}  // namespace mgb
