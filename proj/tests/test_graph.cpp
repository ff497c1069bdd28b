#include "mgb/graph.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "mgb/rng.hpp"

using namespace mgb;

namespace {

// doc/user layout helper: kinds by string, features zero, labels given.
SocialGraph make_graph(const std::string& kinds, std::vector<std::pair<NodeId, NodeId>> edges,
                       std::vector<int32_t> labels, int32_t classes = 2, int64_t dim = 2) {
    std::vector<NodeKind> ks;
    for (char c : kinds) ks.push_back(c == 'd' ? NodeKind::Document : NodeKind::User);
    const int64_t n_docs = static_cast<int64_t>(labels.size());
    return SocialGraph::build(std::move(ks), std::move(edges), Tensor(n_docs, dim), std::move(labels),
                              classes);
}

// Independent breadth-first-search oracle.
std::set<NodeId> bfs_oracle(const SocialGraph& g, NodeId v, int r) {
    std::set<NodeId> seen{v};
    std::vector<NodeId> frontier{v};
    for (int hop = 0; hop < r; ++hop) {
        std::vector<NodeId> next;
        for (NodeId u : frontier) {
            for (NodeId w : g.neighbors(u)) {
                if (seen.insert(w).second) next.push_back(w);
            }
        }
        frontier = std::move(next);
    }
    return seen;
}

SocialGraph random_graph(Rng& rng, int64_t n_docs, int64_t n_users, double edge_p) {
    std::string kinds(static_cast<size_t>(n_docs), 'd');
    kinds.append(static_cast<size_t>(n_users), 'u');
    std::vector<std::pair<NodeId, NodeId>> edges;
    // every doc gets one user so the invariant holds
    for (int64_t d = 0; d < n_docs; ++d) {
        edges.emplace_back(static_cast<NodeId>(d),
                           static_cast<NodeId>(n_docs + rand_index(rng, static_cast<uint64_t>(n_users))));
    }
    for (int64_t d = 0; d < n_docs; ++d) {
        for (int64_t u = 0; u < n_users; ++u) {
            if (rand_unit(rng) < edge_p) edges.emplace_back(static_cast<NodeId>(d), static_cast<NodeId>(n_docs + u));
        }
    }
    for (int64_t a = 0; a < n_users; ++a) {
        for (int64_t b = a + 1; b < n_users; ++b) {
            if (rand_unit(rng) < edge_p) {
                edges.emplace_back(static_cast<NodeId>(n_docs + a), static_cast<NodeId>(n_docs + b));
            }
        }
    }
    std::vector<int32_t> labels;
    for (int64_t d = 0; d < n_docs; ++d) labels.push_back(static_cast<int32_t>(rand_index(rng, 2)));
    return make_graph(kinds, std::move(edges), std::move(labels));
}

}  // namespace

TEST_CASE("build validates structure") {
    CHECK_THROWS_AS(make_graph("dd", {{0, 1}}, {0, 1}), IngestError);          // doc-doc edge
    CHECK_THROWS_AS(make_graph("du", {{0, 0}}, {0}), IngestError);             // self edge
    CHECK_THROWS_AS(make_graph("ddu", {{0, 2}}, {0, 1}), IngestError);         // isolated doc
    CHECK_THROWS_AS(make_graph("du", {{0, 1}}, {2}), IngestError);             // label out of range
    CHECK_NOTHROW(make_graph("ddu", {{0, 2}, {1, 2}, {2, 0}}, {0, 1}));        // duplicate collapses
}

TEST_CASE("neighbourhood on the user-doc-user path") {
    // u0 - d1 - u2 as a path graph
    const SocialGraph g = make_graph("udu", {{0, 1}, {1, 2}}, {0});
    SUBCASE("r=0 is the node itself") {
        CHECK(neighbourhood(g, 1, 0) == std::vector<NodeId>{1});
    }
    SUBCASE("direct neighbours at r=1") {
        CHECK(neighbourhood(g, 1, 1) == std::vector<NodeId>{0, 1, 2});
    }
    SUBCASE("two hops from an endpoint") {
        CHECK(neighbourhood(g, 0, 2) == std::vector<NodeId>{0, 1, 2});
    }
    SUBCASE("unknown node is an input error") {
        CHECK_THROWS_AS(neighbourhood(g, 17, 1), std::invalid_argument);
    }
}

TEST_CASE("neighbourhood matches BFS oracle on random graphs") {
    Rng rng = make_rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const SocialGraph g = random_graph(rng, 40, 60, 0.02);
        for (int r = 0; r <= 5; ++r) {
            const NodeId v = static_cast<NodeId>(rand_index(rng, static_cast<uint64_t>(g.num_nodes())));
            const auto got = neighbourhood(g, v, r);
            const auto want = bfs_oracle(g, v, r);
            CHECK(std::set<NodeId>(got.begin(), got.end()) == want);
            // monotone: N_r subset of N_{r+1}
            const auto bigger = neighbourhood(g, v, r + 1);
            CHECK(std::includes(bigger.begin(), bigger.end(), got.begin(), got.end()));
        }
    }
}

TEST_CASE("largest connected component") {
    SUBCASE("connected graph maps onto itself") {
        const SocialGraph g = make_graph("dudu", {{0, 1}, {1, 2}, {2, 3}}, {0, 1});
        const auto r = largest_connected_component(g);
        CHECK(r.graph.num_nodes() == 4);
        for (NodeId v = 0; v < 4; ++v) CHECK(r.old_to_new[static_cast<size_t>(v)] == v);
    }
    SUBCASE("majority component wins") {
        // component A: d0-u1, component B: d2-u3-d4 (sizes 2 and 3)
        const SocialGraph g = make_graph("dudud", {{0, 1}, {2, 3}, {3, 4}}, {0, 1, 0});
        const auto r = largest_connected_component(g);
        CHECK(r.graph.num_nodes() == 3);
        CHECK(r.graph.num_docs() == 2);
        CHECK(r.old_to_new[0] == kInvalidNode);
        CHECK(r.old_to_new[2] == 0);
    }
    SUBCASE("tie broken toward smallest node id") {
        // two components of size 2 each; node 0 in the first
        const SocialGraph g = make_graph("dudu", {{0, 1}, {2, 3}}, {0, 1});
        const auto r = largest_connected_component(g);
        CHECK(r.graph.num_nodes() == 2);
        CHECK(r.old_to_new[0] == 0);
        CHECK(r.old_to_new[2] == kInvalidNode);
    }
    SUBCASE("every surviving node reachable from every other") {
        Rng rng = make_rng(7);
        const SocialGraph g = random_graph(rng, 30, 30, 0.01);
        const auto r = largest_connected_component(g);
        const auto all = neighbourhood(r.graph, 0, static_cast<int>(r.graph.num_nodes()));
        CHECK(static_cast<int64_t>(all.size()) == r.graph.num_nodes());
    }
}

TEST_CASE("stratified k-fold") {
    Rng rng = make_rng(99);
    SUBCASE("perfect divisibility: 1 doc per class per fold") {
        // 10 docs, 5 per class, k=5
        std::string kinds(10, 'd');
        kinds += 'u';
        std::vector<std::pair<NodeId, NodeId>> edges;
        for (NodeId d = 0; d < 10; ++d) edges.emplace_back(d, 10);
        std::vector<int32_t> labels{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
        const SocialGraph g = make_graph(kinds, std::move(edges), std::move(labels));
        const auto folds = stratified_kfold(g, 5, 1);
        for (const auto& f : folds) {
            CHECK(f.val_docs.size() == 2);
            int c0 = 0, c1 = 0;
            for (NodeId v : f.val_docs) (g.label_of(v) == 0 ? c0 : c1)++;
            CHECK(c0 == 1);
            CHECK(c1 == 1);
        }
    }
    SUBCASE("benchmark-like 77/23 proportions over 1000 docs") {
        std::string kinds(1000, 'd');
        kinds += 'u';
        std::vector<std::pair<NodeId, NodeId>> edges;
        for (NodeId d = 0; d < 1000; ++d) edges.emplace_back(d, 1000);
        std::vector<int32_t> labels(1000, 0);
        // 771 majority / 229 minority, mirroring a 77.12%/22.88% split
        for (int i = 771; i < 1000; ++i) labels[static_cast<size_t>(i)] = 1;
        const SocialGraph g = make_graph(kinds, std::move(edges), std::move(labels));
        const auto folds = stratified_kfold(g, 5, 17);
        for (const auto& f : folds) {
            int majority = 0;
            for (NodeId v : f.val_docs) majority += g.label_of(v) == 0 ? 1 : 0;
            CHECK(majority >= 152);  // 154 +- 2
            CHECK(majority <= 156);
            // stratification within 2 percentage points
            const double frac = static_cast<double>(majority) / static_cast<double>(f.val_docs.size());
            CHECK(std::abs(frac - 0.771) < 0.02);
        }
    }
    SUBCASE("deterministic for a fixed seed") {
        const SocialGraph g = random_graph(rng, 60, 20, 0.05);
        const auto a = stratified_kfold(g, 5, 123);
        const auto b = stratified_kfold(g, 5, 123);
        for (int i = 0; i < 5; ++i) {
            CHECK(a[static_cast<size_t>(i)].val_docs == b[static_cast<size_t>(i)].val_docs);
            CHECK(a[static_cast<size_t>(i)].train_docs == b[static_cast<size_t>(i)].train_docs);
        }
    }
    SUBCASE("class smaller than k is a configuration error") {
        const SocialGraph g = make_graph("ddddu", {{0, 4}, {1, 4}, {2, 4}, {3, 4}}, {0, 0, 0, 1});
        CHECK_THROWS_AS(stratified_kfold(g, 5, 1), ConfigError);
    }
    SUBCASE("disjointness and coverage over random graphs") {
        for (int trial = 0; trial < 100; ++trial) {
            const SocialGraph g = random_graph(rng, 50 + static_cast<int64_t>(rand_index(rng, 50)), 20, 0.05);
            const auto folds = stratified_kfold(g, 5, rng());
            std::set<NodeId> seen;
            size_t total = 0;
            for (const auto& f : folds) {
                for (NodeId v : f.val_docs) {
                    CHECK(seen.insert(v).second);  // pairwise disjoint
                }
                total += f.val_docs.size();
                // train/val partition the documents
                CHECK(f.train_docs.size() + f.val_docs.size() == static_cast<size_t>(g.num_docs()));
            }
            CHECK(total == static_cast<size_t>(g.num_docs()));
        }
    }
}
