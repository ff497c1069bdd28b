#include "mgb/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace mgb {

void SamplerConfig::validate(int32_t num_classes) const {
    if (k_shot < 1) throw ConfigError("sampler: k_shot must be >= 1");
    if (walk_length < 1) throw ConfigError("sampler: walk_length must be >= 1");
    if (budget <= k_shot * num_classes) {
        throw ConfigError("sampler: budget must exceed k_shot * num_classes");
    }
    if (r_min < 0 || r_max < r_min) throw ConfigError("sampler: invalid radius range");
    if (epoch_views < 1) throw ConfigError("sampler: epoch_views must be >= 1");
    if (query_docs < 0) throw ConfigError("sampler: query_docs must be >= 0");
}

bool SubgraphView::contains(NodeId v) const {
    return std::binary_search(nodes.begin(), nodes.end(), v);
}

std::vector<NodeId> random_walk(const SocialGraph& g, NodeId start, int length, Rng& rng,
                                std::span<const uint8_t> allowed) {
    if (length < 0) throw std::invalid_argument("random_walk: negative length");
    std::vector<NodeId> path{start};
    NodeId cur = start;
    std::vector<NodeId> admissible;
    for (int step = 0; step < length; ++step) {
        const auto nbrs = g.neighbors(cur);
        admissible.clear();
        for (NodeId w : nbrs) {
            if (allowed.empty() || allowed[static_cast<size_t>(w)]) admissible.push_back(w);
        }
        if (admissible.empty()) break;
        cur = admissible[rand_index(rng, admissible.size())];
        path.push_back(cur);
    }
    return path;
}

std::optional<SubgraphView> sample_support(const SocialGraph& g, const SamplerConfig& cfg, NodeId anchor,
                                           std::span<const uint8_t> label_pool, Rng& rng) {
    if (g.kind(anchor) != NodeKind::User) throw std::invalid_argument("sample_support: anchor must be a user");
    const int32_t C = g.num_classes();

    // Smallest radius whose neighbourhood holds k pool documents per class.
    // The BFS is grown incrementally across radii.
    std::vector<uint8_t> in_hood(static_cast<size_t>(g.num_nodes()), 0);
    in_hood[static_cast<size_t>(anchor)] = 1;
    std::vector<NodeId> frontier{anchor};
    std::vector<NodeId> next;
    std::vector<std::vector<NodeId>> docs_by_class(static_cast<size_t>(C));
    std::vector<int64_t> class_count(static_cast<size_t>(C), 0);
    int chosen_r = -1;
    for (int r = 1; r <= cfg.r_max && chosen_r < 0; ++r) {
        next.clear();
        for (NodeId u : frontier) {
            for (NodeId w : g.neighbors(u)) {
                if (in_hood[static_cast<size_t>(w)]) continue;
                in_hood[static_cast<size_t>(w)] = 1;
                next.push_back(w);
                if (g.is_doc(w) && (label_pool.empty() || label_pool[static_cast<size_t>(w)])) {
                    const int32_t y = g.label_of(w);
                    docs_by_class[static_cast<size_t>(y)].push_back(w);
                    ++class_count[static_cast<size_t>(y)];
                }
            }
        }
        frontier.swap(next);
        if (r < cfg.r_min) continue;
        bool ok = true;
        for (int32_t c = 0; c < C; ++c) {
            if (class_count[static_cast<size_t>(c)] < cfg.k_shot) {
                ok = false;
                break;
            }
        }
        if (ok) chosen_r = r;
        if (frontier.empty()) break;  // neighbourhood saturated, larger r adds nothing
    }
    if (chosen_r < 0) return std::nullopt;

    // Grow the view by class-round-robin random walks from pool documents.
    std::vector<uint8_t> in_view(static_cast<size_t>(g.num_nodes()), 0);
    std::vector<NodeId> view_nodes;
    auto add_node = [&](NodeId w) -> bool {
        if (in_view[static_cast<size_t>(w)]) return false;
        in_view[static_cast<size_t>(w)] = 1;
        view_nodes.push_back(w);
        return true;
    };
    const int64_t stall_limit = 50 * static_cast<int64_t>(C);
    int64_t stalled = 0;
    int32_t cls = 0;
    while (static_cast<int>(view_nodes.size()) < cfg.budget && stalled < stall_limit) {
        const auto& roots = docs_by_class[static_cast<size_t>(cls)];
        cls = (cls + 1) % C;
        const NodeId root = roots[rand_index(rng, roots.size())];
        const auto path = random_walk(g, root, cfg.walk_length, rng, in_hood);
        bool grew = false;
        for (NodeId w : path) grew |= add_node(w);
        stalled = grew ? 0 : stalled + 1;
    }

    // Valid k-shot graph: k pool documents of every class inside the view.
    for (int32_t c = 0; c < C; ++c) {
        int64_t have = 0;
        for (NodeId d : docs_by_class[static_cast<size_t>(c)]) {
            if (in_view[static_cast<size_t>(d)]) ++have;
        }
        if (have < cfg.k_shot) return std::nullopt;
    }

    SubgraphView view;
    view.anchor = anchor;
    view.radius = chosen_r;
    view.nodes = std::move(view_nodes);
    std::sort(view.nodes.begin(), view.nodes.end());
    return view;
}

void unmask_labels(const SocialGraph& g, const SamplerConfig& cfg, std::span<const uint8_t> label_pool,
                   std::vector<Episode>& batch, Rng& rng) {
    // count(v) = number of views in the batch containing document v.
    std::vector<int32_t> count(static_cast<size_t>(g.num_nodes()), 0);
    for (const Episode& e : batch) {
        for (NodeId v : e.support.nodes) {
            if (g.is_doc(v)) ++count[static_cast<size_t>(v)];
        }
    }
    const int32_t C = g.num_classes();
    for (Episode& e : batch) {
        e.unmasked.assign(static_cast<size_t>(C), {});
        std::vector<std::vector<NodeId>> candidates(static_cast<size_t>(C));
        for (NodeId v : e.support.nodes) {
            if (!g.is_doc(v)) continue;
            if (!label_pool.empty() && !label_pool[static_cast<size_t>(v)]) continue;
            candidates[static_cast<size_t>(g.label_of(v))].push_back(v);
        }
        for (int32_t c = 0; c < C; ++c) {
            auto& cand = candidates[static_cast<size_t>(c)];
            if (static_cast<int>(cand.size()) < cfg.k_shot) {
                throw std::logic_error("unmask_labels: view is not a valid k-shot graph for class " +
                                       std::to_string(c));
            }
            std::vector<double> weight(cand.size());
            for (size_t i = 0; i < cand.size(); ++i) {
                weight[i] = 1.0 / static_cast<double>(count[static_cast<size_t>(cand[i])]);
            }
            // Sequential weighted draws without replacement.
            auto& chosen = e.unmasked[static_cast<size_t>(c)];
            for (int draw = 0; draw < cfg.k_shot; ++draw) {
                double total = 0.0;
                for (size_t i = 0; i < cand.size(); ++i) total += weight[i];
                double x = rand_unit(rng) * total;
                size_t pick = cand.size() - 1;
                for (size_t i = 0; i < cand.size(); ++i) {
                    x -= weight[i];
                    if (x < 0.0) {
                        pick = i;
                        break;
                    }
                }
                chosen.push_back(cand[pick]);
                cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(pick));
                weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(pick));
            }
            std::sort(chosen.begin(), chosen.end());
        }
    }
}

SubgraphView sample_query(const SocialGraph& g, std::span<const NodeId> doc_pool, int n_docs, int radius,
                          Rng& rng, bool class_balanced) {
    if (doc_pool.empty()) throw std::invalid_argument("sample_query: empty document pool");
    std::vector<NodeId> picked;
    if (n_docs == 0 || n_docs >= static_cast<int>(doc_pool.size())) {
        picked.assign(doc_pool.begin(), doc_pool.end());
    } else if (!class_balanced) {
        std::vector<NodeId> pool(doc_pool.begin(), doc_pool.end());
        for (int i = 0; i < n_docs; ++i) {
            const size_t j = rand_index(rng, pool.size());
            picked.push_back(pool[j]);
            pool[j] = pool.back();
            pool.pop_back();
        }
    } else {
        const int32_t C = g.num_classes();
        std::vector<std::vector<NodeId>> by_class(static_cast<size_t>(C));
        for (NodeId v : doc_pool) by_class[static_cast<size_t>(g.label_of(v))].push_back(v);
        // Deal class quotas round-robin; classes that run dry pass their
        // remainder on.
        int remaining = n_docs;
        int32_t c = 0;
        int32_t dry = 0;
        while (remaining > 0 && dry < C) {
            auto& pool = by_class[static_cast<size_t>(c)];
            if (pool.empty()) {
                ++dry;
            } else {
                dry = 0;
                const size_t j = rand_index(rng, pool.size());
                picked.push_back(pool[j]);
                pool[j] = pool.back();
                pool.pop_back();
                --remaining;
            }
            c = (c + 1) % C;
        }
    }

    SubgraphView view;
    view.targets = picked;
    std::sort(view.targets.begin(), view.targets.end());
    // Union of per-target r-neighbourhoods = multi-source BFS to depth r.
    std::vector<uint8_t> seen(static_cast<size_t>(g.num_nodes()), 0);
    std::vector<NodeId> frontier;
    for (NodeId v : view.targets) {
        if (!seen[static_cast<size_t>(v)]) {
            seen[static_cast<size_t>(v)] = 1;
            frontier.push_back(v);
            view.nodes.push_back(v);
        }
    }
    std::vector<NodeId> next;
    for (int hop = 0; hop < radius && !frontier.empty(); ++hop) {
        next.clear();
        for (NodeId u : frontier) {
            for (NodeId w : g.neighbors(u)) {
                if (!seen[static_cast<size_t>(w)]) {
                    seen[static_cast<size_t>(w)] = 1;
                    next.push_back(w);
                    view.nodes.push_back(w);
                }
            }
        }
        frontier.swap(next);
    }
    std::sort(view.nodes.begin(), view.nodes.end());
    view.radius = radius;
    return view;
}

EpisodeStream::EpisodeStream(const SocialGraph& g, SamplerConfig cfg, std::vector<NodeId> support_pool,
                             std::vector<NodeId> query_pool, bool build_query)
    : g_(&g), cfg_(std::move(cfg)), support_pool_(std::move(support_pool)),
      query_pool_(std::move(query_pool)), build_query_(build_query) {
    cfg_.validate(g.num_classes());
    std::sort(support_pool_.begin(), support_pool_.end());
    std::sort(query_pool_.begin(), query_pool_.end());
    pool_mask_.assign(static_cast<size_t>(g.num_nodes()), 0);
    for (NodeId v : support_pool_) {
        if (!g.is_doc(v)) throw ConfigError("episode stream: support pool contains a non-document");
        pool_mask_[static_cast<size_t>(v)] = 1;
    }
    if (query_pool_.empty()) throw ConfigError("episode stream: empty query pool");
    users_ = g.user_nodes();
    if (users_.empty()) throw ConfigError("episode stream: graph has no user nodes");
}

Episode EpisodeStream::make_episode(int64_t epoch, int slot) const {
    Rng rng = make_rng(derive_seed(cfg_.seed, "episode", static_cast<uint64_t>(epoch),
                                   static_cast<uint64_t>(slot)));
    Episode e;
    std::optional<SubgraphView> support;
    for (int attempt = 0; attempt < 1000 && !support; ++attempt) {
        const NodeId anchor = users_[rand_index(rng, users_.size())];
        support = sample_support(*g_, cfg_, anchor, pool_mask_, rng);
    }
    if (!support) {
        throw ConfigError("episode stream: 1000 anchors rejected; graph too sparse for k_shot=" +
                          std::to_string(cfg_.k_shot));
    }
    e.support = std::move(*support);
    if (build_query_) {
        Rng qrng = make_rng(derive_seed(cfg_.seed, "query", static_cast<uint64_t>(epoch),
                                        static_cast<uint64_t>(slot)));
        e.query = sample_query(*g_, query_pool_, cfg_.query_docs, 2, qrng, cfg_.balanced_query);
    }
    return e;
}

std::vector<Episode> EpisodeStream::take(int64_t first, int count, int workers) const {
    if (first % cfg_.epoch_views != 0) {
        throw std::invalid_argument("episode stream: take() must start on an epoch boundary");
    }
    std::vector<Episode> out(static_cast<size_t>(count));
    const int64_t first_epoch = first / cfg_.epoch_views;
    const int64_t n_epochs = (count + cfg_.epoch_views - 1) / cfg_.epoch_views;

    // Generate in parallel; each episode's streams depend only on its index.
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&](int w) {
        for (int i = w; i < count; i += workers) {
            try {
                const int64_t idx = first + i;
                Episode e = make_episode(idx / cfg_.epoch_views, static_cast<int>(idx % cfg_.epoch_views));
                e.index = idx;
                out[static_cast<size_t>(i)] = std::move(e);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (workers <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w) threads.emplace_back(worker, w);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    // Unmasking weights are computed per epoch window, serially so the draw
    // order is fixed.
    for (int64_t ep = 0; ep < n_epochs; ++ep) {
        const int64_t lo = ep * cfg_.epoch_views;
        const int64_t hi = std::min<int64_t>(count, lo + cfg_.epoch_views);
        std::vector<Episode> window(std::make_move_iterator(out.begin() + lo),
                                    std::make_move_iterator(out.begin() + hi));
        Rng urng = make_rng(derive_seed(cfg_.seed, "unmask", static_cast<uint64_t>(first_epoch + ep)));
        unmask_labels(*g_, cfg_, pool_mask_, window, urng);
        std::move(window.begin(), window.end(), out.begin() + lo);
    }
    return out;
}

void write_episode_manifest(const std::vector<Episode>& episodes, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IngestError("cannot write episode manifest '" + path + "'");
    for (const Episode& e : episodes) {
        nlohmann::json j;
        j["episode"] = e.index;
        j["anchor"] = e.support.anchor;
        j["r"] = e.support.radius;
        j["support_nodes"] = e.support.nodes;
        j["unmasked"] = e.unmasked;
        j["query_targets"] = e.query.targets;
        j["query_nodes"] = e.query.nodes;
        f << j.dump() << "\n";
    }
}

}  // namespace mgb
