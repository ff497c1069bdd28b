#include "mgb/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mgb/rng.hpp"

namespace mgb {

void SyntheticSpec::validate() const {
    if (n_docs < num_classes) throw ConfigError("synthetic: need at least one document per class");
    if (n_users < n_communities) throw ConfigError("synthetic: need at least one user per community");
    if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
    if (n_communities < num_classes) throw ConfigError("synthetic: need at least one community per class");
    if (homophily < 0.0 || homophily > 1.0) throw ConfigError("synthetic: homophily target outside [0,1]");
    if (pareto_alpha <= 1.0) throw ConfigError("synthetic: pareto_alpha must exceed 1");
    if (feature_dim < std::max<int64_t>(2, num_classes)) {
        throw ConfigError("synthetic: feature_dim must be >= max(2, num_classes)");
    }
    if (max_users_per_doc < 1) throw ConfigError("synthetic: max_users_per_doc must be >= 1");
    if (separation < 0.0) throw ConfigError("synthetic: separation must be >= 0");
    if (!class_proportions.empty()) {
        if (static_cast<int32_t>(class_proportions.size()) != num_classes) {
            throw ConfigError("synthetic: class_proportions size must equal num_classes");
        }
        double sum = 0.0;
        for (double p : class_proportions) {
            if (p <= 0.0) throw ConfigError("synthetic: class proportions must be positive");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("synthetic: class proportions must sum to 1");
    }
    if (!mean_translation.empty() && static_cast<int64_t>(mean_translation.size()) != feature_dim) {
        throw ConfigError("synthetic: mean_translation size must equal feature_dim");
    }
}

std::vector<double> SyntheticSpec::proportions() const {
    if (!class_proportions.empty()) return class_proportions;
    return std::vector<double>(static_cast<size_t>(num_classes), 1.0 / num_classes);
}

std::vector<std::vector<double>> SyntheticSpec::class_means() const {
    // Simplex placement: mean of class y sits at (separation / sqrt(2)) * e_y,
    // giving pairwise distance exactly `separation`.
    const double coord = separation / std::sqrt(2.0);
    std::vector<std::vector<double>> means(static_cast<size_t>(num_classes),
                                           std::vector<double>(static_cast<size_t>(feature_dim), 0.0));
    for (int32_t y = 0; y < num_classes; ++y) means[static_cast<size_t>(y)][static_cast<size_t>(y)] = coord;
    if (rotation_angle_deg != 0.0) {
        const double a = rotation_angle_deg * M_PI / 180.0;
        const double c = std::cos(a), s = std::sin(a);
        for (auto& m : means) {
            const double x0 = m[0], x1 = m[1];
            m[0] = c * x0 - s * x1;
            m[1] = s * x0 + c * x1;
        }
    }
    if (!mean_translation.empty()) {
        for (auto& m : means) {
            for (size_t i = 0; i < m.size(); ++i) m[i] += mean_translation[i];
        }
    }
    return means;
}

namespace {

// Largest-remainder apportionment of n items over the given proportions.
std::vector<int64_t> apportion(int64_t n, const std::vector<double>& props) {
    std::vector<int64_t> counts(props.size(), 0);
    std::vector<std::pair<double, size_t>> rema;
    int64_t assigned = 0;
    for (size_t i = 0; i < props.size(); ++i) {
        const double exact = props[i] * static_cast<double>(n);
        counts[i] = static_cast<int64_t>(exact);
        assigned += counts[i];
        rema.emplace_back(exact - std::floor(exact), i);
    }
    std::sort(rema.begin(), rema.end(), [](auto& a, auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    for (int64_t i = 0; i < n - assigned; ++i) ++counts[rema[static_cast<size_t>(i) % rema.size()].second];
    return counts;
}

// Prefix-sum table for repeated weighted draws.
struct WeightedPicker {
    std::vector<double> cumulative;
    std::vector<int64_t> items;

    void build(const std::vector<int64_t>& ids, const std::vector<double>& weights) {
        items = ids;
        cumulative.resize(ids.size());
        double acc = 0.0;
        for (size_t i = 0; i < ids.size(); ++i) {
            acc += weights[static_cast<size_t>(ids[i])];
            cumulative[i] = acc;
        }
    }

    int64_t draw(Rng& rng) const {
        const double x = rand_unit(rng) * cumulative.back();
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
        const size_t i = std::min(static_cast<size_t>(it - cumulative.begin()), items.size() - 1);
        return items[i];
    }
};

}  // namespace

SocialGraph generate(const SyntheticSpec& spec) {
    spec.validate();
    const auto props = spec.proportions();
    const int32_t C = spec.num_classes;

    // Node layout: documents first (0..n_docs-1), then users.
    const auto doc_node = [&](int64_t d) { return static_cast<NodeId>(d); };
    const auto user_node = [&](int64_t u) { return static_cast<NodeId>(spec.n_docs + u); };

    // Communities get home classes apportioned by the label proportions, so
    // community sizes stay balanced while label totals match the spec.
    const auto comm_per_class = apportion(spec.n_communities, props);
    std::vector<int32_t> home_class(static_cast<size_t>(spec.n_communities));
    {
        size_t i = 0;
        for (int32_t y = 0; y < C; ++y) {
            for (int64_t k = 0; k < comm_per_class[static_cast<size_t>(y)]; ++k) home_class[i++] = y;
        }
    }
    std::vector<std::vector<int64_t>> comms_of_class(static_cast<size_t>(C));
    for (int c = 0; c < spec.n_communities; ++c) {
        comms_of_class[static_cast<size_t>(home_class[static_cast<size_t>(c)])].push_back(c);
    }

    // Users: round-robin community assignment, Pareto activity.
    Rng urng = make_rng(derive_seed(spec.seed, "users"));
    std::vector<int32_t> user_comm(static_cast<size_t>(spec.n_users));
    std::vector<double> activity(static_cast<size_t>(spec.n_users));
    std::vector<std::vector<int64_t>> comm_users(static_cast<size_t>(spec.n_communities));
    for (int64_t u = 0; u < spec.n_users; ++u) {
        user_comm[static_cast<size_t>(u)] = static_cast<int32_t>(u % spec.n_communities);
        comm_users[static_cast<size_t>(u % spec.n_communities)].push_back(u);
        const double unif = rand_unit(urng);
        activity[static_cast<size_t>(u)] = std::pow(1.0 - unif, -1.0 / spec.pareto_alpha);
    }
    std::vector<WeightedPicker> comm_picker(static_cast<size_t>(spec.n_communities));
    for (int c = 0; c < spec.n_communities; ++c) {
        comm_picker[static_cast<size_t>(c)].build(comm_users[static_cast<size_t>(c)], activity);
    }
    WeightedPicker global_picker;
    {
        std::vector<int64_t> all(static_cast<size_t>(spec.n_users));
        std::iota(all.begin(), all.end(), int64_t{0});
        global_picker.build(all, activity);
    }

    // Document labels: exact proportions, shuffled over documents.
    Rng lrng = make_rng(derive_seed(spec.seed, "labels"));
    std::vector<int32_t> labels;
    labels.reserve(static_cast<size_t>(spec.n_docs));
    const auto docs_per_class = apportion(spec.n_docs, props);
    for (int32_t y = 0; y < C; ++y) {
        labels.insert(labels.end(), static_cast<size_t>(docs_per_class[static_cast<size_t>(y)]), y);
    }
    for (size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rand_index(lrng, i)]);

    // Document communities: with probability h* a home community of the
    // document's class, otherwise any community. h*=1 makes communities
    // class-pure, h*=0 decouples class from community entirely.
    Rng crng = make_rng(derive_seed(spec.seed, "doc-comm"));
    std::vector<int32_t> doc_comm(static_cast<size_t>(spec.n_docs));
    for (int64_t d = 0; d < spec.n_docs; ++d) {
        const int32_t y = labels[static_cast<size_t>(d)];
        if (rand_unit(crng) < spec.homophily) {
            const auto& homes = comms_of_class[static_cast<size_t>(y)];
            doc_comm[static_cast<size_t>(d)] = static_cast<int32_t>(homes[rand_index(crng, homes.size())]);
        } else {
            doc_comm[static_cast<size_t>(d)] = static_cast<int32_t>(rand_index(crng, spec.n_communities));
        }
    }

    std::vector<std::pair<NodeId, NodeId>> edges;
    // Document attachments: 1..max_users_per_doc distinct users of the
    // document's community, activity-weighted.
    Rng arng = make_rng(derive_seed(spec.seed, "attach"));
    for (int64_t d = 0; d < spec.n_docs; ++d) {
        const auto& picker = comm_picker[static_cast<size_t>(doc_comm[static_cast<size_t>(d)])];
        const int64_t comm_size = static_cast<int64_t>(picker.items.size());
        const int64_t want = 1 + static_cast<int64_t>(rand_index(arng, static_cast<uint64_t>(spec.max_users_per_doc)));
        std::vector<int64_t> picked;
        for (int64_t tries = 0; static_cast<int64_t>(picked.size()) < std::min(want, comm_size) && tries < 64;
             ++tries) {
            const int64_t u = picker.draw(arng);
            if (std::find(picked.begin(), picked.end(), u) == picked.end()) picked.push_back(u);
        }
        if (picked.empty()) picked.push_back(picker.items[rand_index(arng, picker.items.size())]);
        for (int64_t u : picked) edges.emplace_back(doc_node(d), user_node(u));
    }

    // User-user edges: dense intra-community, sparse inter-community, both
    // activity-weighted at the endpoints.
    Rng erng = make_rng(derive_seed(spec.seed, "uu-edges"));
    for (int c = 0; c < spec.n_communities; ++c) {
        const auto& members = comm_users[static_cast<size_t>(c)];
        if (members.size() < 2) continue;
        const int64_t n_edges = static_cast<int64_t>(spec.intra_edge_rate * static_cast<double>(members.size()));
        const auto& picker = comm_picker[static_cast<size_t>(c)];
        for (int64_t e = 0; e < n_edges; ++e) {
            const int64_t a = picker.draw(erng);
            int64_t b = picker.draw(erng);
            for (int tries = 0; b == a && tries < 16; ++tries) b = picker.draw(erng);
            if (a != b) edges.emplace_back(user_node(a), user_node(b));
        }
    }
    const int64_t n_inter = static_cast<int64_t>(spec.inter_edge_rate * static_cast<double>(spec.n_users));
    for (int64_t e = 0; e < n_inter; ++e) {
        const int64_t a = global_picker.draw(erng);
        int64_t b = global_picker.draw(erng);
        for (int tries = 0;
             (b == a || user_comm[static_cast<size_t>(a)] == user_comm[static_cast<size_t>(b)]) && tries < 16;
             ++tries) {
            b = global_picker.draw(erng);
        }
        if (a != b && user_comm[static_cast<size_t>(a)] != user_comm[static_cast<size_t>(b)]) {
            edges.emplace_back(user_node(a), user_node(b));
        }
    }

    // Features: class-conditional Gaussian, unit covariance.
    Rng frng = make_rng(derive_seed(spec.seed, "features"));
    const auto means = spec.class_means();
    Tensor features(spec.n_docs, spec.feature_dim);
    for (int64_t d = 0; d < spec.n_docs; ++d) {
        const auto& mu = means[static_cast<size_t>(labels[static_cast<size_t>(d)])];
        for (int64_t j = 0; j < spec.feature_dim; ++j) {
            features.at(d, j) = mu[static_cast<size_t>(j)] + rand_normal(frng);
        }
    }

    std::vector<NodeKind> kinds(static_cast<size_t>(spec.n_docs), NodeKind::Document);
    kinds.insert(kinds.end(), static_cast<size_t>(spec.n_users), NodeKind::User);
    return SocialGraph::build(std::move(kinds), std::move(edges), std::move(features), std::move(labels), C);
}

SyntheticSpec shift_domain(const SyntheticSpec& spec, double angle_deg, std::vector<double> translation,
                           std::optional<int32_t> new_num_classes) {
    SyntheticSpec out = spec;
    out.rotation_angle_deg += angle_deg;
    if (!translation.empty()) {
        if (out.mean_translation.empty()) {
            out.mean_translation = std::move(translation);
        } else {
            for (size_t i = 0; i < out.mean_translation.size() && i < translation.size(); ++i) {
                out.mean_translation[i] += translation[i];
            }
        }
    }
    if (new_num_classes && *new_num_classes != spec.num_classes) {
        out.num_classes = *new_num_classes;
        out.class_proportions.clear();  // uniform under the new task
    }
    out.validate();
    return out;
}

std::vector<double> proportion_preset(const std::string& name) {
    if (name == "gossipcop") return {0.7712, 0.2288};
    if (name == "coaid") return {0.9472, 0.0528};
    if (name == "hatespeech") return {0.1197, 0.1943, 0.6860};
    throw ConfigError("unknown proportion preset '" + name + "'");
}

}  // namespace mgb
