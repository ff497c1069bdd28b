#include "mgb/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace mgb {

void ModelConfig::validate() const {
    if (input_dim < 1 || head_dim < 1 || mlp_dim < 1) throw ConfigError("model: dimensions must be positive");
    if (n_heads < 1 || n_gat_layers < 1) throw ConfigError("model: need at least one head and one layer");
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    for (double p : {dropout_input, dropout_hidden, dropout_attn}) {
        if (p < 0.0 || p >= 1.0) throw ConfigError("model: dropout probabilities must be in [0,1)");
    }
    if (leaky_slope <= 0.0 || leaky_slope >= 1.0) throw ConfigError("model: leaky_slope must be in (0,1)");
}

namespace {

Tensor fan_in_uniform(int64_t rows, int64_t cols, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    return random_uniform_tensor(rows, cols, -bound, bound, rng);
}

}  // namespace

ModelState init_model(const ModelConfig& cfg, bool with_head, uint64_t seed) {
    cfg.validate();
    Rng rng = make_rng(derive_seed(seed, "model-init"));
    ModelState s;
    s.cfg = cfg;
    s.gat.resize(static_cast<size_t>(cfg.n_gat_layers));
    int64_t in_dim = cfg.input_dim;
    for (int l = 0; l < cfg.n_gat_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            GatHeadParams p;
            p.w = fan_in_uniform(in_dim, cfg.head_dim, rng);
            p.a_left = fan_in_uniform(cfg.head_dim, 1, rng);
            p.a_right = fan_in_uniform(cfg.head_dim, 1, rng);
            s.gat[static_cast<size_t>(l)].push_back(std::move(p));
        }
        in_dim = cfg.gat_output_dim();
    }
    s.proj_w = fan_in_uniform(cfg.gat_output_dim(), cfg.mlp_dim, rng);
    s.proj_b = Tensor(1, cfg.mlp_dim);
    s.mlp1_w = fan_in_uniform(cfg.mlp_dim, cfg.mlp_dim, rng);
    s.mlp1_b = Tensor(1, cfg.mlp_dim);
    s.mlp2_w = fan_in_uniform(cfg.mlp_dim, cfg.mlp_dim, rng);
    s.mlp2_b = Tensor(1, cfg.mlp_dim);
    s.has_head = with_head;
    if (with_head) {
        s.head_w = fan_in_uniform(cfg.mlp_dim, cfg.num_classes, rng);
        s.head_b = Tensor(1, cfg.num_classes);
    }
    return s;
}

ModelState reset_weights(const ModelState& state, uint64_t seed) {
    return init_model(state.cfg, state.has_head, seed);
}

void reinit_head(ModelState& state, Rng& rng) {
    if (!state.has_head) throw std::logic_error("reinit_head: model has no head");
    state.head_w = fan_in_uniform(state.cfg.mlp_dim, state.cfg.num_classes, rng);
    state.head_b = Tensor(1, state.cfg.num_classes);
}

int64_t NodeBatch::local_of(NodeId v) const {
    const auto it = std::lower_bound(nodes.begin(), nodes.end(), v);
    if (it == nodes.end() || *it != v) throw std::invalid_argument("node not in batch");
    return it - nodes.begin();
}

NodeBatch build_batch(const SocialGraph& g, const SubgraphView& view) {
    NodeBatch b;
    b.nodes = view.nodes;
    const int64_t n = b.size();
    b.features = Tensor(n, g.feature_dim());
    b.is_doc.assign(static_cast<size_t>(n), 0);
    b.targets.assign(static_cast<size_t>(n), -1);
    for (int64_t i = 0; i < n; ++i) {
        const NodeId v = b.nodes[static_cast<size_t>(i)];
        if (g.is_doc(v)) {
            b.is_doc[static_cast<size_t>(i)] = 1;
            const int32_t row = g.doc_row(v);
            std::copy_n(&g.doc_features().v[static_cast<size_t>(row) * static_cast<size_t>(g.feature_dim())],
                        g.feature_dim(), &b.features.v[static_cast<size_t>(i) * static_cast<size_t>(g.feature_dim())]);
        }
        // user rows stay exactly zero
    }
    b.seg_offsets.assign(static_cast<size_t>(n) + 1, 0);
    for (int64_t i = 0; i < n; ++i) {
        const NodeId v = b.nodes[static_cast<size_t>(i)];
        // Incoming edges grouped by destination i: self edge plus every
        // induced neighbour (both directions of stored edges arise because
        // each endpoint lists the other as a source).
        bool self_added = false;
        for (NodeId w : g.neighbors(v)) {
            const auto it = std::lower_bound(b.nodes.begin(), b.nodes.end(), w);
            if (it == b.nodes.end() || *it != w) continue;
            const int64_t j = it - b.nodes.begin();
            if (!self_added && j > i) {
                b.src.push_back(i);
                b.dst.push_back(i);
                self_added = true;
            }
            b.src.push_back(j);
            b.dst.push_back(i);
        }
        if (!self_added) {
            b.src.push_back(i);
            b.dst.push_back(i);
        }
        b.seg_offsets[static_cast<size_t>(i) + 1] = static_cast<int64_t>(b.src.size());
    }
    return b;
}

void set_targets(NodeBatch& batch, const SocialGraph& g, std::span<const NodeId> docs) {
    for (NodeId v : docs) {
        batch.targets[static_cast<size_t>(batch.local_of(v))] = g.label_of(v);
    }
}

BoundModel::BoundModel(ad::Tape& tape, const ModelState& state, bool bind_head)
    : tape_(&tape), state_(&state) {
    for (const auto& layer : state.gat) {
        auto& bl = gat_.emplace_back();
        for (const auto& head : layer) {
            bl.push_back({tape.param(head.w), tape.param(head.a_left), tape.param(head.a_right)});
        }
    }
    proj_w_ = tape.param(state.proj_w);
    proj_b_ = tape.param(state.proj_b);
    mlp1_w_ = tape.param(state.mlp1_w);
    mlp1_b_ = tape.param(state.mlp1_b);
    mlp2_w_ = tape.param(state.mlp2_w);
    mlp2_b_ = tape.param(state.mlp2_b);
    if (bind_head) {
        if (!state.has_head) throw std::logic_error("BoundModel: state has no head to bind");
        head_w_ = tape.param(state.head_w);
        head_b_ = tape.param(state.head_b);
        head_bound_ = true;
    }
}

ad::Value BoundModel::gat_layer(ad::Value h, const NodeBatch& batch, int layer, bool training,
                                Rng* rng) const {
    const auto& cfg = state_->cfg;
    if (batch.seg_offsets.back() == 0) throw std::logic_error("gat_layer: batch has no edges");
    for (int64_t i = 0; i < batch.size(); ++i) {
        if (batch.seg_offsets[static_cast<size_t>(i) + 1] == batch.seg_offsets[static_cast<size_t>(i)]) {
            throw std::logic_error("gat_layer: empty neighbour segment despite self-inclusion");
        }
    }
    ad::Value out;
    for (size_t head = 0; head < gat_[static_cast<size_t>(layer)].size(); ++head) {
        const auto& p = gat_[static_cast<size_t>(layer)][head];
        // Merged projections: project once, then form edge logits from the
        // two halves of the attention vector.
        ad::Value proj = ad::matmul(h, p[0]);                       // N x head_dim
        ad::Value s = ad::matmul(proj, p[1]);                       // N x 1
        ad::Value t = ad::matmul(proj, p[2]);                       // N x 1
        ad::Value e = ad::leaky_relu(ad::add(ad::gather_rows(s, batch.dst), ad::gather_rows(t, batch.src)),
                                     cfg.leaky_slope);
        ad::Value alpha = ad::segment_softmax(e, batch.seg_offsets);
        if (training && cfg.dropout_attn > 0.0) alpha = ad::dropout(alpha, cfg.dropout_attn, *rng);
        ad::Value messages = ad::scale_rows(ad::gather_rows(proj, batch.src), alpha);
        ad::Value agg = ad::segment_sum(messages, batch.seg_offsets);  // N x head_dim
        out = head == 0 ? agg : ad::concat_cols(out, agg);
    }
    return ad::relu(out);
}

ad::Value BoundModel::encode(const NodeBatch& batch, bool training, Rng* rng) const {
    const auto& cfg = state_->cfg;
    if (batch.features.cols != cfg.input_dim) {
        throw std::invalid_argument("encode: feature dimension does not match model input_dim");
    }
    ad::Value h = tape_->input(batch.features);
    if (training && cfg.dropout_input > 0.0) {
        h = ad::dropout_rows(h, cfg.dropout_input, batch.is_doc, *rng);
    }
    for (int l = 0; l < cfg.n_gat_layers; ++l) {
        h = gat_layer(h, batch, l, training, rng);
    }
    h = ad::add_rowvec(ad::matmul(h, proj_w_), proj_b_);
    h = ad::relu(ad::add_rowvec(ad::matmul(h, mlp1_w_), mlp1_b_));
    if (training && cfg.dropout_hidden > 0.0) h = ad::dropout(h, cfg.dropout_hidden, *rng);
    h = ad::relu(ad::add_rowvec(ad::matmul(h, mlp2_w_), mlp2_b_));
    if (training && cfg.dropout_hidden > 0.0) h = ad::dropout(h, cfg.dropout_hidden, *rng);
    return h;
}

ad::Value BoundModel::head_logits(ad::Value embeddings) const {
    if (!head_bound_) throw std::logic_error("head_logits: head not bound");
    return ad::add_rowvec(ad::matmul(embeddings, head_w_), head_b_);
}

ModelState BoundModel::grads() const {
    ModelState g;
    g.cfg = state_->cfg;
    g.has_head = head_bound_;
    g.gat.resize(gat_.size());
    for (size_t l = 0; l < gat_.size(); ++l) {
        for (const auto& head : gat_[l]) {
            g.gat[l].push_back({tape_->grad_of(head[0]), tape_->grad_of(head[1]), tape_->grad_of(head[2])});
        }
    }
    g.proj_w = tape_->grad_of(proj_w_);
    g.proj_b = tape_->grad_of(proj_b_);
    g.mlp1_w = tape_->grad_of(mlp1_w_);
    g.mlp1_b = tape_->grad_of(mlp1_b_);
    g.mlp2_w = tape_->grad_of(mlp2_w_);
    g.mlp2_b = tape_->grad_of(mlp2_b_);
    if (head_bound_) {
        g.head_w = tape_->grad_of(head_w_);
        g.head_b = tape_->grad_of(head_b_);
    }
    return g;
}

TextModel init_text_model(int64_t input_dim, int64_t hidden_dim, int32_t num_classes, uint64_t seed) {
    Rng rng = make_rng(derive_seed(seed, "text-init"));
    TextModel m;
    m.input_dim = input_dim;
    m.hidden_dim = hidden_dim;
    m.num_classes = num_classes;
    m.l1_w = fan_in_uniform(input_dim, hidden_dim, rng);
    m.l1_b = Tensor(1, hidden_dim);
    m.l2_w = fan_in_uniform(hidden_dim, hidden_dim, rng);
    m.l2_b = Tensor(1, hidden_dim);
    m.head_w = fan_in_uniform(hidden_dim, num_classes, rng);
    m.head_b = Tensor(1, num_classes);
    return m;
}

ad::Value text_logits(ad::Tape& tape, const TextModel& m, const Tensor& rows) {
    ad::Value x = tape.input(rows);
    ad::Value l1w = tape.param(m.l1_w), l1b = tape.param(m.l1_b);
    ad::Value l2w = tape.param(m.l2_w), l2b = tape.param(m.l2_b);
    ad::Value hw = tape.param(m.head_w), hb = tape.param(m.head_b);
    x = ad::relu(ad::add_rowvec(ad::matmul(x, l1w), l1b));
    x = ad::relu(ad::add_rowvec(ad::matmul(x, l2w), l2b));
    return ad::add_rowvec(ad::matmul(x, hw), hb);
}

std::vector<int32_t> user_id_baseline(const SocialGraph& g, std::span<const NodeId> train_docs) {
    std::vector<uint8_t> is_train(static_cast<size_t>(g.num_nodes()), 0);
    std::vector<int64_t> global_count(static_cast<size_t>(g.num_classes()), 0);
    for (NodeId v : train_docs) {
        is_train[static_cast<size_t>(v)] = 1;
        ++global_count[static_cast<size_t>(g.label_of(v))];
    }
    const auto majority = [&](const std::vector<int64_t>& counts) -> int32_t {
        int32_t best = 0;
        for (int32_t c = 1; c < g.num_classes(); ++c) {
            if (counts[static_cast<size_t>(c)] > counts[static_cast<size_t>(best)]) best = c;
        }
        return best;
    };
    const int32_t global_majority = majority(global_count);

    // Per-user vote: majority class among its train-doc neighbours, or -1
    // (abstain) when it has none.
    std::vector<int32_t> user_vote(static_cast<size_t>(g.num_nodes()), -1);
    for (NodeId u = 0; u < g.num_nodes(); ++u) {
        if (g.is_doc(u)) continue;
        std::vector<int64_t> counts(static_cast<size_t>(g.num_classes()), 0);
        bool any = false;
        for (NodeId w : g.neighbors(u)) {
            if (g.is_doc(w) && is_train[static_cast<size_t>(w)]) {
                ++counts[static_cast<size_t>(g.label_of(w))];
                any = true;
            }
        }
        if (any) user_vote[static_cast<size_t>(u)] = majority(counts);
    }

    std::vector<int32_t> pred(static_cast<size_t>(g.num_docs()), global_majority);
    for (NodeId v : g.doc_nodes()) {
        std::vector<int64_t> counts(static_cast<size_t>(g.num_classes()), 0);
        bool any = false;
        for (NodeId u : g.neighbors(v)) {
            const int32_t vote = user_vote[static_cast<size_t>(u)];
            if (vote >= 0) {
                ++counts[static_cast<size_t>(vote)];
                any = true;
            }
        }
        if (!any) continue;  // zero information: global majority stands
        const int32_t top = majority(counts);
        // Total tie across all classes falls back to the global majority.
        bool tie = true;
        for (int32_t c = 0; c < g.num_classes(); ++c) {
            if (counts[static_cast<size_t>(c)] != counts[static_cast<size_t>(top)]) tie = false;
        }
        pred[static_cast<size_t>(g.doc_row(v))] = tie && g.num_classes() > 1 ? global_majority : top;
    }
    return pred;
}

// ---- checkpoint serialisation --------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'G', 'B', 'C'};
constexpr uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                          static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"input_dim", c.input_dim},     {"head_dim", c.head_dim},
            {"n_heads", c.n_heads},         {"n_gat_layers", c.n_gat_layers},
            {"mlp_dim", c.mlp_dim},         {"num_classes", c.num_classes},
            {"dropout_input", c.dropout_input}, {"dropout_hidden", c.dropout_hidden},
            {"dropout_attn", c.dropout_attn},   {"leaky_slope", c.leaky_slope}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<int64_t>();
    c.head_dim = j.at("head_dim").get<int64_t>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_gat_layers = j.at("n_gat_layers").get<int>();
    c.mlp_dim = j.at("mlp_dim").get<int64_t>();
    c.num_classes = j.at("num_classes").get<int32_t>();
    c.dropout_input = j.at("dropout_input").get<double>();
    c.dropout_hidden = j.at("dropout_hidden").get<double>();
    c.dropout_attn = j.at("dropout_attn").get<double>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IngestError("cannot write checkpoint '" + path + "'");
    f.write(kCheckpointMagic, 4);
    write_u32(f, kCheckpointVersion);
    nlohmann::json meta = config_to_json(state.cfg);
    meta["has_head"] = state.has_head;
    const std::string meta_str = meta.dump();
    write_u32(f, static_cast<uint32_t>(meta_str.size()));
    f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    uint32_t count = 0;
    state.for_each_param([&](const std::string&, const Tensor&) { ++count; });
    write_u32(f, count);
    state.for_each_param([&](const std::string& name, const Tensor& t) {
        write_u32(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(f, static_cast<uint32_t>(t.rows));
        write_u32(f, static_cast<uint32_t>(t.cols));
        f.write(reinterpret_cast<const char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    });
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestError("cannot open checkpoint '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw IngestError(path + ": bad magic, expected MGBC");
    }
    const uint32_t version = read_u32(f);
    if (version != kCheckpointVersion) {
        throw IngestError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const uint32_t meta_len = read_u32(f);
    std::string meta_str(meta_len, '\0');
    f.read(meta_str.data(), meta_len);
    if (!f) throw IngestError(path + ": truncated checkpoint metadata");
    ModelState state;
    try {
        const nlohmann::json meta = nlohmann::json::parse(meta_str);
        state = init_model(config_from_json(meta), meta.at("has_head").get<bool>(), 0);
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(path + ": corrupt checkpoint metadata: " + e.what());
    }
    const uint32_t count = read_u32(f);
    uint32_t expected = 0;
    state.for_each_param([&](const std::string&, Tensor&) { ++expected; });
    if (count != expected) throw IngestError(path + ": parameter count mismatch");

    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const int64_t rows = read_u32(f);
        const int64_t cols = read_u32(f);
        Tensor t(rows, cols);
        f.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!f) throw IngestError(path + ": truncated parameter record '" + name + "'");
        bool placed = false;
        state.for_each_param([&](const std::string& n, Tensor& dst) {
            if (n == name) {
                if (dst.rows != rows || dst.cols != cols) {
                    throw IngestError(path + ": shape mismatch for parameter '" + name + "'");
                }
                dst = t;
                placed = true;
            }
        });
        if (!placed) throw IngestError(path + ": unknown parameter '" + name + "'");
    }
    return state;
}

}  // namespace mgb
