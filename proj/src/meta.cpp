#include "mgb/meta.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace mgb {

Paradigm paradigm_from_string(const std::string& s) {
    if (s == "full") return Paradigm::Full;
    if (s == "subgraphs") return Paradigm::Subgraphs;
    if (s == "maml_lh") return Paradigm::MamlLH;
    if (s == "maml_rh") return Paradigm::MamlRH;
    if (s == "protonet") return Paradigm::ProtoNet;
    if (s == "protomaml") return Paradigm::ProtoMaml;
    throw ConfigError("unknown paradigm '" + s + "'");
}

std::string paradigm_to_string(Paradigm p) {
    switch (p) {
        case Paradigm::Full: return "full";
        case Paradigm::Subgraphs: return "subgraphs";
        case Paradigm::MamlLH: return "maml_lh";
        case Paradigm::MamlRH: return "maml_rh";
        case Paradigm::ProtoNet: return "protonet";
        case Paradigm::ProtoMaml: return "protomaml";
    }
    throw std::logic_error("unreachable");
}

bool paradigm_is_episodic(Paradigm p) { return p != Paradigm::Full && p != Paradigm::Subgraphs; }

bool paradigm_has_meta_head(Paradigm p) {
    return p == Paradigm::Full || p == Paradigm::Subgraphs || p == Paradigm::MamlLH || p == Paradigm::MamlRH;
}

void TrainConfig::validate() const {
    if (outer_lr <= 0.0) throw ConfigError("train: outer_lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (inner_lr < 0.0) throw ConfigError("train: inner_lr must be >= 0");
    if (t_inner < 0) throw ConfigError("train: t_inner must be >= 0");
    if (max_steps < 1) throw ConfigError("train: max_steps must be >= 1");
    if (episode_batch < 1) throw ConfigError("train: episode_batch must be >= 1");
    if (batch_docs < 1) throw ConfigError("train: batch_docs must be >= 1");
    if (val_episodes < 1) throw ConfigError("train: val_episodes must be >= 1");
    if (paradigm == Paradigm::ProtoNet && t_inner != 0) {
        throw ConfigError("train: protonet does not adapt; t_inner must be 0");
    }
    if (!paradigm_is_episodic(paradigm) && t_inner != 0) {
        throw ConfigError("train: " + paradigm_to_string(paradigm) + " has no inner loop; t_inner must be 0");
    }
}

double lr_at(const TrainConfig& cfg, int64_t step) {
    static const double gamma = std::pow(0.01, 1.0 / 19.0);
    const int64_t drops = step / cfg.decay_every();
    const double lr = cfg.outer_lr * std::pow(gamma, static_cast<double>(drops));
    return std::max(lr, 0.01 * cfg.outer_lr);
}

void AdamW::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, double lr,
                 double weight_decay) {
    if (params.size() != grads.size()) throw std::logic_error("AdamW: parameter/gradient count mismatch");
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->rows, p->cols);
            v_.emplace_back(p->rows, p->cols);
        }
    }
    if (m_.size() != params.size()) throw std::logic_error("AdamW: flatten order changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        if (!p.same_shape(g)) throw std::logic_error("AdamW: gradient shape mismatch");
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p.size(); ++j) {
            m.v[j] = beta1_ * m.v[j] + (1.0 - beta1_) * g.v[j];
            v.v[j] = beta2_ * v.v[j] + (1.0 - beta2_) * g.v[j] * g.v[j];
            const double mhat = m.v[j] / bc1;
            const double vhat = v.v[j] / bc2;
            p.v[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * p.v[j]);
        }
    }
}

std::vector<Tensor*> flat_params(ModelState& s, bool include_head) {
    std::vector<Tensor*> out;
    s.for_each_param([&](const std::string& name, Tensor& t) {
        if (!include_head && name.rfind("head.", 0) == 0) return;
        out.push_back(&t);
    });
    return out;
}

std::vector<const Tensor*> flat_params(const ModelState& s, bool include_head) {
    std::vector<const Tensor*> out;
    s.for_each_param([&](const std::string& name, const Tensor& t) {
        if (!include_head && name.rfind("head.", 0) == 0) return;
        out.push_back(&t);
    });
    return out;
}

std::vector<Tensor*> flat_params(TextModel& m) {
    std::vector<Tensor*> out;
    m.for_each_param([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

// ---- prototypical building blocks ----------------------------------------

Tensor prototypes(const Tensor& embeddings, const std::vector<int32_t>& labels, int32_t num_classes) {
    if (static_cast<int64_t>(labels.size()) != embeddings.rows) {
        throw std::invalid_argument("prototypes: one label per embedding row required");
    }
    Tensor protos(num_classes, embeddings.cols);
    std::vector<int64_t> count(static_cast<size_t>(num_classes), 0);
    for (int64_t i = 0; i < embeddings.rows; ++i) {
        const int32_t y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= num_classes) throw std::invalid_argument("prototypes: label out of range");
        ++count[static_cast<size_t>(y)];
        for (int64_t j = 0; j < embeddings.cols; ++j) protos.at(y, j) += embeddings.at(i, j);
    }
    for (int32_t c = 0; c < num_classes; ++c) {
        if (count[static_cast<size_t>(c)] == 0) {
            throw std::invalid_argument("prototypes: class " + std::to_string(c) + " has no support sample");
        }
        for (int64_t j = 0; j < protos.cols; ++j) {
            protos.at(c, j) /= static_cast<double>(count[static_cast<size_t>(c)]);
        }
    }
    return protos;
}

Tensor proto_classify(const Tensor& query_embeddings, const Tensor& protos) {
    Tensor neg_dist(query_embeddings.rows, protos.rows);
    for (int64_t i = 0; i < query_embeddings.rows; ++i) {
        for (int64_t c = 0; c < protos.rows; ++c) {
            double acc = 0.0;
            for (int64_t j = 0; j < protos.cols; ++j) {
                const double d = query_embeddings.at(i, j) - protos.at(c, j);
                acc += d * d;
            }
            neg_dist.at(i, c) = -acc;
        }
    }
    return ad::softmax_rows(neg_dist);
}

std::pair<Tensor, Tensor> protomaml_head_init(const Tensor& protos) {
    Tensor w(protos.cols, protos.rows);  // emb_dim x C
    Tensor b(1, protos.rows);
    for (int64_t c = 0; c < protos.rows; ++c) {
        double norm2 = 0.0;
        for (int64_t j = 0; j < protos.cols; ++j) {
            w.at(j, c) = 2.0 * protos.at(c, j);
            norm2 += protos.at(c, j) * protos.at(c, j);
        }
        b.at(0, c) = -norm2;
    }
    return {std::move(w), std::move(b)};
}

// ---- shared helpers --------------------------------------------------------

namespace {

ModelState zeros_like(const ModelState& s) {
    ModelState z = s;
    z.for_each_param([](const std::string&, Tensor& t) { t.fill(0.0); });
    return z;
}

void add_scaled(ModelState& dst, const ModelState& src, double alpha) {
    auto d = flat_params(dst, dst.has_head && src.has_head);
    auto g = flat_params(src, dst.has_head && src.has_head);
    for (size_t i = 0; i < d.size(); ++i) {
        for (int64_t j = 0; j < d[i]->size(); ++j) d[i]->v[j] += alpha * g[i]->v[j];
    }
}

std::vector<NodeId> flatten_unmasked(const Episode& ep) {
    std::vector<NodeId> out;
    for (const auto& cls : ep.unmasked) out.insert(out.end(), cls.begin(), cls.end());
    return out;
}

NodeBatch support_batch(const SocialGraph& g, const Episode& ep) {
    NodeBatch b = build_batch(g, ep.support);
    set_targets(b, g, flatten_unmasked(ep));
    return b;
}

NodeBatch query_batch(const SocialGraph& g, const Episode& ep) {
    NodeBatch b = build_batch(g, ep.query);
    set_targets(b, g, ep.query.targets);
    return b;
}

// Differentiable prototypes: gather the unmasked support rows class by class
// and average. All classes carry the same shot count.
ad::Value protos_on_tape(ad::Value emb, const NodeBatch& batch,
                         const std::vector<std::vector<NodeId>>& unmasked) {
    std::vector<int64_t> rows;
    std::vector<int64_t> offsets{0};
    size_t k = unmasked.empty() ? 0 : unmasked[0].size();
    for (const auto& cls : unmasked) {
        if (cls.size() != k || k == 0) throw std::logic_error("prototypes: unequal or empty shot counts");
        for (NodeId v : cls) rows.push_back(batch.local_of(v));
        offsets.push_back(static_cast<int64_t>(rows.size()));
    }
    return ad::scale(ad::segment_sum(ad::gather_rows(emb, rows), offsets), 1.0 / static_cast<double>(k));
}

std::vector<int32_t> target_labels(const SocialGraph& g, const SubgraphView& query) {
    std::vector<int32_t> out;
    out.reserve(query.targets.size());
    for (NodeId v : query.targets) out.push_back(g.label_of(v));
    return out;
}

std::vector<int64_t> target_rows(const NodeBatch& b, const SubgraphView& query) {
    std::vector<int64_t> out;
    out.reserve(query.targets.size());
    for (NodeId v : query.targets) out.push_back(b.local_of(v));
    return out;
}

}  // namespace

// ---- inner loop -------------------------------------------------------------

AdaptResult inner_adapt(const ModelState& state, const NodeBatch& support, double inner_lr, int t_inner,
                        bool training, Rng* rng) {
    if (!state.has_head) throw std::logic_error("inner_adapt: state has no classification head");
    AdaptResult r{state, {}};
    for (int t = 0; t < t_inner; ++t) {
        ad::Tape tape;
        BoundModel bm(tape, r.adapted, true);
        ad::Value loss = ad::cross_entropy(bm.head_logits(bm.encode(support, training, rng)), support.targets);
        if (t == 0) r.trace.support_before = loss.val().v[0];
        tape.backward(loss);
        const ModelState gr = bm.grads();
        auto ps = flat_params(r.adapted, true);
        auto gs = flat_params(gr, true);
        for (size_t i = 0; i < ps.size(); ++i) {
            for (int64_t j = 0; j < ps[i]->size(); ++j) ps[i]->v[j] -= inner_lr * gs[i]->v[j];
        }
    }
    {
        ad::Tape tape;
        BoundModel bm(tape, r.adapted, true);
        ad::Value loss = ad::cross_entropy(bm.head_logits(bm.encode(support, training, rng)), support.targets);
        r.trace.support_after = loss.val().v[0];
        if (t_inner == 0) r.trace.support_before = r.trace.support_after;
    }
    r.trace.finalize();
    return r;
}

// ---- per-episode computations -------------------------------------------------

EpisodeOutcome episode_maml(const ModelState& meta, const SocialGraph& g, const Episode& ep,
                            const TrainConfig& cfg, bool reset_head, bool training, Rng rng) {
    EpisodeOutcome out;
    try {
        ModelState work = meta;
        if (reset_head) reinit_head(work, rng);
        const NodeBatch sb = support_batch(g, ep);
        AdaptResult ar = inner_adapt(work, sb, cfg.inner_lr, cfg.t_inner, training, &rng);
        out.trace = ar.trace;

        const NodeBatch qb = query_batch(g, ep);
        ad::Tape tape;
        BoundModel bm(tape, ar.adapted, true);
        ad::Value loss = ad::cross_entropy(bm.head_logits(bm.encode(qb, training, &rng)), qb.targets);
        out.trace.query_loss = loss.val().v[0];
        tape.backward(loss);
        // First-order approximation: gradients w.r.t. the adapted weights are
        // applied to the meta weights; the inner trajectory is not
        // differentiated through.
        out.grads = bm.grads();
    } catch (const NumericError&) {
        out.skipped = true;
        out.grads = zeros_like(meta);
    }
    return out;
}

EpisodeOutcome episode_protonet(const ModelState& meta, const SocialGraph& g, const Episode& ep,
                                bool training, Rng rng) {
    EpisodeOutcome out;
    try {
        ad::Tape tape;
        BoundModel bm(tape, meta, false);
        const NodeBatch sb = build_batch(g, ep.support);
        ad::Value protos = protos_on_tape(bm.encode(sb, training, &rng), sb, ep.unmasked);
        const NodeBatch qb = build_batch(g, ep.query);
        ad::Value qemb = ad::gather_rows(bm.encode(qb, training, &rng), target_rows(qb, ep.query));
        ad::Value logits = ad::scale(ad::sqdist(qemb, protos), -1.0);
        ad::Value loss = ad::cross_entropy(logits, target_labels(g, ep.query));
        out.trace.query_loss = loss.val().v[0];
        out.trace.support_before = out.trace.support_after = 0.0;
        tape.backward(loss);
        out.grads = bm.grads();
    } catch (const NumericError&) {
        out.skipped = true;
        out.grads = zeros_like(meta);
    }
    return out;
}

EpisodeOutcome episode_protomaml(const ModelState& meta, const SocialGraph& g, const Episode& ep,
                                 const TrainConfig& cfg, bool training, Rng rng) {
    EpisodeOutcome out;
    try {
        NodeBatch sb = support_batch(g, ep);
        // Prototype pass at the meta weights; the gradient path from the
        // head initialisation into the encoder is severed (first-order).
        Tensor protos_t;
        {
            ad::Tape tape;
            BoundModel bm(tape, meta, false);
            ad::Value protos = protos_on_tape(bm.encode(sb, training, &rng), sb, ep.unmasked);
            protos_t = protos.val();
        }
        auto [head_w, head_b] = protomaml_head_init(protos_t);
        ModelState work = meta;
        work.has_head = true;
        work.cfg.num_classes = static_cast<int32_t>(head_b.cols);
        work.head_w = std::move(head_w);
        work.head_b = std::move(head_b);

        AdaptResult ar = inner_adapt(work, sb, cfg.inner_lr, cfg.t_inner, training, &rng);
        out.trace = ar.trace;

        const NodeBatch qb = query_batch(g, ep);
        ad::Tape tape;
        BoundModel bm(tape, ar.adapted, true);
        ad::Value loss = ad::cross_entropy(bm.head_logits(bm.encode(qb, training, &rng)), qb.targets);
        out.trace.query_loss = loss.val().v[0];
        tape.backward(loss);
        ModelState grads = bm.grads();
        // The head is re-derived each episode; only the encoder carries a
        // meta gradient.
        grads.has_head = false;
        grads.head_w = Tensor();
        grads.head_b = Tensor();
        out.grads = std::move(grads);
    } catch (const NumericError&) {
        out.skipped = true;
        out.grads = zeros_like(meta);
    }
    return out;
}

namespace {

EpisodeOutcome run_episode(const ModelState& meta, const SocialGraph& g, const Episode& ep,
                           const TrainConfig& cfg, bool training, uint64_t seed_root) {
    Rng rng = make_rng(derive_seed(seed_root, "ep-compute", static_cast<uint64_t>(ep.index)));
    switch (cfg.paradigm) {
        case Paradigm::MamlLH: return episode_maml(meta, g, ep, cfg, false, training, std::move(rng));
        case Paradigm::MamlRH: return episode_maml(meta, g, ep, cfg, true, training, std::move(rng));
        case Paradigm::ProtoNet: return episode_protonet(meta, g, ep, training, std::move(rng));
        case Paradigm::ProtoMaml: return episode_protomaml(meta, g, ep, cfg, training, std::move(rng));
        default: throw std::logic_error("run_episode: non-episodic paradigm");
    }
}

// Map episodes to outcomes with a fixed reduction order so the result is
// independent of the worker count.
std::vector<EpisodeOutcome> run_episodes(const ModelState& meta, const SocialGraph& g,
                                         std::span<const Episode> eps, const TrainConfig& cfg, bool training,
                                         int workers) {
    std::vector<EpisodeOutcome> out(eps.size());
    if (workers <= 1 || eps.size() <= 1) {
        for (size_t i = 0; i < eps.size(); ++i) out[i] = run_episode(meta, g, eps[i], cfg, training, cfg.seed);
        return out;
    }
    std::exception_ptr failure;
    std::mutex mu;
    auto work = [&](int w) {
        for (size_t i = static_cast<size_t>(w); i < eps.size(); i += static_cast<size_t>(workers)) {
            try {
                out[i] = run_episode(meta, g, eps[i], cfg, training, cfg.seed);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

struct StepStats {
    double loss = 0.0;
    double support_before = 0.0;
    double support_after = 0.0;
    double rel_improvement = 0.0;
    int64_t used = 0;
    int64_t skipped = 0;
};

StepStats apply_episodic_step(ModelState& meta, AdamW& opt, const SocialGraph& g,
                              std::span<const Episode> eps, const TrainConfig& cfg, double lr,
                              bool update_head, int workers,
                              std::vector<AdaptationTrace>* traces = nullptr) {
    const auto outcomes = run_episodes(meta, g, eps, cfg, true, workers);
    ModelState acc = zeros_like(meta);
    StepStats st;
    int64_t improved = 0;
    if (traces) {
        for (const auto& o : outcomes) traces->push_back(o.trace);
    }
    for (const auto& o : outcomes) {
        if (o.skipped) {
            ++st.skipped;
            continue;
        }
        add_scaled(acc, o.grads, 1.0);
        st.loss += o.trace.query_loss;
        st.support_before += o.trace.support_before;
        st.support_after += o.trace.support_after;
        if (o.trace.relative_improvement) {
            st.rel_improvement += *o.trace.relative_improvement;
            ++improved;
        }
        ++st.used;
    }
    if (st.used == 0) return st;  // every episode skipped; no update
    const double inv = 1.0 / static_cast<double>(st.used);
    acc.for_each_param([&](const std::string&, Tensor& t) {
        for (auto& x : t.v) x *= inv;
    });
    st.loss *= inv;
    st.support_before *= inv;
    st.support_after *= inv;
    st.rel_improvement = improved > 0 ? st.rel_improvement / static_cast<double>(improved) : 0.0;
    opt.step(flat_params(meta, update_head), flat_params(static_cast<const ModelState&>(acc), update_head),
             lr, cfg.weight_decay);
    return st;
}

// Validation loss of one episode, evaluation mode, forward only.
double episode_val_loss(const ModelState& meta, const SocialGraph& g, const Episode& ep,
                        const TrainConfig& cfg) {
    try {
        Rng rng = make_rng(derive_seed(cfg.seed, "val-compute", static_cast<uint64_t>(ep.index)));
        const EpisodeOutcome o = [&] {
            TrainConfig vc = cfg;
            switch (cfg.paradigm) {
                case Paradigm::MamlLH: return episode_maml(meta, g, ep, vc, false, false, std::move(rng));
                case Paradigm::MamlRH: return episode_maml(meta, g, ep, vc, true, false, std::move(rng));
                case Paradigm::ProtoNet: return episode_protonet(meta, g, ep, false, std::move(rng));
                case Paradigm::ProtoMaml: return episode_protomaml(meta, g, ep, vc, false, std::move(rng));
                default: throw std::logic_error("episode_val_loss: non-episodic paradigm");
            }
        }();
        if (o.skipped) return std::numeric_limits<double>::infinity();
        return o.trace.query_loss;
    } catch (const NumericError&) {
        return std::numeric_limits<double>::infinity();
    }
}

class StepLogger {
  public:
    explicit StepLogger(const std::string& path) {
        if (!path.empty()) {
            f_.open(path);
            if (!f_) throw IngestError("cannot write training log '" + path + "'");
        }
    }

    void write(nlohmann::json j) {
        if (f_.is_open()) f_ << j.dump() << "\n";
    }

  private:
    std::ofstream f_;
};

}  // namespace

void outer_step_maml(ModelState& meta, AdamW& opt, const SocialGraph& g, std::span<const Episode> episodes,
                     const TrainConfig& cfg, bool reset_head, double lr, int workers,
                     std::vector<AdaptationTrace>* traces) {
    TrainConfig c = cfg;
    c.paradigm = reset_head ? Paradigm::MamlRH : Paradigm::MamlLH;
    apply_episodic_step(meta, opt, g, episodes, c, lr, !reset_head, workers, traces);
}

// ---- training drivers --------------------------------------------------------

namespace {

struct ValState {
    double best = std::numeric_limits<double>::infinity();
    int64_t best_step = -1;
    ModelState best_state;

    bool update(double val, int64_t step, const ModelState& s) {
        if (val < best) {
            best = val;
            best_step = step;
            best_state = s;
            return true;
        }
        return false;
    }

    bool exhausted(int64_t step, int64_t patience) const {
        return best_step >= 0 && step - best_step > patience;
    }
};

TrainResult train_nonepisodic(const SocialGraph& g, const FoldSplit& fold, const ModelConfig& mcfg,
                              const SamplerConfig& scfg, const TrainConfig& tcfg, StepLogger& log,
                              int workers) {
    ModelState model = init_model(mcfg, true, tcfg.seed);
    AdamW opt;

    // Fixed validation batch: every validation document with its receptive
    // field.
    Rng vrng = make_rng(derive_seed(tcfg.seed, "val-view"));
    const SubgraphView val_view = sample_query(g, fold.val_docs, 0, 2, vrng);
    NodeBatch val_batch = build_batch(g, val_view);
    set_targets(val_batch, g, fold.val_docs);

    // Subgraph batches come from the few-shot sampler; the episode stream
    // windows give unmask counts their scope.
    std::optional<EpisodeStream> stream;
    std::vector<Episode> window;
    size_t wpos = 0;
    if (tcfg.paradigm == Paradigm::Subgraphs) {
        SamplerConfig sc = scfg;
        sc.seed = derive_seed(tcfg.seed, "train-episodes");
        stream.emplace(g, sc, fold.train_docs, fold.train_docs, /*build_query=*/false);
    }

    ValState vs;
    int64_t step = 0;
    for (; step < tcfg.max_steps; ++step) {
        const double lr = lr_at(tcfg, step);
        double loss_val = 0.0;
        try {
            ad::Tape tape;
            BoundModel bm(tape, model, true);
            Rng rng = make_rng(derive_seed(tcfg.seed, "step", static_cast<uint64_t>(step)));
            NodeBatch batch = [&]() -> NodeBatch {
                if (tcfg.paradigm == Paradigm::Full) {
                    // Query-style neighbourhood sample over the training
                    // documents, all labels visible.
                    const SubgraphView v = sample_query(g, fold.train_docs, tcfg.batch_docs, 2, rng);
                    NodeBatch b = build_batch(g, v);
                    set_targets(b, g, v.targets);
                    return b;
                }
                if (wpos >= window.size()) {
                    const int64_t first = static_cast<int64_t>(window.size()) > 0
                                              ? window.back().index + 1
                                              : 0;
                    window = stream->take(first, stream->config().epoch_views, workers);
                    wpos = 0;
                }
                const Episode& ep = window[wpos++];
                return support_batch(g, ep);
            }();
            ad::Value loss = ad::cross_entropy(bm.head_logits(bm.encode(batch, true, &rng)), batch.targets);
            loss_val = loss.val().v[0];
            tape.backward(loss);
            const ModelState grads = bm.grads();
            opt.step(flat_params(model, true), flat_params(static_cast<const ModelState&>(grads), true), lr,
                     tcfg.weight_decay);
        } catch (const NumericError&) {
            log.write({{"step", step}, {"event", "skipped_batch_nonfinite"}});
            continue;
        }

        nlohmann::json rec{{"step", step}, {"lr", lr}, {"loss", loss_val}};
        if (step % tcfg.effective_val_every() == 0 || step + 1 == tcfg.max_steps) {
            double vloss;
            try {
                ad::Tape tape;
                BoundModel bm(tape, model, true);
                vloss = ad::cross_entropy(bm.head_logits(bm.encode(val_batch, false, nullptr)),
                                          val_batch.targets)
                            .val()
                            .v[0];
            } catch (const NumericError&) {
                vloss = std::numeric_limits<double>::infinity();
            }
            vs.update(vloss, step, model);
            rec["val_loss"] = vloss;
            rec["best_step"] = vs.best_step;
        }
        log.write(std::move(rec));
        if (vs.exhausted(step, tcfg.patience())) break;
    }
    if (vs.best_step < 0) vs.best_state = model;
    return {std::move(vs.best_state), vs.best, vs.best_step, step};
}

TrainResult train_episodic(const SocialGraph& g, const FoldSplit& fold, const ModelConfig& mcfg,
                           const SamplerConfig& scfg, const TrainConfig& tcfg, StepLogger& log,
                           int workers) {
    ModelState meta = init_model(mcfg, paradigm_has_meta_head(tcfg.paradigm), tcfg.seed);
    AdamW opt;
    const bool update_head = tcfg.paradigm == Paradigm::MamlLH;

    SamplerConfig sc = scfg;
    sc.seed = derive_seed(tcfg.seed, "train-episodes");
    EpisodeStream stream(g, sc, fold.train_docs, fold.train_docs);

    // Fixed validation episodes: support labels come from the training
    // documents, query targets from the validation split.
    SamplerConfig vc = scfg;
    vc.seed = derive_seed(tcfg.seed, "val-episodes");
    EpisodeStream vstream(g, vc, fold.train_docs, fold.val_docs);
    const std::vector<Episode> val_eps = vstream.take(0, tcfg.val_episodes, workers);

    std::vector<Episode> window;
    size_t wpos = 0;
    ValState vs;
    int64_t step = 0;
    for (; step < tcfg.max_steps; ++step) {
        const double lr = lr_at(tcfg, step);
        std::vector<Episode> batch;
        while (static_cast<int>(batch.size()) < tcfg.episode_batch) {
            if (wpos >= window.size()) {
                const int64_t first = window.empty() ? 0 : window.back().index + 1;
                window = stream.take(first, sc.epoch_views, workers);
                wpos = 0;
            }
            batch.push_back(window[wpos++]);
        }
        const StepStats st = apply_episodic_step(meta, opt, g, batch, tcfg, lr, update_head, workers);

        nlohmann::json rec{{"step", step},
                           {"lr", lr},
                           {"query_loss", st.loss},
                           {"support_before", st.support_before},
                           {"support_after", st.support_after},
                           {"relative_improvement", st.rel_improvement}};
        if (st.skipped > 0) rec["skipped_episodes"] = st.skipped;
        if (step % tcfg.effective_val_every() == 0 || step + 1 == tcfg.max_steps) {
            double vloss = 0.0;
            int64_t n = 0;
            for (const Episode& ep : val_eps) {
                const double l = episode_val_loss(meta, g, ep, tcfg);
                if (std::isfinite(l)) {
                    vloss += l;
                    ++n;
                }
            }
            vloss = n > 0 ? vloss / static_cast<double>(n) : std::numeric_limits<double>::infinity();
            vs.update(vloss, step, meta);
            rec["val_loss"] = vloss;
            rec["best_step"] = vs.best_step;
        }
        log.write(std::move(rec));
        if (vs.exhausted(step, tcfg.patience())) break;
    }
    if (vs.best_step < 0) vs.best_state = meta;
    return {std::move(vs.best_state), vs.best, vs.best_step, step};
}

}  // namespace

TrainResult train_model(const SocialGraph& g, const FoldSplit& fold, const ModelConfig& mcfg,
                        const SamplerConfig& scfg, const TrainConfig& tcfg, const std::string& log_path,
                        int workers) {
    mcfg.validate();
    tcfg.validate();
    scfg.validate(g.num_classes());
    if (mcfg.input_dim != g.feature_dim()) {
        throw ConfigError("model input_dim does not match graph feature dimension");
    }
    if (mcfg.num_classes != g.num_classes()) {
        throw ConfigError("model num_classes does not match graph");
    }
    StepLogger log(log_path);
    if (paradigm_is_episodic(tcfg.paradigm)) {
        return train_episodic(g, fold, mcfg, scfg, tcfg, log, workers);
    }
    return train_nonepisodic(g, fold, mcfg, scfg, tcfg, log, workers);
}

TextModel train_text_baseline(const SocialGraph& g, const FoldSplit& fold, int64_t hidden_dim,
                              const TrainConfig& tcfg) {
    TextModel model = init_text_model(g.feature_dim(), hidden_dim, g.num_classes(), tcfg.seed);
    AdamW opt;

    const auto rows_of = [&](std::span<const NodeId> docs) {
        Tensor rows(static_cast<int64_t>(docs.size()), g.feature_dim());
        std::vector<int32_t> ys(docs.size());
        for (size_t i = 0; i < docs.size(); ++i) {
            const int32_t r = g.doc_row(docs[i]);
            std::copy_n(&g.doc_features().v[static_cast<size_t>(r) * static_cast<size_t>(g.feature_dim())],
                        g.feature_dim(), &rows.v[i * static_cast<size_t>(g.feature_dim())]);
            ys[i] = g.label_of(docs[i]);
        }
        return std::make_pair(std::move(rows), std::move(ys));
    };
    const auto [val_rows, val_ys] = rows_of(fold.val_docs);

    double best = std::numeric_limits<double>::infinity();
    TextModel best_model = model;
    int64_t best_step = -1;
    for (int64_t step = 0; step < tcfg.max_steps; ++step) {
        Rng rng = make_rng(derive_seed(tcfg.seed, "text-step", static_cast<uint64_t>(step)));
        std::vector<NodeId> batch;
        for (int i = 0; i < tcfg.batch_docs; ++i) {
            batch.push_back(fold.train_docs[rand_index(rng, fold.train_docs.size())]);
        }
        const auto [rows, ys] = rows_of(batch);
        ad::Tape tape;
        std::vector<ad::Value> ps;
        model.for_each_param([&](const std::string&, Tensor& t) { ps.push_back(tape.param(t)); });
        ad::Value x = tape.input(rows);
        x = ad::relu(ad::add_rowvec(ad::matmul(x, ps[0]), ps[1]));
        x = ad::relu(ad::add_rowvec(ad::matmul(x, ps[2]), ps[3]));
        ad::Value loss = ad::cross_entropy(ad::add_rowvec(ad::matmul(x, ps[4]), ps[5]), ys);
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (const auto& p : ps) grads.push_back(tape.grad_of(p));
        std::vector<const Tensor*> gp;
        for (const auto& t : grads) gp.push_back(&t);
        opt.step(flat_params(model), gp, lr_at(tcfg, step), tcfg.weight_decay);

        if (step % tcfg.effective_val_every() == 0 || step + 1 == tcfg.max_steps) {
            ad::Tape vt;
            const double vloss =
                ad::cross_entropy(text_logits(vt, model, val_rows), val_ys).val().v[0];
            if (vloss < best) {
                best = vloss;
                best_model = model;
                best_step = step;
            }
            if (best_step >= 0 && step - best_step > tcfg.patience()) break;
        }
    }
    return best_model;
}

}  // namespace mgb
