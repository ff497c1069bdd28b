#include "mgb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

namespace mgb {

std::vector<double> EvalRun::mcc_values() const {
    std::vector<double> out;
    for (const auto& e : episodes) {
        if (!e.skipped) out.push_back(e.mcc);
    }
    return out;
}

std::vector<double> EvalRun::f1_values(int32_t cls) const {
    std::vector<double> out;
    for (const auto& e : episodes) {
        if (!e.skipped) out.push_back(e.f1[static_cast<size_t>(cls)]);
    }
    return out;
}

std::vector<double> EvalRun::aupr_values() const {
    std::vector<double> out;
    for (const auto& e : episodes) {
        if (!e.skipped && e.aupr) out.push_back(*e.aupr);
    }
    return out;
}

int64_t EvalRun::skipped() const {
    int64_t n = 0;
    for (const auto& e : episodes) n += e.skipped ? 1 : 0;
    return n;
}

namespace {

Tensor query_probs_with_head(const ModelState& state, const SocialGraph& g, const Episode& ep) {
    NodeBatch qb = build_batch(g, ep.query);
    ad::Tape tape;
    BoundModel bm(tape, state, true);
    ad::Value emb = bm.encode(qb, false, nullptr);
    ad::Value logits = bm.head_logits(emb);
    std::vector<int64_t> rows;
    rows.reserve(ep.query.targets.size());
    for (NodeId v : ep.query.targets) rows.push_back(qb.local_of(v));
    const Tensor& L = logits.val();
    Tensor sel(static_cast<int64_t>(rows.size()), L.cols);
    for (size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(&L.v[static_cast<size_t>(rows[i] * L.cols)], L.cols,
                    &sel.v[i * static_cast<size_t>(L.cols)]);
    }
    ad::Tape::check_finite(sel, "eval_logits");
    return ad::softmax_rows(sel);
}

Tensor attempt_probs(const ModelState& state, Paradigm p, const SocialGraph& g, const Episode& ep,
                     double inner_lr, int t_inner, bool zero_shot, Rng rng) {
    const int32_t target_classes = g.num_classes();
    if (zero_shot) {
        if (!state.has_head) throw ConfigError("zero-shot evaluation requires a classification head");
        if (state.cfg.num_classes != target_classes) {
            throw ConfigError("zero-shot evaluation with mismatched class count");
        }
        return query_probs_with_head(state, g, ep);
    }

    if (p == Paradigm::ProtoNet || p == Paradigm::ProtoMaml) {
        // Prototypes from the unmasked support documents, evaluation mode.
        NodeBatch sb = build_batch(g, ep.support);
        Tensor protos_t;
        {
            ad::Tape tape;
            BoundModel bm(tape, state, false);
            ad::Value emb = bm.encode(sb, false, nullptr);
            std::vector<int64_t> rows;
            std::vector<int32_t> labels;
            for (size_t c = 0; c < ep.unmasked.size(); ++c) {
                for (NodeId v : ep.unmasked[c]) {
                    rows.push_back(sb.local_of(v));
                    labels.push_back(static_cast<int32_t>(c));
                }
            }
            const Tensor& E = emb.val();
            Tensor sel(static_cast<int64_t>(rows.size()), E.cols);
            for (size_t i = 0; i < rows.size(); ++i) {
                std::copy_n(&E.v[static_cast<size_t>(rows[i] * E.cols)], E.cols,
                            &sel.v[i * static_cast<size_t>(E.cols)]);
            }
            protos_t = prototypes(sel, labels, target_classes);
        }
        if (p == Paradigm::ProtoNet) {
            NodeBatch qb = build_batch(g, ep.query);
            ad::Tape tape;
            BoundModel bm(tape, state, false);
            ad::Value emb = bm.encode(qb, false, nullptr);
            const Tensor& E = emb.val();
            Tensor sel(static_cast<int64_t>(ep.query.targets.size()), E.cols);
            for (size_t i = 0; i < ep.query.targets.size(); ++i) {
                const int64_t r = qb.local_of(ep.query.targets[i]);
                std::copy_n(&E.v[static_cast<size_t>(r * E.cols)], E.cols,
                            &sel.v[i * static_cast<size_t>(E.cols)]);
            }
            return proto_classify(sel, protos_t);
        }
        // ProtoMaml: prototype-initialised head, full inner adaptation.
        auto [head_w, head_b] = protomaml_head_init(protos_t);
        ModelState work = state;
        work.has_head = true;
        work.cfg.num_classes = target_classes;
        work.head_w = std::move(head_w);
        work.head_b = std::move(head_b);
        NodeBatch sb2 = sb;
        std::vector<NodeId> unmasked_flat;
        for (const auto& cls : ep.unmasked) unmasked_flat.insert(unmasked_flat.end(), cls.begin(), cls.end());
        set_targets(sb2, g, unmasked_flat);
        AdaptResult ar = inner_adapt(work, sb2, inner_lr, t_inner, false, nullptr);
        return query_probs_with_head(ar.adapted, g, ep);
    }

    // Head-carrying paradigms: the trained head when shapes match, a fresh
    // one when the target task changed class count, always fresh for the
    // reset-head variant.
    ModelState work = state;
    if (!work.has_head || work.cfg.num_classes != target_classes) {
        work.has_head = true;
        work.cfg.num_classes = target_classes;
        reinit_head(work, rng);
    } else if (p == Paradigm::MamlRH) {
        reinit_head(work, rng);
    }
    NodeBatch sb = build_batch(g, ep.support);
    std::vector<NodeId> unmasked_flat;
    for (const auto& cls : ep.unmasked) unmasked_flat.insert(unmasked_flat.end(), cls.begin(), cls.end());
    set_targets(sb, g, unmasked_flat);
    AdaptResult ar = inner_adapt(work, sb, inner_lr, t_inner, false, nullptr);
    return query_probs_with_head(ar.adapted, g, ep);
}

}  // namespace

Tensor eval_episode_probs(const ModelState& state, Paradigm p, const SocialGraph& g, const Episode& ep,
                          const EvalAdaptation& adapt, bool zero_shot, Rng& rng) {
    double lr = adapt.inner_lr;
    for (int attempt = 0;; ++attempt) {
        // Attempts run in a fixed order, so forking the stream per attempt
        // keeps the whole procedure deterministic.
        Rng fork = make_rng(rng());
        try {
            return attempt_probs(state, p, g, ep, lr, adapt.t_inner, zero_shot, std::move(fork));
        } catch (const NumericError&) {
            if (attempt >= 5) throw;
            lr *= 0.5;
        }
    }
}

EpisodeScore score_predictions(const SocialGraph& g, std::span<const NodeId> docs,
                               const std::vector<int32_t>& predictions,
                               const std::vector<double>* positive_scores) {
    const int32_t C = g.num_classes();
    EpisodeScore s;
    ConfusionMatrix cm(C);
    std::vector<int32_t> truth;
    for (size_t i = 0; i < docs.size(); ++i) {
        const int32_t y = g.label_of(docs[i]);
        truth.push_back(y);
        cm.add(y, predictions[i]);
    }
    s.scored = cm.total();
    s.f1 = f1_per_class(cm);
    s.mcc = mcc(cm);
    s.prevalence.assign(static_cast<size_t>(C), 0.0);
    for (int32_t y : truth) s.prevalence[static_cast<size_t>(y)] += 1.0;
    for (auto& p : s.prevalence) p /= std::max<double>(1.0, static_cast<double>(truth.size()));
    s.random_f1.resize(static_cast<size_t>(C));
    for (int32_t c = 0; c < C; ++c) {
        s.random_f1[static_cast<size_t>(c)] = random_f1_baseline(s.prevalence[static_cast<size_t>(c)]);
    }
    if (C == 2 && positive_scores != nullptr) {
        std::vector<int32_t> bin;
        for (int32_t y : truth) bin.push_back(y == 1 ? 1 : 0);
        s.aupr = aupr(*positive_scores, bin);
    }
    return s;
}

EvalRun evaluate_model(const SocialGraph& g, const ModelState& state, Paradigm p,
                       std::vector<NodeId> support_pool, std::vector<NodeId> query_pool,
                       const SamplerConfig& scfg, const EvalConfig& ecfg) {
    const int32_t C = g.num_classes();
    EvalRun run;
    run.num_classes = C;

    SamplerConfig sc = scfg;
    sc.seed = derive_seed(ecfg.seed, "eval-episodes");
    sc.query_docs = ecfg.query_docs;
    sc.balanced_query = false;

    std::vector<Episode> episodes;
    if (ecfg.zero_shot) {
        // Without adaptation every episode is identical: one pass over the
        // whole query pool.
        Episode ep;
        Rng qrng = make_rng(derive_seed(ecfg.seed, "zero-shot"));
        std::sort(query_pool.begin(), query_pool.end());
        ep.query = sample_query(g, query_pool, ecfg.query_docs, 2, qrng, false);
        episodes.push_back(std::move(ep));
    } else {
        EpisodeStream stream(g, sc, std::move(support_pool), std::move(query_pool));
        episodes = stream.take(0, ecfg.episodes, ecfg.workers);
    }

    run.episodes.assign(episodes.size(), {});
    std::exception_ptr failure;
    std::mutex mu;
    auto score_one = [&](size_t i) {
        const Episode& ep = episodes[i];
        EpisodeScore s;
        Rng rng = make_rng(derive_seed(ecfg.seed, "eval-compute", static_cast<uint64_t>(ep.index)));
        Tensor probs;
        try {
            probs = eval_episode_probs(state, p, g, ep, ecfg.adapt, ecfg.zero_shot, rng);
        } catch (const NumericError&) {
            s.skipped = true;
            run.episodes[i] = std::move(s);
            return;
        }
        // Support nodes appearing in the query graph do not count towards
        // the metrics.
        std::vector<NodeId> docs;
        std::vector<int32_t> preds;
        std::vector<double> pos_scores;
        for (size_t t = 0; t < ep.query.targets.size(); ++t) {
            const NodeId v = ep.query.targets[t];
            if (!ecfg.zero_shot && ep.support.contains(v)) {
                ++s.excluded_support;
                continue;
            }
            docs.push_back(v);
            int32_t best = 0;
            for (int32_t c = 1; c < C; ++c) {
                if (probs.at(static_cast<int64_t>(t), c) > probs.at(static_cast<int64_t>(t), best)) best = c;
            }
            preds.push_back(best);
            if (C == 2) pos_scores.push_back(probs.at(static_cast<int64_t>(t), 1));
        }
        if (docs.empty()) {
            s.skipped = true;
            run.episodes[i] = std::move(s);
            return;
        }
        const int64_t excluded = s.excluded_support;
        s = score_predictions(g, docs, preds, C == 2 ? &pos_scores : nullptr);
        s.excluded_support = excluded;
        run.episodes[i] = std::move(s);
    };

    if (ecfg.workers <= 1 || episodes.size() <= 1) {
        for (size_t i = 0; i < episodes.size(); ++i) score_one(i);
    } else {
        auto worker = [&](int w) {
            for (size_t i = static_cast<size_t>(w); i < episodes.size(); i += static_cast<size_t>(ecfg.workers)) {
                try {
                    score_one(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> threads;
        for (int w = 0; w < ecfg.workers; ++w) threads.emplace_back(worker, w);
        for (auto& t : threads) t.join();
        if (failure) std::rethrow_exception(failure);
    }
    return run;
}

// ---- reports ----------------------------------------------------------------

namespace {

nlohmann::json summary_json(const MetricSummary& s) {
    return {{"mean", s.mean}, {"variance", s.variance}, {"ci_lo", s.ci_lo}, {"ci_hi", s.ci_hi}, {"n", s.n}};
}

}  // namespace

nlohmann::json eval_report_json(const EvalRun& run, nlohmann::json meta) {
    nlohmann::json j = std::move(meta);
    j["num_classes"] = run.num_classes;
    j["episodes_scored"] = static_cast<int64_t>(run.episodes.size()) - run.skipped();
    j["episodes_skipped"] = run.skipped();

    nlohmann::json per_episode;
    per_episode["mcc"] = run.mcc_values();
    for (int32_t c = 0; c < run.num_classes; ++c) {
        per_episode["f1_class_" + std::to_string(c)] = run.f1_values(c);
    }
    const auto av = run.aupr_values();
    if (!av.empty()) per_episode["aupr"] = av;
    j["per_episode"] = std::move(per_episode);

    nlohmann::json summary;
    summary["mcc"] = summary_json(episode_summary(run.mcc_values()));
    nlohmann::json f1s = nlohmann::json::array();
    for (int32_t c = 0; c < run.num_classes; ++c) {
        f1s.push_back(summary_json(episode_summary(run.f1_values(c))));
    }
    summary["f1"] = std::move(f1s);
    if (!av.empty()) summary["aupr"] = summary_json(episode_summary(av));

    // Realised-prevalence random baseline, averaged across episodes.
    std::vector<double> base(static_cast<size_t>(run.num_classes), 0.0);
    int64_t n = 0;
    for (const auto& e : run.episodes) {
        if (e.skipped) continue;
        for (int32_t c = 0; c < run.num_classes; ++c) base[static_cast<size_t>(c)] += e.random_f1[static_cast<size_t>(c)];
        ++n;
    }
    if (n > 0) {
        for (auto& b : base) b /= static_cast<double>(n);
    }
    summary["random_f1_baseline"] = base;
    j["summary"] = std::move(summary);
    return j;
}

nlohmann::json pooled_report_json(const std::vector<EvalRun>& runs, nlohmann::json meta) {
    if (runs.empty()) throw std::invalid_argument("pooled_report_json: no runs");
    nlohmann::json j = std::move(meta);
    j["checkpoints"] = runs.size();

    const auto pool = [&](auto&& value_fn) {
        std::vector<PooledMetric> per;
        for (const auto& r : runs) {
            const MetricSummary s = episode_summary(value_fn(r));
            per.push_back({s.mean, s.variance});
        }
        const PooledMetric p = pool_checkpoints(per);
        const double half = 1.645 * std::sqrt(p.variance);
        return nlohmann::json{{"mean", p.mean},
                              {"variance", p.variance},
                              {"ci_lo", p.mean - half},
                              {"ci_hi", p.mean + half}};
    };

    j["pooled"]["mcc"] = pool([](const EvalRun& r) { return r.mcc_values(); });
    nlohmann::json f1s = nlohmann::json::array();
    for (int32_t c = 0; c < runs.front().num_classes; ++c) {
        f1s.push_back(pool([c](const EvalRun& r) { return r.f1_values(c); }));
    }
    j["pooled"]["f1"] = std::move(f1s);
    bool have_aupr = true;
    for (const auto& r : runs) have_aupr &= !r.aupr_values().empty();
    if (have_aupr) j["pooled"]["aupr"] = pool([](const EvalRun& r) { return r.aupr_values(); });
    return j;
}

std::string render_report_table(const nlohmann::json& pooled) {
    const auto fmt = [](const nlohmann::json& cell) {
        char buf[80];
        std::snprintf(buf, sizeof(buf), "%.4f (%.4f, %.4f)", cell.at("mean").get<double>(),
                      cell.at("ci_lo").get<double>(), cell.at("ci_hi").get<double>());
        return std::string(buf);
    };
    std::string out;
    out += "metric                      value (90% CI)\n";
    const auto& p = pooled.at("pooled");
    const auto& f1 = p.at("f1");
    for (size_t c = 0; c < f1.size(); ++c) {
        out += "F1 class " + std::to_string(c) + "                  " + fmt(f1[c]) + "\n";
    }
    if (p.contains("aupr")) out += "AUPR                        " + fmt(p.at("aupr")) + "\n";
    out += "MCC                         " + fmt(p.at("mcc")) + "\n";
    return out;
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IngestError("cannot write '" + path + "'");
    f << j.dump(2) << "\n";
}

}  // namespace mgb
