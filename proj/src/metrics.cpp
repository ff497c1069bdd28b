#include "mgb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mgb {

int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), int64_t{0});
}

std::vector<double> f1_per_class(const ConfusionMatrix& cm) {
    const int32_t C = cm.num_classes;
    std::vector<double> out(static_cast<size_t>(C), 0.0);
    for (int32_t c = 0; c < C; ++c) {
        int64_t tp = cm.at(c, c);
        int64_t fp = 0, fn = 0;
        for (int32_t k = 0; k < C; ++k) {
            if (k == c) continue;
            fp += cm.at(k, c);
            fn += cm.at(c, k);
        }
        const int64_t denom = 2 * tp + fp + fn;
        out[static_cast<size_t>(c)] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    return out;
}

double mcc(const ConfusionMatrix& cm) {
    const int32_t C = cm.num_classes;
    const double s = static_cast<double>(cm.total());
    if (s == 0.0) return 0.0;
    double trace = 0.0;
    std::vector<double> t(static_cast<size_t>(C), 0.0);  // true counts (row sums)
    std::vector<double> p(static_cast<size_t>(C), 0.0);  // predicted counts (column sums)
    for (int32_t i = 0; i < C; ++i) {
        trace += static_cast<double>(cm.at(i, i));
        for (int32_t j = 0; j < C; ++j) {
            t[static_cast<size_t>(i)] += static_cast<double>(cm.at(i, j));
            p[static_cast<size_t>(j)] += static_cast<double>(cm.at(i, j));
        }
    }
    double tp_dot = 0.0, tt = 0.0, pp = 0.0;
    for (int32_t c = 0; c < C; ++c) {
        tp_dot += t[static_cast<size_t>(c)] * p[static_cast<size_t>(c)];
        tt += t[static_cast<size_t>(c)] * t[static_cast<size_t>(c)];
        pp += p[static_cast<size_t>(c)] * p[static_cast<size_t>(c)];
    }
    const double cov_tp = trace * s - tp_dot;
    const double var_t = s * s - tt;
    const double var_p = s * s - pp;
    if (var_t <= 0.0 || var_p <= 0.0) return 0.0;
    return cov_tp / std::sqrt(var_t * var_p);
}

double aupr(const std::vector<double>& scores, const std::vector<int32_t>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("aupr: size mismatch");
    if (scores.empty()) throw std::invalid_argument("aupr: empty input");
    int64_t total_pos = 0;
    for (int32_t y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("aupr: labels must be 0/1");
        total_pos += y;
    }
    if (total_pos == 0) return 0.0;

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double prev_recall = 0.0;
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        // Group ties at the same threshold.
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            tp += labels[order[j]];
            fp += 1 - labels[order[j]];
            ++j;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

double random_f1_baseline(double prevalence) {
    if (prevalence < 0.0 || prevalence > 1.0) throw std::invalid_argument("prevalence outside [0,1]");
    return 2.0 * prevalence / (1.0 + prevalence);
}

MetricSummary episode_summary(const std::vector<double>& values) {
    MetricSummary s;
    s.n = static_cast<int64_t>(values.size());
    if (s.n == 0) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
    if (s.n > 1) {
        double acc = 0.0;
        for (double x : values) acc += (x - s.mean) * (x - s.mean);
        s.variance = acc / static_cast<double>(s.n - 1);
    }
    const double half = 1.645 * std::sqrt(s.variance / static_cast<double>(s.n));
    s.ci_lo = s.mean - half;
    s.ci_hi = s.mean + half;
    return s;
}

PooledMetric pool_checkpoints(const std::vector<PooledMetric>& per_checkpoint) {
    if (per_checkpoint.empty()) throw std::invalid_argument("pool_checkpoints: no checkpoints");
    double min_nonzero = 0.0;
    for (const auto& c : per_checkpoint) {
        if (c.variance < 0.0) throw std::invalid_argument("pool_checkpoints: negative variance");
        if (c.variance > 0.0 && (min_nonzero == 0.0 || c.variance < min_nonzero)) min_nonzero = c.variance;
    }
    if (min_nonzero == 0.0) {
        // All variances zero: equal weights, zero pooled variance.
        double m = 0.0;
        for (const auto& c : per_checkpoint) m += c.mean;
        return {m / static_cast<double>(per_checkpoint.size()), 0.0};
    }
    double wsum = 0.0, msum = 0.0;
    for (const auto& c : per_checkpoint) {
        const double var = c.variance > 0.0 ? c.variance : min_nonzero;
        const double w = 1.0 / var;
        wsum += w;
        msum += w * c.mean;
    }
    return {msum / wsum, 1.0 / wsum};
}

}  // namespace mgb
