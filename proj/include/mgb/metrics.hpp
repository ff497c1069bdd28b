#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace mgb {

// Row = true class, column = predicted class.
struct ConfusionMatrix {
    int32_t num_classes = 0;
    std::vector<int64_t> counts;  // C*C

    explicit ConfusionMatrix(int32_t c) : num_classes(c), counts(static_cast<size_t>(c) * c, 0) {}

    int64_t& at(int32_t t, int32_t p) { return counts[static_cast<size_t>(t) * num_classes + p]; }
    int64_t at(int32_t t, int32_t p) const { return counts[static_cast<size_t>(t) * num_classes + p]; }
    int64_t total() const;
    void add(int32_t truth, int32_t pred) { ++at(truth, pred); }
};

// One-vs-rest F1 per class; 0 when precision + recall is 0.
std::vector<double> f1_per_class(const ConfusionMatrix& cm);

// Generalised multi-class Matthews correlation (R_K); 0 when either variance
// term vanishes.
double mcc(const ConfusionMatrix& cm);

// Average precision over descending unique score thresholds, ties grouped.
// labels are 0/1 with 1 the positive class.
double aupr(const std::vector<double>& scores, const std::vector<int32_t>& labels);

// F1 of the always-positive classifier at prevalence pi: 2*pi / (1 + pi).
double random_f1_baseline(double prevalence);

struct MetricSummary {
    double mean = 0.0;
    double variance = 0.0;  // unbiased sample variance
    double ci_lo = 0.0;     // 90% normal-approximation interval
    double ci_hi = 0.0;
    int64_t n = 0;
};

// Sample mean/variance over per-episode values with a 90% CI of
// mean +- 1.645 * sqrt(variance / n).
MetricSummary episode_summary(const std::vector<double>& values);

struct PooledMetric {
    double mean = 0.0;
    double variance = 0.0;
};

// Fixed-effect (inverse-variance weighted) pooling across checkpoints.
// A zero variance is replaced by the smallest nonzero variance present;
// if every variance is zero the checkpoints are weighted equally.
PooledMetric pool_checkpoints(const std::vector<PooledMetric>& per_checkpoint);

}  // namespace mgb
