#include "mgb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mgb/rng.hpp"

using namespace mgb;

namespace {

// Covariance-definition oracle for the multi-class MCC: Pearson correlation
// between flattened per-sample class-indicator vectors.
double mcc_indicator_oracle(const ConfusionMatrix& cm) {
    std::vector<std::pair<int32_t, int32_t>> samples;  // (truth, pred)
    for (int32_t t = 0; t < cm.num_classes; ++t) {
        for (int32_t p = 0; p < cm.num_classes; ++p) {
            for (int64_t i = 0; i < cm.at(t, p); ++i) samples.emplace_back(t, p);
        }
    }
    const double n = static_cast<double>(samples.size());
    if (n == 0) return 0.0;
    double cov = 0.0, var_t = 0.0, var_p = 0.0;
    for (int32_t c = 0; c < cm.num_classes; ++c) {
        double mean_t = 0.0, mean_p = 0.0;
        for (const auto& [t, p] : samples) {
            mean_t += t == c ? 1.0 : 0.0;
            mean_p += p == c ? 1.0 : 0.0;
        }
        mean_t /= n;
        mean_p /= n;
        for (const auto& [t, p] : samples) {
            const double dt = (t == c ? 1.0 : 0.0) - mean_t;
            const double dp = (p == c ? 1.0 : 0.0) - mean_p;
            cov += dt * dp;
            var_t += dt * dt;
            var_p += dp * dp;
        }
    }
    if (var_t <= 0.0 || var_p <= 0.0) return 0.0;
    return cov / std::sqrt(var_t * var_p);
}

// Classical binary MCC.
double mcc_binary_formula(const ConfusionMatrix& cm) {
    const double tp = static_cast<double>(cm.at(1, 1));
    const double tn = static_cast<double>(cm.at(0, 0));
    const double fp = static_cast<double>(cm.at(0, 1));
    const double fn = static_cast<double>(cm.at(1, 0));
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom);
}

// O(n^2) naive average precision: rescan the full list at each unique
// threshold.
double ap_naive(const std::vector<double>& scores, const std::vector<int32_t>& labels) {
    std::vector<double> thresholds = scores;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    int64_t total_pos = 0;
    for (int32_t y : labels) total_pos += y;
    if (total_pos == 0) return 0.0;
    double ap = 0.0, prev_recall = 0.0;
    for (double thr : thresholds) {
        int64_t tp = 0, fp = 0;
        for (size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= thr) {
                tp += labels[i];
                fp += 1 - labels[i];
            }
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

ConfusionMatrix cm2(int64_t a, int64_t b, int64_t c, int64_t d) {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = a;
    cm.at(0, 1) = b;
    cm.at(1, 0) = c;
    cm.at(1, 1) = d;
    return cm;
}

}  // namespace

TEST_CASE("f1 per class") {
    SUBCASE("perfect diagonal is all ones") {
        ConfusionMatrix cm(3);
        cm.at(0, 0) = 4;
        cm.at(1, 1) = 2;
        cm.at(2, 2) = 9;
        for (double f : f1_per_class(cm)) CHECK(f == doctest::Approx(1.0));
    }
    SUBCASE("class never predicted and never true gives 0") {
        ConfusionMatrix cm(3);
        cm.at(0, 0) = 4;
        cm.at(1, 1) = 2;
        CHECK(f1_per_class(cm)[2] == 0.0);
    }
    SUBCASE("hand-computed 2x2 case") {
        const auto f1 = f1_per_class(cm2(8, 2, 1, 9));
        CHECK(f1[1] == doctest::Approx(2.0 * (9.0 / 11.0) * (9.0 / 10.0) / ((9.0 / 11.0) + (9.0 / 10.0)))
                           .epsilon(1e-12));
        CHECK(f1[1] == doctest::Approx(0.857142857).epsilon(1e-6));
    }
}

TEST_CASE("mcc") {
    SUBCASE("perfect prediction is 1") {
        CHECK(mcc(cm2(7, 0, 0, 5)) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("constant predictor is 0") {
        CHECK(mcc(cm2(7, 0, 5, 0)) == 0.0);
    }
    SUBCASE("matches indicator-covariance oracle on random 3x3 matrices") {
        Rng rng = make_rng(31);
        for (int trial = 0; trial < 200; ++trial) {
            ConfusionMatrix cm(3);
            for (auto& c : cm.counts) c = static_cast<int64_t>(rand_index(rng, 6));
            CHECK(mcc(cm) == doctest::Approx(mcc_indicator_oracle(cm)).epsilon(1e-12));
        }
    }
    SUBCASE("binary mcc equals the classical formula") {
        Rng rng = make_rng(32);
        for (int trial = 0; trial < 1000; ++trial) {
            const auto cm =
                cm2(static_cast<int64_t>(rand_index(rng, 10)), static_cast<int64_t>(rand_index(rng, 10)),
                    static_cast<int64_t>(rand_index(rng, 10)), static_cast<int64_t>(rand_index(rng, 10)));
            CHECK(mcc(cm) == doctest::Approx(mcc_binary_formula(cm)).epsilon(1e-12));
        }
    }
    SUBCASE("invariant under simultaneous class permutation") {
        Rng rng = make_rng(33);
        for (int trial = 0; trial < 50; ++trial) {
            ConfusionMatrix cm(3);
            for (auto& c : cm.counts) c = static_cast<int64_t>(rand_index(rng, 8));
            const int32_t perm[3] = {2, 0, 1};
            ConfusionMatrix pcm(3);
            for (int32_t t = 0; t < 3; ++t)
                for (int32_t p = 0; p < 3; ++p) pcm.at(perm[t], perm[p]) = cm.at(t, p);
            CHECK(mcc(cm) == doctest::Approx(mcc(pcm)).epsilon(1e-12));
        }
    }
}

TEST_CASE("aupr") {
    SUBCASE("perfect separation is 1") {
        CHECK(aupr({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("constant scores give the prevalence") {
        CHECK(aupr({0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 0}) == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("six-document hand case") {
        const double got = aupr({0.9, 0.8, 0.7, 0.6, 0.5, 0.4}, {1, 0, 1, 1, 0, 0});
        CHECK(got == doctest::Approx((1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0).epsilon(1e-12));
        CHECK(got == doctest::Approx(0.8056).epsilon(1e-3));
    }
    SUBCASE("matches the naive oracle with ties") {
        Rng rng = make_rng(34);
        for (int trial = 0; trial < 300; ++trial) {
            const size_t n = 2 + rand_index(rng, 10);
            std::vector<double> scores;
            std::vector<int32_t> labels;
            bool any_pos = false;
            for (size_t i = 0; i < n; ++i) {
                scores.push_back(static_cast<double>(rand_index(rng, 5)) / 4.0);  // deliberate ties
                labels.push_back(static_cast<int32_t>(rand_index(rng, 2)));
                any_pos |= labels.back() == 1;
            }
            if (!any_pos) labels[0] = 1;
            CHECK(aupr(scores, labels) == doctest::Approx(ap_naive(scores, labels)).epsilon(1e-12));
        }
    }
    SUBCASE("invariant under strictly monotone score transforms") {
        Rng rng = make_rng(35);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> scores;
            std::vector<int32_t> labels;
            for (int i = 0; i < 12; ++i) {
                scores.push_back(rand_unit(rng));
                labels.push_back(static_cast<int32_t>(rand_index(rng, 2)));
            }
            labels[0] = 1;
            std::vector<double> warped;
            for (double s : scores) warped.push_back(std::exp(3.0 * s) - 7.0);
            CHECK(aupr(scores, labels) == doctest::Approx(aupr(warped, labels)).epsilon(1e-12));
        }
    }
}

TEST_CASE("exhaustive small confusion matrices match oracles") {
    // All 2-class matrices with total <= 12.
    for (int64_t a = 0; a <= 12; ++a) {
        for (int64_t b = 0; a + b <= 12; ++b) {
            for (int64_t c = 0; a + b + c <= 12; ++c) {
                for (int64_t d = 0; a + b + c + d <= 12; ++d) {
                    const auto cm = cm2(a, b, c, d);
                    REQUIRE(mcc(cm) == doctest::Approx(mcc_indicator_oracle(cm)).epsilon(1e-12));
                    REQUIRE(mcc(cm) == doctest::Approx(mcc_binary_formula(cm)).epsilon(1e-12));
                    const auto f1 = f1_per_class(cm);
                    const double denom1 = 2.0 * static_cast<double>(d) + static_cast<double>(b + c);
                    const double want1 = denom1 == 0.0 ? 0.0 : 2.0 * static_cast<double>(d) / denom1;
                    REQUIRE(f1[1] == doctest::Approx(want1).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("random classifier F1 baseline") {
    CHECK(random_f1_baseline(0.5) == 2.0 / 3.0);
    CHECK(random_f1_baseline(1.0) == 1.0);
    CHECK(random_f1_baseline(0.0) == 0.0);
    SUBCASE("matches a Monte-Carlo always-positive classifier") {
        Rng rng = make_rng(36);
        const double pi = 0.3;
        int64_t tp = 0, fp = 0;
        for (int i = 0; i < 200000; ++i) {
            if (rand_unit(rng) < pi) ++tp;  // always predict positive
            else ++fp;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double f1 = 2.0 * precision / (precision + 1.0);  // recall is 1
        CHECK(f1 == doctest::Approx(random_f1_baseline(pi)).epsilon(0.01));
    }
}

TEST_CASE("episode summary and pooling") {
    SUBCASE("summary basics") {
        const auto s = episode_summary({1.0, 2.0, 3.0, 4.0});
        CHECK(s.mean == doctest::Approx(2.5));
        CHECK(s.variance == doctest::Approx(5.0 / 3.0));
        CHECK(s.ci_lo == doctest::Approx(2.5 - 1.645 * std::sqrt(s.variance / 4.0)).epsilon(1e-12));
        CHECK(s.ci_hi == doctest::Approx(2.5 + 1.645 * std::sqrt(s.variance / 4.0)).epsilon(1e-12));
        CHECK(s.ci_lo <= s.mean);
        CHECK(s.mean <= s.ci_hi);
    }
    SUBCASE("equal variances pool to the arithmetic mean") {
        const auto p = pool_checkpoints({{0.2, 0.01}, {0.4, 0.01}, {0.9, 0.01}});
        CHECK(p.mean == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("hand-computed two-checkpoint pooling") {
        const auto p = pool_checkpoints({{0.4, 0.01}, {0.8, 0.04}});
        CHECK(p.mean == doctest::Approx(0.48).epsilon(1e-12));
        CHECK(p.variance == doctest::Approx(0.008).epsilon(1e-12));
    }
    SUBCASE("dominant checkpoint pulls the pooled mean") {
        const auto p = pool_checkpoints({{0.9, 0.0001}, {0.1, 0.01}});
        CHECK(std::abs(p.mean - 0.9) < 0.01);
    }
    SUBCASE("zero variance is guarded by the smallest nonzero variance") {
        const auto p = pool_checkpoints({{0.5, 0.0}, {0.7, 0.02}});
        CHECK(p.mean == doctest::Approx(0.6).epsilon(1e-12));
    }
    SUBCASE("all-zero variances fall back to equal weights") {
        const auto p = pool_checkpoints({{0.2, 0.0}, {0.6, 0.0}});
        CHECK(p.mean == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(p.variance == 0.0);
    }
}
