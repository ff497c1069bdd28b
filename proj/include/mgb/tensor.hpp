#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mgb/error.hpp"
#include "mgb/rng.hpp"

namespace mgb {

// Dense row-major matrix of doubles. Vectors are n x 1 or 1 x n, scalars 1 x 1.
struct Tensor {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}

    static Tensor scalar(double x) {
        Tensor t(1, 1);
        t.v[0] = x;
        return t;
    }

    double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
    double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
    int64_t size() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (double x : v) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }
};

inline Tensor random_uniform_tensor(int64_t r, int64_t c, double lo, double hi, Rng& rng) {
    Tensor t(r, c);
    for (auto& x : t.v) x = rand_uniform(rng, lo, hi);
    return t;
}

inline Tensor random_normal_tensor(int64_t r, int64_t c, Rng& rng) {
    Tensor t(r, c);
    for (auto& x : t.v) x = rand_normal(rng);
    return t;
}

}  // namespace mgb
