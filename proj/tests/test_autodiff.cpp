#include "mgb/autodiff.hpp"

#include <cmath>
#include <functional>

#include "doctest.h"
#include "mgb/error.hpp"

using namespace mgb;

namespace {

using BuildFn = std::function<ad::Value(ad::Tape&, const std::vector<ad::Value>&)>;

double run_forward(const std::vector<Tensor>& params, const BuildFn& build) {
    ad::Tape tape;
    std::vector<ad::Value> vs;
    vs.reserve(params.size());
    for (const auto& p : params) vs.push_back(tape.param(p));
    return build(tape, vs).val().v[0];
}

std::vector<Tensor> analytic_grads(const std::vector<Tensor>& params, const BuildFn& build) {
    ad::Tape tape;
    std::vector<ad::Value> vs;
    for (const auto& p : params) vs.push_back(tape.param(p));
    ad::Value loss = build(tape, vs);
    tape.backward(loss);
    std::vector<Tensor> out;
    for (const auto& v : vs) out.push_back(tape.grad_of(v));
    return out;
}

// Central finite differences, h = 1e-5, relative error < 1e-4.
void check_gradients(std::vector<Tensor> params, const BuildFn& build) {
    const auto grads = analytic_grads(params, build);
    const double h = 1e-5;
    for (size_t p = 0; p < params.size(); ++p) {
        for (int64_t i = 0; i < params[p].size(); ++i) {
            const double orig = params[p].v[i];
            params[p].v[i] = orig + h;
            const double fp = run_forward(params, build);
            params[p].v[i] = orig - h;
            const double fm = run_forward(params, build);
            params[p].v[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = grads[p].v[i];
            const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            CAPTURE(p);
            CAPTURE(i);
            CAPTURE(fd);
            CAPTURE(an);
            CHECK(err < 1e-4);
        }
    }
}

Tensor rand_t(int64_t r, int64_t c, Rng& rng, double scale = 1.0) {
    Tensor t(r, c);
    for (auto& x : t.v) x = rand_uniform(rng, -scale, scale);
    return t;
}

}  // namespace

TEST_CASE("segment_softmax basics") {
    ad::Tape tape;
    SUBCASE("singleton segment is exactly 1") {
        Tensor x(1, 1);
        x.v[0] = 3.7;
        ad::Value v = ad::segment_softmax(tape.param(x), {0, 1});
        CHECK(v.val().v[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("uniform over equal inputs") {
        Tensor x(3, 1);
        ad::Value v = ad::segment_softmax(tape.param(x), {0, 3});
        for (int i = 0; i < 3; ++i) CHECK(v.val().v[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
    }
    SUBCASE("segments sum to 1 within 1e-12") {
        Rng rng = make_rng(7);
        Tensor x(50, 1);
        for (auto& e : x.v) e = rand_uniform(rng, -30.0, 30.0);
        std::vector<int64_t> offsets{0, 3, 10, 11, 29, 50};
        ad::Value v = ad::segment_softmax(tape.param(x), offsets);
        for (size_t s = 0; s + 1 < offsets.size(); ++s) {
            double sum = 0.0;
            for (int64_t i = offsets[s]; i < offsets[s + 1]; ++i) sum += v.val().v[i];
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("cross_entropy closed form") {
    ad::Tape tape;
    Tensor logits(1, 2);
    ad::Value loss = ad::cross_entropy(tape.param(logits), {0});
    CHECK(loss.val().v[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy masks rows with target -1") {
    ad::Tape tape;
    Tensor logits(3, 2);
    logits.at(1, 0) = 100.0;  // masked row must not contribute
    ad::Value loss = ad::cross_entropy(tape.param(logits), {0, -1, 1});
    CHECK(loss.val().v[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("linear map gradient: sum of W*x broadcasts x") {
    // loss = ones^T (W x); d loss / d W = ones * x^T.
    Rng rng = make_rng(3);
    Tensor W = rand_t(3, 4, rng);
    Tensor x = rand_t(4, 1, rng);
    ad::Tape tape;
    ad::Value w = tape.param(W);
    ad::Value xv = tape.input(x);
    Tensor ones(1, 3);
    ones.fill(1.0);
    ad::Value loss = ad::matmul(tape.input(ones), ad::matmul(w, xv));
    tape.backward(loss);
    const Tensor& g = tape.grad_of(w);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 4; ++j) CHECK(g.at(i, j) == doctest::Approx(x.v[j]).epsilon(1e-12));
}

TEST_CASE("relu kills gradient at negative input") {
    Tensor x(1, 1);
    x.v[0] = -2.0;
    ad::Tape tape;
    ad::Value xv = tape.param(x);
    ad::Value loss = ad::relu(xv);
    tape.backward(loss);
    CHECK(tape.grad_of(xv).v[0] == 0.0);
}

TEST_CASE("double backward without reset is an error") {
    ad::Tape tape;
    ad::Value x = tape.param(Tensor::scalar(1.0));
    ad::Value loss = ad::scale(x, 2.0);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("backward requires scalar loss") {
    ad::Tape tape;
    ad::Value x = tape.param(Tensor(2, 2));
    CHECK_THROWS_AS(tape.backward(x), std::logic_error);
}

TEST_CASE("non-finite forward raises NumericError") {
    ad::Tape tape;
    Tensor big(1, 1);
    big.v[0] = 1e308;
    ad::Value x = tape.param(big);
    CHECK_THROWS_AS(ad::mul(x, x), NumericError);
}

TEST_CASE("stop_gradient severs flow, keeps value") {
    Tensor x(1, 1);
    x.v[0] = 1.5;
    ad::Tape tape;
    ad::Value xv = tape.param(x);
    ad::Value cut = ad::stop_gradient(xv);
    CHECK(cut.val().v[0] == 1.5);
    ad::Value loss = ad::mul(xv, cut);  // d/dx (x * const) = const
    tape.backward(loss);
    CHECK(tape.grad_of(xv).v[0] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("gradients accumulate across multiple consumers") {
    Tensor x(1, 1);
    x.v[0] = 3.0;
    ad::Tape tape;
    ad::Value xv = tape.param(x);
    ad::Value loss = ad::add(ad::scale(xv, 2.0), ad::mul(xv, xv));  // 2x + x^2 -> 2 + 2x = 8
    tape.backward(loss);
    CHECK(tape.grad_of(xv).v[0] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("linearity: backward of a+b equals sum of separate backwards") {
    Rng rng = make_rng(11);
    Tensor W = rand_t(2, 3, rng);
    Tensor u = rand_t(1, 2, rng);
    Tensor v = rand_t(1, 2, rng);
    Tensor ones(3, 1);
    ones.fill(1.0);

    const auto grad_of_loss = [&](bool use_u, bool use_v) {
        ad::Tape tape;
        ad::Value w = tape.param(W);
        ad::Value total;
        if (use_u) total = ad::matmul(ad::matmul(tape.input(u), w), tape.input(ones));
        if (use_v) {
            ad::Value lv = ad::matmul(ad::matmul(tape.input(v), w), tape.input(ones));
            total = use_u ? ad::add(total, lv) : lv;
        }
        tape.backward(total);
        return tape.grad_of(w);
    };
    const Tensor both = grad_of_loss(true, true);
    const Tensor ga = grad_of_loss(true, false);
    const Tensor gb = grad_of_loss(false, true);
    for (int64_t i = 0; i < both.size(); ++i) {
        CHECK(both.v[i] == doctest::Approx(ga.v[i] + gb.v[i]).epsilon(1e-12));
    }
}

TEST_CASE("dropout: evaluation mode identity, training preserves expectation") {
    Rng rng = make_rng(5);
    Tensor x(200, 10);
    x.fill(1.0);
    // Evaluation mode is the caller simply not applying the op; here we check
    // the train-mode rescaling keeps the expected value.
    double total = 0.0;
    const int reps = 400;
    for (int r = 0; r < reps; ++r) {
        ad::Tape tape;
        ad::Value v = ad::dropout(tape.input(x), 0.3, rng);
        for (double e : v.val().v) total += e;
    }
    const double mean = total / (reps * x.size());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("dropout_rows only zeroes eligible rows, whole rows at a time") {
    Rng rng = make_rng(9);
    Tensor x(50, 4);
    x.fill(2.0);
    std::vector<uint8_t> eligible(50, 0);
    for (size_t i = 0; i < 25; ++i) eligible[i] = 1;
    ad::Tape tape;
    ad::Value v = ad::dropout_rows(tape.input(x), 0.5, eligible, rng);
    const Tensor& out = v.val();
    for (int64_t i = 0; i < 50; ++i) {
        const bool zeroed = out.at(i, 0) == 0.0;
        for (int64_t j = 1; j < 4; ++j) CHECK((out.at(i, j) == 0.0) == zeroed);
        if (i >= 25) CHECK(out.at(i, 0) == doctest::Approx(2.0));
    }
}

TEST_CASE("finite differences over composite graphs") {
    Rng rng = make_rng(1234);
    for (int trial = 0; trial < 50; ++trial) {
        const int kind = trial % 4;
        if (kind == 0) {
            // MLP with cross entropy.
            const int64_t n = 3 + static_cast<int64_t>(rand_index(rng, 3));
            const int64_t d = 2 + static_cast<int64_t>(rand_index(rng, 3));
            const int64_t hd = 2 + static_cast<int64_t>(rand_index(rng, 3));
            std::vector<Tensor> params{rand_t(n, d, rng), rand_t(d, hd, rng), rand_t(1, hd, rng),
                                       rand_t(hd, 2, rng)};
            std::vector<int32_t> targets;
            for (int64_t i = 0; i < n; ++i) targets.push_back(static_cast<int32_t>(rand_index(rng, 2)));
            check_gradients(params, [targets](ad::Tape&, const std::vector<ad::Value>& v) {
                ad::Value h = ad::relu(ad::add_rowvec(ad::matmul(v[0], v[1]), v[2]));
                return ad::cross_entropy(ad::matmul(h, v[3]), targets);
            });
        } else if (kind == 1) {
            // Attention-style: gather, leaky, segment softmax, scale_rows, segment sum.
            const int64_t n = 4;
            const int64_t d = 3;
            std::vector<int64_t> src{0, 1, 1, 2, 3, 0, 2};
            std::vector<int64_t> dst{0, 0, 1, 1, 2, 3, 3};
            std::vector<int64_t> offsets{0, 2, 4, 5, 7};
            std::vector<Tensor> params{rand_t(n, d, rng), rand_t(d, d, rng), rand_t(d, 1, rng),
                                       rand_t(d, 1, rng)};
            std::vector<int32_t> targets{0, 1, 0, 1};
            check_gradients(params, [=](ad::Tape&, const std::vector<ad::Value>& v) {
                ad::Value proj = ad::matmul(v[0], v[1]);
                ad::Value s = ad::matmul(proj, v[2]);
                ad::Value t = ad::matmul(proj, v[3]);
                ad::Value e = ad::leaky_relu(ad::add(ad::gather_rows(s, dst), ad::gather_rows(t, src)), 0.2);
                ad::Value alpha = ad::segment_softmax(e, offsets);
                ad::Value agg = ad::segment_sum(ad::scale_rows(ad::gather_rows(proj, src), alpha), offsets);
                return ad::cross_entropy(agg, targets);
            });
        } else if (kind == 2) {
            // Prototype-style: squared distances and concatenation.
            const int64_t q = 3, c = 2, d = 3;
            std::vector<Tensor> params{rand_t(q, d, rng), rand_t(c, d, rng), rand_t(q, d, rng)};
            std::vector<int32_t> targets{0, 1, 1};
            check_gradients(params, [targets](ad::Tape&, const std::vector<ad::Value>& v) {
                ad::Value emb = ad::mul(v[0], v[2]);
                ad::Value logits = ad::scale(ad::sqdist(emb, v[1]), -1.0);
                return ad::cross_entropy(logits, targets);
            });
        } else {
            // Concat + elementwise ops + fixed-mask dropout.
            const int64_t n = 3, d = 2;
            const uint64_t dropseed = rng();
            std::vector<Tensor> params{rand_t(n, d, rng), rand_t(n, d, rng), rand_t(2 * d, 2, rng)};
            std::vector<int32_t> targets{1, 0, 1};
            check_gradients(params, [=](ad::Tape&, const std::vector<ad::Value>& v) {
                Rng drop = make_rng(dropseed);  // same mask on every call
                ad::Value cat = ad::concat_cols(v[0], ad::mul(v[1], v[1]));
                ad::Value dropped = ad::dropout(cat, 0.25, drop);
                return ad::cross_entropy(ad::matmul(dropped, v[2]), targets);
            });
        }
    }
}
