#include "mgb/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "mgb/error.hpp"

namespace mgb::ad {

const Tensor& Value::val() const { return tape->value_of(*this); }

Value Tape::param(Tensor value) {
    check_finite(value, "param");
    return make_node(std::move(value), true, nullptr);
}

Value Tape::input(Tensor value) {
    check_finite(value, "input");
    return make_node(std::move(value), false, nullptr);
}

Value Tape::make_node(Tensor value, bool needs_grad, BackwardFn bw) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(bw);
    n.needs_grad = needs_grad;
    n.is_param = needs_grad && !n.backward;
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::grad_of(Value v) const {
    const Node& n = nodes_[v.idx];
    if (!n.needs_grad) throw std::logic_error("grad_of: node does not carry a gradient");
    return n.grad;
}

Tensor& Tape::grad_accum(Value v) {
    Node& n = nodes_[v.idx];
    if (n.grad.size() == 0) n.grad = Tensor(n.value.rows, n.value.cols);
    return n.grad;
}

void Tape::backward(Value loss) {
    if (backward_done_) throw std::logic_error("backward: tape already differentiated; reset first");
    if (loss.tape != this) throw std::logic_error("backward: loss from another tape");
    const Node& ln = nodes_[loss.idx];
    if (ln.value.rows != 1 || ln.value.cols != 1) {
        throw std::logic_error("backward: loss must be scalar");
    }
    backward_done_ = true;
    grad_accum(loss).v[0] = 1.0;
    for (int32_t i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.backward) n.backward(*this, n.value, n.grad);
    }
    // Parameter leaves never touched by the graph keep a zero gradient.
    for (Node& n : nodes_) {
        if (n.is_param && n.grad.size() == 0) n.grad = Tensor(n.value.rows, n.value.cols);
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

void Tape::check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) {
        throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
}

Value matmul(Value a, Value b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dimensions disagree");
    Tensor out(A.rows, B.cols);
    // i-k-j order keeps both B and out rows contiguous.
    for (int64_t i = 0; i < A.rows; ++i) {
        double* orow = &out.v[static_cast<size_t>(i * out.cols)];
        const double* arow = &A.v[static_cast<size_t>(i * A.cols)];
        for (int64_t k = 0; k < A.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = &B.v[static_cast<size_t>(k * B.cols)];
            for (int64_t j = 0; j < B.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    Tape::check_finite(out, "matmul");
    Tape* t = a.tape;
    const bool ng = t->needs_grad(a) || t->needs_grad(b);
    return t->make_node(std::move(out), ng, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
        const Tensor& A = a.val();
        const Tensor& B = b.val();
        if (tp.needs_grad(a)) {
            Tensor& da = tp.grad_accum(a);  // dA += g * B^T
            for (int64_t i = 0; i < A.rows; ++i) {
                const double* grow = &g.v[static_cast<size_t>(i * g.cols)];
                double* darow = &da.v[static_cast<size_t>(i * da.cols)];
                for (int64_t k = 0; k < B.rows; ++k) {
                    const double* brow = &B.v[static_cast<size_t>(k * B.cols)];
                    double acc = 0.0;
                    for (int64_t j = 0; j < B.cols; ++j) acc += grow[j] * brow[j];
                    darow[k] += acc;
                }
            }
        }
        if (tp.needs_grad(b)) {
            Tensor& db = tp.grad_accum(b);  // dB += A^T * g
            for (int64_t i = 0; i < A.rows; ++i) {
                const double* arow = &A.v[static_cast<size_t>(i * A.cols)];
                const double* grow = &g.v[static_cast<size_t>(i * g.cols)];
                for (int64_t k = 0; k < A.cols; ++k) {
                    const double aik = arow[k];
                    if (aik == 0.0) continue;
                    double* dbrow = &db.v[static_cast<size_t>(k * db.cols)];
                    for (int64_t j = 0; j < g.cols; ++j) dbrow[j] += aik * grow[j];
                }
            }
        }
    });
}

Value add(Value a, Value b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (!A.same_shape(B)) throw std::invalid_argument("add: shapes disagree");
    Tensor out = A;
    for (int64_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
    Tape::check_finite(out, "add");
    Tape* t = a.tape;
    const bool ng = t->needs_grad(a) || t->needs_grad(b);
    return t->make_node(std::move(out), ng, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
        for (Value p : {a, b}) {
            if (!tp.needs_grad(p)) continue;
            Tensor& dp = tp.grad_accum(p);
            for (int64_t i = 0; i < g.size(); ++i) dp.v[i] += g.v[i];
        }
    });
}

Value add_rowvec(Value m, Value row) {
    const Tensor& M = m.val();
    const Tensor& R = row.val();
    if (R.rows != 1 || R.cols != M.cols) throw std::invalid_argument("add_rowvec: shapes disagree");
    Tensor out = M;
    for (int64_t i = 0; i < M.rows; ++i)
        for (int64_t j = 0; j < M.cols; ++j) out.at(i, j) += R.v[static_cast<size_t>(j)];
    Tape::check_finite(out, "add_rowvec");
    Tape* t = m.tape;
    const bool ng = t->needs_grad(m) || t->needs_grad(row);
    return t->make_node(std::move(out), ng, [m, row](Tape& tp, const Tensor&, const Tensor& g) {
        if (tp.needs_grad(m)) {
            Tensor& dm = tp.grad_accum(m);
            for (int64_t i = 0; i < g.size(); ++i) dm.v[i] += g.v[i];
        }
        if (tp.needs_grad(row)) {
            Tensor& dr = tp.grad_accum(row);
            for (int64_t i = 0; i < g.rows; ++i)
                for (int64_t j = 0; j < g.cols; ++j) dr.v[static_cast<size_t>(j)] += g.at(i, j);
        }
    });
}

Value mul(Value a, Value b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (!A.same_shape(B)) throw std::invalid_argument("mul: shapes disagree");
    Tensor out = A;
    for (int64_t i = 0; i < out.size(); ++i) out.v[i] *= B.v[i];
    Tape::check_finite(out, "mul");
    Tape* t = a.tape;
    const bool ng = t->needs_grad(a) || t->needs_grad(b);
    return t->make_node(std::move(out), ng, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
        if (tp.needs_grad(a)) {
            Tensor& da = tp.grad_accum(a);
            const Tensor& B = b.val();
            for (int64_t i = 0; i < g.size(); ++i) da.v[i] += g.v[i] * B.v[i];
        }
        if (tp.needs_grad(b)) {
            Tensor& db = tp.grad_accum(b);
            const Tensor& A = a.val();
            for (int64_t i = 0; i < g.size(); ++i) db.v[i] += g.v[i] * A.v[i];
        }
    });
}

Value scale(Value a, double s) {
    Tensor out = a.val();
    for (auto& x : out.v) x *= s;
    Tape::check_finite(out, "scale");
    Tape* t = a.tape;
    return t->make_node(std::move(out), t->needs_grad(a), [a, s](Tape& tp, const Tensor&, const Tensor& g) {
        if (!tp.needs_grad(a)) return;
        Tensor& da = tp.grad_accum(a);
        for (int64_t i = 0; i < g.size(); ++i) da.v[i] += s * g.v[i];
    });
}

Value relu(Value a) {
    Tensor out = a.val();
    for (auto& x : out.v) x = x > 0.0 ? x : 0.0;
    Tape* t = a.tape;
    return t->make_node(std::move(out), t->needs_grad(a), [a](Tape& tp, const Tensor&, const Tensor& g) {
        if (!tp.needs_grad(a)) return;
        Tensor& da = tp.grad_accum(a);
        const Tensor& A = a.val();
        for (int64_t i = 0; i < g.size(); ++i) {
            if (A.v[i] > 0.0) da.v[i] += g.v[i];
        }
    });
}

Value leaky_relu(Value a, double slope) {
    Tensor out = a.val();
    for (auto& x : out.v) x = x > 0.0 ? x : slope * x;
    Tape::check_finite(out, "leaky_relu");
    Tape* t = a.tape;
    return t->make_node(std::move(out), t->needs_grad(a),
                        [a, slope](Tape& tp, const Tensor&, const Tensor& g) {
                            if (!tp.needs_grad(a)) return;
                            Tensor& da = tp.grad_accum(a);
                            const Tensor& A = a.val();
                            for (int64_t i = 0; i < g.size(); ++i) {
                                da.v[i] += (A.v[i] > 0.0 ? 1.0 : slope) * g.v[i];
                            }
                        });
}

Value concat_cols(Value a, Value b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (A.rows != B.rows) throw std::invalid_argument("concat_cols: row counts disagree");
    Tensor out(A.rows, A.cols + B.cols);
    for (int64_t i = 0; i < A.rows; ++i) {
        std::copy_n(&A.v[static_cast<size_t>(i * A.cols)], A.cols,
                    &out.v[static_cast<size_t>(i * out.cols)]);
        std::copy_n(&B.v[static_cast<size_t>(i * B.cols)], B.cols,
                    &out.v[static_cast<size_t>(i * out.cols + A.cols)]);
    }
    Tape* t = a.tape;
    const bool ng = t->needs_grad(a) || t->needs_grad(b);
    return t->make_node(std::move(out), ng, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
        const int64_t ac = a.val().cols;
        if (tp.needs_grad(a)) {
            Tensor& da = tp.grad_accum(a);
            for (int64_t i = 0; i < da.rows; ++i)
                for (int64_t j = 0; j < ac; ++j) da.at(i, j) += g.at(i, j);
        }
        if (tp.needs_grad(b)) {
            Tensor& db = tp.grad_accum(b);
            for (int64_t i = 0; i < db.rows; ++i)
                for (int64_t j = 0; j < db.cols; ++j) db.at(i, j) += g.at(i, ac + j);
        }
    });
}

Value gather_rows(Value a, std::vector<int64_t> idx) {
    const Tensor& A = a.val();
    Tensor out(static_cast<int64_t>(idx.size()), A.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= A.rows) throw std::invalid_argument("gather_rows: index out of range");
        std::copy_n(&A.v[static_cast<size_t>(idx[i] * A.cols)], A.cols,
                    &out.v[i * static_cast<size_t>(A.cols)]);
    }
    Tape* t = a.tape;
    return t->make_node(std::move(out), t->needs_grad(a),
                        [a, idx = std::move(idx)](Tape& tp, const Tensor&, const Tensor& g) {
                            if (!tp.needs_grad(a)) return;
                            Tensor& da = tp.grad_accum(a);
                            for (size_t i = 0; i < idx.size(); ++i) {
                                const double* grow = &g.v[i * static_cast<size_t>(g.cols)];
                                double* drow = &da.v[static_cast<size_t>(idx[i] * da.cols)];
                                for (int64_t j = 0; j < g.cols; ++j) drow[j] += grow[j];
                            }
                        });
}

Value scale_rows(Value m, Value w) {
    const Tensor& M = m.val();
    const Tensor& W = w.val();
    if (W.cols != 1 || W.rows != M.rows) throw std::invalid_argument("scale_rows: need one weight per row");
    Tensor out = M;
    for (int64_t i = 0; i < M.rows; ++i) {
        const double wi = W.v[static_cast<size_t>(i)];
        double* row = &out.v[static_cast<size_t>(i * M.cols)];
        for (int64_t j = 0; j < M.cols; ++j) row[j] *= wi;
    }
    Tape::check_finite(out, "scale_rows");
    Tape* t = m.tape;
    const bool ng = t->needs_grad(m) || t->needs_grad(w);
    return t->make_node(std::move(out), ng, [m, w](Tape& tp, const Tensor&, const Tensor& g) {
        const Tensor& M = m.val();
        const Tensor& W = w.val();
        if (tp.needs_grad(m)) {
            Tensor& dm = tp.grad_accum(m);
            for (int64_t i = 0; i < M.rows; ++i) {
                const double wi = W.v[static_cast<size_t>(i)];
                for (int64_t j = 0; j < M.cols; ++j) dm.at(i, j) += wi * g.at(i, j);
            }
        }
        if (tp.needs_grad(w)) {
            Tensor& dw = tp.grad_accum(w);
            for (int64_t i = 0; i < M.rows; ++i) {
                double acc = 0.0;
                for (int64_t j = 0; j < M.cols; ++j) acc += M.at(i, j) * g.at(i, j);
                dw.v[static_cast<size_t>(i)] += acc;
            }
        }
    });
}

static void validate_offsets(const std::vector<int64_t>& offsets, int64_t n_rows, const char* op) {
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != n_rows) {
        throw std::invalid_argument(std::string(op) + ": offsets must start at 0 and end at row count");
    }
    for (size_t s = 1; s < offsets.size(); ++s) {
        if (offsets[s] < offsets[s - 1]) throw std::invalid_argument(std::string(op) + ": offsets not sorted");
    }
}

Value segment_softmax(Value x, std::vector<int64_t> offsets) {
    const Tensor& X = x.val();
    if (X.cols != 1) throw std::invalid_argument("segment_softmax: expects a column vector");
    validate_offsets(offsets, X.rows, "segment_softmax");
    Tensor out(X.rows, 1);
    for (size_t s = 0; s + 1 < offsets.size(); ++s) {
        const int64_t lo = offsets[s], hi = offsets[s + 1];
        if (lo == hi) continue;
        double mx = X.v[static_cast<size_t>(lo)];
        for (int64_t i = lo + 1; i < hi; ++i) mx = std::max(mx, X.v[static_cast<size_t>(i)]);
        double denom = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            const double e = std::exp(X.v[static_cast<size_t>(i)] - mx);
            out.v[static_cast<size_t>(i)] = e;
            denom += e;
        }
        for (int64_t i = lo; i < hi; ++i) out.v[static_cast<size_t>(i)] /= denom;
    }
    Tape::check_finite(out, "segment_softmax");
    Tape* t = x.tape;
    return t->make_node(std::move(out), t->needs_grad(x),
                        [x, offsets = std::move(offsets)](Tape& tp, const Tensor& y, const Tensor& g) {
                            if (!tp.needs_grad(x)) return;
                            Tensor& dx = tp.grad_accum(x);
                            for (size_t s = 0; s + 1 < offsets.size(); ++s) {
                                const int64_t lo = offsets[s], hi = offsets[s + 1];
                                double dot = 0.0;
                                for (int64_t i = lo; i < hi; ++i)
                                    dot += g.v[static_cast<size_t>(i)] * y.v[static_cast<size_t>(i)];
                                for (int64_t i = lo; i < hi; ++i) {
                                    dx.v[static_cast<size_t>(i)] +=
                                        y.v[static_cast<size_t>(i)] * (g.v[static_cast<size_t>(i)] - dot);
                                }
                            }
                        });
}

Value segment_sum(Value m, std::vector<int64_t> offsets) {
    const Tensor& M = m.val();
    validate_offsets(offsets, M.rows, "segment_sum");
    const int64_t n_seg = static_cast<int64_t>(offsets.size()) - 1;
    Tensor out(n_seg, M.cols);
    for (int64_t s = 0; s < n_seg; ++s) {
        double* orow = &out.v[static_cast<size_t>(s * M.cols)];
        for (int64_t i = offsets[s]; i < offsets[s + 1]; ++i) {
            const double* row = &M.v[static_cast<size_t>(i * M.cols)];
            for (int64_t j = 0; j < M.cols; ++j) orow[j] += row[j];
        }
    }
    Tape::check_finite(out, "segment_sum");
    Tape* t = m.tape;
    return t->make_node(std::move(out), t->needs_grad(m),
                        [m, offsets = std::move(offsets)](Tape& tp, const Tensor&, const Tensor& g) {
                            if (!tp.needs_grad(m)) return;
                            Tensor& dm = tp.grad_accum(m);
                            const int64_t n_seg = static_cast<int64_t>(offsets.size()) - 1;
                            for (int64_t s = 0; s < n_seg; ++s) {
                                const double* grow = &g.v[static_cast<size_t>(s * g.cols)];
                                for (int64_t i = offsets[s]; i < offsets[s + 1]; ++i) {
                                    double* drow = &dm.v[static_cast<size_t>(i * dm.cols)];
                                    for (int64_t j = 0; j < g.cols; ++j) drow[j] += grow[j];
                                }
                            }
                        });
}

static Value dropout_impl(Value a, std::vector<double> keep, const char* op) {
    const Tensor& A = a.val();
    Tensor out = A;
    for (int64_t i = 0; i < out.size(); ++i) out.v[i] *= keep[static_cast<size_t>(i)];
    Tape::check_finite(out, op);
    Tape* t = a.tape;
    return t->make_node(std::move(out), t->needs_grad(a),
                        [a, keep = std::move(keep)](Tape& tp, const Tensor&, const Tensor& g) {
                            if (!tp.needs_grad(a)) return;
                            Tensor& da = tp.grad_accum(a);
                            for (int64_t i = 0; i < g.size(); ++i)
                                da.v[i] += keep[static_cast<size_t>(i)] * g.v[i];
                        });
}

Value dropout(Value a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
    const Tensor& A = a.val();
    const double scale = 1.0 / (1.0 - p);
    std::vector<double> keep(static_cast<size_t>(A.size()));
    for (auto& k : keep) k = rand_unit(rng) < p ? 0.0 : scale;
    return dropout_impl(a, std::move(keep), "dropout");
}

Value dropout_rows(Value a, double p, const std::vector<uint8_t>& eligible, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout_rows: p must be in [0,1)");
    const Tensor& A = a.val();
    if (static_cast<int64_t>(eligible.size()) != A.rows)
        throw std::invalid_argument("dropout_rows: eligibility mask size mismatch");
    const double scale = 1.0 / (1.0 - p);
    std::vector<double> keep(static_cast<size_t>(A.size()), 1.0);
    for (int64_t i = 0; i < A.rows; ++i) {
        if (!eligible[static_cast<size_t>(i)]) continue;
        const double k = rand_unit(rng) < p ? 0.0 : scale;
        for (int64_t j = 0; j < A.cols; ++j) keep[static_cast<size_t>(i * A.cols + j)] = k;
    }
    return dropout_impl(a, std::move(keep), "dropout_rows");
}

Value sqdist(Value a, Value b) {
    const Tensor& A = a.val();
    const Tensor& B = b.val();
    if (A.cols != B.cols) throw std::invalid_argument("sqdist: dimensionality disagrees");
    Tensor out(A.rows, B.rows);
    for (int64_t i = 0; i < A.rows; ++i) {
        for (int64_t j = 0; j < B.rows; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < A.cols; ++k) {
                const double d = A.at(i, k) - B.at(j, k);
                acc += d * d;
            }
            out.at(i, j) = acc;
        }
    }
    Tape::check_finite(out, "sqdist");
    Tape* t = a.tape;
    const bool ng = t->needs_grad(a) || t->needs_grad(b);
    return t->make_node(std::move(out), ng, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
        const Tensor& A = a.val();
        const Tensor& B = b.val();
        const bool na = tp.needs_grad(a);
        const bool nb = tp.needs_grad(b);
        Tensor* da = na ? &tp.grad_accum(a) : nullptr;
        Tensor* db = nb ? &tp.grad_accum(b) : nullptr;
        for (int64_t i = 0; i < A.rows; ++i) {
            for (int64_t j = 0; j < B.rows; ++j) {
                const double g2 = 2.0 * g.at(i, j);
                if (g2 == 0.0) continue;
                for (int64_t k = 0; k < A.cols; ++k) {
                    const double d = A.at(i, k) - B.at(j, k);
                    if (na) da->at(i, k) += g2 * d;
                    if (nb) db->at(j, k) -= g2 * d;
                }
            }
        }
    });
}

Value cross_entropy(Value logits, const std::vector<int32_t>& targets) {
    const Tensor& L = logits.val();
    if (static_cast<int64_t>(targets.size()) != L.rows)
        throw std::invalid_argument("cross_entropy: one target per row required");
    int64_t n_active = 0;
    for (int32_t t : targets) {
        if (t >= 0) {
            if (t >= L.cols) throw std::invalid_argument("cross_entropy: target class out of range");
            ++n_active;
        }
    }
    if (n_active == 0) throw std::invalid_argument("cross_entropy: no unmasked rows");
    double loss = 0.0;
    for (int64_t i = 0; i < L.rows; ++i) {
        if (targets[static_cast<size_t>(i)] < 0) continue;
        double mx = L.at(i, 0);
        for (int64_t j = 1; j < L.cols; ++j) mx = std::max(mx, L.at(i, j));
        double denom = 0.0;
        for (int64_t j = 0; j < L.cols; ++j) denom += std::exp(L.at(i, j) - mx);
        loss += std::log(denom) - (L.at(i, targets[static_cast<size_t>(i)]) - mx);
    }
    loss /= static_cast<double>(n_active);
    Tensor out = Tensor::scalar(loss);
    Tape::check_finite(out, "cross_entropy");
    Tape* t = logits.tape;
    return t->make_node(std::move(out), t->needs_grad(logits),
                        [logits, targets, n_active](Tape& tp, const Tensor&, const Tensor& g) {
                            if (!tp.needs_grad(logits)) return;
                            Tensor& dl = tp.grad_accum(logits);
                            const Tensor& L = logits.val();
                            const double gs = g.v[0] / static_cast<double>(n_active);
                            for (int64_t i = 0; i < L.rows; ++i) {
                                const int32_t tgt = targets[static_cast<size_t>(i)];
                                if (tgt < 0) continue;
                                double mx = L.at(i, 0);
                                for (int64_t j = 1; j < L.cols; ++j) mx = std::max(mx, L.at(i, j));
                                double denom = 0.0;
                                for (int64_t j = 0; j < L.cols; ++j) denom += std::exp(L.at(i, j) - mx);
                                for (int64_t j = 0; j < L.cols; ++j) {
                                    const double p = std::exp(L.at(i, j) - mx) / denom;
                                    dl.at(i, j) += gs * (p - (j == tgt ? 1.0 : 0.0));
                                }
                            }
                        });
}

Value stop_gradient(Value t) { return t.tape->input(t.val()); }

Tensor softmax_rows(const Tensor& logits) {
    Tensor out(logits.rows, logits.cols);
    for (int64_t i = 0; i < logits.rows; ++i) {
        double mx = logits.at(i, 0);
        for (int64_t j = 1; j < logits.cols; ++j) mx = std::max(mx, logits.at(i, j));
        double denom = 0.0;
        for (int64_t j = 0; j < logits.cols; ++j) {
            const double e = std::exp(logits.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (int64_t j = 0; j < logits.cols; ++j) out.at(i, j) /= denom;
    }
    return out;
}

}  // namespace mgb::ad
