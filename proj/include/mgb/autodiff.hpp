#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mgb/rng.hpp"
#include "mgb/tensor.hpp"

namespace mgb::ad {

class Tape;

// Lightweight handle to a node on a tape.
struct Value {
    Tape* tape = nullptr;
    int32_t idx = -1;

    const Tensor& val() const;
    bool valid() const { return tape != nullptr && idx >= 0; }
};

// Record of a differentiable computation. Nodes are appended in topological
// order; backward() visits them in exact reverse order. A tape is confined to
// one thread; independent episodes build independent tapes.
class Tape {
  public:
    // Backward closure of an op: receives the op's output value and output
    // gradient and accumulates into the parents' buffers via grad_accum().
    using BackwardFn = std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

    // Leaf insertion. Parameters require gradients, plain inputs do not.
    Value param(Tensor value);
    Value input(Tensor value);

    // Interior node insertion; used by the op implementations.
    Value make_node(Tensor value, bool needs_grad, BackwardFn bw);

    const Tensor& value_of(Value v) const { return nodes_[v.idx].value; }
    bool needs_grad(Value v) const { return nodes_[v.idx].needs_grad; }

    // Gradient of the most recent backward() pass w.r.t. a node.
    const Tensor& grad_of(Value v) const;
    // Accumulation buffer (allocated zero on first access).
    Tensor& grad_accum(Value v);

    // Accumulates d(loss)/d(leaf) for every parameter leaf. loss must be
    // scalar. A second backward on the same tape without reset is an error.
    void backward(Value loss);

    void reset();

    size_t size() const { return nodes_.size(); }

    static void check_finite(const Tensor& t, const char* op);

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily, only when reached by backward
        BackwardFn backward;
        bool needs_grad = false;
        bool is_param = false;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// ---- forward operations -----------------------------------------------

Value matmul(Value a, Value b);
Value add(Value a, Value b);           // same shape
Value add_rowvec(Value m, Value row);  // m: n x c, row: 1 x c
Value mul(Value a, Value b);           // elementwise
Value scale(Value a, double s);
Value relu(Value a);
Value leaky_relu(Value a, double slope);
Value concat_cols(Value a, Value b);  // concatenation along the last axis

// out.row(i) = a.row(idx[i]); backward scatter-adds.
Value gather_rows(Value a, std::vector<int64_t> idx);
// out.row(i) = m.row(i) * w(i,0); w is a column vector.
Value scale_rows(Value m, Value w);

// x is a column vector of per-edge values grouped into contiguous segments by
// `offsets` (size S+1). Softmax is taken within each segment, with the
// per-segment max subtracted before exponentiation. Outputs in each segment
// sum to 1.
Value segment_softmax(Value x, std::vector<int64_t> offsets);
// Sums rows of m within each contiguous segment: out has S rows.
Value segment_sum(Value m, std::vector<int64_t> offsets);

// Inverted dropout: keep with probability 1-p and rescale by 1/(1-p).
// Callers skip the op entirely in evaluation mode.
Value dropout(Value a, double p, Rng& rng);
// Node-wise dropout: zeroes whole rows, restricted to eligible rows.
Value dropout_rows(Value a, double p, const std::vector<uint8_t>& eligible, Rng& rng);

// Pairwise squared Euclidean distances: a is n x d, b is m x d, out n x m.
Value sqdist(Value a, Value b);

// Mean negative log-softmax over rows whose target is >= 0. Rows with
// target -1 are masked out. Returns a scalar.
Value cross_entropy(Value logits, const std::vector<int32_t>& targets);

// Value identical, gradient flow severed.
Value stop_gradient(Value t);

// Forward-only helper (not taped): row-wise softmax of a plain tensor.
Tensor softmax_rows(const Tensor& logits);

}  // namespace mgb::ad
