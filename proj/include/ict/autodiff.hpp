#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ict/params.hpp"
#include "ict/rng.hpp"
#include "ict/tensor.hpp"

namespace ict::ad {

class Tape;

// Node in the define-by-run graph. Owned by the Tape; never outlives it.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    bool grad_alloc = false;
    std::string param_name;  // nonempty only for parameter leaves
    std::function<void(Node&)> backprop;  // adds into parents' grads
    Tape* tape = nullptr;
    size_t id = 0;  // creation order; parents always precede children

    void accumulate(const Tensor& g);
    Tensor& ensure_grad();
};

using Var = Node*;

// Reverse-mode tape. One tape per forward/backward cycle; graphs are
// rebuilt per forward call and never cached.
class Tape {
public:
    Var leaf(Tensor value, bool requires_grad = false);
    // Parameter leaf: value copied from the store entry, gradient routed
    // back to the entry's name by collect_grads.
    Var param(const std::string& name, const Tensor& value);
    // All parameters of a store at once, in store order.
    std::vector<Var> params(const ParamStore& store);

    // Reverse pass from a scalar loss. Errors if called twice without reset.
    void backward(Var loss);

    // Gradients in store order; parameters not reached by the graph get
    // exact zeros.
    GradStore collect_grads(const ParamStore& store) const;

    void reset();

    size_t node_count() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

    Var alloc(Tensor value);

private:
    std::deque<Node> nodes_;
    std::vector<std::pair<std::string, Node*>> param_nodes_;
    bool backward_done_ = false;
};

// ---- operations ------------------------------------------------------
// Every op validates shapes (ContractError naming both shapes on
// mismatch) and records the node needed for the reverse pass.

Var add(Var a, Var b);                  // same shape
Var add_rowvec(Var a, Var bias);        // (R,C) + (C,) broadcast over rows
Var sub(Var a, Var b);
Var mul(Var a, Var b);                  // elementwise
Var scale(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var tanh_op(Var a);
Var gelu(Var a);
Var softmax_rows(Var a);                // softmax over last axis
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
Var embedding(Var table, const std::vector<int64_t>& ids);
Var slice_cols(Var a, int64_t start, int64_t len);
Var concat_cols(const std::vector<Var>& parts);
Var add_const(Var a, const Tensor& c);  // constant addend, no gradient
Var sum_all(Var a);
Var mean_all(Var a);
Var dropout(Var a, double p, Rng& rng); // inverted dropout; p=0 is identity

// Sum over (row, label) pairs of -log softmax(logits[row])[label].
// Fused log-sum-exp for stability.
Var cross_entropy_sum(Var logits, const std::vector<std::pair<int64_t, int64_t>>& row_labels);

// Numerically stable log softmax of one row, non-graph helper (used for
// candidate scoring where no gradient is needed).
std::vector<double> log_softmax_row(const double* row, int64_t n);

}  // namespace ict::ad
