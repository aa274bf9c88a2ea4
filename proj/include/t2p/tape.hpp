#pragma once

#include <array>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "t2p/array.hpp"
#include "t2p/rng.hpp"

namespace t2p {

class ParameterStore;

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

// One executed differentiable operation. Nodes live on the tape in execution
// order; the reverse sweep visits each at most once. Gradient buffers are
// allocated on first write so forward-only passes never pay for them.
struct Node {
    Array owned;                  // value storage when the node owns it
    const Array* val = nullptr;   // owned or external (parameter/input refs)
    Array grad;
    std::function<void()> back;   // empty for leaves
    const char* op = "leaf";
    std::string param;            // parameter name for parameter leaves
    bool grad_flows = false;

    const Array& v() const { return *val; }
    Array& gbuf() {
        if (grad.data.size() != static_cast<size_t>(v().size())) grad = Array(v().shape);
        return grad;
    }
};

using Var = Node*;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // When set, every op validates its output for NaN/inf and throws a
    // NumericalError naming the first offending operation.
    void set_check_numerics(bool on) { check_numerics_ = on; }

    // --- leaves ---
    Var input(Array v);
    Var input_ref(const Array* v);  // caller keeps v alive for the tape's lifetime
    Var param(ParameterStore& store, const std::string& name);

    // --- elementwise ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var affine(Var a, double mul, double shift);  // mul*x + shift
    Var relu(Var a);
    Var sigmoid(Var a);
    Var mul_const(Var a, const Array& c);

    // --- shape ---
    Var reshape(Var a, std::vector<int> shape);
    Var permute(Var a, std::vector<int> axes);
    Var concat(const std::vector<Var>& xs, int axis);
    Var slice(Var a, int axis, int begin, int end);  // keeps axis
    Var index_axis0(Var a, int i);                   // drops axis 0
    Var gather_axis0(Var a, std::vector<int> idx);
    Var expand_axis(Var a, int axis, int n);  // insert broadcast axis
    Var mean_axis(Var a, int axis);
    Var cumsum_axis(Var a, int axis);  // running sum along one axis
    Var sum_all(Var a);

    // --- neural ---
    Var linear(Var x, Var w, Var b);  // last-axis x·W + b, b may be null
    Var matconst(Var x, const Array& m, bool transpose);  // last-axis constant matmul
    Var bmm(Var a, Var b, bool trans_b);  // batched [..,m,k]x[..,k,n] or [..,n,k]^T
    Var layer_norm(Var x, Var gamma, Var beta, double eps);
    Var softmax_masked(Var logits, const Array* mask01);  // fully-masked rows -> zeros
    Var dropout(Var x, double rate, Rng& rng, bool training);

    // Attention over variable neighbor sets: q (R,T,dq), k/v (P,T,dq / P,T,dv),
    // seg_of_pair[p] names the receiving row of pair p. Empty segments give a
    // zero message. Returns (R,T,dv).
    Var segmented_attention(Var q, Var k, Var v, const std::vector<int>& seg_of_pair,
                            int n_receivers, double scale);

    // Per-agent frame change: x has agent axis 1 and a trailing xyz axis.
    // y = Rot_n x (+ shift_n), Rot_n = rot[n] or its transpose.
    Var per_agent_affine3(Var x, const std::vector<Mat3>& rot, bool transpose,
                          const std::vector<Vec3>* shift);

    // Sum of Euclidean norms over trailing-axis vectors of (pred - target).
    Var l2_to_target(Var pred, const Array& target);

    // --- backward ---
    // Seeds d(loss)=1 and sweeps the tape in reverse execution order. Loss must
    // be scalar. Leaf gradients stay on the tape afterwards.
    void backward(Var loss);
    // Adds parameter-leaf gradients into the store (single-writer step).
    void accumulate_param_grads(ParameterStore& store) const;
    // Same, but into a local map keyed by parameter name (for batch workers).
    void accumulate_param_grads(std::map<std::string, Array>& sink) const;

    size_t node_count() const { return nodes_.size(); }

private:
    Var fresh(const char* op, std::vector<int> shape);
    Var alias(const char* op, const Array* external);
    void finish(Var n);  // numeric checks

    std::deque<Node> nodes_;
    bool check_numerics_ = false;
};

// Gradient-check helper shared by the test suites: central finite difference
// on one coordinate of a parameter through an arbitrary scalar forward.
double central_difference(const std::function<double()>& eval, double* slot, double h);

}  // namespace t2p
