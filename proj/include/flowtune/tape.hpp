#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowtune/tensor.hpp"

namespace flowtune {

// A named model parameter. `trainable` is the frozen/trainable partition bit;
// the optimizer and the tape both respect it.
struct Parameter {
    std::string path;
    Tensor value;
    bool trainable = true;
};

class Tape;

// Handle into a tape. Cheap to copy; only valid for the tape that made it.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

// Define-by-run reverse-mode tape. Rebuilt per forward pass. Supported
// primitives: add, sub, mul (elementwise, suffix broadcast), matmul (nn/nt/tn),
// relu, softmax, layer_norm, sum/mean reductions, concat, slice, scale.
class Tape {
public:
    explicit Tape(bool training = false) : training_(training) { nodes_.reserve(512); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool training() const { return training_; }

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    // Cached: the same Parameter maps to one leaf per tape, so gradients from
    // multiple uses accumulate on a single node.
    Var param(Parameter& p);

    const Tensor& val(Var v) const { return node_at(v).value; }
    // Zero tensor of the value's shape when the node was never reached.
    Tensor grad_or_zero(Var v) const;

    // Reverse sweep from a scalar output. Each node is visited exactly once.
    void backward(Var scalar_out);

    size_t size() const { return nodes_.size(); }

    // --- primitives ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var matmul(Var a, Var b);     // (m,k) x (k,n)
    Var matmul_nt(Var a, Var b);  // (m,k) x (n,k) -> (m,n)
    Var matmul_tn(Var a, Var b);  // (k,m) x (k,n) -> (m,n)
    Var relu(Var a);
    Var softmax_rows(Var a);
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    Var sum(Var a);
    Var mean(Var a);
    Var concat(const std::vector<Var>& parts, int axis);
    Var slice(Var a, int axis, int start, int len);

private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily during backward
        bool requires_grad = false;
        bool grad_live = false;
        std::vector<int> inputs;
        std::function<void(Tape&, int)> back;  // arg: own node id
    };

    Node& node_at(Var v) {
        check_var(v);
        return nodes_[static_cast<size_t>(v.id)];
    }
    const Node& node_at(Var v) const {
        check_var(v);
        return nodes_[static_cast<size_t>(v.id)];
    }
    void check_var(Var v) const;

    Node& n(int id) { return nodes_[static_cast<size_t>(id)]; }
    Tensor& g(int id);  // grad buffer, allocated on first touch
    bool wants_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    Var push(Tensor value, std::vector<int> inputs, std::function<void(Tape&, int)> back);

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_leaves_;
    bool training_ = false;
};

// Operator sugar for readable model code.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator*(Var a, double c) { return a.tape->scale(a, c); }
inline Var operator*(double c, Var a) { return a.tape->scale(a, c); }

}  // namespace flowtune
