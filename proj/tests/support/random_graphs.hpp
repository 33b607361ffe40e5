#pragma once

// Randomized compositions of every tape primitive, checked against the
// finite-difference oracle. Shared between the unit suite and acceptance.

#include <functional>
#include <string>
#include <vector>

#include "flowtune/grad_check.hpp"
#include "flowtune/rng.hpp"
#include "flowtune/tape.hpp"

namespace flowtune::testsupport {

// Parameter layout: [0] main (3,4), [1] W (4,4), [2] W2 (4,4), [3] P3 (3,3),
// [4] v (4), [5] gain (4), [6] bias (4), [7] scalar (1).
inline std::vector<Tensor> random_graph_params(Rng& rng) {
    auto draw = [&](std::vector<int> shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (auto& x : t.data) {
            double u = rng.uniform(0.5, 2.0);
            x = static_cast<real>(rng.uniform() < 0.5 ? -u : u);  // keep away from relu kink
        }
        return t;
    };
    std::vector<Tensor> p;
    p.push_back(draw({3, 4}));
    p.push_back(draw({4, 4}));
    p.push_back(draw({4, 4}));
    p.push_back(draw({3, 3}));
    p.push_back(draw({4}));
    p.push_back(draw({4}));
    p.push_back(draw({4}));
    p.push_back(draw({1}));
    return p;
}

// Ops keep the working value at shape (3,4) so they can be chained freely.
inline const std::vector<std::string>& graph_op_menu() {
    static const std::vector<std::string> menu = {
        "add",    "sub",       "mul",       "add_vec",   "mul_vec",  "mul_scalar",
        "matmul", "matmul_nt", "matmul_tn", "relu",      "softmax",  "layer_norm",
        "scale",  "slice_rows", "slice_cols"};
    return menu;
}

inline Var apply_graph_op(Tape& t, const std::string& op, Var cur, std::span<const Var> p) {
    if (op == "add") return t.add(cur, p[0]);
    if (op == "sub") return t.sub(cur, p[0]);
    if (op == "mul") return t.mul(cur, p[0]);
    if (op == "add_vec") return t.add(cur, p[4]);
    if (op == "mul_vec") return t.mul(cur, p[4]);
    if (op == "mul_scalar") return t.mul(cur, p[7]);
    if (op == "matmul") return t.matmul(cur, p[1]);
    if (op == "matmul_nt") return t.matmul_nt(cur, p[2]);
    if (op == "matmul_tn") return t.matmul_tn(p[3], cur);
    if (op == "relu") return t.relu(cur);
    if (op == "softmax") return t.softmax_rows(cur);
    if (op == "layer_norm") return t.layer_norm(cur, p[5], p[6]);
    if (op == "scale") return t.scale(cur, 0.75);
    if (op == "slice_rows")
        return t.concat({t.slice(cur, 0, 1, 2), t.slice(cur, 0, 0, 1)}, 0);
    if (op == "slice_cols")
        return t.concat({t.slice(cur, 1, 2, 2), t.slice(cur, 1, 0, 2)}, 1);
    throw std::invalid_argument("unknown graph op " + op);
}

// Deterministic composition for a given index; guarantees that as the index
// sweeps 0..n the first op cycles through the whole menu.
inline TapeFn make_random_graph(int index, int depth = 7) {
    return [index, depth](Tape& t, std::span<const Var> p) -> Var {
        const auto& menu = graph_op_menu();
        Rng rng(derive_seed(0xC0FFEE, static_cast<uint64_t>(index)));
        Var cur = p[0];
        cur = apply_graph_op(t, menu[static_cast<size_t>(index) % menu.size()], cur, p);
        for (int i = 1; i < depth; ++i) {
            const std::string& op = menu[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(menu.size()) - 1))];
            cur = apply_graph_op(t, op, cur, p);
            if (op == "softmax") cur = t.scale(cur, 3.0);  // keep values away from saturation
        }
        // fold the mean with sum so both reductions get exercised
        return t.add(t.mean(cur), t.scale(t.sum(cur), 0.01));
    };
}

// Relative error with an absolute floor; the standard gradient-check metric.
inline double grad_rel_err(const Tensor& a, const Tensor& b) {
    double worst = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double den = std::max({1.0, std::abs(static_cast<double>(a.data[i])),
                               std::abs(static_cast<double>(b.data[i]))});
        worst = std::max(worst, std::abs(static_cast<double>(a.data[i] - b.data[i])) / den);
    }
    return worst;
}

}  // namespace flowtune::testsupport
