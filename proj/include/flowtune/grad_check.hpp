#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "flowtune/tape.hpp"

namespace flowtune {

// Scalar-valued function assembled from tape primitives.
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

// Runs f on a fresh tape with every entry of `params` as a differentiable
// leaf. Returns f(params) and one gradient per parameter; parameters not
// reachable from the output come back as exact zeros.
std::pair<double, std::vector<Tensor>> evaluate_with_gradients(const TapeFn& f,
                                                               const std::vector<Tensor>& params);

// Central differences (f(p+eps e_i) - f(p-eps e_i)) / (2 eps), coordinate by
// coordinate. The oracle for the reverse-mode path: it never touches backward().
std::vector<Tensor> finite_difference_gradients(const TapeFn& f, const std::vector<Tensor>& params,
                                                double step);

}  // namespace flowtune
