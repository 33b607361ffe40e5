#include "flowtune/grad_check.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace flowtune {

namespace {

double eval_plain(const TapeFn& f, const std::vector<Tensor>& params) {
    Tape tape(false);
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.leaf(p, false));
    Var out = f(tape, vars);
    const Tensor& v = tape.val(out);
    if (v.numel() != 1) {
        throw std::invalid_argument("gradient check: f must be scalar-valued, got " + v.shape_str());
    }
    return static_cast<double>(v.data[0]);
}

}  // namespace

std::pair<double, std::vector<Tensor>> evaluate_with_gradients(const TapeFn& f,
                                                               const std::vector<Tensor>& params) {
    Tape tape(true);
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
    Var out = f(tape, vars);
    const Tensor& v = tape.val(out);
    if (v.numel() != 1) {
        throw std::invalid_argument("evaluate_with_gradients: f must be scalar-valued, got " +
                                    v.shape_str());
    }
    tape.backward(out);
    std::vector<Tensor> grads;
    grads.reserve(vars.size());
    for (Var p : vars) grads.push_back(tape.grad_or_zero(p));
    return {static_cast<double>(v.data[0]), std::move(grads)};
}

std::vector<Tensor> finite_difference_gradients(const TapeFn& f, const std::vector<Tensor>& params,
                                                double step) {
    if (!(step > 0)) throw std::invalid_argument("finite_difference_gradients: step must be > 0");
    std::vector<Tensor> work = params;
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (size_t pi = 0; pi < work.size(); ++pi) {
        Tensor g = Tensor::zeros(work[pi].shape);
        for (size_t i = 0; i < work[pi].data.size(); ++i) {
            real orig = work[pi].data[i];
            work[pi].data[i] = orig + static_cast<real>(step);
            double hi = eval_plain(f, work);
            work[pi].data[i] = orig - static_cast<real>(step);
            double lo = eval_plain(f, work);
            work[pi].data[i] = orig;
            if (!std::isfinite(hi) || !std::isfinite(lo)) {
                throw std::runtime_error("finite_difference_gradients: non-finite f at param " +
                                         std::to_string(pi) + " coord " + std::to_string(i));
            }
            g.data[i] = static_cast<real>((hi - lo) / (2.0 * step));
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

}  // namespace flowtune
