#include "flowtune/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "flowtune/adapters.hpp"
#include "flowtune/flow.hpp"

namespace flowtune {

std::string solver_method_name(SolverMethod m) {
    return m == SolverMethod::euler ? "euler" : "midpoint";
}

SolverMethod solver_method_from(const std::string& name) {
    if (name == "euler") return SolverMethod::euler;
    if (name == "midpoint") return SolverMethod::midpoint;
    throw std::invalid_argument("unknown solver method: " + name);
}

void SolverConfig::validate() const {
    if (n_steps < 1) throw std::invalid_argument("solver: n_steps must be >= 1");
}

namespace {

void axpy_inplace(Tensor& x, double h, const Tensor& v) {
    for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += static_cast<real>(h) * v.data[i];
}

}  // namespace

Tensor integrate_field(const FieldFn& field, Tensor x0, const SolverConfig& solver) {
    solver.validate();
    double h = 1.0 / solver.n_steps;
    Tensor x = std::move(x0);
    for (int k = 0; k < solver.n_steps; ++k) {
        double t = k * h;
        if (solver.method == SolverMethod::euler) {
            Tensor v = field(x, t);
            axpy_inplace(x, h, v);
        } else {
            Tensor v1 = field(x, t);
            Tensor mid = x;
            axpy_inplace(mid, h / 2.0, v1);
            Tensor v2 = field(mid, t + h / 2.0);
            axpy_inplace(x, h, v2);
        }
        if (!all_finite(x)) {
            throw std::runtime_error("integrate: non-finite state at step " + std::to_string(k));
        }
    }
    return x;
}

Tensor integrate(const VectorFieldModel& model, const Tensor& x0, const FixedContext& ctx,
                 const SolverConfig& solver) {
    int frames = x0.rows();
    if (ctx.masked.rows() != frames || static_cast<int>(ctx.frame_symbols.size()) != frames) {
        throw std::invalid_argument("integrate: x0 length does not match context");
    }
    FieldFn field = [&](const Tensor& x, double t) -> Tensor {
        Tape tape(false);
        Var z_p = model.embed_frames(tape, ctx.frame_symbols);
        Var assembled = model.assemble(tape, t, z_p, tape.constant(ctx.masked), tape.constant(x));
        std::optional<Var> cond;
        if (ctx.encoded_cond.rows() > 0) cond = tape.constant(ctx.encoded_cond);
        Var v = backbone_forward(model, tape, assembled, cond, nullptr);
        return tape.val(v);
    };
    return integrate_field(field, x0, solver);
}

void GenerationRequest::validate(int frames) const {
    if (symbols.empty()) throw std::invalid_argument("generation request: empty symbol sequence");
    if (symbols.size() != durations.size()) {
        throw std::invalid_argument("generation request: symbols/durations length mismatch");
    }
    solver.validate();
    if (prompt.has_value() && prompt->rows() >= frames) {
        throw std::invalid_argument("generation request: prompt length must be < total length");
    }
}

Tensor generate(const VectorFieldModel& model, const GenerationRequest& req, Rng& rng) {
    std::vector<int> frame_symbols = expand_symbol_ids(req.symbols, req.durations);
    int frames = static_cast<int>(frame_symbols.size());
    req.validate(frames);
    int fd = model.cfg.feature_dim;
    if (!req.cond_tokens.empty() && !model.has_adapters()) {
        throw std::invalid_argument("generate: z_f given but checkpoint has no adapters");
    }

    FixedContext ctx;
    ctx.frame_symbols = std::move(frame_symbols);
    if (req.prompt.has_value()) {
        const Tensor& prompt = *req.prompt;
        if (prompt.cols() != fd) throw std::invalid_argument("generate: prompt feature_dim mismatch");
        Tensor x1 = Tensor::zeros({frames, fd});
        std::vector<bool> mask(static_cast<size_t>(frames), true);
        for (int r = 0; r < prompt.rows(); ++r) {
            mask[static_cast<size_t>(r)] = false;
            for (int c = 0; c < fd; ++c) x1.at(r, c) = prompt.at(r, c);
        }
        ctx.masked = apply_mask_frames(x1, mask).masked;
    } else {
        std::vector<bool> mask(static_cast<size_t>(frames), true);
        ctx.masked = apply_mask_frames(Tensor::zeros({frames, fd}), mask).masked;
    }

    if (!req.cond_tokens.empty()) {
        Tape t(false);
        ctx.encoded_cond = t.val(encode_condition(*model.adapters, t, req.cond_tokens));
    } else {
        ctx.encoded_cond = Tensor::zeros({0, model.cfg.model_dim});
    }

    Tensor x0 = rng.normal_tensor({frames, fd});
    Tensor out = integrate(model, x0, ctx, req.solver);

    if (req.prompt.has_value()) {
        const Tensor& prompt = *req.prompt;
        for (int r = 0; r < prompt.rows(); ++r) {
            for (int c = 0; c < fd; ++c) out.at(r, c) = prompt.at(r, c);
        }
    }
    return out;
}

}  // namespace flowtune
