#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "flowtune/model.hpp"
#include "flowtune/rng.hpp"

namespace flowtune {

enum class SolverMethod { euler, midpoint };

std::string solver_method_name(SolverMethod m);
SolverMethod solver_method_from(const std::string& name);

struct SolverConfig {
    SolverMethod method = SolverMethod::midpoint;
    int n_steps = 32;
    void validate() const;
};

// Generic explicit integrator over [0,1] with step h = 1/n_steps; also the
// test hook for convergence-order checks on analytic fields.
using FieldFn = std::function<Tensor(const Tensor& x, double t)>;
Tensor integrate_field(const FieldFn& field, Tensor x0, const SolverConfig& solver);

// Everything held constant while the state evolves.
struct FixedContext {
    Tensor masked;                    // (frames, feature_dim + 1)
    std::vector<int> frame_symbols;   // aligned z_p ids
    Tensor encoded_cond;              // (n_tokens, model_dim); 0 rows when absent
};

// phi_1(x0) by explicit time stepping of the model field. Aborts with the
// step index if the state goes non-finite.
Tensor integrate(const VectorFieldModel& model, const Tensor& x0, const FixedContext& ctx,
                 const SolverConfig& solver);

struct GenerationRequest {
    std::vector<int> symbols;
    std::vector<int> durations;        // aligned z_p = symbols expanded by durations
    std::vector<int> cond_tokens;      // z_f; empty for unconditioned generation
    std::optional<Tensor> prompt;      // prefix feature frames; absent = zero-shot
    SolverConfig solver;
    void validate(int frames) const;
};

// Draws x0 ~ N(0, I) from rng and integrates. Zero-shot: fully masked context.
// Prompted: prompt frames unmasked, output prompt region replaced verbatim.
Tensor generate(const VectorFieldModel& model, const GenerationRequest& req, Rng& rng);

}  // namespace flowtune
