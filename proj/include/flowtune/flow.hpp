#pragma once

#include <vector>

#include "flowtune/model.hpp"
#include "flowtune/rng.hpp"

namespace flowtune {

struct PathParams {
    double sigma_min = 1e-5;
    void validate() const;
};

enum class MaskMode { all, span, none };

// Span fractions < 0 are sampled from the rng passed to apply_mask.
struct MaskSpec {
    MaskMode mode = MaskMode::all;
    double start_frac = -1;
    double len_frac = -1;
};

struct TrainingExample {
    Tensor x1;                        // (frames, feature_dim)
    std::vector<int> frame_symbols;   // aligned symbol id per frame
    std::vector<int> cond_tokens;     // z_f; empty during pre-training
    MaskSpec mask;
};

// psi_t(x0, x1) = (1 - (1 - sigma_min) t) x0 + t x1
Tensor conditional_path(const Tensor& x0, const Tensor& x1, double t, const PathParams& params);

// x1 - (1 - sigma_min) x0; independent of t
Tensor target_field(const Tensor& x0, const Tensor& x1, const PathParams& params);

struct MaskResult {
    Tensor masked;            // (frames, feature_dim + 1): filled features + indicator channel
    std::vector<bool> mask;   // true = masked
};

MaskResult apply_mask(const Tensor& x1, const MaskSpec& spec, Rng& rng);

// Mask with explicit per-frame choice (prompted generation contexts).
MaskResult apply_mask_frames(const Tensor& x1, const std::vector<bool>& mask);

enum class LossMaskPolicy { masked_frames, all_frames };

// Mean squared error between the predicted field and target_field, averaged
// over selected frames and feature dimensions. If the policy selects no frame
// the loss falls back to all frames.
Var cfm_loss(const VectorFieldModel& model, Tape& t, const TrainingExample& ex, double time,
             const Tensor& x0, LossMaskPolicy policy, const PathParams& params, Rng* rng = nullptr);

}  // namespace flowtune
