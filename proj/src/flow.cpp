#include "flowtune/flow.hpp"

#include <cmath>
#include <stdexcept>

#include "flowtune/adapters.hpp"

namespace flowtune {

void PathParams::validate() const {
    if (!(sigma_min > 0.0 && sigma_min < 1.0)) {
        throw std::invalid_argument("path params: sigma_min must lie in (0, 1)");
    }
}

Tensor conditional_path(const Tensor& x0, const Tensor& x1, double t, const PathParams& params) {
    params.validate();
    if (!x0.same_shape(x1)) {
        throw std::invalid_argument("conditional_path: shape mismatch " + x0.shape_str() + " vs " +
                                    x1.shape_str());
    }
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("conditional_path: t must lie in [0, 1]");
    double a = 1.0 - (1.0 - params.sigma_min) * t;
    Tensor out = Tensor::zeros(x0.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = static_cast<real>(a) * x0.data[i] + static_cast<real>(t) * x1.data[i];
    }
    return out;
}

Tensor target_field(const Tensor& x0, const Tensor& x1, const PathParams& params) {
    params.validate();
    if (!x0.same_shape(x1)) {
        throw std::invalid_argument("target_field: shape mismatch " + x0.shape_str() + " vs " +
                                    x1.shape_str());
    }
    double a = 1.0 - params.sigma_min;
    Tensor out = Tensor::zeros(x0.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = x1.data[i] - static_cast<real>(a) * x0.data[i];
    }
    return out;
}

MaskResult apply_mask(const Tensor& x1, const MaskSpec& spec, Rng& rng) {
    int frames = x1.rows();
    std::vector<bool> mask(static_cast<size_t>(frames), false);
    switch (spec.mode) {
        case MaskMode::all:
            mask.assign(static_cast<size_t>(frames), true);
            break;
        case MaskMode::none:
            break;
        case MaskMode::span: {
            double len_frac = spec.len_frac;
            double start_frac = spec.start_frac;
            if (len_frac < 0) len_frac = rng.uniform(0.3, 0.8);
            if (start_frac < 0) start_frac = rng.uniform(0.0, 1.0 - len_frac);
            if (len_frac > 1.0 || start_frac > 1.0) {
                throw std::invalid_argument("apply_mask: span fractions must lie in [0, 1]");
            }
            int start = static_cast<int>(std::floor(start_frac * frames));
            int count = static_cast<int>(std::floor(len_frac * frames));
            for (int i = start; i < std::min(frames, start + count); ++i) {
                mask[static_cast<size_t>(i)] = true;
            }
            break;
        }
    }
    std::vector<bool> m = mask;
    return apply_mask_frames(x1, m);
}

MaskResult apply_mask_frames(const Tensor& x1, const std::vector<bool>& mask) {
    int frames = x1.rows();
    int fd = x1.cols();
    if (static_cast<int>(mask.size()) != frames) {
        throw std::invalid_argument("apply_mask_frames: mask length mismatch");
    }
    MaskResult out;
    out.mask = mask;
    out.masked = Tensor::zeros({frames, fd + 1});
    for (int r = 0; r < frames; ++r) {
        if (mask[static_cast<size_t>(r)]) {
            out.masked.at(r, fd) = 1;  // fill value 0, indicator channel set
        } else {
            for (int c = 0; c < fd; ++c) out.masked.at(r, c) = x1.at(r, c);
        }
    }
    return out;
}

Var cfm_loss(const VectorFieldModel& model, Tape& t, const TrainingExample& ex, double time,
             const Tensor& x0, LossMaskPolicy policy, const PathParams& params, Rng* rng) {
    if (time < 0.0 || time > 1.0) throw std::invalid_argument("cfm_loss: t must lie in [0, 1]");
    if (!x0.same_shape(ex.x1)) throw std::invalid_argument("cfm_loss: x0 shape must match x1");
    int frames = ex.x1.rows();
    if (static_cast<int>(ex.frame_symbols.size()) != frames) {
        throw std::invalid_argument("cfm_loss: frame_symbols length must match x1 frames");
    }
    if (frames == 0) throw std::invalid_argument("cfm_loss: empty example");

    MaskResult mr;
    if (ex.mask.mode == MaskMode::span && (ex.mask.start_frac < 0 || ex.mask.len_frac < 0)) {
        if (rng == nullptr) throw std::invalid_argument("cfm_loss: unresolved mask spec needs an rng");
        mr = apply_mask(ex.x1, ex.mask, *rng);
    } else {
        Rng unused(0);
        mr = apply_mask(ex.x1, ex.mask, unused);
    }

    Var z_p = model.embed_frames(t, ex.frame_symbols);
    Var assembled = model.assemble(t, time, z_p, t.constant(mr.masked),
                                   t.constant(conditional_path(x0, ex.x1, time, params)));
    std::optional<Var> cond;
    if (!ex.cond_tokens.empty()) {
        if (!model.has_adapters()) {
            throw std::invalid_argument("cfm_loss: example carries z_f but model has no adapters");
        }
        cond = encode_condition(*model.adapters, t, ex.cond_tokens);
    }
    Var v = backbone_forward(model, t, assembled, cond, rng);

    Var diff = t.sub(v, t.constant(target_field(x0, ex.x1, params)));

    int fd = ex.x1.cols();
    int selected = 0;
    for (bool b : mr.mask) selected += b ? 1 : 0;
    bool use_all = policy == LossMaskPolicy::all_frames || selected == 0;
    Tensor sel = Tensor::zeros({frames, fd});
    int count = use_all ? frames : selected;
    for (int r = 0; r < frames; ++r) {
        if (use_all || mr.mask[static_cast<size_t>(r)]) {
            for (int c = 0; c < fd; ++c) sel.at(r, c) = 1;
        }
    }
    Var sq = t.mul(t.mul(diff, diff), t.constant(std::move(sel)));
    return t.scale(t.sum(sq), 1.0 / (static_cast<double>(count) * fd));
}

}  // namespace flowtune
