#include "flowtune/train.hpp"

#include <cmath>
#include <stdexcept>

#include "flowtune/adapters.hpp"

namespace flowtune {

void Adam::step(const std::vector<Parameter*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: params/grads mismatch");
    ++t_;
    double lr = cfg_.lr;
    if (cfg_.warmup_steps > 0 && t_ < cfg_.warmup_steps) {
        lr = cfg_.lr * static_cast<double>(t_) / cfg_.warmup_steps;
    }
    if (lr == 0.0) return;  // bit-identical parameters by contract
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        const Tensor& g = grads[i];
        if (!p.value.same_shape(g)) throw std::invalid_argument("adam: grad shape mismatch for " + p.path);
        Slot& slot = slots_[p.path];
        if (slot.m.data.empty()) {
            slot.m = Tensor::zeros(p.value.shape);
            slot.v = Tensor::zeros(p.value.shape);
        }
        for (size_t j = 0; j < p.value.data.size(); ++j) {
            double gj = static_cast<double>(g.data[j]);
            double m = cfg_.beta1 * slot.m.data[j] + (1.0 - cfg_.beta1) * gj;
            double v = cfg_.beta2 * slot.v.data[j] + (1.0 - cfg_.beta2) * gj * gj;
            slot.m.data[j] = static_cast<real>(m);
            slot.v.data[j] = static_cast<real>(v);
            double update = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
            p.value.data[j] -= static_cast<real>(update);
        }
    }
}

std::vector<Parameter*> trainable_params(ParameterStore& store) {
    std::vector<Parameter*> out;
    for (auto& [path, p] : store.all()) {
        if (p.trainable) out.push_back(&p);
    }
    return out;
}

namespace {

// Shared batched acoustic step: per-example tapes, deterministic accumulation
// order, single optimizer update.
double acoustic_step(VectorFieldModel& model, std::span<const TrainingExample> batch, Adam& opt,
                     Rng& rng, const TrainOptions& options) {
    if (batch.empty()) throw std::invalid_argument("train step: empty batch");
    std::vector<Parameter*> params = trainable_params(model.store);
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (Parameter* p : params) grads.push_back(Tensor::zeros(p->value.shape));

    double total = 0;
    for (const TrainingExample& ex : batch) {
        double time = rng.uniform();
        Tensor x0 = rng.normal_tensor(ex.x1.shape);
        TrainingExample resolved = ex;
        if (resolved.mask.mode == MaskMode::span &&
            (resolved.mask.start_frac < 0 || resolved.mask.len_frac < 0)) {
            if (rng.uniform() < options.mask_all_prob) {
                resolved.mask.mode = MaskMode::all;
            } else {
                resolved.mask.len_frac = rng.uniform(options.span_len_min, options.span_len_max);
                resolved.mask.start_frac = rng.uniform(0.0, 1.0 - resolved.mask.len_frac);
            }
        }
        Tape t(true);
        Var loss = cfm_loss(model, t, resolved, time, x0, options.policy, options.path, &rng);
        double lv = static_cast<double>(t.val(loss).data[0]);
        if (!std::isfinite(lv)) {
            throw std::runtime_error("train step aborted: non-finite loss");
        }
        total += lv;
        t.backward(loss);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor g = t.grad_or_zero(t.param(*params[i]));
            for (size_t j = 0; j < g.data.size(); ++j) grads[i].data[j] += g.data[j];
        }
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grads) {
        for (auto& v : g.data) v = static_cast<real>(v * inv);
    }
    opt.step(params, grads);
    return total * inv;
}

}  // namespace

double pretrain_step(VectorFieldModel& model, std::span<const TrainingExample> batch, Adam& opt,
                     Rng& rng, const TrainOptions& options) {
    return acoustic_step(model, batch, opt, rng, options);
}

double finetune_step(VectorFieldModel& model, std::span<const TrainingExample> batch, Adam& opt,
                     Rng& rng, const TrainOptions& options) {
    if (!model.has_adapters()) {
        throw std::invalid_argument("finetune_step: adapters must be injected first");
    }
    return acoustic_step(model, batch, opt, rng, options);
}

double duration_train_step(DurationModel& model, std::span<const DurationExample> batch, Adam& opt,
                           Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("duration step: empty batch");
    std::vector<Parameter*> params = trainable_params(model.store);
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (Parameter* p : params) grads.push_back(Tensor::zeros(p->value.shape));

    double total = 0;
    for (const DurationExample& ex : batch) {
        Tape t(true);
        std::optional<Var> cond;
        if (!ex.cond_tokens.empty()) {
            if (!model.has_adapters()) {
                throw std::invalid_argument("duration step: example carries z_f without adapters");
            }
            cond = encode_condition(*model.adapters, t, ex.cond_tokens);
        }
        Var raw = model.forward_raw(t, ex.symbols, cond, &rng);
        Var loss = duration_loss(t, raw, ex.gold);
        double lv = static_cast<double>(t.val(loss).data[0]);
        if (!std::isfinite(lv)) throw std::runtime_error("duration step aborted: non-finite loss");
        total += lv;
        t.backward(loss);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor g = t.grad_or_zero(t.param(*params[i]));
            for (size_t j = 0; j < g.data.size(); ++j) grads[i].data[j] += g.data[j];
        }
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grads) {
        for (auto& v : g.data) v = static_cast<real>(v * inv);
    }
    opt.step(params, grads);
    return total * inv;
}

}  // namespace flowtune
