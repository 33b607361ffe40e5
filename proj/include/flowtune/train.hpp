#pragma once

#include <span>
#include <vector>

#include "flowtune/flow.hpp"
#include "flowtune/model.hpp"

namespace flowtune {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    int warmup_steps = 1000;  // linear warmup
};

class Adam {
public:
    explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

    // One update over aligned (params, grads). lr of exactly 0 leaves
    // parameters bit-identical.
    void step(const std::vector<Parameter*>& params, const std::vector<Tensor>& grads);

    int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Slot {
        Tensor m, v;
    };
    std::map<std::string, Slot> slots_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

struct TrainOptions {
    PathParams path;
    LossMaskPolicy policy = LossMaskPolicy::masked_frames;
    double mask_all_prob = 0.5;       // footnote-style "all or parts" masking
    double span_len_min = 0.3;
    double span_len_max = 0.8;
};

std::vector<Parameter*> trainable_params(ParameterStore& store);

// Samples t ~ U[0,1] and x0 ~ N(0,I) per example, averages the flow-matching
// loss over the batch and applies one optimizer update to every trainable
// parameter. Throws on a non-finite loss; parameters are left untouched then.
double pretrain_step(VectorFieldModel& model, std::span<const TrainingExample> batch, Adam& opt,
                     Rng& rng, const TrainOptions& options);

// Same as pretrain_step but restricted to the injected partition's trainable
// set; frozen parameters are bit-identical afterwards.
double finetune_step(VectorFieldModel& model, std::span<const TrainingExample> batch, Adam& opt,
                     Rng& rng, const TrainOptions& options);

struct DurationExample {
    std::vector<int> symbols;
    std::vector<int> gold;            // frames per symbol, >= 1
    std::vector<int> cond_tokens;     // z_f; empty during pre-training
};

// L1 regression step for the duration model; respects the trainable partition.
double duration_train_step(DurationModel& model, std::span<const DurationExample> batch, Adam& opt,
                           Rng& rng);

}  // namespace flowtune
