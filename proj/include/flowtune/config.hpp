#pragma once

#include <optional>
#include <string>

#include "flowtune/adapters.hpp"
#include "flowtune/flow.hpp"
#include "flowtune/model.hpp"
#include "flowtune/sampler.hpp"
#include "flowtune/synthetic.hpp"
#include "flowtune/train.hpp"

namespace flowtune {

enum class CorpusKind { task, toy2 };

struct CorpusSection {
    CorpusKind kind = CorpusKind::task;
    int n_utterances = 400;
    TaskSpec task;
    // toy2 settings
    int toy_frames = 8;
    int toy_feature_dim = 8;
    double toy_mode_center = 1.5;
    double toy_noise_sigma = 0.05;

    int feature_dim() const { return kind == CorpusKind::toy2 ? toy_feature_dim : task.feature_dim; }
    int model_vocab() const { return kind == CorpusKind::toy2 ? 2 : task.model_vocab(); }
};

struct TrainingSection {
    int steps = 2000;
    int batch_size = 8;
    int checkpoint_every = 500;
    double data_fraction = 1.0;
    // paper-derived ratios: duration pre-training ~0.5x acoustic, duration
    // fine-tuning 2x acoustic
    int duration_pretrain_factor_pct = 50;
    int duration_finetune_factor_pct = 200;
    double mask_all_prob = 0.5;
    double span_len_min = 0.3;
    double span_len_max = 0.8;
    int cond_fit_steps = 300;
    double cond_fit_lr = 1e-3;
};

struct SeedSection {
    uint64_t model = 1;
    uint64_t train = 2;
    uint64_t corpus = 3;
};

// Fully determines a run. A serialized copy lands in every run directory and
// the fingerprint of the model-defining sections is embedded in checkpoints.
struct RunConfig {
    BackboneConfig backbone;
    DurationConfig duration;
    PathParams path;
    CorpusSection corpus;
    std::optional<AdapterSpec> adapter;
    SolverConfig solver;
    AdamConfig optimizer;
    TrainingSection training;
    SeedSection seeds;

    TrainOptions train_options() const;

    // Covers backbone, duration model, path, and corpus: the parts that decide
    // whether a checkpoint and a config belong together. Training schedules,
    // adapter specs and solver settings may differ between the runs of one
    // experiment chain.
    uint64_t fingerprint() const;
};

RunConfig config_from_json_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string config_to_json_text(const RunConfig& cfg);
void save_config(const std::string& path, const RunConfig& cfg);

// Ready-made desk-scale configs; steps honor the paper's task ratios
// (emphasis fine-tunes at 0.6x the step budget of the other tasks).
RunConfig default_toy_config();
RunConfig default_task_config(TaskKind task);

}  // namespace flowtune
