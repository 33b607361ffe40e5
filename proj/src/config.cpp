#include "flowtune/config.hpp"

#include <fstream>
#include <stdexcept>

#include "json_util.hpp"

namespace flowtune {

namespace {

json corpus_to_json(const CorpusSection& c) {
    json j{{"kind", c.kind == CorpusKind::toy2 ? "toy2" : "task"},
           {"n_utterances", c.n_utterances}};
    if (c.kind == CorpusKind::toy2) {
        j["toy"] = json{{"frames", c.toy_frames},
                        {"feature_dim", c.toy_feature_dim},
                        {"mode_center", c.toy_mode_center},
                        {"noise_sigma", c.toy_noise_sigma}};
    } else {
        j["task"] = task_spec_to_json(c.task);
    }
    return j;
}

CorpusSection corpus_from_json(const json& j) {
    check_keys(j, "corpus", {"kind", "n_utterances", "task", "toy"});
    CorpusSection c;
    if (j.contains("kind")) {
        std::string k = j.at("kind").get<std::string>();
        if (k == "toy2") {
            c.kind = CorpusKind::toy2;
        } else if (k == "task") {
            c.kind = CorpusKind::task;
        } else {
            throw std::invalid_argument("config: corpus kind must be \"task\" or \"toy2\"");
        }
    }
    maybe_get(j, "n_utterances", c.n_utterances);
    if (c.n_utterances < 1) throw std::invalid_argument("config: n_utterances must be >= 1");
    if (j.contains("task")) c.task = task_spec_from_json(j.at("task"));
    if (j.contains("toy")) {
        check_keys(j.at("toy"), "corpus.toy", {"frames", "feature_dim", "mode_center", "noise_sigma"});
        maybe_get(j.at("toy"), "frames", c.toy_frames);
        maybe_get(j.at("toy"), "feature_dim", c.toy_feature_dim);
        maybe_get(j.at("toy"), "mode_center", c.toy_mode_center);
        maybe_get(j.at("toy"), "noise_sigma", c.toy_noise_sigma);
    }
    return c;
}

json training_to_json(const TrainingSection& t) {
    return json{{"steps", t.steps},
                {"batch_size", t.batch_size},
                {"checkpoint_every", t.checkpoint_every},
                {"data_fraction", t.data_fraction},
                {"duration_pretrain_factor_pct", t.duration_pretrain_factor_pct},
                {"duration_finetune_factor_pct", t.duration_finetune_factor_pct},
                {"mask_all_prob", t.mask_all_prob},
                {"span_len_min", t.span_len_min},
                {"span_len_max", t.span_len_max},
                {"cond_fit_steps", t.cond_fit_steps},
                {"cond_fit_lr", t.cond_fit_lr}};
}

TrainingSection training_from_json(const json& j) {
    check_keys(j, "training",
               {"steps", "batch_size", "checkpoint_every", "data_fraction",
                "duration_pretrain_factor_pct", "duration_finetune_factor_pct", "mask_all_prob",
                "span_len_min", "span_len_max", "cond_fit_steps", "cond_fit_lr"});
    TrainingSection t;
    maybe_get(j, "steps", t.steps);
    maybe_get(j, "batch_size", t.batch_size);
    maybe_get(j, "checkpoint_every", t.checkpoint_every);
    maybe_get(j, "data_fraction", t.data_fraction);
    maybe_get(j, "duration_pretrain_factor_pct", t.duration_pretrain_factor_pct);
    maybe_get(j, "duration_finetune_factor_pct", t.duration_finetune_factor_pct);
    maybe_get(j, "mask_all_prob", t.mask_all_prob);
    maybe_get(j, "span_len_min", t.span_len_min);
    maybe_get(j, "span_len_max", t.span_len_max);
    maybe_get(j, "cond_fit_steps", t.cond_fit_steps);
    maybe_get(j, "cond_fit_lr", t.cond_fit_lr);
    if (t.steps < 0 || t.batch_size < 1) throw std::invalid_argument("config: bad training section");
    if (t.data_fraction <= 0 || t.data_fraction > 1) {
        throw std::invalid_argument("config: data_fraction must lie in (0, 1]");
    }
    return t;
}

json seeds_to_json(const SeedSection& s) {
    return json{{"model", s.model}, {"train", s.train}, {"corpus", s.corpus}};
}

SeedSection seeds_from_json(const json& j) {
    check_keys(j, "seeds", {"model", "train", "corpus"});
    SeedSection s;
    maybe_get(j, "model", s.model);
    maybe_get(j, "train", s.train);
    maybe_get(j, "corpus", s.corpus);
    return s;
}

json config_to_json(const RunConfig& cfg) {
    json j{{"backbone", backbone_to_json(cfg.backbone)},
           {"duration_model", duration_to_json(cfg.duration)},
           {"path", json{{"sigma_min", cfg.path.sigma_min}}},
           {"corpus", corpus_to_json(cfg.corpus)},
           {"solver", solver_to_json(cfg.solver)},
           {"optimizer", adam_to_json(cfg.optimizer)},
           {"training", training_to_json(cfg.training)},
           {"seeds", seeds_to_json(cfg.seeds)}};
    if (cfg.adapter.has_value()) j["adapter"] = adapter_spec_to_json(*cfg.adapter);
    return j;
}

}  // namespace

TrainOptions RunConfig::train_options() const {
    TrainOptions o;
    o.path = path;
    o.policy = LossMaskPolicy::masked_frames;
    o.mask_all_prob = training.mask_all_prob;
    o.span_len_min = training.span_len_min;
    o.span_len_max = training.span_len_max;
    return o;
}

uint64_t RunConfig::fingerprint() const {
    json j{{"backbone", backbone_to_json(backbone)},
           {"duration_model", duration_to_json(duration)},
           {"path", json{{"sigma_min", path.sigma_min}}},
           {"corpus", corpus_to_json(corpus)}};
    std::string s = j.dump();
    return fnv1a(s.data(), s.size());
}

RunConfig config_from_json_text(const std::string& text) {
    json j = json::parse(text);
    check_keys(j, "config",
               {"backbone", "duration_model", "path", "corpus", "adapter", "solver", "optimizer",
                "training", "seeds"});
    RunConfig cfg;
    if (j.contains("corpus")) cfg.corpus = corpus_from_json(j.at("corpus"));
    if (j.contains("backbone")) {
        // vocab_size defaults to the corpus vocabulary unless given explicitly
        json b = j.at("backbone");
        bool explicit_vocab = b.contains("vocab_size");
        cfg.backbone = backbone_from_json(b);
        if (!explicit_vocab) cfg.backbone.vocab_size = cfg.corpus.model_vocab();
    } else {
        cfg.backbone.vocab_size = cfg.corpus.model_vocab();
    }
    cfg.backbone.feature_dim = cfg.corpus.feature_dim();
    if (j.contains("duration_model")) {
        json d = j.at("duration_model");
        bool explicit_vocab = d.contains("vocab_size");
        cfg.duration = duration_from_json(d);
        if (!explicit_vocab) cfg.duration.vocab_size = cfg.corpus.model_vocab();
    } else {
        cfg.duration.vocab_size = cfg.corpus.model_vocab();
    }
    if (j.contains("path")) {
        check_keys(j.at("path"), "path", {"sigma_min"});
        maybe_get(j.at("path"), "sigma_min", cfg.path.sigma_min);
        cfg.path.validate();
    }
    if (j.contains("adapter")) cfg.adapter = adapter_spec_from_json(j.at("adapter"));
    if (j.contains("solver")) cfg.solver = solver_from_json(j.at("solver"));
    if (j.contains("optimizer")) cfg.optimizer = adam_from_json(j.at("optimizer"));
    if (j.contains("training")) cfg.training = training_from_json(j.at("training"));
    if (j.contains("seeds")) cfg.seeds = seeds_from_json(j.at("seeds"));
    cfg.backbone.validate();
    cfg.duration.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_to_json_text(const RunConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write " + path);
    os << config_to_json_text(cfg);
}

RunConfig default_toy_config() {
    RunConfig cfg;
    cfg.corpus.kind = CorpusKind::toy2;
    cfg.corpus.n_utterances = 128;
    cfg.backbone.vocab_size = cfg.corpus.model_vocab();
    cfg.backbone.feature_dim = cfg.corpus.feature_dim();
    cfg.duration.vocab_size = cfg.corpus.model_vocab();
    cfg.training.steps = 2000;
    cfg.optimizer.warmup_steps = 200;
    return cfg;
}

RunConfig default_task_config(TaskKind task) {
    RunConfig cfg;
    cfg.corpus.kind = CorpusKind::task;
    cfg.corpus.task.task = task;
    cfg.corpus.n_utterances = 400;
    cfg.backbone.vocab_size = cfg.corpus.model_vocab();
    cfg.backbone.feature_dim = cfg.corpus.feature_dim();
    cfg.duration.vocab_size = cfg.corpus.model_vocab();
    cfg.training.steps = task == TaskKind::emphasis ? 1200 : 2000;
    cfg.optimizer.warmup_steps = 200;
    return cfg;
}

}  // namespace flowtune
