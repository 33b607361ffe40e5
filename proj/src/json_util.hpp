#pragma once

// Internal JSON helpers: strict key checking plus (de)serialization of the
// config structs. Unknown keys are rejected everywhere; silent typos must not
// be able to poison a sweep.

#include <initializer_list>
#include <json.hpp>
#include <string>

#include "flowtune/adapters.hpp"
#include "flowtune/model.hpp"
#include "flowtune/sampler.hpp"
#include "flowtune/synthetic.hpp"
#include "flowtune/train.hpp"

namespace flowtune {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw std::invalid_argument("config: " + ctx + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) {
            if (it.key() == a) ok = true;
        }
        if (!ok) throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + ctx);
    }
}

template <typename T>
void maybe_get(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

// --- TaskSpec ---

inline json task_spec_to_json(const TaskSpec& s) {
    return json{{"task", task_kind_name(s.task)},
                {"vocab_size", s.vocab_size},
                {"feature_dim", s.feature_dim},
                {"pattern_seed", s.pattern_seed},
                {"annotation_rate", s.annotation_rate},
                {"energy_scale", s.energy_scale},
                {"pause_len_min", s.pause_len_min},
                {"pause_len_max", s.pause_len_max},
                {"burst_freq", s.burst_freq},
                {"burst_amp", s.burst_amp},
                {"burst_len_min", s.burst_len_min},
                {"burst_len_max", s.burst_len_max},
                {"noise_sigma", s.noise_sigma},
                {"min_symbols", s.min_symbols},
                {"max_symbols", s.max_symbols},
                {"min_pattern_margin", s.min_pattern_margin}};
}

inline TaskSpec task_spec_from_json(const json& j) {
    check_keys(j, "task",
               {"task", "vocab_size", "feature_dim", "pattern_seed", "annotation_rate",
                "energy_scale", "pause_len_min", "pause_len_max", "burst_freq", "burst_amp",
                "burst_len_min", "burst_len_max", "noise_sigma", "min_symbols", "max_symbols",
                "min_pattern_margin"});
    TaskSpec s;
    if (j.contains("task")) s.task = task_kind_from(j.at("task").get<std::string>());
    maybe_get(j, "vocab_size", s.vocab_size);
    maybe_get(j, "feature_dim", s.feature_dim);
    maybe_get(j, "pattern_seed", s.pattern_seed);
    maybe_get(j, "annotation_rate", s.annotation_rate);
    maybe_get(j, "energy_scale", s.energy_scale);
    maybe_get(j, "pause_len_min", s.pause_len_min);
    maybe_get(j, "pause_len_max", s.pause_len_max);
    maybe_get(j, "burst_freq", s.burst_freq);
    maybe_get(j, "burst_amp", s.burst_amp);
    maybe_get(j, "burst_len_min", s.burst_len_min);
    maybe_get(j, "burst_len_max", s.burst_len_max);
    maybe_get(j, "noise_sigma", s.noise_sigma);
    maybe_get(j, "min_symbols", s.min_symbols);
    maybe_get(j, "max_symbols", s.max_symbols);
    maybe_get(j, "min_pattern_margin", s.min_pattern_margin);
    s.validate();
    return s;
}

// --- BackboneConfig / DurationConfig ---

inline json backbone_to_json(const BackboneConfig& c) {
    return json{{"n_layers", c.n_layers},   {"model_dim", c.model_dim},
                {"ff_dim", c.ff_dim},       {"n_heads", c.n_heads},
                {"feature_dim", c.feature_dim}, {"max_seq_len", c.max_seq_len},
                {"vocab_size", c.vocab_size}};
}

inline BackboneConfig backbone_from_json(const json& j) {
    check_keys(j, "backbone",
               {"n_layers", "model_dim", "ff_dim", "n_heads", "feature_dim", "max_seq_len",
                "vocab_size"});
    BackboneConfig c;
    maybe_get(j, "n_layers", c.n_layers);
    maybe_get(j, "model_dim", c.model_dim);
    maybe_get(j, "ff_dim", c.ff_dim);
    maybe_get(j, "n_heads", c.n_heads);
    maybe_get(j, "feature_dim", c.feature_dim);
    maybe_get(j, "max_seq_len", c.max_seq_len);
    maybe_get(j, "vocab_size", c.vocab_size);
    c.validate();
    return c;
}

inline json duration_to_json(const DurationConfig& c) {
    return json{{"n_layers", c.n_layers}, {"model_dim", c.model_dim}, {"ff_dim", c.ff_dim},
                {"n_heads", c.n_heads},   {"max_seq_len", c.max_seq_len},
                {"vocab_size", c.vocab_size}};
}

inline DurationConfig duration_from_json(const json& j) {
    check_keys(j, "duration_model",
               {"n_layers", "model_dim", "ff_dim", "n_heads", "max_seq_len", "vocab_size"});
    DurationConfig c;
    maybe_get(j, "n_layers", c.n_layers);
    maybe_get(j, "model_dim", c.model_dim);
    maybe_get(j, "ff_dim", c.ff_dim);
    maybe_get(j, "n_heads", c.n_heads);
    maybe_get(j, "max_seq_len", c.max_seq_len);
    maybe_get(j, "vocab_size", c.vocab_size);
    c.validate();
    return c;
}

// --- AdapterSpec ---

inline json adapter_spec_to_json(const AdapterSpec& s) {
    return json{{"method", adapter_method_name(s.method)},
                {"lora_placement", lora_placement_name(s.lora_placement)},
                {"lora_rank", s.lora_rank},
                {"lora_alpha", s.lora_alpha},
                {"lora_dropout", s.lora_dropout},
                {"adapter_hidden", s.adapter_hidden},
                {"cross_attn_heads", s.cross_attn_heads},
                {"cross_attn_head_dim", s.cross_attn_head_dim},
                {"cond_dim", s.cond_dim},
                {"cond_layers", s.cond_layers},
                {"cond_heads", s.cond_heads},
                {"cond_ff", s.cond_ff},
                {"cond_max_len", s.cond_max_len}};
}

inline AdapterSpec adapter_spec_from_json(const json& j) {
    check_keys(j, "adapter",
               {"method", "lora_placement", "lora_rank", "lora_alpha", "lora_dropout",
                "adapter_hidden", "cross_attn_heads", "cross_attn_head_dim", "cond_dim",
                "cond_layers", "cond_heads", "cond_ff", "cond_max_len"});
    AdapterSpec s;
    if (j.contains("method")) s.method = adapter_method_from(j.at("method").get<std::string>());
    if (j.contains("lora_placement")) {
        s.lora_placement = lora_placement_from(j.at("lora_placement").get<std::string>());
    }
    maybe_get(j, "lora_rank", s.lora_rank);
    maybe_get(j, "lora_alpha", s.lora_alpha);
    maybe_get(j, "lora_dropout", s.lora_dropout);
    maybe_get(j, "adapter_hidden", s.adapter_hidden);
    maybe_get(j, "cross_attn_heads", s.cross_attn_heads);
    maybe_get(j, "cross_attn_head_dim", s.cross_attn_head_dim);
    maybe_get(j, "cond_dim", s.cond_dim);
    maybe_get(j, "cond_layers", s.cond_layers);
    maybe_get(j, "cond_heads", s.cond_heads);
    maybe_get(j, "cond_ff", s.cond_ff);
    maybe_get(j, "cond_max_len", s.cond_max_len);
    s.validate();
    return s;
}

// --- SolverConfig ---

inline json solver_to_json(const SolverConfig& s) {
    return json{{"method", solver_method_name(s.method)}, {"n_steps", s.n_steps}};
}

inline SolverConfig solver_from_json(const json& j) {
    check_keys(j, "solver", {"method", "n_steps"});
    SolverConfig s;
    if (j.contains("method")) s.method = solver_method_from(j.at("method").get<std::string>());
    maybe_get(j, "n_steps", s.n_steps);
    s.validate();
    return s;
}

// --- optimizer ---

inline json adam_to_json(const AdamConfig& c) {
    return json{{"lr", c.lr},     {"beta1", c.beta1},
                {"beta2", c.beta2}, {"eps", c.eps},
                {"warmup_steps", c.warmup_steps}};
}

inline AdamConfig adam_from_json(const json& j) {
    check_keys(j, "optimizer", {"lr", "beta1", "beta2", "eps", "warmup_steps"});
    AdamConfig c;
    maybe_get(j, "lr", c.lr);
    maybe_get(j, "beta1", c.beta1);
    maybe_get(j, "beta2", c.beta2);
    maybe_get(j, "eps", c.eps);
    maybe_get(j, "warmup_steps", c.warmup_steps);
    return c;
}

}  // namespace flowtune
