#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "flowtune/model.hpp"

namespace flowtune {

enum class AdapterMethod { sequential, parallel, lora, lora_bias };
enum class LoraPlacement { self_attention_inputs, all_linear };

std::string adapter_method_name(AdapterMethod m);
AdapterMethod adapter_method_from(const std::string& name);
std::string lora_placement_name(LoraPlacement p);
LoraPlacement lora_placement_from(const std::string& name);

struct AdapterSpec {
    AdapterMethod method = AdapterMethod::lora_bias;
    LoraPlacement lora_placement = LoraPlacement::self_attention_inputs;
    int lora_rank = 8;
    double lora_alpha = 8;
    double lora_dropout = 0.05;
    int adapter_hidden = 16;
    int cross_attn_heads = 4;
    int cross_attn_head_dim = 16;
    // frozen condition encoder + trainable projection
    int cond_dim = 32;
    int cond_layers = 2;
    int cond_heads = 2;
    int cond_ff = 64;
    int cond_max_len = 96;

    void validate() const;

    static AdapterSpec desk_default(AdapterMethod m,
                                    LoraPlacement p = LoraPlacement::self_attention_inputs);
    // Cross-attention 12 heads x 64; adapters hidden 64; LoRA r = alpha = 64,
    // dropout 0.05. The all-linear placement uses r = 16 to keep the adaptive
    // budget under 5% of the backbone.
    static AdapterSpec paper_preset(AdapterMethod m,
                                    LoraPlacement p = LoraPlacement::self_attention_inputs);
};

// The five adapter configurations of the comparison harness.
std::vector<std::pair<std::string, AdapterSpec>> harness_specs(bool paper_scale);

// ---------------------------------------------------------------------------
// condition encoding

// Token vocabulary for serialized condition transcripts: symbol tokens plus
// the inline markers and a mask token for the encoder fitting pass.
struct CondVocab {
    std::vector<std::string> tokens;
    std::map<std::string, int> index;
    int mask_id = -1;

    static CondVocab for_symbols(int n_symbols);
    int id(const std::string& token) const;  // unknown token -> rejected with token text
    std::vector<int> encode(const std::string& text) const;
    int size() const { return static_cast<int>(tokens.size()); }
};

struct ConditionEncoderState {
    CondVocab vocab;
    Parameter* tok_emb = nullptr;  // (n_tokens, cond_dim)
    TransformerStack stack;
    Linear proj;  // cond_dim -> model_dim, always trainable
    int dim = 0;
    bool fitted = false;
};

struct ParameterPartition {
    int64_t frozen_count = 0;
    int64_t trainable_count = 0;
    int64_t adaptive_count = 0;      // new adaptive-module parameters
    int64_t conditioning_count = 0;  // cross-attention + condition projection
    std::vector<std::string> trainable_paths;
};

struct AdapterState {
    AdapterSpec spec;
    ConditionEncoderState cond;
    std::vector<std::unique_ptr<LoraState>> loras;
    std::vector<std::unique_ptr<BiasTuneState>> bias_tunes;
    std::vector<Linear*> lora_hosts;  // parallel to loras
    ParameterPartition partition;
};

// Deterministic encoding of a token sequence: embeddings + encoder stack +
// projection to model_dim. Empty input yields an empty sequence.
Var encode_condition(const AdapterState& st, Tape& t, const std::vector<int>& tokens);

// Standalone cross-attention application, residual form. Empty cond returns
// hidden unchanged.
Var cross_attention_forward(const CrossAttentionState& module, Tape& t, Var hidden, Var cond);

// Brief masked-token prediction pass over condition strings; trains the
// encoder body (tied output embedding), then freezes it. The projection layer
// stays trainable throughout.
void fit_condition_encoder(AdapterState& st, ParameterStore& store,
                           const std::vector<std::string>& condition_strings, int steps,
                           double lr, uint64_t seed);

// ---------------------------------------------------------------------------
// injection

// Attaches the condition pathway (encoder + projection + per-layer
// cross-attention) and the spec's adaptive modules. Immediately after
// injection the model output is unchanged for any input (zero-initialized
// output projections). Double injection is rejected.
const ParameterPartition& inject_adapters(VectorFieldModel& model, const AdapterSpec& spec);
const ParameterPartition& inject_adapters(DurationModel& model, const AdapterSpec& spec);

// Folds every LoRA attachment into its base weight (W += alpha/r * B.A) and
// removes the attachments. training_mode guards against dropout-active use.
void merge_lora(VectorFieldModel& model, bool training_mode = false);

// ---------------------------------------------------------------------------
// parameter accounting

struct AdaptiveCounts {
    int64_t adaptive_new = 0;       // adapters, LoRA matrices, bias-tune vectors
    int64_t conditioning = 0;       // cross-attention + condition projection
    int64_t encoder_frozen = 0;     // condition encoder body
    int64_t ln_reclassified = 0;    // pre-trained LayerNorm params made trainable
};

// Walks the parameter store of an injected model.
AdaptiveCounts count_adaptive_enumerated(const ParameterStore& store);

// Hand arithmetic from the configuration; must match the enumeration exactly.
AdaptiveCounts closed_form_adaptive_counts(const BackboneConfig& cfg, const AdapterSpec& spec);
int64_t closed_form_backbone_count(const BackboneConfig& cfg);

}  // namespace flowtune
