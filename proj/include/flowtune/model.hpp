#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowtune/rng.hpp"
#include "flowtune/tape.hpp"

namespace flowtune {

// ---------------------------------------------------------------------------
// parameter storage

// Ordered by path: iteration order is the canonical checkpoint order.
// std::map also gives stable Parameter addresses across inserts.
class ParameterStore {
public:
    enum class Init { zeros, ones, fan_in_uniform, normal_002 };

    // materialize=false builds shapes without allocating or initializing data;
    // used for parameter accounting at paper-preset dimensions.
    explicit ParameterStore(uint64_t seed, bool materialize = true)
        : rng_(seed), materialize_(materialize) {}

    Parameter& create(const std::string& path, std::vector<int> shape, Init init);
    Parameter* find(const std::string& path);
    const Parameter* find(const std::string& path) const;

    std::map<std::string, Parameter>& all() { return params_; }
    const std::map<std::string, Parameter>& all() const { return params_; }

    int64_t total_count() const;
    int64_t trainable_count() const;
    bool materialized() const { return materialize_; }

    void set_all_trainable(bool trainable);

private:
    std::map<std::string, Parameter> params_;
    Rng rng_;
    bool materialize_;
};

// Stored shape with data skipped in shape-only stores.
int64_t param_numel(const Parameter& p);

// ---------------------------------------------------------------------------
// layers

struct LoraState {
    Parameter* down = nullptr;  // A: (rank, in)
    Parameter* up = nullptr;    // B: (out, rank), zero-initialized
    int rank = 0;
    double alpha = 0;
    double dropout = 0;
};

struct BiasTuneState {
    Parameter* shift = nullptr;  // b, init 0
    Parameter* scale = nullptr;  // s, init 1
};

struct Linear {
    Parameter* weight = nullptr;  // (out, in)
    Parameter* bias = nullptr;    // (out)
    int in = 0, out = 0;
    const LoraState* lora = nullptr;
    const BiasTuneState* bias_tune = nullptr;

    // x: (T, in) -> (T, out). rng drives LoRA branch dropout in training mode.
    Var forward(Tape& t, Var x, Rng* rng = nullptr) const;
};

Linear make_linear(ParameterStore& store, const std::string& path, int in, int out,
                   ParameterStore::Init w_init = ParameterStore::Init::fan_in_uniform);

struct LayerNormState {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;
    Var forward(Tape& t, Var x) const {
        return t.layer_norm(x, t.param(*gain), t.param(*bias));
    }
};

LayerNormState make_layer_norm(ParameterStore& store, const std::string& path, int dim);

// Standard multi-head attention; queries from q_in, keys/values from kv_in.
Var multihead_attention(Tape& t, Var q_in, Var kv_in, const Linear& wq, const Linear& wk,
                        const Linear& wv, const Linear& wo, int n_heads, Rng* rng);

struct CrossAttentionState {
    Linear wq, wk, wv, wo;  // wo zero-initialized
    int n_heads = 0;
};

struct AdapterBlockState {
    Linear ff1, ff2;  // ff2 zero-initialized
    bool parallel = false;
};

// sequential: sub_block_out + FFN(sub_block_out); parallel: sub_block_out + FFN(sub_block_in)
Var adapter_block_forward(Tape& t, const AdapterBlockState& block, Var sub_block_in,
                          Var sub_block_out, Rng* rng);

struct TransformerLayer {
    LayerNormState ln1, ln2;
    Linear wq, wk, wv, wo;
    Linear ff1, ff2;
    int n_heads = 0;

    // attachment points; null until adapter injection
    std::unique_ptr<CrossAttentionState> cross_attn;
    std::unique_ptr<AdapterBlockState> attn_adapter;
    std::unique_ptr<AdapterBlockState> ffn_adapter;

    Var forward(Tape& t, Var h, std::optional<Var> cond, Rng* rng) const;
};

TransformerLayer make_transformer_layer(ParameterStore& store, const std::string& path,
                                        int model_dim, int ff_dim, int n_heads);

// Pre-LN transformer stack with learned absolute positions.
struct TransformerStack {
    Parameter* pos_emb = nullptr;  // (max_seq_len, dim)
    std::vector<TransformerLayer> layers;
    LayerNormState final_ln;
    int model_dim = 0;
    int max_seq_len = 0;

    Var forward(Tape& t, Var x, std::optional<Var> cond, Rng* rng) const;
};

TransformerStack make_stack(ParameterStore& store, const std::string& path, int n_layers,
                            int model_dim, int ff_dim, int n_heads, int max_seq_len);

// ---------------------------------------------------------------------------
// configs

struct BackboneConfig {
    int n_layers = 4;
    int model_dim = 64;
    int ff_dim = 256;
    int n_heads = 4;
    int feature_dim = 8;
    int max_seq_len = 256;
    int vocab_size = 24;  // symbol vocabulary incl. the gap symbol

    void validate() const;
    static BackboneConfig desk_default() { return BackboneConfig{}; }
    // 12 layers x 768, ff 3072, 12 heads; feature dim 80, positions for ~30 s at 100 Hz
    static BackboneConfig paper_preset() { return BackboneConfig{12, 768, 3072, 12, 80, 3000, 100}; }
};

struct DurationConfig {
    int n_layers = 2;
    int model_dim = 32;
    int ff_dim = 128;
    int n_heads = 2;
    int max_seq_len = 64;
    int vocab_size = 24;

    void validate() const;
    static DurationConfig desk_default() { return DurationConfig{}; }
    static DurationConfig paper_preset() { return DurationConfig{8, 512, 2048, 8, 512, 100}; }
};

// ---------------------------------------------------------------------------
// time embedding and input assembly

// Interleaved sin/cos of t scaled by geometric frequencies (base 10000),
// transformer convention with position = t * 1000. dim must be even.
Tensor sinusoidal_time_embedding(double t, int dim);

struct AdapterState;  // adapters.hpp

// The acoustic vector-field model: input assembly, backbone stack, output head.
struct VectorFieldModel {
    BackboneConfig cfg;
    ParameterStore store;
    Parameter* sym_emb = nullptr;  // (vocab, model_dim)
    Linear input_proj;             // concat width -> model_dim
    TransformerStack stack;
    Linear head;  // model_dim -> feature_dim
    std::unique_ptr<AdapterState> adapters;

    VectorFieldModel(const BackboneConfig& c, uint64_t seed, bool materialize = true);
    ~VectorFieldModel();
    VectorFieldModel(const VectorFieldModel&) = delete;
    VectorFieldModel& operator=(const VectorFieldModel&) = delete;

    int concat_width() const { return cfg.model_dim * 2 + (cfg.feature_dim + 1) + cfg.feature_dim; }

    // Per-frame [t_emb | z_p | masked_x | psi_t] followed by the learned
    // projection to model_dim. All sequences must share length.
    Var assemble(Tape& t, double time, Var z_p, Var masked_x, Var psi_t) const;

    // Frame-aligned symbol embeddings for the given per-frame symbol ids.
    Var embed_frames(Tape& t, const std::vector<int>& frame_symbols) const;

    bool has_adapters() const { return adapters != nullptr; }
};

// One feature_dim vector per frame, interpreted as the vector field v_t.
// cond is the encoded fine-grained condition sequence; passing it to a model
// without injected cross-attention is an error.
Var backbone_forward(const VectorFieldModel& model, Tape& t, Var assembled,
                     std::optional<Var> cond = std::nullopt, Rng* rng = nullptr);

// Transformer regressor over unaligned symbol sequences; one duration per symbol.
struct DurationModel {
    DurationConfig cfg;
    ParameterStore store;
    Parameter* sym_emb = nullptr;
    TransformerStack stack;
    Linear head;  // model_dim -> 1
    std::unique_ptr<AdapterState> adapters;

    DurationModel(const DurationConfig& c, uint64_t seed, bool materialize = true);
    ~DurationModel();
    DurationModel(const DurationModel&) = delete;
    DurationModel& operator=(const DurationModel&) = delete;

    // raw real-valued predictions, shape (n_symbols, 1)
    Var forward_raw(Tape& t, const std::vector<int>& symbols, std::optional<Var> cond = std::nullopt,
                    Rng* rng = nullptr) const;

    bool has_adapters() const { return adapters != nullptr; }
};

// Raw predictions clamped to >= 1 and rounded to nearest integer, ties-to-even.
std::vector<int> predict_durations(const DurationModel& model, const std::vector<int>& symbols,
                                   const std::vector<int>* cond_tokens = nullptr);

// Mean absolute error over symbols, on raw pre-rounding predictions.
Var duration_loss(Tape& t, Var raw_predictions, const std::vector<int>& gold);

// symbol i's embedding repeated durations[i] times, concatenated in order
Var expand_to_alignment(Tape& t, Parameter& embedding_table, const std::vector<int>& symbols,
                        const std::vector<int>& durations);

// Flattened (symbols -> frame symbol ids) version used to build model inputs.
std::vector<int> expand_symbol_ids(const std::vector<int>& symbols,
                                   const std::vector<int>& durations);

}  // namespace flowtune
