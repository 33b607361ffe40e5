#include "flowtune/adapters.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "flowtune/train.hpp"

namespace flowtune {

namespace {

const char* kLoraPrefix = "lora/";
const char* kAdapterPrefix = "adapters/";
const char* kBiasTunePrefix = "bias_tune/";
const char* kXattnPrefix = "xattn/";
const char* kCondPrefix = "cond/";
const char* kCondProjPrefix = "cond/proj/";

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

std::string linear_base_path(const Linear& l) {
    const std::string& wp = l.weight->path;
    return wp.substr(0, wp.size() - std::string("/weight").size());
}

bool is_pretrained_layer_norm(const std::string& path) {
    if (starts_with(path, kCondPrefix)) return false;
    return path.find("/ln1/") != std::string::npos || path.find("/ln2/") != std::string::npos ||
           path.find("/final_ln/") != std::string::npos;
}

}  // namespace

std::string adapter_method_name(AdapterMethod m) {
    switch (m) {
        case AdapterMethod::sequential: return "sequential";
        case AdapterMethod::parallel: return "parallel";
        case AdapterMethod::lora: return "lora";
        case AdapterMethod::lora_bias: return "lora_bias";
    }
    return "?";
}

AdapterMethod adapter_method_from(const std::string& name) {
    if (name == "sequential") return AdapterMethod::sequential;
    if (name == "parallel") return AdapterMethod::parallel;
    if (name == "lora") return AdapterMethod::lora;
    if (name == "lora_bias") return AdapterMethod::lora_bias;
    throw std::invalid_argument("unknown adapter method: " + name);
}

std::string lora_placement_name(LoraPlacement p) {
    return p == LoraPlacement::self_attention_inputs ? "self_attention_inputs" : "all_linear";
}

LoraPlacement lora_placement_from(const std::string& name) {
    if (name == "self_attention_inputs") return LoraPlacement::self_attention_inputs;
    if (name == "all_linear") return LoraPlacement::all_linear;
    throw std::invalid_argument("unknown lora placement: " + name);
}

void AdapterSpec::validate() const {
    if (lora_rank <= 0) throw std::invalid_argument("adapter spec: lora rank must be positive");
    if (lora_alpha <= 0) throw std::invalid_argument("adapter spec: lora alpha must be positive");
    if (lora_dropout < 0 || lora_dropout >= 1) {
        throw std::invalid_argument("adapter spec: lora dropout must lie in [0, 1)");
    }
    if (adapter_hidden <= 0 || cross_attn_heads <= 0 || cross_attn_head_dim <= 0) {
        throw std::invalid_argument("adapter spec: module dimensions must be positive");
    }
    if (cond_dim <= 0 || cond_layers <= 0 || cond_heads <= 0 || cond_ff <= 0 || cond_max_len <= 0) {
        throw std::invalid_argument("adapter spec: condition encoder dimensions must be positive");
    }
    if (cond_dim % cond_heads != 0) {
        throw std::invalid_argument("adapter spec: cond_dim must be divisible by cond_heads");
    }
}

AdapterSpec AdapterSpec::desk_default(AdapterMethod m, LoraPlacement p) {
    AdapterSpec s;
    s.method = m;
    s.lora_placement = p;
    return s;
}

AdapterSpec AdapterSpec::paper_preset(AdapterMethod m, LoraPlacement p) {
    AdapterSpec s;
    s.method = m;
    s.lora_placement = p;
    s.cross_attn_heads = 12;
    s.cross_attn_head_dim = 64;
    s.adapter_hidden = 64;
    if (p == LoraPlacement::all_linear) {
        s.lora_rank = 16;
        s.lora_alpha = 16;
    } else {
        s.lora_rank = 64;
        s.lora_alpha = 64;
    }
    s.lora_dropout = 0.05;
    s.cond_dim = 768;
    s.cond_ff = 2048;
    s.cond_heads = 12;
    return s;
}

std::vector<std::pair<std::string, AdapterSpec>> harness_specs(bool paper_scale) {
    auto make = paper_scale ? &AdapterSpec::paper_preset : &AdapterSpec::desk_default;
    return {
        {"sequential_adapter", make(AdapterMethod::sequential, LoraPlacement::self_attention_inputs)},
        {"parallel_adapter", make(AdapterMethod::parallel, LoraPlacement::self_attention_inputs)},
        {"lora_attn", make(AdapterMethod::lora, LoraPlacement::self_attention_inputs)},
        {"lora_attn_bias_tuning", make(AdapterMethod::lora_bias, LoraPlacement::self_attention_inputs)},
        {"lora_all_linear", make(AdapterMethod::lora, LoraPlacement::all_linear)},
    };
}

// ---------------------------------------------------------------------------
// condition vocabulary

CondVocab CondVocab::for_symbols(int n_symbols) {
    CondVocab v;
    for (int i = 0; i < n_symbols; ++i) v.tokens.push_back("s" + std::to_string(i));
    v.tokens.push_back("*");
    v.tokens.push_back("<pause>");
    v.tokens.push_back("<burst>");
    v.tokens.push_back("<mask>");
    for (size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = static_cast<int>(i);
    v.mask_id = v.index["<mask>"];
    return v;
}

int CondVocab::id(const std::string& token) const {
    auto it = index.find(token);
    if (it == index.end()) throw std::invalid_argument("unknown condition token: \"" + token + "\"");
    return it->second;
}

std::vector<int> CondVocab::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) {
        // inline emphasis markers: *word* splits into '*', word, '*'
        if (tok.size() > 2 && tok.front() == '*' && tok.back() == '*') {
            out.push_back(id("*"));
            out.push_back(id(tok.substr(1, tok.size() - 2)));
            out.push_back(id("*"));
        } else {
            out.push_back(id(tok));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// condition encoder

namespace {

Var encoder_body_forward(const ConditionEncoderState& enc, Tape& t, const std::vector<int>& tokens) {
    std::vector<int> ones(tokens.size(), 1);
    Var x = expand_to_alignment(t, *enc.tok_emb, tokens, ones);
    return enc.stack.forward(t, x, std::nullopt, nullptr);
}

}  // namespace

Var encode_condition(const AdapterState& st, Tape& t, const std::vector<int>& tokens) {
    const ConditionEncoderState& enc = st.cond;
    if (tokens.empty()) {
        return t.constant(Tensor::zeros({0, enc.proj.out}));
    }
    if (static_cast<int>(tokens.size()) > enc.stack.max_seq_len) {
        throw std::invalid_argument("encode_condition: token sequence exceeds encoder max length");
    }
    Var h = encoder_body_forward(enc, t, tokens);
    return enc.proj.forward(t, h, nullptr);
}

Var cross_attention_forward(const CrossAttentionState& module, Tape& t, Var hidden, Var cond) {
    if (t.val(cond).rows() == 0) return hidden;
    Var ca = multihead_attention(t, hidden, cond, module.wq, module.wk, module.wv, module.wo,
                                 module.n_heads, nullptr);
    return t.add(hidden, ca);
}

void fit_condition_encoder(AdapterState& st, ParameterStore& store,
                           const std::vector<std::string>& condition_strings, int steps, double lr,
                           uint64_t seed) {
    ConditionEncoderState& enc = st.cond;
    std::vector<std::vector<int>> corpus;
    for (const auto& s : condition_strings) {
        auto toks = enc.vocab.encode(s);
        if (!toks.empty()) corpus.push_back(std::move(toks));
    }
    if (corpus.empty()) throw std::invalid_argument("fit_condition_encoder: no usable strings");

    // temporarily unfreeze the encoder body
    std::vector<Parameter*> enc_params;
    for (auto& [path, p] : store.all()) {
        if (starts_with(path, kCondPrefix) && !starts_with(path, kCondProjPrefix)) {
            p.trainable = true;
            enc_params.push_back(&p);
        }
    }

    AdamConfig acfg;
    acfg.lr = lr;
    acfg.warmup_steps = std::max(1, steps / 10);
    Adam opt(acfg);
    Rng rng(seed);
    int n_tokens = enc.vocab.size();
    for (int step = 0; step < steps; ++step) {
        const auto& base = corpus[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(corpus.size()) - 1))];
        std::vector<int> tokens = base;
        int pos = rng.uniform_int(0, static_cast<int>(tokens.size()) - 1);
        int target = tokens[static_cast<size_t>(pos)];
        tokens[static_cast<size_t>(pos)] = enc.vocab.mask_id;

        Tape t(true);
        Var h = encoder_body_forward(enc, t, tokens);
        // tied output embedding; probabilities regressed onto the one-hot target
        Var logits = t.matmul_nt(h, t.param(*enc.tok_emb));
        Var probs = t.softmax_rows(logits);
        Tensor onehot = Tensor::zeros({1, n_tokens});
        onehot.data[static_cast<size_t>(target)] = 1;
        Var diff = t.sub(t.slice(probs, 0, pos, 1), t.constant(std::move(onehot)));
        Var loss = t.mean(t.mul(diff, diff));
        t.backward(loss);

        std::vector<Tensor> grads;
        grads.reserve(enc_params.size());
        for (Parameter* p : enc_params) grads.push_back(t.grad_or_zero(t.param(*p)));
        opt.step(enc_params, grads);
    }

    for (Parameter* p : enc_params) p->trainable = false;
    enc.fitted = true;
}

// ---------------------------------------------------------------------------
// injection

namespace {

struct InjectTarget {
    ParameterStore& store;
    std::vector<TransformerLayer>& layers;
    std::vector<Linear*> pretrained_linears;  // stack linears + model-level extras
    int model_dim;
    int n_symbols;
};

std::vector<Linear*> stack_linears(std::vector<TransformerLayer>& layers) {
    std::vector<Linear*> out;
    for (auto& l : layers) {
        out.push_back(&l.wq);
        out.push_back(&l.wk);
        out.push_back(&l.wv);
        out.push_back(&l.wo);
        out.push_back(&l.ff1);
        out.push_back(&l.ff2);
    }
    return out;
}

void attach_lora(AdapterState& st, ParameterStore& store, Linear& lin, const AdapterSpec& spec) {
    auto lora = std::make_unique<LoraState>();
    std::string base = std::string(kLoraPrefix) + linear_base_path(lin);
    lora->rank = spec.lora_rank;
    lora->alpha = spec.lora_alpha;
    lora->dropout = spec.lora_dropout;
    lora->down = &store.create(base + "/down", {spec.lora_rank, lin.in},
                               ParameterStore::Init::fan_in_uniform);
    lora->up = &store.create(base + "/up", {lin.out, spec.lora_rank}, ParameterStore::Init::zeros);
    lin.lora = lora.get();
    st.lora_hosts.push_back(&lin);
    st.loras.push_back(std::move(lora));
}

void attach_bias_tune(AdapterState& st, ParameterStore& store, Linear& lin) {
    auto bt = std::make_unique<BiasTuneState>();
    std::string base = std::string(kBiasTunePrefix) + linear_base_path(lin);
    bt->shift = &store.create(base + "/shift", {lin.out}, ParameterStore::Init::zeros);
    bt->scale = &store.create(base + "/scale", {lin.out}, ParameterStore::Init::ones);
    lin.bias_tune = bt.get();
    st.bias_tunes.push_back(std::move(bt));
}

std::unique_ptr<AdapterBlockState> make_adapter_block(ParameterStore& store,
                                                      const std::string& path, int model_dim,
                                                      int hidden, bool parallel) {
    auto block = std::make_unique<AdapterBlockState>();
    block->parallel = parallel;
    block->ff1 = make_linear(store, path + "/ff1", model_dim, hidden);
    block->ff2 = make_linear(store, path + "/ff2", hidden, model_dim, ParameterStore::Init::zeros);
    return block;
}

std::unique_ptr<AdapterState> inject_into(InjectTarget target, const AdapterSpec& spec) {
    spec.validate();
    auto st = std::make_unique<AdapterState>();
    st->spec = spec;

    ParameterStore& store = target.store;

    // condition encoder + projection
    st->cond.vocab = CondVocab::for_symbols(target.n_symbols);
    st->cond.dim = spec.cond_dim;
    st->cond.tok_emb = &store.create("cond/tok_emb", {st->cond.vocab.size(), spec.cond_dim},
                                     ParameterStore::Init::normal_002);
    st->cond.stack = make_stack(store, "cond/stack", spec.cond_layers, spec.cond_dim, spec.cond_ff,
                                spec.cond_heads, spec.cond_max_len);
    st->cond.proj = make_linear(store, "cond/proj", spec.cond_dim, target.model_dim);

    // per-layer cross-attention, output projection zero-initialized
    int attn_dim = spec.cross_attn_heads * spec.cross_attn_head_dim;
    for (size_t i = 0; i < target.layers.size(); ++i) {
        auto ca = std::make_unique<CrossAttentionState>();
        std::string base = std::string(kXattnPrefix) + "layer" + std::to_string(i);
        ca->n_heads = spec.cross_attn_heads;
        ca->wq = make_linear(store, base + "/wq", target.model_dim, attn_dim);
        ca->wk = make_linear(store, base + "/wk", target.model_dim, attn_dim);
        ca->wv = make_linear(store, base + "/wv", target.model_dim, attn_dim);
        ca->wo = make_linear(store, base + "/wo", attn_dim, target.model_dim,
                             ParameterStore::Init::zeros);
        target.layers[i].cross_attn = std::move(ca);
    }

    // adaptive modules
    switch (spec.method) {
        case AdapterMethod::sequential:
        case AdapterMethod::parallel: {
            bool parallel = spec.method == AdapterMethod::parallel;
            for (size_t i = 0; i < target.layers.size(); ++i) {
                std::string base = std::string(kAdapterPrefix) + "layer" + std::to_string(i);
                target.layers[i].attn_adapter = make_adapter_block(
                    store, base + "/attn", target.model_dim, spec.adapter_hidden, parallel);
                target.layers[i].ffn_adapter = make_adapter_block(
                    store, base + "/ffn", target.model_dim, spec.adapter_hidden, parallel);
            }
            break;
        }
        case AdapterMethod::lora:
        case AdapterMethod::lora_bias: {
            if (spec.lora_placement == LoraPlacement::self_attention_inputs) {
                for (auto& layer : target.layers) {
                    attach_lora(*st, store, layer.wq, spec);
                    attach_lora(*st, store, layer.wk, spec);
                    attach_lora(*st, store, layer.wv, spec);
                }
            } else {
                for (Linear* lin : target.pretrained_linears) attach_lora(*st, store, *lin, spec);
            }
            if (spec.method == AdapterMethod::lora_bias) {
                for (Linear* lin : target.pretrained_linears) attach_bias_tune(*st, store, *lin);
            }
            break;
        }
    }

    // partition: new conditioning + adaptive modules trainable, backbone frozen;
    // bias-tuning additionally unfreezes the pre-trained LayerNorm parameters
    bool bias_tuning = spec.method == AdapterMethod::lora_bias;
    ParameterPartition part;
    for (auto& [path, p] : store.all()) {
        bool trainable = false;
        if (starts_with(path, kXattnPrefix) || starts_with(path, kCondProjPrefix) ||
            starts_with(path, kAdapterPrefix) || starts_with(path, kLoraPrefix) ||
            starts_with(path, kBiasTunePrefix)) {
            trainable = true;
        } else if (bias_tuning && is_pretrained_layer_norm(path)) {
            trainable = true;
        }
        p.trainable = trainable;
        int64_t n = param_numel(p);
        if (trainable) {
            part.trainable_count += n;
            part.trainable_paths.push_back(path);
        } else {
            part.frozen_count += n;
        }
        if (starts_with(path, kAdapterPrefix) || starts_with(path, kLoraPrefix) ||
            starts_with(path, kBiasTunePrefix)) {
            part.adaptive_count += n;
        }
        if (starts_with(path, kXattnPrefix) || starts_with(path, kCondProjPrefix)) {
            part.conditioning_count += n;
        }
    }
    st->partition = std::move(part);
    return st;
}

}  // namespace

const ParameterPartition& inject_adapters(VectorFieldModel& model, const AdapterSpec& spec) {
    if (model.has_adapters()) throw std::invalid_argument("inject_adapters: model already injected");
    InjectTarget target{model.store, model.stack.layers, stack_linears(model.stack.layers),
                        model.cfg.model_dim, model.cfg.vocab_size - 1};
    target.pretrained_linears.push_back(&model.input_proj);
    target.pretrained_linears.push_back(&model.head);
    model.adapters = inject_into(std::move(target), spec);
    return model.adapters->partition;
}

const ParameterPartition& inject_adapters(DurationModel& model, const AdapterSpec& spec) {
    if (model.has_adapters()) throw std::invalid_argument("inject_adapters: model already injected");
    InjectTarget target{model.store, model.stack.layers, stack_linears(model.stack.layers),
                        model.cfg.model_dim, model.cfg.vocab_size - 1};
    target.pretrained_linears.push_back(&model.head);
    model.adapters = inject_into(std::move(target), spec);
    return model.adapters->partition;
}

// ---------------------------------------------------------------------------
// LoRA merge

void merge_lora(VectorFieldModel& model, bool training_mode) {
    if (training_mode) {
        throw std::invalid_argument("merge_lora: rejected while dropout-active training mode is set");
    }
    if (!model.has_adapters() || model.adapters->loras.empty()) {
        throw std::invalid_argument("merge_lora: no LoRA attachments present");
    }
    AdapterState& st = *model.adapters;
    for (size_t i = 0; i < st.loras.size(); ++i) {
        Linear* lin = st.lora_hosts[i];
        LoraState& lora = *st.loras[i];
        const Tensor& up = lora.up->value;      // (out, r)
        const Tensor& down = lora.down->value;  // (r, in)
        Tensor& w = lin->weight->value;         // (out, in)
        double s = lora.alpha / lora.rank;
        for (int o = 0; o < lin->out; ++o) {
            for (int r = 0; r < lora.rank; ++r) {
                real u = up.at(o, r);
                if (u == real(0)) continue;
                for (int c = 0; c < lin->in; ++c) {
                    w.at(o, c) += static_cast<real>(s) * u * down.at(r, c);
                }
            }
        }
        model.store.all().erase(lora.down->path);
        model.store.all().erase(lora.up->path);
        lin->lora = nullptr;
    }
    st.loras.clear();
    st.lora_hosts.clear();

    // refresh partition counts after removing the attachments
    ParameterPartition part;
    for (auto& [path, p] : model.store.all()) {
        int64_t n = param_numel(p);
        if (p.trainable) {
            part.trainable_count += n;
            part.trainable_paths.push_back(path);
        } else {
            part.frozen_count += n;
        }
        if (starts_with(path, kAdapterPrefix) || starts_with(path, kLoraPrefix) ||
            starts_with(path, kBiasTunePrefix)) {
            part.adaptive_count += n;
        }
        if (starts_with(path, kXattnPrefix) || starts_with(path, kCondProjPrefix)) {
            part.conditioning_count += n;
        }
    }
    st.partition = std::move(part);
}

// ---------------------------------------------------------------------------
// parameter accounting

AdaptiveCounts count_adaptive_enumerated(const ParameterStore& store) {
    AdaptiveCounts c;
    for (const auto& [path, p] : store.all()) {
        int64_t n = param_numel(p);
        if (starts_with(path, kAdapterPrefix) || starts_with(path, kLoraPrefix) ||
            starts_with(path, kBiasTunePrefix)) {
            c.adaptive_new += n;
        } else if (starts_with(path, kXattnPrefix) || starts_with(path, kCondProjPrefix)) {
            c.conditioning += n;
        } else if (starts_with(path, kCondPrefix)) {
            c.encoder_frozen += n;
        } else if (is_pretrained_layer_norm(path) && p.trainable) {
            c.ln_reclassified += n;
        }
    }
    return c;
}

int64_t closed_form_backbone_count(const BackboneConfig& cfg) {
    int64_t d = cfg.model_dim, ff = cfg.ff_dim, F = cfg.feature_dim, L = cfg.n_layers;
    int64_t cw = 2 * d + 2 * F + 1;
    int64_t embeddings = static_cast<int64_t>(cfg.vocab_size) * d +
                         static_cast<int64_t>(cfg.max_seq_len) * d;
    int64_t input_proj = cw * d + d;
    int64_t per_layer = 2 * (2 * d)            // two LayerNorms
                        + 4 * (d * d + d)      // q, k, v, o
                        + (d * ff + ff)        // ff1
                        + (ff * d + d);        // ff2
    int64_t final_ln = 2 * d;
    int64_t head = d * F + F;
    return embeddings + input_proj + L * per_layer + final_ln + head;
}

AdaptiveCounts closed_form_adaptive_counts(const BackboneConfig& cfg, const AdapterSpec& spec) {
    AdaptiveCounts c;
    int64_t d = cfg.model_dim, ff = cfg.ff_dim, F = cfg.feature_dim, L = cfg.n_layers;
    int64_t cw = 2 * d + 2 * F + 1;
    int64_t a = static_cast<int64_t>(spec.cross_attn_heads) * spec.cross_attn_head_dim;
    int64_t r = spec.lora_rank, h = spec.adapter_hidden, cd = spec.cond_dim;

    c.conditioning = L * (3 * (d * a + a) + (a * d + d)) + (cd * d + d);

    int64_t n_tokens = (cfg.vocab_size - 1) + 4;  // symbols + '*', <pause>, <burst>, <mask>
    int64_t cffs = spec.cond_ff;
    int64_t enc_layer = 2 * (2 * cd) + 4 * (cd * cd + cd) + (cd * cffs + cffs) + (cffs * cd + cd);
    c.encoder_frozen = n_tokens * cd + static_cast<int64_t>(spec.cond_max_len) * cd +
                       spec.cond_layers * enc_layer + 2 * cd;

    switch (spec.method) {
        case AdapterMethod::sequential:
        case AdapterMethod::parallel:
            c.adaptive_new = L * 2 * (d * h + h + h * d + d);
            break;
        case AdapterMethod::lora:
        case AdapterMethod::lora_bias: {
            if (spec.lora_placement == LoraPlacement::self_attention_inputs) {
                c.adaptive_new = L * 3 * (r * d + d * r);
            } else {
                int64_t per_layer = 4 * (r * d + d * r) + (r * d + ff * r) + (r * ff + d * r);
                c.adaptive_new = L * per_layer + (r * cw + d * r) + (r * d + F * r);
            }
            if (spec.method == AdapterMethod::lora_bias) {
                c.adaptive_new += 2 * (L * (5 * d + ff) + d + F);
                c.ln_reclassified = (2 * L + 1) * 2 * d;
            }
            break;
        }
    }
    return c;
}

}  // namespace flowtune
