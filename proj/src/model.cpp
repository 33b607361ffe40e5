#include "flowtune/model.hpp"

#include <cmath>
#include <stdexcept>

#include "flowtune/adapters.hpp"

namespace flowtune {

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::create(const std::string& path, std::vector<int> shape, Init init) {
    if (params_.count(path)) throw std::invalid_argument("parameter already exists: " + path);
    Parameter p;
    p.path = path;
    p.value.shape = std::move(shape);
    if (materialize_) {
        int64_t n = Tensor::numel_of(p.value.shape);
        p.value.data.assign(static_cast<size_t>(n), real(0));
        switch (init) {
            case Init::zeros:
                break;
            case Init::ones:
                for (auto& v : p.value.data) v = real(1);
                break;
            case Init::fan_in_uniform: {
                int fan_in = p.value.shape.size() >= 2 ? p.value.shape[1] : p.value.shape[0];
                double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
                for (auto& v : p.value.data) v = static_cast<real>(rng_.uniform(-bound, bound));
                break;
            }
            case Init::normal_002:
                for (auto& v : p.value.data) v = static_cast<real>(rng_.normal() * 0.02);
                break;
        }
    }
    auto [it, ok] = params_.emplace(path, std::move(p));
    (void)ok;
    return it->second;
}

Parameter* ParameterStore::find(const std::string& path) {
    auto it = params_.find(path);
    return it == params_.end() ? nullptr : &it->second;
}
const Parameter* ParameterStore::find(const std::string& path) const {
    auto it = params_.find(path);
    return it == params_.end() ? nullptr : &it->second;
}

int64_t param_numel(const Parameter& p) { return Tensor::numel_of(p.value.shape); }

int64_t ParameterStore::total_count() const {
    int64_t n = 0;
    for (const auto& [k, p] : params_) n += param_numel(p);
    return n;
}
int64_t ParameterStore::trainable_count() const {
    int64_t n = 0;
    for (const auto& [k, p] : params_) {
        if (p.trainable) n += param_numel(p);
    }
    return n;
}

void ParameterStore::set_all_trainable(bool trainable) {
    for (auto& [k, p] : params_) p.trainable = trainable;
}

// ---------------------------------------------------------------------------
// layers

Linear make_linear(ParameterStore& store, const std::string& path, int in, int out,
                   ParameterStore::Init w_init) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = &store.create(path + "/weight", {out, in}, w_init);
    l.bias = &store.create(path + "/bias", {out}, ParameterStore::Init::zeros);
    return l;
}

Var Linear::forward(Tape& t, Var x, Rng* rng) const {
    Var y = t.add(t.matmul_nt(x, t.param(*weight)), t.param(*bias));
    if (lora != nullptr) {
        Var branch = x;
        if (t.training() && lora->dropout > 0) {
            if (rng == nullptr) throw std::invalid_argument("lora dropout needs an rng in training mode");
            const Tensor& xv = t.val(x);
            Tensor mask = Tensor::zeros(xv.shape);
            real keep_scale = static_cast<real>(1.0 / (1.0 - lora->dropout));
            for (auto& m : mask.data) m = rng->uniform() < lora->dropout ? real(0) : keep_scale;
            branch = t.mul(branch, t.constant(std::move(mask)));
        }
        Var delta = t.matmul_nt(t.matmul_nt(branch, t.param(*lora->down)), t.param(*lora->up));
        y = t.add(y, t.scale(delta, lora->alpha / lora->rank));
    }
    if (bias_tune != nullptr) {
        y = t.mul(t.add(y, t.param(*bias_tune->shift)), t.param(*bias_tune->scale));
    }
    return y;
}

LayerNormState make_layer_norm(ParameterStore& store, const std::string& path, int dim) {
    LayerNormState ln;
    ln.gain = &store.create(path + "/gain", {dim}, ParameterStore::Init::ones);
    ln.bias = &store.create(path + "/bias", {dim}, ParameterStore::Init::zeros);
    return ln;
}

Var multihead_attention(Tape& t, Var q_in, Var kv_in, const Linear& wq, const Linear& wk,
                        const Linear& wv, const Linear& wo, int n_heads, Rng* rng) {
    Var q = wq.forward(t, q_in, rng);
    Var k = wk.forward(t, kv_in, rng);
    Var v = wv.forward(t, kv_in, rng);
    int total = wq.out;
    if (n_heads <= 0 || total % n_heads != 0) {
        throw std::invalid_argument("attention: head count " + std::to_string(n_heads) +
                                    " does not divide dim " + std::to_string(total));
    }
    int hd = total / n_heads;
    double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Var> ctx;
    ctx.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        Var qh = t.slice(q, 1, h * hd, hd);
        Var kh = t.slice(k, 1, h * hd, hd);
        Var vh = t.slice(v, 1, h * hd, hd);
        Var scores = t.scale(t.matmul_nt(qh, kh), att_scale);
        Var attn = t.softmax_rows(scores);
        ctx.push_back(t.matmul(attn, vh));
    }
    return wo.forward(t, t.concat(ctx, 1), rng);
}

Var adapter_block_forward(Tape& t, const AdapterBlockState& block, Var sub_block_in,
                          Var sub_block_out, Rng* rng) {
    Var src = block.parallel ? sub_block_in : sub_block_out;
    Var h = block.ff2.forward(t, t.relu(block.ff1.forward(t, src, rng)), rng);
    return t.add(sub_block_out, h);
}

TransformerLayer make_transformer_layer(ParameterStore& store, const std::string& path,
                                        int model_dim, int ff_dim, int n_heads) {
    TransformerLayer layer;
    layer.n_heads = n_heads;
    layer.ln1 = make_layer_norm(store, path + "/ln1", model_dim);
    layer.ln2 = make_layer_norm(store, path + "/ln2", model_dim);
    layer.wq = make_linear(store, path + "/attn/wq", model_dim, model_dim);
    layer.wk = make_linear(store, path + "/attn/wk", model_dim, model_dim);
    layer.wv = make_linear(store, path + "/attn/wv", model_dim, model_dim);
    layer.wo = make_linear(store, path + "/attn/wo", model_dim, model_dim);
    layer.ff1 = make_linear(store, path + "/ffn/ff1", model_dim, ff_dim);
    layer.ff2 = make_linear(store, path + "/ffn/ff2", ff_dim, model_dim);
    return layer;
}

Var TransformerLayer::forward(Tape& t, Var h, std::optional<Var> cond, Rng* rng) const {
    // self-attention sub-block
    Var attn_in = h;
    Var n1 = ln1.forward(t, h);
    Var sa = multihead_attention(t, n1, n1, wq, wk, wv, wo, n_heads, rng);
    Var block = t.add(h, sa);
    if (attn_adapter) block = adapter_block_forward(t, *attn_adapter, attn_in, block, rng);

    // cross-attention between the two sub-blocks, queries from hidden states
    if (cross_attn && cond.has_value() && t.val(*cond).rows() > 0) {
        Var ca = multihead_attention(t, block, *cond, cross_attn->wq, cross_attn->wk, cross_attn->wv,
                                     cross_attn->wo, cross_attn->n_heads, rng);
        block = t.add(block, ca);
    }

    // feed-forward sub-block
    Var ffn_in = block;
    Var ff = ff2.forward(t, t.relu(ff1.forward(t, ln2.forward(t, block), rng)), rng);
    Var out = t.add(block, ff);
    if (ffn_adapter) out = adapter_block_forward(t, *ffn_adapter, ffn_in, out, rng);
    return out;
}

TransformerStack make_stack(ParameterStore& store, const std::string& path, int n_layers,
                            int model_dim, int ff_dim, int n_heads, int max_seq_len) {
    TransformerStack s;
    s.model_dim = model_dim;
    s.max_seq_len = max_seq_len;
    s.pos_emb = &store.create(path + "/pos_emb", {max_seq_len, model_dim},
                              ParameterStore::Init::normal_002);
    for (int i = 0; i < n_layers; ++i) {
        s.layers.push_back(
            make_transformer_layer(store, path + "/layer" + std::to_string(i), model_dim, ff_dim, n_heads));
    }
    s.final_ln = make_layer_norm(store, path + "/final_ln", model_dim);
    return s;
}

Var TransformerStack::forward(Tape& t, Var x, std::optional<Var> cond, Rng* rng) const {
    int frames = t.val(x).rows();
    if (frames > max_seq_len) {
        throw std::invalid_argument("sequence length " + std::to_string(frames) +
                                    " exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    Var h = t.add(x, t.slice(t.param(*pos_emb), 0, 0, frames));
    for (const auto& layer : layers) h = layer.forward(t, h, cond, rng);
    return final_ln.forward(t, h);
}

// ---------------------------------------------------------------------------
// configs

void BackboneConfig::validate() const {
    if (n_layers < 1 || model_dim < 1 || ff_dim < 1 || n_heads < 1 || feature_dim < 1 ||
        max_seq_len < 1 || vocab_size < 1) {
        throw std::invalid_argument("backbone config: all dimensions must be positive");
    }
    if (model_dim % n_heads != 0) {
        throw std::invalid_argument("backbone config: model_dim must be divisible by n_heads");
    }
}

void DurationConfig::validate() const {
    if (n_layers < 1 || model_dim < 1 || ff_dim < 1 || n_heads < 1 || max_seq_len < 1 ||
        vocab_size < 1) {
        throw std::invalid_argument("duration config: all dimensions must be positive");
    }
    if (model_dim % n_heads != 0) {
        throw std::invalid_argument("duration config: model_dim must be divisible by n_heads");
    }
}

// ---------------------------------------------------------------------------
// time embedding

Tensor sinusoidal_time_embedding(double t, int dim) {
    if (dim <= 0 || dim % 2 != 0) {
        throw std::invalid_argument("sinusoidal_time_embedding: dim must be positive and even");
    }
    if (t < 0.0 || t > 1.0) {
        throw std::invalid_argument("sinusoidal_time_embedding: t must lie in [0, 1]");
    }
    Tensor out = Tensor::zeros({dim});
    double pos = t * 1000.0;
    for (int i = 0; i < dim / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / dim);
        out.data[static_cast<size_t>(2 * i)] = static_cast<real>(std::sin(pos * freq));
        out.data[static_cast<size_t>(2 * i + 1)] = static_cast<real>(std::cos(pos * freq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// VectorFieldModel

VectorFieldModel::VectorFieldModel(const BackboneConfig& c, uint64_t seed, bool materialize)
    : cfg(c), store(seed, materialize) {
    cfg.validate();
    sym_emb = &store.create("backbone/sym_emb", {cfg.vocab_size, cfg.model_dim},
                            ParameterStore::Init::normal_002);
    input_proj = make_linear(store, "backbone/input_proj", concat_width(), cfg.model_dim);
    stack = make_stack(store, "backbone/stack", cfg.n_layers, cfg.model_dim, cfg.ff_dim, cfg.n_heads,
                       cfg.max_seq_len);
    head = make_linear(store, "backbone/head", cfg.model_dim, cfg.feature_dim);
}

VectorFieldModel::~VectorFieldModel() = default;

Var VectorFieldModel::assemble(Tape& t, double time, Var z_p, Var masked_x, Var psi_t) const {
    const Tensor& zp = t.val(z_p);
    const Tensor& mx = t.val(masked_x);
    const Tensor& ps = t.val(psi_t);
    int frames = zp.rows();
    if (mx.rows() != frames || ps.rows() != frames) {
        throw std::invalid_argument("assemble: sequence length mismatch, z_p " + zp.shape_str() +
                                    " masked_x " + mx.shape_str() + " psi_t " + ps.shape_str());
    }
    if (zp.cols() != cfg.model_dim || mx.cols() != cfg.feature_dim + 1 || ps.cols() != cfg.feature_dim) {
        throw std::invalid_argument("assemble: channel mismatch for config");
    }
    Tensor temb = sinusoidal_time_embedding(time, cfg.model_dim);
    Tensor tiled = Tensor::zeros({frames, cfg.model_dim});
    for (int r = 0; r < frames; ++r) {
        for (int c2 = 0; c2 < cfg.model_dim; ++c2) tiled.at(r, c2) = temb.data[static_cast<size_t>(c2)];
    }
    Var cat = t.concat({t.constant(std::move(tiled)), z_p, masked_x, psi_t}, 1);
    return input_proj.forward(t, cat);
}

Var VectorFieldModel::embed_frames(Tape& t, const std::vector<int>& frame_symbols) const {
    std::vector<int> ones(frame_symbols.size(), 1);
    return expand_to_alignment(t, *sym_emb, frame_symbols, ones);
}

Var backbone_forward(const VectorFieldModel& model, Tape& t, Var assembled,
                     std::optional<Var> cond, Rng* rng) {
    if (cond.has_value() && !model.has_adapters()) {
        throw std::invalid_argument(
            "backbone_forward: condition context supplied but no cross-attention modules injected");
    }
    Var h = model.stack.forward(t, assembled, cond, rng);
    return model.head.forward(t, h, rng);
}

// ---------------------------------------------------------------------------
// DurationModel

DurationModel::DurationModel(const DurationConfig& c, uint64_t seed, bool materialize)
    : cfg(c), store(seed, materialize) {
    cfg.validate();
    sym_emb = &store.create("duration/sym_emb", {cfg.vocab_size, cfg.model_dim},
                            ParameterStore::Init::normal_002);
    stack = make_stack(store, "duration/stack", cfg.n_layers, cfg.model_dim, cfg.ff_dim, cfg.n_heads,
                       cfg.max_seq_len);
    head = make_linear(store, "duration/head", cfg.model_dim, 1);
}

DurationModel::~DurationModel() = default;

Var DurationModel::forward_raw(Tape& t, const std::vector<int>& symbols, std::optional<Var> cond,
                               Rng* rng) const {
    if (symbols.empty()) throw std::invalid_argument("duration model: empty symbol sequence");
    if (cond.has_value() && !has_adapters()) {
        throw std::invalid_argument("duration model: condition supplied but no adapters injected");
    }
    std::vector<int> ones(symbols.size(), 1);
    Var x = expand_to_alignment(t, *sym_emb, symbols, ones);
    Var h = stack.forward(t, x, cond, rng);
    return head.forward(t, h, rng);
}

std::vector<int> predict_durations(const DurationModel& model, const std::vector<int>& symbols,
                                   const std::vector<int>* cond_tokens) {
    Tape t(false);
    std::optional<Var> cond;
    if (cond_tokens != nullptr && !cond_tokens->empty()) {
        if (!model.has_adapters()) {
            throw std::invalid_argument("predict_durations: condition tokens need injected adapters");
        }
        cond = encode_condition(*model.adapters, t, *cond_tokens);
    }
    Var raw = model.forward_raw(t, symbols, cond, nullptr);
    const Tensor& v = t.val(raw);
    std::vector<int> out;
    out.reserve(symbols.size());
    for (int i = 0; i < v.rows(); ++i) {
        double r = std::nearbyint(static_cast<double>(v.at(i, 0)));  // ties-to-even
        out.push_back(r < 1.0 ? 1 : static_cast<int>(r));
    }
    return out;
}

Var duration_loss(Tape& t, Var raw_predictions, const std::vector<int>& gold) {
    const Tensor& p = t.val(raw_predictions);
    if (p.rows() != static_cast<int>(gold.size())) {
        throw std::invalid_argument("duration_loss: length mismatch, " + std::to_string(p.rows()) +
                                    " predictions vs " + std::to_string(gold.size()) + " gold");
    }
    Tensor g = Tensor::zeros({static_cast<int>(gold.size()), 1});
    for (size_t i = 0; i < gold.size(); ++i) g.data[i] = static_cast<real>(gold[i]);
    Var diff = t.sub(raw_predictions, t.constant(std::move(g)));
    // |x| = relu(x) + relu(-x): mean absolute error out of the fixed primitive set
    Var absdiff = t.add(t.relu(diff), t.relu(t.scale(diff, -1.0)));
    return t.mean(absdiff);
}

Var expand_to_alignment(Tape& t, Parameter& embedding_table, const std::vector<int>& symbols,
                        const std::vector<int>& durations) {
    if (symbols.size() != durations.size()) {
        throw std::invalid_argument("expand_to_alignment: symbols/durations length mismatch");
    }
    Var table = t.param(embedding_table);
    int vocab = t.val(table).rows();
    std::vector<Var> rows;
    for (size_t i = 0; i < symbols.size(); ++i) {
        if (durations[i] < 1) {
            throw std::invalid_argument("expand_to_alignment: duration < 1 at position " +
                                        std::to_string(i));
        }
        if (symbols[i] < 0 || symbols[i] >= vocab) {
            throw std::invalid_argument("expand_to_alignment: symbol id out of range");
        }
        Var row = t.slice(table, 0, symbols[i], 1);
        for (int d = 0; d < durations[i]; ++d) rows.push_back(row);
    }
    if (rows.empty()) return t.constant(Tensor::zeros({0, t.val(table).cols()}));
    return t.concat(rows, 0);
}

std::vector<int> expand_symbol_ids(const std::vector<int>& symbols,
                                   const std::vector<int>& durations) {
    if (symbols.size() != durations.size()) {
        throw std::invalid_argument("expand_symbol_ids: length mismatch");
    }
    std::vector<int> out;
    for (size_t i = 0; i < symbols.size(); ++i) {
        if (durations[i] < 1) throw std::invalid_argument("expand_symbol_ids: duration < 1");
        for (int d = 0; d < durations[i]; ++d) out.push_back(symbols[i]);
    }
    return out;
}

}  // namespace flowtune
