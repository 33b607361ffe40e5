#include "flowtune/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowtune {

namespace {

int last_dim(const Tensor& t) {
    if (t.shape.empty()) throw std::invalid_argument("op on rank-0 tensor");
    return t.shape.back();
}
int lead_rows(const Tensor& t) {
    int c = last_dim(t);
    return c == 0 ? 0 : static_cast<int>(t.numel() / c);
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

enum class BCast { same, scalar_b, suffix_b };

BCast bcast_kind(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape == b.shape) return BCast::same;
    if (b.numel() == 1) return BCast::scalar_b;
    if (b.shape.size() < a.shape.size()) {
        size_t off = a.shape.size() - b.shape.size();
        bool suffix = true;
        for (size_t i = 0; i < b.shape.size(); ++i) {
            if (a.shape[off + i] != b.shape[i]) suffix = false;
        }
        if (suffix) return BCast::suffix_b;
    }
    shape_error(op, a, b);
}

// C += A(m,k) . B(k,n)
void mm_nn(const real* A, const real* B, real* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        real* c = C + static_cast<size_t>(i) * n;
        const real* a = A + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            real av = a[p];
            if (av == real(0)) continue;
            const real* b = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C += A(m,k) . B(n,k)^T
void mm_nt(const real* A, const real* B, real* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const real* a = A + static_cast<size_t>(i) * k;
        real* c = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const real* b = B + static_cast<size_t>(j) * k;
            real acc = 0;
            for (int p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// C += A(k,m)^T . B(k,n)
void mm_tn(const real* A, const real* B, real* C, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const real* a = A + static_cast<size_t>(p) * m;
        const real* b = B + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            real av = a[i];
            if (av == real(0)) continue;
            real* c = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// Materialized accumulate: dst += src elementwise. Matmul backward kernels
// compute their full local contribution into a zero temp first so that a
// parameter used twice receives exactly the sum of the two single-use
// gradients, independent of kernel interleaving.
void axpy(Tensor& dst, const Tensor& src) {
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

void Tape::check_var(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("Var does not belong to this tape");
    }
}

Tensor& Tape::g(int id) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    if (!nd.grad_live) {
        nd.grad = Tensor::zeros(nd.value.shape);
        nd.grad_live = true;
    }
    return nd.grad;
}

Var Tape::push(Tensor value, std::vector<int> inputs, std::function<void(Tape&, int)> back) {
    Node nd;
    nd.value = std::move(value);
    nd.inputs = std::move(inputs);
    for (int in : nd.inputs) {
        if (nodes_[static_cast<size_t>(in)].requires_grad) nd.requires_grad = true;
    }
    if (nd.requires_grad) nd.back = std::move(back);
    nodes_.push_back(std::move(nd));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node nd;
    nd.value = std::move(value);
    nd.requires_grad = requires_grad;
    nodes_.push_back(std::move(nd));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
    auto it = param_leaves_.find(&p);
    if (it != param_leaves_.end()) return Var{this, it->second};
    Var v = leaf(p.value, p.trainable && training_);
    param_leaves_.emplace(&p, v.id);
    return v;
}

Tensor Tape::grad_or_zero(Var v) const {
    const Node& nd = node_at(v);
    if (nd.grad_live) return nd.grad;
    return Tensor::zeros(nd.value.shape);
}

void Tape::backward(Var out) {
    const Node& o = node_at(out);
    if (o.value.numel() != 1) {
        throw std::invalid_argument("backward: output must be scalar, got " + o.value.shape_str());
    }
    if (!o.requires_grad) return;
    g(out.id).data[0] = 1;
    for (int id = out.id; id >= 0; --id) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        if (nd.grad_live && nd.back) nd.back(*this, id);
    }
}

// ---------------------------------------------------------------------------
// binary elementwise

Var Tape::add(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = node_at(a).value;
    const Tensor& tb = node_at(b).value;
    BCast k = bcast_kind("add", ta, tb);
    Tensor out = ta;
    size_t bn = static_cast<size_t>(tb.numel());
    if (k == BCast::same) {
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    } else if (k == BCast::scalar_b) {
        for (auto& v : out.data) v += tb.data[0];
    } else {
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i % bn];
    }
    return push(std::move(out), {a.id, b.id}, [k, bn](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0], ib = nd.inputs[1];
        const Tensor& gy = nd.grad;
        if (t.wants_grad(ia)) {
            Tensor& ga = t.g(ia);
            for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i];
        }
        if (t.wants_grad(ib)) {
            Tensor& gb = t.g(ib);
            if (k == BCast::same) {
                for (size_t i = 0; i < gy.data.size(); ++i) gb.data[i] += gy.data[i];
            } else if (k == BCast::scalar_b) {
                for (real v : gy.data) gb.data[0] += v;
            } else {
                for (size_t i = 0; i < gy.data.size(); ++i) gb.data[i % bn] += gy.data[i];
            }
        }
    });
}

Var Tape::sub(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = node_at(a).value;
    const Tensor& tb = node_at(b).value;
    BCast k = bcast_kind("sub", ta, tb);
    Tensor out = ta;
    size_t bn = static_cast<size_t>(tb.numel());
    if (k == BCast::same) {
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
    } else if (k == BCast::scalar_b) {
        for (auto& v : out.data) v -= tb.data[0];
    } else {
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i % bn];
    }
    return push(std::move(out), {a.id, b.id}, [k, bn](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0], ib = nd.inputs[1];
        const Tensor& gy = nd.grad;
        if (t.wants_grad(ia)) {
            Tensor& ga = t.g(ia);
            for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i];
        }
        if (t.wants_grad(ib)) {
            Tensor& gb = t.g(ib);
            if (k == BCast::same) {
                for (size_t i = 0; i < gy.data.size(); ++i) gb.data[i] -= gy.data[i];
            } else if (k == BCast::scalar_b) {
                for (real v : gy.data) gb.data[0] -= v;
            } else {
                for (size_t i = 0; i < gy.data.size(); ++i) gb.data[i % bn] -= gy.data[i];
            }
        }
    });
}

Var Tape::mul(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = node_at(a).value;
    const Tensor& tb = node_at(b).value;
    BCast k = bcast_kind("mul", ta, tb);
    Tensor out = ta;
    size_t bn = static_cast<size_t>(tb.numel());
    if (k == BCast::same) {
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    } else if (k == BCast::scalar_b) {
        for (auto& v : out.data) v *= tb.data[0];
    } else {
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i % bn];
    }
    return push(std::move(out), {a.id, b.id}, [k, bn](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0], ib = nd.inputs[1];
        const Tensor& gy = nd.grad;
        const Tensor& va = t.n(ia).value;
        const Tensor& vb = t.n(ib).value;
        if (t.wants_grad(ia)) {
            Tensor& ga = t.g(ia);
            if (k == BCast::same) {
                for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i] * vb.data[i];
            } else if (k == BCast::scalar_b) {
                for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i] * vb.data[0];
            } else {
                for (size_t i = 0; i < gy.data.size(); ++i)
                    ga.data[i] += gy.data[i] * vb.data[i % bn];
            }
        }
        if (t.wants_grad(ib)) {
            Tensor& gb = t.g(ib);
            if (k == BCast::same) {
                for (size_t i = 0; i < gy.data.size(); ++i) gb.data[i] += gy.data[i] * va.data[i];
            } else if (k == BCast::scalar_b) {
                for (size_t i = 0; i < gy.data.size(); ++i) gb.data[0] += gy.data[i] * va.data[i];
            } else {
                for (size_t i = 0; i < gy.data.size(); ++i)
                    gb.data[i % bn] += gy.data[i] * va.data[i];
            }
        }
    });
}

Var Tape::scale(Var a, double c) {
    check_var(a);
    Tensor out = node_at(a).value;
    for (auto& v : out.data) v = static_cast<real>(v * c);
    return push(std::move(out), {a.id}, [c](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0];
        if (!t.wants_grad(ia)) return;
        Tensor& ga = t.g(ia);
        for (size_t i = 0; i < nd.grad.data.size(); ++i)
            ga.data[i] += static_cast<real>(nd.grad.data[i] * c);
    });
}

// ---------------------------------------------------------------------------
// matrix multiply family

Var Tape::matmul(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = node_at(a).value;
    const Tensor& tb = node_at(b).value;
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[0])
        shape_error("matmul", ta, tb);
    int m = ta.shape[0], k = ta.shape[1], nn = tb.shape[1];
    Tensor out = Tensor::zeros({m, nn});
    mm_nn(ta.data.data(), tb.data.data(), out.data.data(), m, k, nn);
    return push(std::move(out), {a.id, b.id}, [m, k, nn](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0], ib = nd.inputs[1];
        const Tensor& gy = nd.grad;
        if (t.wants_grad(ia)) {
            Tensor tmp = Tensor::zeros({m, k});
            mm_nt(gy.data.data(), t.n(ib).value.data.data(), tmp.data.data(), m, nn, k);
            axpy(t.g(ia), tmp);
        }
        if (t.wants_grad(ib)) {
            Tensor tmp = Tensor::zeros({k, nn});
            mm_tn(t.n(ia).value.data.data(), gy.data.data(), tmp.data.data(), k, m, nn);
            axpy(t.g(ib), tmp);
        }
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = node_at(a).value;
    const Tensor& tb = node_at(b).value;
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[1])
        shape_error("matmul_nt", ta, tb);
    int m = ta.shape[0], k = ta.shape[1], nn = tb.shape[0];
    Tensor out = Tensor::zeros({m, nn});
    mm_nt(ta.data.data(), tb.data.data(), out.data.data(), m, k, nn);
    return push(std::move(out), {a.id, b.id}, [m, k, nn](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0], ib = nd.inputs[1];
        const Tensor& gy = nd.grad;
        if (t.wants_grad(ia)) {
            Tensor tmp = Tensor::zeros({m, k});
            mm_nn(gy.data.data(), t.n(ib).value.data.data(), tmp.data.data(), m, nn, k);
            axpy(t.g(ia), tmp);
        }
        if (t.wants_grad(ib)) {
            Tensor tmp = Tensor::zeros({nn, k});
            mm_tn(gy.data.data(), t.n(ia).value.data.data(), tmp.data.data(), nn, m, k);
            axpy(t.g(ib), tmp);
        }
    });
}

Var Tape::matmul_tn(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = node_at(a).value;
    const Tensor& tb = node_at(b).value;
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[0] != tb.shape[0])
        shape_error("matmul_tn", ta, tb);
    int k = ta.shape[0], m = ta.shape[1], nn = tb.shape[1];
    Tensor out = Tensor::zeros({m, nn});
    mm_tn(ta.data.data(), tb.data.data(), out.data.data(), m, k, nn);
    return push(std::move(out), {a.id, b.id}, [m, k, nn](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0], ib = nd.inputs[1];
        const Tensor& gy = nd.grad;
        if (t.wants_grad(ia)) {
            Tensor tmp = Tensor::zeros({k, m});
            mm_nt(t.n(ib).value.data.data(), gy.data.data(), tmp.data.data(), k, nn, m);
            axpy(t.g(ia), tmp);
        }
        if (t.wants_grad(ib)) {
            Tensor tmp = Tensor::zeros({k, nn});
            mm_nn(t.n(ia).value.data.data(), gy.data.data(), tmp.data.data(), k, m, nn);
            axpy(t.g(ib), tmp);
        }
    });
}

// ---------------------------------------------------------------------------
// nonlinearities and normalization

Var Tape::relu(Var a) {
    check_var(a);
    Tensor out = node_at(a).value;
    for (auto& v : out.data) v = v > real(0) ? v : real(0);
    return push(std::move(out), {a.id}, [](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0];
        if (!t.wants_grad(ia)) return;
        const Tensor& x = t.n(ia).value;
        Tensor& ga = t.g(ia);
        for (size_t i = 0; i < x.data.size(); ++i) {
            if (x.data[i] > real(0)) ga.data[i] += nd.grad.data[i];
        }
    });
}

Var Tape::softmax_rows(Var a) {
    check_var(a);
    const Tensor& ta = node_at(a).value;
    int cols = last_dim(ta);
    int rows = lead_rows(ta);
    if (cols == 0) throw std::invalid_argument("softmax: empty last dimension");
    Tensor out = ta;
    for (int r = 0; r < rows; ++r) {
        real* p = out.data.data() + static_cast<size_t>(r) * cols;
        real mx = p[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, p[j]);
        real s = 0;
        for (int j = 0; j < cols; ++j) {
            p[j] = std::exp(p[j] - mx);
            s += p[j];
        }
        for (int j = 0; j < cols; ++j) p[j] /= s;
    }
    return push(std::move(out), {a.id}, [rows, cols](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0];
        if (!t.wants_grad(ia)) return;
        Tensor& ga = t.g(ia);
        const Tensor& y = nd.value;
        for (int r = 0; r < rows; ++r) {
            size_t off = static_cast<size_t>(r) * cols;
            real dot = 0;
            for (int j = 0; j < cols; ++j) dot += nd.grad.data[off + j] * y.data[off + j];
            for (int j = 0; j < cols; ++j)
                ga.data[off + j] += y.data[off + j] * (nd.grad.data[off + j] - dot);
        }
    });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    check_var(x);
    check_var(gain);
    check_var(bias);
    const Tensor& tx = node_at(x).value;
    const Tensor& tg = node_at(gain).value;
    const Tensor& tb = node_at(bias).value;
    int cols = last_dim(tx);
    int rows = lead_rows(tx);
    if (tg.ndim() != 1 || tg.shape[0] != cols) shape_error("layer_norm(gain)", tx, tg);
    if (tb.ndim() != 1 || tb.shape[0] != cols) shape_error("layer_norm(bias)", tx, tb);
    Tensor out = Tensor::zeros(tx.shape);
    Tensor xhat = Tensor::zeros(tx.shape);
    std::vector<real> inv_std(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        size_t off = static_cast<size_t>(r) * cols;
        real mu = 0;
        for (int j = 0; j < cols; ++j) mu += tx.data[off + j];
        mu /= cols;
        real var = 0;
        for (int j = 0; j < cols; ++j) {
            real d = tx.data[off + j] - mu;
            var += d * d;
        }
        var /= cols;
        real is = real(1) / std::sqrt(var + static_cast<real>(eps));
        inv_std[static_cast<size_t>(r)] = is;
        for (int j = 0; j < cols; ++j) {
            real h = (tx.data[off + j] - mu) * is;
            xhat.data[off + j] = h;
            out.data[off + j] = h * tg.data[static_cast<size_t>(j)] + tb.data[static_cast<size_t>(j)];
        }
    }
    return push(std::move(out), {x.id, gain.id, bias.id},
                [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int id) {
                    const Node& nd = t.n(id);
                    int ix = nd.inputs[0], ig = nd.inputs[1], ib = nd.inputs[2];
                    const Tensor& gy = nd.grad;
                    const Tensor& tg = t.n(ig).value;
                    for (int r = 0; r < rows; ++r) {
                        size_t off = static_cast<size_t>(r) * cols;
                        if (t.wants_grad(ig)) {
                            Tensor& gg = t.g(ig);
                            for (int j = 0; j < cols; ++j)
                                gg.data[static_cast<size_t>(j)] += gy.data[off + j] * xhat.data[off + j];
                        }
                        if (t.wants_grad(ib)) {
                            Tensor& gb = t.g(ib);
                            for (int j = 0; j < cols; ++j) gb.data[static_cast<size_t>(j)] += gy.data[off + j];
                        }
                        if (t.wants_grad(ix)) {
                            Tensor& gx = t.g(ix);
                            real m1 = 0, m2 = 0;
                            for (int j = 0; j < cols; ++j) {
                                real gh = gy.data[off + j] * tg.data[static_cast<size_t>(j)];
                                m1 += gh;
                                m2 += gh * xhat.data[off + j];
                            }
                            m1 /= cols;
                            m2 /= cols;
                            real is = inv_std[static_cast<size_t>(r)];
                            for (int j = 0; j < cols; ++j) {
                                real gh = gy.data[off + j] * tg.data[static_cast<size_t>(j)];
                                gx.data[off + j] += is * (gh - m1 - xhat.data[off + j] * m2);
                            }
                        }
                    }
                });
}

// ---------------------------------------------------------------------------
// reductions

Var Tape::sum(Var a) {
    check_var(a);
    const Tensor& ta = node_at(a).value;
    real s = 0;
    for (real v : ta.data) s += v;
    return push(Tensor::scalar(s), {a.id}, [](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0];
        if (!t.wants_grad(ia)) return;
        Tensor& ga = t.g(ia);
        real gy = nd.grad.data[0];
        for (auto& v : ga.data) v += gy;
    });
}

Var Tape::mean(Var a) {
    check_var(a);
    const Tensor& ta = node_at(a).value;
    if (ta.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    real s = 0;
    for (real v : ta.data) s += v;
    real inv = real(1) / static_cast<real>(ta.numel());
    return push(Tensor::scalar(s * inv), {a.id}, [inv](Tape& t, int id) {
        const Node& nd = t.n(id);
        int ia = nd.inputs[0];
        if (!t.wants_grad(ia)) return;
        Tensor& ga = t.g(ia);
        real gy = nd.grad.data[0] * inv;
        for (auto& v : ga.data) v += gy;
    });
}

// ---------------------------------------------------------------------------
// shape ops

Var Tape::concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
        check_var(p);
        ids.push_back(p.id);
    }
    const Tensor& t0 = node_at(parts[0]).value;
    int nd = t0.ndim();
    if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: bad axis");
    if (nd != 1 && nd != 2) throw std::invalid_argument("concat: rank must be 1 or 2");

    std::vector<int> out_shape = t0.shape;
    out_shape[axis] = 0;
    for (int id : ids) {
        const Tensor& ti = nodes_[static_cast<size_t>(id)].value;
        if (ti.ndim() != nd) shape_error("concat", t0, ti);
        for (int d = 0; d < nd; ++d) {
            if (d != axis && ti.shape[d] != t0.shape[d]) shape_error("concat", t0, ti);
        }
        out_shape[axis] += ti.shape[axis];
    }
    Tensor out = Tensor::zeros(out_shape);
    if (nd == 1 || axis == 0) {
        size_t off = 0;
        for (int id : ids) {
            const Tensor& ti = nodes_[static_cast<size_t>(id)].value;
            std::copy(ti.data.begin(), ti.data.end(), out.data.begin() + static_cast<long>(off));
            off += ti.data.size();
        }
    } else {  // 2-D, axis 1
        int rows = out_shape[0], ocols = out_shape[1];
        int col0 = 0;
        for (int id : ids) {
            const Tensor& ti = nodes_[static_cast<size_t>(id)].value;
            int c = ti.shape[1];
            for (int r = 0; r < rows; ++r) {
                std::copy(ti.data.begin() + static_cast<long>(r) * c,
                          ti.data.begin() + static_cast<long>(r + 1) * c,
                          out.data.begin() + static_cast<long>(r) * ocols + col0);
            }
            col0 += c;
        }
    }
    return push(std::move(out), ids, [axis](Tape& t, int id) {
        const Node& nd2 = t.n(id);
        const Tensor& gy = nd2.grad;
        if (nd2.value.ndim() == 1 || axis == 0) {
            size_t off = 0;
            for (int in : nd2.inputs) {
                size_t cnt = t.n(in).value.data.size();
                if (t.wants_grad(in)) {
                    Tensor& gi = t.g(in);
                    for (size_t i = 0; i < cnt; ++i) gi.data[i] += gy.data[off + i];
                }
                off += cnt;
            }
        } else {
            int rows = nd2.value.shape[0], ocols = nd2.value.shape[1];
            int col0 = 0;
            for (int in : nd2.inputs) {
                int c = t.n(in).value.shape[1];
                if (t.wants_grad(in)) {
                    Tensor& gi = t.g(in);
                    for (int r = 0; r < rows; ++r) {
                        for (int j = 0; j < c; ++j) {
                            gi.data[static_cast<size_t>(r) * c + j] +=
                                gy.data[static_cast<size_t>(r) * ocols + col0 + j];
                        }
                    }
                }
                col0 += c;
            }
        }
    });
}

Var Tape::slice(Var a, int axis, int start, int len) {
    check_var(a);
    const Tensor& ta = node_at(a).value;
    int nd = ta.ndim();
    if (nd != 1 && nd != 2) throw std::invalid_argument("slice: rank must be 1 or 2");
    if (axis < 0 || axis >= nd) throw std::invalid_argument("slice: bad axis");
    if (start < 0 || len < 0 || start + len > ta.shape[axis]) {
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of bounds for " +
                                    ta.shape_str());
    }
    std::vector<int> out_shape = ta.shape;
    out_shape[axis] = len;
    Tensor out = Tensor::zeros(out_shape);
    if (nd == 1 || axis == 0) {
        int cols = nd == 2 ? ta.shape[1] : 1;
        std::copy(ta.data.begin() + static_cast<long>(start) * cols,
                  ta.data.begin() + static_cast<long>(start + len) * cols, out.data.begin());
    } else {
        int rows = ta.shape[0], icols = ta.shape[1];
        for (int r = 0; r < rows; ++r) {
            std::copy(ta.data.begin() + static_cast<long>(r) * icols + start,
                      ta.data.begin() + static_cast<long>(r) * icols + start + len,
                      out.data.begin() + static_cast<long>(r) * len);
        }
    }
    return push(std::move(out), {a.id}, [axis, start, len](Tape& t, int id) {
        const Node& nd2 = t.n(id);
        int ia = nd2.inputs[0];
        if (!t.wants_grad(ia)) return;
        Tensor& ga = t.g(ia);
        const Tensor& gy = nd2.grad;
        const Tensor& ta2 = t.n(ia).value;
        if (ta2.ndim() == 1 || axis == 0) {
            int cols = ta2.ndim() == 2 ? ta2.shape[1] : 1;
            for (size_t i = 0; i < gy.data.size(); ++i)
                ga.data[static_cast<size_t>(start) * cols + i] += gy.data[i];
        } else {
            int rows = ta2.shape[0], icols = ta2.shape[1];
            for (int r = 0; r < rows; ++r) {
                for (int j = 0; j < len; ++j) {
                    ga.data[static_cast<size_t>(r) * icols + start + j] +=
                        gy.data[static_cast<size_t>(r) * len + j];
                }
            }
        }
    });
}

}  // namespace flowtune
