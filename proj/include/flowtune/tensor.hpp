#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowtune {

// Compile-time precision switch. Tests and checkpoints assume double; the
// float32 fast mode is opt-in via -DFLOWTUNE_FAST_FLOAT32 and excluded from
// the gradient acceptance suite.
#ifdef FLOWTUNE_FAST_FLOAT32
using real = float;
#else
using real = double;
#endif

// Dense row-major tensor. Plain value type: no view aliasing, no strides.
// Gradient participation is handled by the tape, not by the tensor itself.
struct Tensor {
    std::vector<int> shape;
    std::vector<real> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<real> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<int64_t>(data.size())) {
            throw std::invalid_argument("Tensor: shape/data size mismatch");
        }
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(static_cast<size_t>(numel_of(t.shape)), real(0));
        return t;
    }
    static Tensor full(std::vector<int> s, real v) {
        Tensor t = zeros(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor scalar(real v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    // 2-D helpers; most model state is (rows, cols).
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }

    real& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    real at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

inline bool all_finite(const Tensor& t) {
    for (real v : t.data) {
        if (!(v == v) || v > 1e300 || v < -1e300) return false;
    }
    return true;
}

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    real m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        real d = a.data[i] - b.data[i];
        if (d < 0) d = -d;
        if (d > m) m = d;
    }
    return m;
}

// FNV-1a over raw bytes; used for checkpoint/config fingerprints.
inline uint64_t fnv1a(const void* p, size_t n, uint64_t h = 1469598103934665603ULL) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace flowtune
