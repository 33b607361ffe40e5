#include "flowtune/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace flowtune {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& os, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
}

double get_f64(std::istream& is) {
    uint64_t bits = get_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store, uint64_t fingerprint,
                     uint64_t step) {
    if (!store.materialized()) {
        throw std::invalid_argument("save_checkpoint: store is shape-only");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u64(os, fingerprint);
    put_u64(os, step);
    put_u32(os, static_cast<uint32_t>(store.all().size()));
    for (const auto& [p, param] : store.all()) {
        put_u32(os, static_cast<uint32_t>(p.size()));
        os.write(p.data(), static_cast<std::streamsize>(p.size()));
        os.put(param.trainable ? 1 : 0);
        put_u32(os, static_cast<uint32_t>(param.value.shape.size()));
        for (int d : param.value.shape) put_u32(os, static_cast<uint32_t>(d));
        for (real v : param.value.data) put_f64(os, static_cast<double>(v));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    CheckpointMeta meta;
    meta.version = get_u32(is);
    if (meta.version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(meta.version));
    }
    meta.fingerprint = get_u64(is);
    meta.step = get_u64(is);
    meta.n_params = get_u32(is);
    return meta;
}

CheckpointMeta load_checkpoint(const std::string& path, ParameterStore& store,
                               uint64_t expected_fingerprint, bool override_fingerprint) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    CheckpointMeta meta;
    meta.version = get_u32(is);
    if (meta.version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(meta.version));
    }
    meta.fingerprint = get_u64(is);
    meta.step = get_u64(is);
    meta.n_params = get_u32(is);
    if (meta.fingerprint != expected_fingerprint && !override_fingerprint) {
        throw std::runtime_error("checkpoint: config fingerprint mismatch for " + path +
                                 " (use the explicit override to load anyway)");
    }
    if (meta.n_params != store.all().size()) {
        throw std::runtime_error("checkpoint: holds " + std::to_string(meta.n_params) +
                                 " parameters but the model has " +
                                 std::to_string(store.all().size()));
    }
    for (uint32_t i = 0; i < meta.n_params; ++i) {
        uint32_t len = get_u32(is);
        std::string p(len, '\0');
        is.read(p.data(), len);
        int trainable = is.get();
        uint32_t ndim = get_u32(is);
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(get_u32(is));
        Parameter* param = store.find(p);
        if (param == nullptr) {
            throw std::runtime_error("checkpoint: parameter \"" + p + "\" not present in the model");
        }
        if (param->value.shape != shape) {
            throw std::runtime_error("checkpoint: shape mismatch for \"" + p + "\"");
        }
        for (auto& v : param->value.data) v = static_cast<real>(get_f64(is));
        param->trainable = trainable != 0;
    }
    if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
    return meta;
}

uint64_t file_fingerprint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("file_fingerprint: cannot open " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[65536];
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a(buf, static_cast<size_t>(is.gcount()), h);
    }
    return h;
}

}  // namespace flowtune
