#pragma once

#include <cstdint>
#include <string>

#include "flowtune/model.hpp"

namespace flowtune {

struct CheckpointMeta {
    uint32_t version = 0;
    uint64_t fingerprint = 0;
    uint64_t step = 0;
    uint32_t n_params = 0;
};

// Single file, little-endian, versioned header, parameters in canonical
// (sorted path) order with explicit trainable flags. float64 payload, so
// save/load round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParameterStore& store, uint64_t fingerprint,
                     uint64_t step);

// Loads into an already-built store: the parameter sets must match exactly
// (same paths, same shapes). A fingerprint mismatch is an error unless
// override_fingerprint is set; it is never silently ignored.
CheckpointMeta load_checkpoint(const std::string& path, ParameterStore& store,
                               uint64_t expected_fingerprint, bool override_fingerprint = false);

CheckpointMeta read_checkpoint_meta(const std::string& path);

// FNV-1a over a whole file; used to compare checkpoints across runs.
uint64_t file_fingerprint(const std::string& path);

}  // namespace flowtune
