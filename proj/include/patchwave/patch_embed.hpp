#pragma once

// Tokenization front end: slice each channel into patches of length P with
// stride S, project to the latent dimension, add the learned positional
// table, then dropout.

#include "patchwave/tape.hpp"

namespace patchwave {

struct PatchConfig {
    int64_t length = 4096;       // L
    int64_t patch_len = 128;     // P
    int64_t stride = 128;        // S
    int64_t latent_dim = 128;    // D
    double dropout_rate = 0.1;   // applied after the positional add

    void validate() const {
        if (patch_len < 1 || patch_len > length) {
            throw config_error("patch config: need 1 <= P <= L");
        }
        if (stride < 1) throw config_error("patch config: stride must be >= 1");
        if (latent_dim < 1) throw config_error("patch config: latent dim must be >= 1");
    }

    // N = floor((L - P) / S) + 1; trailing samples that do not fill a patch
    // are dropped.
    int64_t token_count() const {
        validate();
        return (length - patch_len) / stride + 1;
    }
};

// Slice one channel (length L) into the N×P patch matrix. Patch k covers
// [k·S, k·S + P).
template <class T>
Tensor<T> segment(const T* channel, int64_t length, const PatchConfig& cfg) {
    if (length != cfg.length) {
        throw shape_error("segment: channel length " + std::to_string(length) + " != configured L " +
                          std::to_string(cfg.length));
    }
    const int64_t n = cfg.token_count();
    const int64_t p = cfg.patch_len;
    Tensor<T> out({n, p});
    for (int64_t i = 0; i < n; ++i) {
        const T* src = channel + i * cfg.stride;
        std::copy(src, src + p, out.data.begin() + i * p);
    }
    return out;
}

template <class T>
Tensor<T> segment(const std::vector<T>& channel, const PatchConfig& cfg) {
    return segment(channel.data(), static_cast<int64_t>(channel.size()), cfg);
}

// Linear projection of raw patches: row n of the result is W·patch_n + b.
// Weights are stored input-major (P×D), so this is one matmul plus bias.
template <class T>
ValueId embed_patches(GradTape<T>& t, ValueId raw, ValueId w, ValueId b) {
    return add_bias(t, matmul(t, raw, w), b);
}

// Dropout(z + E_pos). `z` holds `nblocks` stacked N×D token blocks (one per
// record-channel); the positional table is shared across all of them.
template <class T>
ValueId add_position(GradTape<T>& t, ValueId z, ValueId e_pos, double rate, bool training,
                     CounterRng& rng, int64_t nblocks = 1) {
    const auto& zv = t.val(z);
    const auto& ev = t.val(e_pos);
    if (zv.shape.size() != 2 || ev.shape.size() != 2) throw shape_error("add_position: 2-D inputs required");
    if (zv.shape[0] != ev.shape[0] * nblocks || zv.shape[1] != ev.shape[1]) {
        throw shape_error("add_position: shape mismatch " + shape_str(zv.shape) + " vs " +
                          shape_str(ev.shape) + " x" + std::to_string(nblocks));
    }
    ValueId tiled = nblocks == 1 ? e_pos : broadcast_rows(t, e_pos, nblocks);
    return dropout(t, add(t, z, tiled), rate, training, rng);
}

}  // namespace patchwave
