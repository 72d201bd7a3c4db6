#pragma once

// Transformer encoder stack. Pre-norm residual layers: multi-head scaled
// dot-product self-attention, then a two-layer ReLU feed-forward block, each
// behind LayerNorm with dropout on the residual branch. The same weights are
// applied to every channel; channels never attend to each other.

#include "patchwave/patch_embed.hpp"
#include "patchwave/tape.hpp"

namespace patchwave {

struct EncoderConfig {
    int64_t model_dim = 128;    // D
    int64_t num_heads = 8;      // H
    int64_t num_layers = 4;
    int64_t ff_dim = 768;       // feed-forward width
    double attn_dropout = 0.1;
    double residual_dropout = 0.1;

    void validate() const {
        if (num_heads < 1 || model_dim % num_heads != 0) {
            throw config_error("encoder config: D must be divisible by H");
        }
        if (num_layers < 0) throw config_error("encoder config: layers must be >= 0");
        if (ff_dim < 1) throw config_error("encoder config: ff_dim must be >= 1");
    }

    int64_t head_dim() const { return model_dim / num_heads; }
};

// Per-layer learnable state. Q/K/V/O projections carry the H per-head D×d_k
// matrices packed along columns (head h owns columns [h·d_k, (h+1)·d_k)).
template <class T>
struct EncoderLayerParams {
    Tensor<T> wq, wk, wv, wo;          // D×D
    Tensor<T> ln1_gain, ln1_bias;      // D
    Tensor<T> ln2_gain, ln2_bias;      // D
    Tensor<T> ff1_w, ff1_b;            // D×ff, ff
    Tensor<T> ff2_w, ff2_b;            // ff×D, D

    static EncoderLayerParams init(const EncoderConfig& cfg, CounterRng rng, double stddev = 0.02) {
        const int64_t d = cfg.model_dim, f = cfg.ff_dim;
        EncoderLayerParams p;
        p.wq = Tensor<T>::randn({d, d}, rng.fork("wq"), stddev);
        p.wk = Tensor<T>::randn({d, d}, rng.fork("wk"), stddev);
        p.wv = Tensor<T>::randn({d, d}, rng.fork("wv"), stddev);
        p.wo = Tensor<T>::randn({d, d}, rng.fork("wo"), stddev);
        p.ln1_gain = Tensor<T>::ones({d});
        p.ln1_bias = Tensor<T>::zeros({d});
        p.ln2_gain = Tensor<T>::ones({d});
        p.ln2_bias = Tensor<T>::zeros({d});
        p.ff1_w = Tensor<T>::randn({d, f}, rng.fork("ff1"), stddev);
        p.ff1_b = Tensor<T>::zeros({f});
        p.ff2_w = Tensor<T>::randn({f, d}, rng.fork("ff2"), stddev);
        p.ff2_b = Tensor<T>::zeros({d});
        return p;
    }
};

// Tape-bound layer (leaf ids of one EncoderLayerParams).
struct BoundEncoderLayer {
    ValueId wq, wk, wv, wo;
    ValueId ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    ValueId ff1_w, ff1_b, ff2_w, ff2_b;
};

// Single attention head: Dropout(Softmax(QKᵀ/√d_k))·V with Q = z·W_q etc.
// Weight matrices are D×d_k slices, as in the per-head formulation.
template <class T>
ValueId attention_head(GradTape<T>& t, ValueId z, ValueId wq, ValueId wk, ValueId wv,
                       double attn_dropout, bool training, CounterRng& rng) {
    ValueId q = matmul(t, z, wq);
    ValueId k = matmul(t, z, wk);
    ValueId v = matmul(t, z, wv);
    return block_attention(t, q, k, v, /*nblocks=*/1, /*heads=*/1, attn_dropout, training, rng);
}

// All heads at once over `nblocks` independent token blocks, concatenated
// along the feature dimension and projected by W_O.
template <class T>
ValueId multi_head(GradTape<T>& t, ValueId z, const BoundEncoderLayer& layer, const EncoderConfig& cfg,
                   bool training, CounterRng& rng, int64_t nblocks = 1) {
    ValueId q = matmul(t, z, layer.wq);
    ValueId k = matmul(t, z, layer.wk);
    ValueId v = matmul(t, z, layer.wv);
    ValueId att = block_attention(t, q, k, v, nblocks, cfg.num_heads, cfg.attn_dropout, training, rng);
    return matmul(t, att, layer.wo);
}

// Pre-norm residual layer: x + Drop(MHA(LN(x))), then + Drop(FF(LN(·))).
template <class T>
ValueId encoder_layer(GradTape<T>& t, ValueId x, const BoundEncoderLayer& layer, const EncoderConfig& cfg,
                      bool training, CounterRng& rng, int64_t nblocks = 1) {
    ValueId h1 = layer_norm(t, x, layer.ln1_gain, layer.ln1_bias);
    ValueId att = multi_head(t, h1, layer, cfg, training, rng, nblocks);
    att = dropout(t, att, cfg.residual_dropout, training, rng);
    ValueId x2 = add(t, x, att);

    ValueId h2 = layer_norm(t, x2, layer.ln2_gain, layer.ln2_bias);
    ValueId f = add_bias(t, matmul(t, h2, layer.ff1_w), layer.ff1_b);
    f = relu(t, f);
    f = add_bias(t, matmul(t, f, layer.ff2_w), layer.ff2_b);
    f = dropout(t, f, cfg.residual_dropout, training, rng);
    return add(t, x2, f);
}

// Full stack over stacked token blocks.
template <class T>
ValueId encode_stack(GradTape<T>& t, ValueId tokens, const std::vector<BoundEncoderLayer>& layers,
                     const EncoderConfig& cfg, bool training, CounterRng& rng, int64_t nblocks = 1) {
    ValueId x = tokens;
    for (const auto& layer : layers) {
        x = encoder_layer(t, x, layer, cfg, training, rng, nblocks);
    }
    return x;
}

// Per-channel application with shared weights: each channel passes through
// the identical stack, independently.
template <class T>
std::vector<ValueId> encode(GradTape<T>& t, const std::vector<ValueId>& channel_tokens,
                            const std::vector<BoundEncoderLayer>& layers, const EncoderConfig& cfg,
                            bool training, CounterRng& rng) {
    std::vector<ValueId> out;
    out.reserve(channel_tokens.size());
    for (ValueId z : channel_tokens) {
        out.push_back(encode_stack(t, z, layers, cfg, training, rng, /*nblocks=*/1));
    }
    return out;
}

// Analytic multiply-add count of one record through the attention blocks of
// the full stack: per layer and channel, H·(2·N²·d_k) for the score and
// value products plus 4·N·D² for the Q/K/V/O projections.
inline int64_t attention_mac_count(const EncoderConfig& cfg, int64_t tokens, int64_t channels = 2) {
    const int64_t n = tokens, d = cfg.model_dim, dk = cfg.head_dim();
    const int64_t per_layer = cfg.num_heads * (2 * n * n * dk) + 4 * n * d * d;
    return cfg.num_layers * channels * per_layer;
}

}  // namespace patchwave
