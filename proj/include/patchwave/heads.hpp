#pragma once

// Task heads over the encoded channels. Pre-training uses the two-layer MLP
// heads; fine-tuning attaches a single linear layer (see training.hpp for the
// freeze protocol). The reconstruction head maps each token back to a raw
// patch for masked pre-training.

#include "patchwave/tape.hpp"

namespace patchwave {

// Two-layer head: out = W_out · ReLU(W_hidden·f + b_hidden) + b_out.
// Weights stored input-major, so forward is matmul(f, w_hidden) etc.
template <class T>
struct MlpHeadParams {
    Tensor<T> w_hidden, b_hidden;  // F×hidden, hidden
    Tensor<T> w_out, b_out;        // hidden×K, K

    static MlpHeadParams init(int64_t in_dim, int64_t hidden, int64_t out_dim, CounterRng rng,
                              double stddev = 0.02) {
        MlpHeadParams p;
        p.w_hidden = Tensor<T>::randn({in_dim, hidden}, rng.fork("w_hidden"), stddev);
        p.b_hidden = Tensor<T>::zeros({hidden});
        p.w_out = Tensor<T>::randn({hidden, out_dim}, rng.fork("w_out"), stddev);
        p.b_out = Tensor<T>::zeros({out_dim});
        return p;
    }

    int64_t out_dim() const { return w_out.shape[1]; }
};

// Single linear layer, the fine-tuning head form.
template <class T>
struct LinearHeadParams {
    Tensor<T> w;  // F×K
    Tensor<T> b;  // K

    static LinearHeadParams init(int64_t in_dim, int64_t out_dim, CounterRng rng, double stddev = 0.02) {
        LinearHeadParams p;
        p.w = Tensor<T>::randn({in_dim, out_dim}, rng.fork("w"), stddev);
        p.b = Tensor<T>::zeros({out_dim});
        return p;
    }

    int64_t out_dim() const { return w.shape[1]; }
};

// Per-token linear map back to patch space (D -> P).
template <class T>
struct ReconHeadParams {
    Tensor<T> w;  // D×P
    Tensor<T> b;  // P

    static ReconHeadParams init(int64_t latent_dim, int64_t patch_len, CounterRng rng,
                                double stddev = 0.02) {
        ReconHeadParams p;
        p.w = Tensor<T>::randn({latent_dim, patch_len}, rng.fork("w"), stddev);
        p.b = Tensor<T>::zeros({patch_len});
        return p;
    }
};

struct BoundMlpHead {
    ValueId w_hidden, b_hidden, w_out, b_out;
};

struct BoundLinearHead {
    ValueId w, b;
};

struct BoundReconHead {
    ValueId w, b;
};

// Flatten one record's encoded channels into a single feature row: channel r
// tokens in row-major order, then channel i. Feature width is 2·N·D.
template <class T>
ValueId flatten_features(GradTape<T>& t, ValueId z_r, ValueId z_i) {
    const auto& rv = t.val(z_r);
    const auto& iv = t.val(z_i);
    if (rv.shape != iv.shape || rv.shape.size() != 2) {
        throw shape_error("flatten_features: channels must share an N×D shape");
    }
    const int64_t width = rv.shape[0] * rv.shape[1] * 2;
    return reshape(t, concat_rows(t, z_r, z_i), {1, width});
}

// Two-layer classification head; emits logits (softmax only at loss/inference).
template <class T>
ValueId classify(GradTape<T>& t, ValueId features, const BoundMlpHead& head) {
    ValueId h = relu(t, add_bias(t, matmul(t, features, head.w_hidden), head.b_hidden));
    return add_bias(t, matmul(t, h, head.w_out), head.b_out);
}

// Two-layer regression head, same form with output width d (1 for ranging).
template <class T>
ValueId regress(GradTape<T>& t, ValueId features, const BoundMlpHead& head) {
    return classify(t, features, head);
}

template <class T>
ValueId linear_head(GradTape<T>& t, ValueId features, const BoundLinearHead& head) {
    return add_bias(t, matmul(t, features, head.w), head.b);
}

// Map encoded tokens (blocks·N)×D to reconstructed patches (blocks·N)×P.
// With P = S, assembling the rows of each block reproduces the covered
// N·P samples of that channel.
template <class T>
ValueId reconstruct(GradTape<T>& t, ValueId tokens, const BoundReconHead& head) {
    return add_bias(t, matmul(t, tokens, head.w), head.b);
}

}  // namespace patchwave
