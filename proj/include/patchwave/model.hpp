#pragma once

// Full model assembly: shared patch embedding + positional table + encoder
// stack + whichever task heads a phase needs. Parameters live here between
// steps; bind_model() leafs them onto a tape for one forward/backward.

#include <functional>
#include <optional>
#include <string>

#include "patchwave/encoder.hpp"
#include "patchwave/heads.hpp"
#include "patchwave/patch_embed.hpp"

namespace patchwave {

struct ModelConfig {
    PatchConfig patch;
    EncoderConfig encoder;
    int64_t head_hidden = 256;  // width of the two-layer pre-training heads

    void validate() const {
        patch.validate();
        encoder.validate();
        if (patch.latent_dim != encoder.model_dim) {
            throw config_error("model config: patch latent dim must equal encoder model dim");
        }
        if (head_hidden < 1) throw config_error("model config: head_hidden must be >= 1");
    }

    int64_t token_count() const { return patch.token_count(); }
    int64_t feature_width() const { return 2 * patch.token_count() * patch.latent_dim; }
};

template <class T>
struct Model {
    ModelConfig cfg;

    Tensor<T> embed_w;    // P×D, shared across channels
    Tensor<T> embed_b;    // D
    Tensor<T> pos;        // N×D learned positional table, shared across channels
    Tensor<T> mask_token; // D, used by learned-token masking

    std::vector<EncoderLayerParams<T>> layers;

    std::optional<MlpHeadParams<T>> cls_head;        // supervised pre-training
    std::optional<MlpHeadParams<T>> reg_head;        // two-layer regression form
    std::optional<LinearHeadParams<T>> lin_cls_head; // fine-tune classification
    std::optional<LinearHeadParams<T>> lin_reg_head; // fine-tune regression
    std::optional<ReconHeadParams<T>> recon_head;    // masked reconstruction

    static Model init(const ModelConfig& cfg, uint64_t seed, double stddev = 0.02) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        CounterRng rng(seed);
        const int64_t p = cfg.patch.patch_len, d = cfg.patch.latent_dim, n = cfg.token_count();
        m.embed_w = Tensor<T>::randn({p, d}, rng.fork("embed.w"), stddev);
        m.embed_b = Tensor<T>::zeros({d});
        m.pos = Tensor<T>::randn({n, d}, rng.fork("pos.e"), stddev);
        m.mask_token = Tensor<T>::randn({d}, rng.fork("mask.token"), stddev);
        m.layers.reserve(static_cast<size_t>(cfg.encoder.num_layers));
        for (int64_t i = 0; i < cfg.encoder.num_layers; ++i) {
            m.layers.push_back(EncoderLayerParams<T>::init(cfg.encoder, rng.fork("enc", static_cast<uint64_t>(i)), stddev));
        }
        return m;
    }

    void attach_cls_head(int64_t classes, uint64_t seed) {
        cls_head = MlpHeadParams<T>::init(cfg.feature_width(), cfg.head_hidden, classes,
                                          CounterRng(seed).fork("head.cls"));
    }
    void attach_reg_head(int64_t out_dim, uint64_t seed) {
        reg_head = MlpHeadParams<T>::init(cfg.feature_width(), cfg.head_hidden, out_dim,
                                          CounterRng(seed).fork("head.reg"));
    }
    void attach_linear_cls_head(int64_t classes, uint64_t seed) {
        lin_cls_head = LinearHeadParams<T>::init(cfg.feature_width(), classes,
                                                 CounterRng(seed).fork("head.lin_cls"));
    }
    void attach_linear_reg_head(uint64_t seed) {
        lin_reg_head = LinearHeadParams<T>::init(cfg.feature_width(), 1,
                                                 CounterRng(seed).fork("head.lin_reg"));
    }
    void attach_recon_head(uint64_t seed) {
        recon_head = ReconHeadParams<T>::init(cfg.patch.latent_dim, cfg.patch.patch_len,
                                              CounterRng(seed).fork("head.recon"));
    }

    void drop_heads() {
        cls_head.reset();
        reg_head.reset();
        lin_cls_head.reset();
        lin_reg_head.reset();
        recon_head.reset();
    }

    struct NamedParam {
        std::string name;
        Tensor<T>* tensor;
    };

    // Stable registration order: core parameters, then encoder layers, then
    // heads. Checkpoint layout and optimizer state follow this order.
    std::vector<NamedParam> registry() {
        std::vector<NamedParam> out;
        out.push_back({"embed.w", &embed_w});
        out.push_back({"embed.b", &embed_b});
        out.push_back({"pos.e", &pos});
        out.push_back({"mask.token", &mask_token});
        for (size_t i = 0; i < layers.size(); ++i) {
            auto& l = layers[i];
            const std::string pfx = "enc." + std::to_string(i) + ".";
            out.push_back({pfx + "wq", &l.wq});
            out.push_back({pfx + "wk", &l.wk});
            out.push_back({pfx + "wv", &l.wv});
            out.push_back({pfx + "wo", &l.wo});
            out.push_back({pfx + "ln1.gain", &l.ln1_gain});
            out.push_back({pfx + "ln1.bias", &l.ln1_bias});
            out.push_back({pfx + "ln2.gain", &l.ln2_gain});
            out.push_back({pfx + "ln2.bias", &l.ln2_bias});
            out.push_back({pfx + "ff1.w", &l.ff1_w});
            out.push_back({pfx + "ff1.b", &l.ff1_b});
            out.push_back({pfx + "ff2.w", &l.ff2_w});
            out.push_back({pfx + "ff2.b", &l.ff2_b});
        }
        auto add_mlp = [&](const char* pfx, MlpHeadParams<T>& h) {
            out.push_back({std::string(pfx) + "w_hidden", &h.w_hidden});
            out.push_back({std::string(pfx) + "b_hidden", &h.b_hidden});
            out.push_back({std::string(pfx) + "w_out", &h.w_out});
            out.push_back({std::string(pfx) + "b_out", &h.b_out});
        };
        if (cls_head) add_mlp("head.cls.", *cls_head);
        if (reg_head) add_mlp("head.reg.", *reg_head);
        if (lin_cls_head) {
            out.push_back({"head.lin_cls.w", &lin_cls_head->w});
            out.push_back({"head.lin_cls.b", &lin_cls_head->b});
        }
        if (lin_reg_head) {
            out.push_back({"head.lin_reg.w", &lin_reg_head->w});
            out.push_back({"head.lin_reg.b", &lin_reg_head->b});
        }
        if (recon_head) {
            out.push_back({"head.recon.w", &recon_head->w});
            out.push_back({"head.recon.b", &recon_head->b});
        }
        return out;
    }

    int64_t param_count() {
        int64_t n = 0;
        for (auto& p : registry()) n += p.tensor->numel();
        return n;
    }
};

template <class T>
struct BoundModel {
    ValueId embed_w = -1, embed_b = -1, pos = -1, mask_token = -1;
    std::vector<BoundEncoderLayer> layers;
    std::optional<BoundMlpHead> cls, reg;
    std::optional<BoundLinearHead> lin_cls, lin_reg;
    std::optional<BoundReconHead> recon;
    // Parallel to Model::registry(); lets the optimizer read gradients back.
    std::vector<ValueId> ids;
};

// Leaf every parameter onto the tape. `trainable` decides per name; the
// default trains everything.
template <class T>
BoundModel<T> bind_model(GradTape<T>& tape, Model<T>& m,
                   const std::function<bool(const std::string&)>& trainable = nullptr) {
    BoundModel<T> b;
    auto reg = m.registry();
    b.ids.reserve(reg.size());
    std::vector<std::pair<std::string, ValueId>> by_name;
    by_name.reserve(reg.size());
    for (auto& p : reg) {
        const bool tr = trainable ? trainable(p.name) : true;
        ValueId id = tape.leaf(*p.tensor, tr);
        b.ids.push_back(id);
        by_name.emplace_back(p.name, id);
    }
    auto find = [&](const std::string& name) {
        for (auto& [n, id] : by_name) {
            if (n == name) return id;
        }
        throw config_error("bind: missing parameter " + name);
    };
    b.embed_w = find("embed.w");
    b.embed_b = find("embed.b");
    b.pos = find("pos.e");
    b.mask_token = find("mask.token");
    b.layers.resize(m.layers.size());
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const std::string pfx = "enc." + std::to_string(i) + ".";
        auto& l = b.layers[i];
        l.wq = find(pfx + "wq");
        l.wk = find(pfx + "wk");
        l.wv = find(pfx + "wv");
        l.wo = find(pfx + "wo");
        l.ln1_gain = find(pfx + "ln1.gain");
        l.ln1_bias = find(pfx + "ln1.bias");
        l.ln2_gain = find(pfx + "ln2.gain");
        l.ln2_bias = find(pfx + "ln2.bias");
        l.ff1_w = find(pfx + "ff1.w");
        l.ff1_b = find(pfx + "ff1.b");
        l.ff2_w = find(pfx + "ff2.w");
        l.ff2_b = find(pfx + "ff2.b");
    }
    if (m.cls_head) b.cls = BoundMlpHead{find("head.cls.w_hidden"), find("head.cls.b_hidden"), find("head.cls.w_out"), find("head.cls.b_out")};
    if (m.reg_head) b.reg = BoundMlpHead{find("head.reg.w_hidden"), find("head.reg.b_hidden"), find("head.reg.w_out"), find("head.reg.b_out")};
    if (m.lin_cls_head) b.lin_cls = BoundLinearHead{find("head.lin_cls.w"), find("head.lin_cls.b")};
    if (m.lin_reg_head) b.lin_reg = BoundLinearHead{find("head.lin_reg.w"), find("head.lin_reg.b")};
    if (m.recon_head) b.recon = BoundReconHead{find("head.recon.w"), find("head.recon.b")};
    return b;
}

// Raw patches -> encoded tokens for a stack of record-channel blocks laid out
// record-major: row ((rec·2 + ch)·N + tok). `learned_mask_rows`, when given,
// substitutes the learned mask token after embedding (before the positional
// add).
template <class T>
ValueId forward_tokens(GradTape<T>& tape, const BoundModel<T>& b, const ModelConfig& cfg, ValueId raw,
                       int64_t nblocks, bool training, CounterRng& rng,
                       std::shared_ptr<const std::vector<uint8_t>> learned_mask_rows = nullptr) {
    ValueId z = embed_patches(tape, raw, b.embed_w, b.embed_b);
    if (learned_mask_rows) {
        z = row_substitute(tape, z, learned_mask_rows, b.mask_token);
    }
    z = add_position(tape, z, b.pos, cfg.patch.dropout_rate, training, rng, nblocks);
    return encode_stack(tape, z, b.layers, cfg.encoder, training, rng, nblocks);
}

// Encoded tokens of B records -> B×(2·N·D) feature matrix. With the
// record-major block layout this is a pure reshape: each record's channel-r
// tokens precede its channel-i tokens, row-major, matching the flatten
// contract.
template <class T>
ValueId tokens_to_features(GradTape<T>& tape, const ModelConfig& cfg, ValueId tokens, int64_t records) {
    return reshape(tape, tokens, {records, cfg.feature_width()});
}

}  // namespace patchwave
