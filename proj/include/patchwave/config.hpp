#pragma once

// JSON round-trip for model and training configuration. Layering is
// file-over-defaults, flags-over-file; the CLI applies flag overrides after
// calling these.

#include <json.hpp>

#include "patchwave/checkpoint.hpp"
#include "patchwave/training.hpp"

namespace patchwave {

inline ModelConfig default_model_config() {
    ModelConfig cfg;
    cfg.patch.length = 4096;
    cfg.patch.patch_len = 128;
    cfg.patch.stride = 128;
    cfg.patch.latent_dim = 128;
    cfg.patch.dropout_rate = 0.1;
    cfg.encoder.model_dim = 128;
    cfg.encoder.num_heads = 8;
    cfg.encoder.num_layers = 4;
    cfg.encoder.ff_dim = 768;
    cfg.encoder.attn_dropout = 0.1;
    cfg.encoder.residual_dropout = 0.1;
    cfg.head_hidden = 256;
    return cfg;
}

inline void apply_model_json(ModelConfig& cfg, const nlohmann::json& j) {
    cfg.patch.length = j.value("L", cfg.patch.length);
    cfg.patch.patch_len = j.value("P", cfg.patch.patch_len);
    cfg.patch.stride = j.value("S", cfg.patch.stride);
    cfg.patch.latent_dim = j.value("D", cfg.patch.latent_dim);
    cfg.patch.dropout_rate = j.value("embed_dropout", cfg.patch.dropout_rate);
    cfg.encoder.model_dim = cfg.patch.latent_dim;
    cfg.encoder.num_heads = j.value("heads", cfg.encoder.num_heads);
    cfg.encoder.num_layers = j.value("layers", cfg.encoder.num_layers);
    cfg.encoder.ff_dim = j.value("ff_dim", cfg.encoder.ff_dim);
    cfg.encoder.attn_dropout = j.value("attn_dropout", cfg.encoder.attn_dropout);
    cfg.encoder.residual_dropout = j.value("residual_dropout", cfg.encoder.residual_dropout);
    cfg.head_hidden = j.value("head_hidden", cfg.head_hidden);
}

inline void apply_train_json(TrainConfig& cfg, const nlohmann::json& j) {
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.mask_ratio = j.value("mask_ratio", cfg.mask_ratio);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("mask_mode")) {
        const auto m = j.at("mask_mode").get<std::string>();
        if (m == "zero") {
            cfg.mask_mode = MaskMode::zero;
        } else if (m == "learned_token") {
            cfg.mask_mode = MaskMode::learned_token;
        } else {
            throw config_error("unknown mask_mode '" + m + "'");
        }
    }
    if (j.contains("ssl_loss")) {
        const auto m = j.at("ssl_loss").get<std::string>();
        if (m == "all") {
            cfg.ssl_loss_masked_only = false;
        } else if (m == "masked_only") {
            cfg.ssl_loss_masked_only = true;
        } else {
            throw config_error("unknown ssl_loss '" + m + "'");
        }
    }
    if (j.contains("head_form")) {
        const auto m = j.at("head_form").get<std::string>();
        if (m == "linear") {
            cfg.head_form = HeadForm::linear;
        } else if (m == "mlp") {
            cfg.head_form = HeadForm::mlp;
        } else {
            throw config_error("unknown head_form '" + m + "'");
        }
    }
    if (j.contains("scheduler")) {
        const auto& s = j.at("scheduler");
        cfg.scheduler.factor = s.value("factor", cfg.scheduler.factor);
        cfg.scheduler.patience = s.value("patience", cfg.scheduler.patience);
        cfg.scheduler.threshold = s.value("threshold", cfg.scheduler.threshold);
        cfg.scheduler.min_lr = s.value("min_lr", cfg.scheduler.min_lr);
    }
    if (j.contains("early_stop_val_accuracy") && !j.at("early_stop_val_accuracy").is_null()) {
        cfg.early_stop_val_accuracy = j.at("early_stop_val_accuracy").get<double>();
    }
}

// Load (train, model) configuration from a JSON file over phase defaults.
inline std::pair<TrainConfig, ModelConfig> load_configs(Phase phase,
                                                        const std::filesystem::path& file) {
    TrainConfig tc = TrainConfig::defaults(phase);
    ModelConfig mc = default_model_config();
    if (!file.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_text_file(file));
        } catch (const nlohmann::json::exception& e) {
            throw config_error("config file " + file.string() + ": " + e.what());
        }
        apply_train_json(tc, j);
        if (j.contains("model")) apply_model_json(mc, j.at("model"));
    }
    return {tc, mc};
}

}  // namespace patchwave
