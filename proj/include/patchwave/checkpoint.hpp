#pragma once

// Checkpoint directory: manifest.json (config echo + named parameter table
// with shapes and byte offsets) next to params.bin (raw little-endian f32).
// Round-trips are bit-exact.

#include <filesystem>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "patchwave/model.hpp"

namespace patchwave {

struct CheckpointMeta {
    std::string phase;                    // pretrain_supervised | pretrain_ssl | finetune_cls | finetune_reg
    std::string label_family;             // classification | los | regression | none
    std::vector<std::string> label_space; // class names in head order (classification heads)
    std::string source_corpus_hash;       // content hash of the pre-training corpus
    uint64_t seed = 0;
};

namespace detail {

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
    return nlohmann::json{
        {"L", cfg.patch.length},
        {"P", cfg.patch.patch_len},
        {"S", cfg.patch.stride},
        {"D", cfg.patch.latent_dim},
        {"embed_dropout", cfg.patch.dropout_rate},
        {"heads", cfg.encoder.num_heads},
        {"layers", cfg.encoder.num_layers},
        {"ff_dim", cfg.encoder.ff_dim},
        {"attn_dropout", cfg.encoder.attn_dropout},
        {"residual_dropout", cfg.encoder.residual_dropout},
        {"head_hidden", cfg.head_hidden},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.patch.length = j.at("L").get<int64_t>();
    cfg.patch.patch_len = j.at("P").get<int64_t>();
    cfg.patch.stride = j.at("S").get<int64_t>();
    cfg.patch.latent_dim = j.at("D").get<int64_t>();
    cfg.patch.dropout_rate = j.at("embed_dropout").get<double>();
    cfg.encoder.model_dim = cfg.patch.latent_dim;
    cfg.encoder.num_heads = j.at("heads").get<int64_t>();
    cfg.encoder.num_layers = j.at("layers").get<int64_t>();
    cfg.encoder.ff_dim = j.at("ff_dim").get<int64_t>();
    cfg.encoder.attn_dropout = j.at("attn_dropout").get<double>();
    cfg.encoder.residual_dropout = j.at("residual_dropout").get<double>();
    cfg.head_hidden = j.at("head_hidden").get<int64_t>();
    cfg.validate();
    return cfg;
}

}  // namespace detail

template <class T>
void save_checkpoint(Model<T>& model, const CheckpointMeta& meta, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto reg = model.registry();

    nlohmann::json params = nlohmann::json::array();
    int64_t offset = 0;
    for (auto& p : reg) {
        params.push_back({{"name", p.name}, {"shape", p.tensor->shape}, {"offset", offset}});
        offset += p.tensor->numel() * 4;
    }
    nlohmann::json manifest{
        {"format", "patchwave-checkpoint"},
        {"version", 1},
        {"model", detail::model_config_json(model.cfg)},
        {"phase", meta.phase},
        {"label_family", meta.label_family},
        {"label_space", meta.label_space},
        {"source_corpus_hash", meta.source_corpus_hash},
        {"seed", meta.seed},
        {"blob_bytes", offset},
        {"params", params},
    };
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

    std::ofstream blob(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!blob) throw io_error("cannot open " + (dir / "params.bin").string());
    std::vector<float> tmp;
    for (auto& p : reg) {
        tmp.resize(p.tensor->data.size());
        for (size_t i = 0; i < tmp.size(); ++i) tmp[i] = static_cast<float>(p.tensor->data[i]);
        write_f32_le(blob, tmp.data(), tmp.size());
    }
    if (!blob) throw io_error("checkpoint blob write failed");
}

template <class T>
struct LoadedCheckpoint {
    Model<T> model;
    CheckpointMeta meta;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw format_error("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "patchwave-checkpoint") {
        throw format_error("not a patchwave checkpoint: " + dir.string());
    }
    if (manifest.value("version", 0) != 1) {
        throw format_error("unsupported checkpoint version");
    }

    LoadedCheckpoint<T> out;
    const ModelConfig cfg = detail::model_config_from_json(manifest.at("model"));
    out.meta.phase = manifest.value("phase", "");
    out.meta.label_family = manifest.value("label_family", "none");
    out.meta.label_space = manifest.value("label_space", std::vector<std::string>{});
    out.meta.source_corpus_hash = manifest.value("source_corpus_hash", "");
    out.meta.seed = manifest.value("seed", 0ull);

    // Rebuild the skeleton, attaching whichever heads the manifest lists.
    out.model = Model<T>::init(cfg, /*seed=*/0);
    auto has_param = [&](const std::string& name) {
        for (const auto& p : manifest.at("params")) {
            if (p.at("name").get<std::string>() == name) return true;
        }
        return false;
    };
    auto shape_of = [&](const std::string& name) {
        for (const auto& p : manifest.at("params")) {
            if (p.at("name").get<std::string>() == name) return p.at("shape").get<Shape>();
        }
        throw format_error("checkpoint param missing: " + name);
    };
    if (has_param("head.cls.w_out")) out.model.attach_cls_head(shape_of("head.cls.w_out")[1], 0);
    if (has_param("head.reg.w_out")) out.model.attach_reg_head(shape_of("head.reg.w_out")[1], 0);
    if (has_param("head.lin_cls.w")) out.model.attach_linear_cls_head(shape_of("head.lin_cls.w")[1], 0);
    if (has_param("head.lin_reg.w")) out.model.attach_linear_reg_head(0);
    if (has_param("head.recon.w")) out.model.attach_recon_head(0);

    auto reg = out.model.registry();
    if (reg.size() != manifest.at("params").size()) {
        throw format_error("checkpoint parameter table does not match reconstructed model");
    }

    std::ifstream blob(dir / "params.bin", std::ios::binary);
    if (!blob) throw io_error("cannot open " + (dir / "params.bin").string());
    std::vector<float> tmp;
    for (size_t i = 0; i < reg.size(); ++i) {
        const auto& entry = manifest.at("params")[i];
        if (entry.at("name").get<std::string>() != reg[i].name) {
            throw format_error("checkpoint param order mismatch at " + reg[i].name);
        }
        const Shape sh = entry.at("shape").get<Shape>();
        if (sh != reg[i].tensor->shape) {
            throw format_error("checkpoint shape mismatch for " + reg[i].name);
        }
        tmp.resize(reg[i].tensor->data.size());
        read_f32_le(blob, tmp.data(), tmp.size());
        for (size_t k = 0; k < tmp.size(); ++k) reg[i].tensor->data[k] = static_cast<T>(tmp[k]);
    }
    return out;
}

}  // namespace patchwave
