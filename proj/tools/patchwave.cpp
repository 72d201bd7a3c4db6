// patchwave CLI: corpus generation, pre-training, fine-tuning, evaluation,
// and the patch-size complexity benchmark. Exit codes: 0 success, 1 runtime or
// training failure, 2 usage/config error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "patchwave/config.hpp"
#include "patchwave/eval.hpp"
#include "patchwave/signal_synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patchwave;

namespace {

std::string iso8601_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Every artifact-producing command writes one of these beside its outputs.
// The timestamp is informational; determinism guarantees cover the artifacts
// themselves, not this file.
void write_run_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                        uint64_t seed, const std::vector<fs::path>& inputs,
                        const std::vector<fs::path>& outputs) {
    json in = json::array();
    for (const auto& p : inputs) {
        uint64_t h = 0;
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(p)) {
                if (e.is_regular_file()) files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            h = 0xcbf29ce484222325ull;
            for (const auto& f : files) h = detail::mix64(h ^ file_content_hash(f));
        } else if (fs::exists(p)) {
            h = file_content_hash(p);
        }
        in.push_back({{"path", p.string()}, {"content_hash", hash_hex(h)}});
    }
    json out = json::array();
    for (const auto& p : outputs) out.push_back(p.string());
    json manifest{
        {"command", command}, {"config", config},   {"seed", seed},
        {"inputs", in},       {"outputs", out},     {"timestamp_utc", iso8601_utc_now()},
    };
    write_text_file(out_dir / "run_manifest.json", manifest.dump(2) + "\n");
}

struct CatalogCorpus {
    std::string name;
    std::string kind;  // iq | cir
    LabelFamily family = LabelFamily::classification;
    int64_t per_class = 500;
    std::vector<TechnologySpec> classes;
    CirSpec env;
};

struct Catalog {
    int64_t length = 4096;
    std::array<double, 3> ratios{0.7, 0.15, 0.15};
    std::vector<CatalogCorpus> corpora;
};

Catalog builtin_catalog() {
    Catalog c;
    c.corpora.push_back({"iq8", "iq", LabelFamily::classification, 500, default_iq_catalog(), {}});
    c.corpora.push_back({"iq4", "iq", LabelFamily::classification, 250, default_iq_catalog4(), {}});
    c.corpora.push_back({"cir_env_a_los", "cir", LabelFamily::los, 400, {}, default_cir_env_a()});
    c.corpora.push_back({"cir_env_a_rng", "cir", LabelFamily::regression, 400, {}, default_cir_env_a()});
    c.corpora.push_back({"cir_env_b_rng", "cir", LabelFamily::regression, 400, {}, default_cir_env_b()});
    return c;
}

Catalog parse_catalog(const fs::path& file) {
    json j;
    try {
        j = json::parse(read_text_file(file));
    } catch (const io_error& e) {
        throw config_error(std::string("catalog: ") + e.what());
    } catch (const json::exception& e) {
        throw config_error("catalog " + file.string() + " is not valid JSON: " + e.what());
    }
    Catalog c;
    c.length = j.value("length", c.length);
    if (j.contains("split_ratios")) c.ratios = j.at("split_ratios").get<std::array<double, 3>>();
    for (const auto& e : j.at("corpora")) {
        CatalogCorpus cc;
        cc.name = e.at("name").get<std::string>();
        cc.kind = e.at("kind").get<std::string>();
        if (cc.kind == "iq") {
            cc.per_class = e.value("per_class", 500);
            for (const auto& s : e.at("classes")) cc.classes.push_back(technology_spec_from_json(s));
        } else if (cc.kind == "cir") {
            cc.family = label_family_from_string(e.at("family").get<std::string>());
            cc.per_class = e.value("per_label", 400);
            cc.env = cir_spec_from_json(e.at("env"));
        } else {
            throw config_error("catalog corpus '" + cc.name + "': unknown kind '" + cc.kind + "'");
        }
        c.corpora.push_back(std::move(cc));
    }
    return c;
}

int cmd_gen_data(const std::string& catalog_file, const std::string& out_dir, uint64_t seed) {
    Catalog catalog = catalog_file.empty() ? builtin_catalog() : parse_catalog(catalog_file);
    const fs::path out(out_dir);
    fs::create_directories(out);
    std::vector<fs::path> outputs;
    for (const auto& cc : catalog.corpora) {
        // Per-corpus seed derived from (seed, name) so sibling corpora hold
        // distinct records even when they share an environment spec.
        const uint64_t corpus_seed = CounterRng(seed, fnv1a64(cc.name)).next_u64();
        const fs::path path = out / cc.name;
        CorpusSummary s;
        if (cc.kind == "iq") {
            s = build_corpus(cc.classes, cc.per_class, catalog.length, corpus_seed, path, catalog.ratios);
        } else {
            s = build_cir_corpus(cc.env, cc.family, cc.per_class, catalog.length, corpus_seed, path,
                                 catalog.ratios);
        }
        outputs.push_back(path);
        std::cout << cc.name << " " << path.string() << " samples=" << s.samples
                  << " classes=" << s.classes << "\n";
    }
    json cfg{{"catalog", catalog_file.empty() ? "<builtin>" : catalog_file}};
    std::vector<fs::path> inputs;
    if (!catalog_file.empty()) inputs.push_back(catalog_file);
    write_run_manifest(out, "gen-data", cfg, seed, inputs, outputs);
    return 0;
}

struct CommonTrainFlags {
    std::string config_file;
    std::optional<uint64_t> seed;
    std::optional<int64_t> epochs;
    std::optional<double> lr;
    std::optional<int64_t> batch_size;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON config file (defaults < file < flags)");
        cmd->add_option("--seed", seed, "Override the config seed");
        cmd->add_option("--epochs", epochs, "Override the epoch budget");
        cmd->add_option("--lr", lr, "Override the learning rate");
        cmd->add_option("--batch-size", batch_size, "Override the batch size");
    }

    void apply(TrainConfig& tc) const {
        if (seed) tc.seed = *seed;
        if (epochs) tc.epochs = *epochs;
        if (lr) tc.lr = *lr;
        if (batch_size) tc.batch_size = *batch_size;
    }
};

json train_config_json(const TrainConfig& tc, const ModelConfig& mc) {
    return json{
        {"phase", to_string(tc.phase)},
        {"batch_size", tc.batch_size},
        {"lr", tc.lr},
        {"weight_decay", tc.weight_decay},
        {"epochs", tc.epochs},
        {"mask_ratio", tc.mask_ratio},
        {"mask_mode", tc.mask_mode == MaskMode::zero ? "zero" : "learned_token"},
        {"ssl_loss", tc.ssl_loss_masked_only ? "masked_only" : "all"},
        {"head_form", tc.head_form == HeadForm::linear ? "linear" : "mlp"},
        {"seed", tc.seed},
        {"scheduler",
         {{"factor", tc.scheduler.factor},
          {"patience", tc.scheduler.patience},
          {"threshold", tc.scheduler.threshold},
          {"min_lr", tc.scheduler.min_lr}}},
        {"model", detail::model_config_json(mc)},
    };
}

int cmd_pretrain(const std::string& data, const CommonTrainFlags& flags, bool ssl, bool supervised,
                 const std::string& exclude_class, const std::string& out_dir) {
    if (ssl == supervised) {
        throw config_error("pretrain: exactly one of --ssl / --supervised is required");
    }
    const Phase phase = ssl ? Phase::pretrain_ssl : Phase::pretrain_supervised;
    auto [tc, mc] = load_configs(phase, flags.config_file);
    flags.apply(tc);

    const Corpus corpus = read_container(data);
    mc.patch.length = corpus.length;

    PretrainOutput out = ssl ? pretrain_ssl(corpus, mc, tc, exclude_class)
                             : pretrain_supervised(corpus, mc, tc, exclude_class);

    CheckpointMeta meta;
    meta.phase = to_string(phase);
    meta.label_family = ssl ? "none" : to_string(corpus.family);
    meta.label_space = out.label_space;
    meta.source_corpus_hash = hash_hex(container_content_hash(data));
    meta.seed = tc.seed;

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    save_checkpoint(out.model, meta, dir / "checkpoint");
    write_history(dir / "history.jsonl", out.fit.history);
    write_run_manifest(dir, ssl ? "pretrain --ssl" : "pretrain --supervised", train_config_json(tc, mc),
                       tc.seed, {data}, {dir / "checkpoint", dir / "history.jsonl"});
    std::cerr << "best val loss " << out.fit.best_val_loss << " at epoch " << out.fit.best_epoch << " ("
              << out.fit.epochs_run << " epochs run)\n";
    std::cout << (dir / "checkpoint").string() << "\n";
    return 0;
}

int cmd_finetune(const std::string& checkpoint, const std::string& data, const CommonTrainFlags& flags,
                 const std::string& task_name, std::optional<int64_t> samples_per_class,
                 double sample_fraction, const std::string& head_form, const std::string& out_dir) {
    FinetuneTask task;
    Phase phase;
    if (task_name == "cls") {
        task = FinetuneTask::classification;
        phase = Phase::finetune_cls;
    } else if (task_name == "reg") {
        task = FinetuneTask::regression;
        phase = Phase::finetune_reg;
    } else {
        throw config_error("finetune: --task must be 'cls' or 'reg'");
    }
    auto [tc, mc] = load_configs(phase, flags.config_file);
    flags.apply(tc);
    if (head_form == "mlp") {
        tc.head_form = HeadForm::mlp;
    } else if (head_form == "linear") {
        tc.head_form = HeadForm::linear;
    } else if (!head_form.empty()) {
        throw config_error("finetune: --head-form must be 'linear' or 'mlp'");
    }

    auto loaded = load_checkpoint<float>(checkpoint);
    const Corpus corpus = read_container(data);
    const bool same_corpus = loaded.meta.source_corpus_hash == hash_hex(container_content_hash(data));

    FinetuneOutput out = finetune(loaded.model, loaded.meta, corpus, tc, task, same_corpus,
                                  samples_per_class, sample_fraction);

    MetricsReport rep = task == FinetuneTask::classification
                            ? evaluate_classification(out.model, corpus, out.split.test, out.label_space,
                                                      tc.batch_size)
                            : evaluate_regression(out.model, corpus, out.split.test, tc.batch_size);

    CheckpointMeta meta;
    meta.phase = to_string(phase);
    meta.label_family = to_string(corpus.family);
    meta.label_space = out.label_space;
    meta.source_corpus_hash = hash_hex(container_content_hash(data));
    meta.seed = tc.seed;

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    save_checkpoint(out.model, meta, dir / "checkpoint");
    write_history(dir / "history.jsonl", out.fit.history);
    write_text_file(dir / "report.json", rep.to_json().dump(2) + "\n");
    write_text_file(dir / "report.txt", rep.to_text());
    json cfg = train_config_json(tc, mc);
    cfg["samples_per_class"] = samples_per_class ? json(*samples_per_class) : json(nullptr);
    cfg["sample_fraction"] = sample_fraction;
    cfg["frozen_unchanged"] = out.frozen_hash_before == out.frozen_hash_after;
    cfg["trainable_scalars"] = out.freeze.trainable_scalars;
    cfg["total_scalars"] = out.freeze.total_scalars;
    write_run_manifest(dir, "finetune --task " + task_name, cfg, tc.seed, {checkpoint, data},
                       {dir / "checkpoint", dir / "history.jsonl", dir / "report.json"});
    std::cerr << rep.to_text();
    std::cout << (dir / "report.json").string() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split_name,
             const std::string& out_dir) {
    auto loaded = load_checkpoint<float>(checkpoint);
    const Corpus corpus = read_container(data);
    Split split;
    if (split_name == "train") {
        split = Split::train;
    } else if (split_name == "val") {
        split = Split::val;
    } else if (split_name == "test") {
        split = Split::test;
    } else {
        throw config_error("eval: --split must be train|val|test");
    }
    const auto ids = corpus.split.ids_of(split);

    MetricsReport rep;
    if (corpus.family == LabelFamily::regression) {
        rep = evaluate_regression(loaded.model, corpus, ids);
    } else {
        rep = evaluate_classification(loaded.model, corpus, ids, loaded.meta.label_space);
    }
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    write_text_file(dir / "report.json", rep.to_json().dump(2) + "\n");
    write_text_file(dir / "report.txt", rep.to_text());
    write_run_manifest(dir, "eval", json{{"split", split_name}}, loaded.meta.seed, {checkpoint, data},
                       {dir / "report.json"});
    std::cerr << rep.to_text();
    std::cout << (dir / "report.json").string() << "\n";
    return 0;
}

int cmd_bench(const std::string& data, const CommonTrainFlags& flags, std::vector<int64_t> patch_sizes,
              const std::string& out_dir) {
    auto [tc, mc] = load_configs(Phase::pretrain_supervised, flags.config_file);
    flags.apply(tc);
    const int64_t epochs = flags.epochs.value_or(5);  // fixed short-train budget
    if (patch_sizes.empty()) patch_sizes = {32, 64, 128, 256, 512};

    const Corpus corpus = read_container(data);
    mc.patch.length = corpus.length;
    auto rows = complexity_benchmark(corpus, patch_sizes, mc, tc, epochs);

    const std::string table = bench_table_text(rows);
    std::cout << table;
    if (!out_dir.empty()) {
        const fs::path dir(out_dir);
        fs::create_directories(dir);
        write_text_file(dir / "bench_table.txt", table);
        write_text_file(dir / "bench_table.json", bench_table_json(rows).dump(2) + "\n");
        write_run_manifest(dir, "bench", train_config_json(tc, mc), tc.seed, {data},
                           {dir / "bench_table.json"});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patch-tokenized transformer models for 2-channel wireless timeseries"};
    app.require_subcommand(1);

    // gen-data
    std::string catalog_file, gen_out;
    uint64_t gen_seed = 1;
    auto* gen = app.add_subcommand("gen-data", "Generate synthetic IQ and CIR corpora");
    gen->add_option("--catalog", catalog_file, "Catalog JSON (builtin default when omitted)");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "Generation seed");

    // pretrain
    std::string pre_data, pre_exclude, pre_out;
    bool pre_ssl = false, pre_sup = false;
    CommonTrainFlags pre_flags;
    auto* pre = app.add_subcommand("pretrain", "Pre-train on a corpus");
    pre->add_option("--data", pre_data, "Corpus container directory")->required();
    pre->add_flag("--ssl", pre_ssl, "Masked-reconstruction pre-training");
    pre->add_flag("--supervised", pre_sup, "Supervised pre-training");
    pre->add_option("--exclude-class", pre_exclude, "Hold one class out of pre-training");
    pre->add_option("--out", pre_out, "Output directory")->required();
    pre_flags.add_to(pre);

    // finetune
    std::string ft_ckpt, ft_data, ft_task, ft_head_form, ft_out;
    std::optional<int64_t> ft_spc;
    double ft_fraction = 1.0;
    CommonTrainFlags ft_flags;
    auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint with layer freezing");
    ft->add_option("--checkpoint", ft_ckpt, "Pre-trained checkpoint directory")->required();
    ft->add_option("--data", ft_data, "Corpus container directory")->required();
    ft->add_option("--task", ft_task, "cls | reg")->required();
    ft->add_option("--samples-per-class", ft_spc, "Fine-tune train records per class");
    ft->add_option("--sample-fraction", ft_fraction, "Fraction of the fine-tune train pool to keep");
    ft->add_option("--head-form", ft_head_form, "linear (default) | mlp");
    ft->add_option("--out", ft_out, "Output directory")->required();
    ft_flags.add_to(ft);

    // eval
    std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint directory")->required();
    ev->add_option("--data", ev_data, "Corpus container directory")->required();
    ev->add_option("--split", ev_split, "train | val | test (default test)");
    ev->add_option("--out", ev_out, "Output directory")->required();

    // bench
    std::string bn_data, bn_out;
    std::vector<int64_t> bn_patches;
    CommonTrainFlags bn_flags;
    auto* bn = app.add_subcommand("bench", "Patch-size complexity benchmark");
    bn->add_option("--data", bn_data, "Corpus container directory")->required();
    bn->add_option("--patch-sizes", bn_patches, "Patch sizes to sweep (default 32 64 128 256 512)");
    bn->add_option("--out", bn_out, "Output directory for the table files");
    bn_flags.add_to(bn);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(catalog_file, gen_out, gen_seed);
        if (pre->parsed()) return cmd_pretrain(pre_data, pre_flags, pre_ssl, pre_sup, pre_exclude, pre_out);
        if (ft->parsed()) {
            return cmd_finetune(ft_ckpt, ft_data, ft_flags, ft_task, ft_spc, ft_fraction, ft_head_form,
                                ft_out);
        }
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_out);
        if (bn->parsed()) return cmd_bench(bn_data, bn_flags, bn_patches, bn_out);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const label_error& e) {
        std::cerr << "label error: " << e.what() << "\n";
        return 2;
    } catch (const shape_error& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
