#pragma once

// Metrics and the patch-size complexity benchmark.

#include <chrono>

#include "patchwave/training.hpp"

namespace patchwave {

struct MetricsReport {
    std::string task;  // classification | regression
    std::vector<std::string> class_names;
    double accuracy = 0.0;
    std::vector<double> precision, recall;          // per class
    std::vector<std::vector<int64_t>> confusion;    // [true][predicted]
    double mae_mm = 0.0;
    double mae_before_mm = 0.0;  // error if left uncorrected (prediction = 0)
    double runtime_s_per_epoch = 0.0;  // populated by the benchmark; zero in
                                       // deterministic reports
    int64_t param_count = 0;
    int64_t activation_scalars_peak = 0;
    int64_t evaluated = 0;

    nlohmann::json to_json() const {
        return nlohmann::json{
            {"task", task},
            {"class_names", class_names},
            {"accuracy", accuracy},
            {"precision", precision},
            {"recall", recall},
            {"confusion", confusion},
            {"mae_mm", mae_mm},
            {"mae_before_mm", mae_before_mm},
            {"runtime_s_per_epoch", runtime_s_per_epoch},
            {"param_count", param_count},
            {"activation_scalars_peak", activation_scalars_peak},
            {"evaluated", evaluated},
        };
    }

    std::string to_text() const {
        std::string out = "task: " + task + "\n";
        char buf[160];
        if (task == "classification") {
            std::snprintf(buf, sizeof(buf), "accuracy: %.4f  (%lld records)\n", accuracy,
                          static_cast<long long>(evaluated));
            out += buf;
            out += "class                 precision  recall\n";
            for (size_t i = 0; i < class_names.size(); ++i) {
                std::snprintf(buf, sizeof(buf), "%-20s  %9.4f  %6.4f\n", class_names[i].c_str(),
                              precision[i], recall[i]);
                out += buf;
            }
        } else {
            std::snprintf(buf, sizeof(buf), "mae_mm: %.2f  mae_before_mm: %.2f  (%lld records)\n", mae_mm,
                          mae_before_mm, static_cast<long long>(evaluated));
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), "param_count: %lld\n", static_cast<long long>(param_count));
        out += buf;
        return out;
    }
};

namespace detail {

// Map corpus class ids onto head outputs via the checkpoint label space;
// records outside the space are skipped (a pre-training head cannot score the
// held-out class).
inline std::vector<int> label_space_map(const Corpus& corpus, const std::vector<std::string>& space) {
    std::vector<int> map(corpus.class_names.size(), -1);
    for (size_t i = 0; i < corpus.class_names.size(); ++i) {
        for (size_t j = 0; j < space.size(); ++j) {
            if (space[j] == corpus.class_names[i]) map[i] = static_cast<int>(j);
        }
    }
    return map;
}

template <class T>
std::vector<int> predict_classes(Model<T>& model, const Corpus& corpus, const std::vector<int64_t>& ids,
                                 int64_t batch_size) {
    std::vector<int> out;
    out.reserve(ids.size());
    TrainConfig cfg;  // only seed/batch plumbing is used on the eval path
    CounterRng rng(0, fnv1a64("predict"));
    for (const auto& batch : make_batches(ids, batch_size, false, rng)) {
        GradTape<T> tape;
        BoundModel<T> bound = bind_model(tape, model, [](const std::string&) { return false; });
        Tensor<float> raw = build_raw_patches(corpus, batch, model.cfg.patch);
        ValueId input = tape.constant(raw.template cast<T>());
        ValueId tokens = forward_tokens(tape, bound, model.cfg, input,
                                        static_cast<int64_t>(batch.size()) * 2, false, rng);
        ValueId feats = tokens_to_features(tape, model.cfg, tokens, static_cast<int64_t>(batch.size()));
        ValueId logits;
        if (bound.lin_cls) {
            logits = linear_head(tape, feats, *bound.lin_cls);
        } else if (bound.cls) {
            logits = classify(tape, feats, *bound.cls);
        } else {
            throw label_error("checkpoint has no classification head");
        }
        const auto& lv = tape.val(logits);
        const int64_t k = lv.shape[1];
        for (int64_t r = 0; r < static_cast<int64_t>(batch.size()); ++r) {
            const T* row = lv.data.data() + r * k;
            int arg = 0;
            for (int64_t j = 1; j < k; ++j) {
                if (row[j] > row[arg]) arg = static_cast<int>(j);
            }
            out.push_back(arg);
        }
    }
    return out;
}

template <class T>
std::vector<double> predict_ranging(Model<T>& model, const Corpus& corpus, const std::vector<int64_t>& ids,
                                    int64_t batch_size) {
    std::vector<double> out;
    out.reserve(ids.size());
    CounterRng rng(0, fnv1a64("predict"));
    for (const auto& batch : make_batches(ids, batch_size, false, rng)) {
        GradTape<T> tape;
        BoundModel<T> bound = bind_model(tape, model, [](const std::string&) { return false; });
        Tensor<float> raw = build_raw_patches(corpus, batch, model.cfg.patch);
        ValueId input = tape.constant(raw.template cast<T>());
        ValueId tokens = forward_tokens(tape, bound, model.cfg, input,
                                        static_cast<int64_t>(batch.size()) * 2, false, rng);
        ValueId feats = tokens_to_features(tape, model.cfg, tokens, static_cast<int64_t>(batch.size()));
        ValueId pred;
        if (bound.lin_reg) {
            pred = linear_head(tape, feats, *bound.lin_reg);
        } else if (bound.reg) {
            pred = regress(tape, feats, *bound.reg);
        } else {
            throw label_error("checkpoint has no regression head");
        }
        for (int64_t r = 0; r < static_cast<int64_t>(batch.size()); ++r) {
            out.push_back(static_cast<double>(tape.val(pred).data[static_cast<size_t>(r)]));
        }
    }
    return out;
}

}  // namespace detail

// Deterministic classification metrics over a record set. Records whose class
// lies outside the head's label space are skipped.
template <class T>
MetricsReport evaluate_classification(Model<T>& model, const Corpus& corpus,
                                      const std::vector<int64_t>& ids,
                                      const std::vector<std::string>& label_space, int64_t batch_size = 64) {
    if (ids.empty()) throw config_error("evaluate_classification: empty split");
    const auto map = detail::label_space_map(corpus, label_space);
    std::vector<int64_t> usable;
    for (int64_t id : ids) {
        if (map[static_cast<size_t>(corpus.records[static_cast<size_t>(id)].label)] >= 0) usable.push_back(id);
    }
    if (usable.empty()) throw config_error("evaluate_classification: no records in the label space");

    const auto preds = detail::predict_classes(model, corpus, usable, batch_size);
    const auto k = static_cast<int64_t>(label_space.size());
    MetricsReport rep;
    rep.task = "classification";
    rep.class_names = label_space;
    rep.confusion.assign(static_cast<size_t>(k), std::vector<int64_t>(static_cast<size_t>(k), 0));
    int64_t correct = 0;
    for (size_t i = 0; i < usable.size(); ++i) {
        const int y = map[static_cast<size_t>(corpus.records[static_cast<size_t>(usable[i])].label)];
        const int p = preds[i];
        rep.confusion[static_cast<size_t>(y)][static_cast<size_t>(p)] += 1;
        if (y == p) ++correct;
    }
    rep.evaluated = static_cast<int64_t>(usable.size());
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(usable.size());
    rep.precision.assign(static_cast<size_t>(k), 0.0);
    rep.recall.assign(static_cast<size_t>(k), 0.0);
    for (int64_t c = 0; c < k; ++c) {
        int64_t row_sum = 0, col_sum = 0;
        for (int64_t j = 0; j < k; ++j) {
            row_sum += rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(j)];
            col_sum += rep.confusion[static_cast<size_t>(j)][static_cast<size_t>(c)];
        }
        const int64_t tp = rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
        rep.precision[static_cast<size_t>(c)] = col_sum ? static_cast<double>(tp) / static_cast<double>(col_sum) : 0.0;
        rep.recall[static_cast<size_t>(c)] = row_sum ? static_cast<double>(tp) / static_cast<double>(row_sum) : 0.0;
    }
    rep.param_count = model.param_count();
    return rep;
}

// Regression metrics: MAE of the prediction and of the uncorrected baseline
// (a correction of zero).
template <class T>
MetricsReport evaluate_regression(Model<T>& model, const Corpus& corpus, const std::vector<int64_t>& ids,
                                  int64_t batch_size = 64) {
    if (ids.empty()) throw config_error("evaluate_regression: empty split");
    if (corpus.family != LabelFamily::regression) {
        throw label_error("evaluate_regression: corpus has no ranging labels");
    }
    const auto preds = detail::predict_ranging(model, corpus, ids, batch_size);
    MetricsReport rep;
    rep.task = "regression";
    double mae = 0, before = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
        const double y = corpus.records[static_cast<size_t>(ids[i])].ranging_error_mm;
        mae += std::abs(preds[i] - y);
        before += std::abs(y);
    }
    rep.evaluated = static_cast<int64_t>(ids.size());
    rep.mae_mm = mae / static_cast<double>(ids.size());
    rep.mae_before_mm = before / static_cast<double>(ids.size());
    rep.param_count = model.param_count();
    return rep;
}

// Portable memory counter: scalars held by one training step's tape
// (activations and their gradients) plus parameters, gradients-at-leaves are
// already on the tape, plus the two AdamW moment buffers.
template <class T>
int64_t activation_scalars_peak(Model<T>& model, const Corpus& corpus, const std::vector<int64_t>& batch,
                                const TrainConfig& cfg) {
    GradTape<T> tape;
    BoundModel<T> bound = bind_model(tape, model, train_all());
    CounterRng rng(cfg.seed, fnv1a64("peak"));
    std::vector<int> map;
    ValueId loss = detail::forward_loss(tape, model, bound, corpus, batch, TrainTask::classification, map,
                                        cfg, /*training=*/true, rng, /*epoch=*/1);
    tape.backward(loss);
    return tape.total_scalars() + 3 * model.param_count();
}

struct BenchRow {
    int64_t patch = 0;
    double accuracy = 0.0;
    double seconds_per_epoch = 0.0;
    int64_t activation_scalars_peak = 0;
    int64_t attention_macs = 0;  // analytic, per record
};

// The patch-size sweep: stride = patch size, fixed corpus and epoch budget,
// full (short) supervised training per point with wall time measured.
inline std::vector<BenchRow> complexity_benchmark(const Corpus& corpus,
                                                  const std::vector<int64_t>& patch_sizes,
                                                  ModelConfig base, TrainConfig cfg, int64_t epochs = 5) {
    std::vector<BenchRow> rows;
    for (int64_t p : patch_sizes) {
        if (p < 1 || corpus.length % p != 0) {
            throw config_error("benchmark: patch size " + std::to_string(p) + " does not divide L=" +
                               std::to_string(corpus.length));
        }
    }
    for (int64_t p : patch_sizes) {
        ModelConfig mc = base;
        mc.patch.length = corpus.length;
        mc.patch.patch_len = p;
        mc.patch.stride = p;
        TrainConfig tc = cfg;
        tc.phase = Phase::pretrain_supervised;
        tc.epochs = epochs;
        tc.early_stop_val_accuracy.reset();

        BenchRow row;
        row.patch = p;
        row.attention_macs = attention_mac_count(mc.encoder, mc.token_count());

        const auto t0 = std::chrono::steady_clock::now();
        auto out = pretrain_supervised(corpus, mc, tc);
        const auto t1 = std::chrono::steady_clock::now();
        row.seconds_per_epoch =
            std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(out.fit.epochs_run);

        auto test_ids = corpus.split.ids_of(Split::test);
        auto rep = evaluate_classification(out.model, corpus, test_ids, out.label_space, tc.batch_size);
        row.accuracy = rep.accuracy;

        auto train_ids = corpus.split.ids_of(Split::train);
        std::vector<int64_t> probe(train_ids.begin(),
                                   train_ids.begin() + std::min<size_t>(train_ids.size(),
                                                                        static_cast<size_t>(tc.batch_size)));
        row.activation_scalars_peak = activation_scalars_peak(out.model, corpus, probe, tc);
        rows.push_back(row);
    }
    return rows;
}

inline std::string bench_table_text(const std::vector<BenchRow>& rows) {
    std::string out = "patch  accuracy  s/epoch   activation_scalars  attention_macs\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%5lld  %8.4f  %8.3f  %18lld  %14lld\n",
                      static_cast<long long>(r.patch), r.accuracy, r.seconds_per_epoch,
                      static_cast<long long>(r.activation_scalars_peak),
                      static_cast<long long>(r.attention_macs));
        out += buf;
    }
    return out;
}

inline nlohmann::json bench_table_json(const std::vector<BenchRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        arr.push_back({{"patch", r.patch},
                       {"accuracy", r.accuracy},
                       {"seconds_per_epoch", r.seconds_per_epoch},
                       {"activation_scalars_peak", r.activation_scalars_peak},
                       {"attention_macs", r.attention_macs}});
    }
    return arr;
}

}  // namespace patchwave
