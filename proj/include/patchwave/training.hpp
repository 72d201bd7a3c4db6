#pragma once

// Training: AdamW with decoupled weight decay, reduce-on-plateau scheduling,
// masked-patch corruption, the supervised / self-supervised pre-training
// loops, and layer-frozen fine-tuning. Fixed seed means bit-identical
// histories and parameters.

#include <algorithm>
#include <functional>
#include <optional>

#include "patchwave/checkpoint.hpp"
#include "patchwave/dataset.hpp"
#include "patchwave/model.hpp"

namespace patchwave {

enum class Phase { pretrain_supervised, pretrain_ssl, finetune_cls, finetune_reg };

inline std::string to_string(Phase p) {
    switch (p) {
        case Phase::pretrain_supervised: return "pretrain_supervised";
        case Phase::pretrain_ssl: return "pretrain_ssl";
        case Phase::finetune_cls: return "finetune_cls";
        case Phase::finetune_reg: return "finetune_reg";
    }
    throw config_error("unknown phase");
}

enum class MaskMode { zero, learned_token };
enum class HeadForm { linear, mlp };

struct SchedulerConfig {
    double factor = 0.7;
    int patience = 3;
    double threshold = 1e-4;  // relative improvement needed to reset patience
    double min_lr = 1e-7;     // training stops once lr drops below this
};

struct TrainConfig {
    Phase phase = Phase::pretrain_supervised;
    int64_t batch_size = 64;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    SchedulerConfig scheduler;
    int64_t epochs = 30;
    double mask_ratio = 0.5;
    MaskMode mask_mode = MaskMode::learned_token;
    bool ssl_loss_masked_only = false;  // default follows the whole-signal objective
    HeadForm head_form = HeadForm::linear;
    uint64_t seed = 7;
    std::optional<double> early_stop_val_accuracy;

    static TrainConfig defaults(Phase phase) {
        TrainConfig c;
        c.phase = phase;
        if (phase == Phase::finetune_cls || phase == Phase::finetune_reg) {
            c.lr = 1e-5;
            c.weight_decay = 1e-5;
            c.epochs = 40;
        }
        return c;
    }

    void validate() const {
        if (batch_size < 1) throw config_error("train config: batch_size must be >= 1");
        if (epochs < 1 || epochs > 100) throw config_error("train config: epochs must be in [1, 100]");
        if (mask_ratio <= 0.0 || mask_ratio >= 1.0) {
            throw config_error("train config: mask_ratio must be in (0, 1)");
        }
        if (lr <= 0.0 || weight_decay < 0.0) throw config_error("train config: bad lr/weight_decay");
    }
};

// --- optimizer ---

// AdamW, β = (0.9, 0.999), ε = 1e-8. Decoupled decay is applied to the
// pre-step parameter value, separately from the adaptive update:
//   p ← p − lr·wd·p;  p ← p − lr·m̂/(√v̂ + ε)
template <class T>
class AdamW {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void step(Model<T>& model, const BoundModel<T>& bound, GradTape<T>& tape, double lr, double wd) {
        auto reg = model.registry();
        if (m_.empty()) {
            m_.resize(reg.size());
            v_.resize(reg.size());
            for (size_t i = 0; i < reg.size(); ++i) {
                m_[i].assign(reg[i].tensor->data.size(), T(0));
                v_[i].assign(reg[i].tensor->data.size(), T(0));
            }
        }
        if (reg.size() != bound.ids.size() || reg.size() != m_.size()) {
            throw training_error("optimizer state does not match the model registry");
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (size_t i = 0; i < reg.size(); ++i) {
            const ValueId id = bound.ids[i];
            if (!tape.needs_grad(id)) continue;  // frozen
            const auto& g = tape.grad(id);
            if (g.data.empty()) continue;        // no gradient flowed
            auto& p = reg[i].tensor->data;
            auto& m = m_[i];
            auto& v = v_[i];
#pragma omp parallel for schedule(static)
            for (int64_t k = 0; k < static_cast<int64_t>(p.size()); ++k) {
                const double gk = static_cast<double>(g.data[static_cast<size_t>(k)]);
                if (!std::isfinite(gk)) {
                    // thrown outside the loop; flag via nan marker
                    m[static_cast<size_t>(k)] = std::numeric_limits<T>::quiet_NaN();
                    continue;
                }
                double mk = beta1 * static_cast<double>(m[static_cast<size_t>(k)]) + (1.0 - beta1) * gk;
                double vk = beta2 * static_cast<double>(v[static_cast<size_t>(k)]) + (1.0 - beta2) * gk * gk;
                m[static_cast<size_t>(k)] = static_cast<T>(mk);
                v[static_cast<size_t>(k)] = static_cast<T>(vk);
                double pk = static_cast<double>(p[static_cast<size_t>(k)]);
                pk -= lr * wd * pk;
                pk -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps);
                p[static_cast<size_t>(k)] = static_cast<T>(pk);
            }
            for (T mv : m) {
                if (!std::isfinite(static_cast<double>(mv))) {
                    throw training_error("non-finite gradient for " + reg[i].name + " at step " +
                                         std::to_string(step_));
                }
            }
        }
    }

    int64_t step_count() const { return step_; }

private:
    std::vector<std::vector<T>> m_, v_;
    int64_t step_ = 0;
};

// --- scheduler ---

// ReduceLROnPlateau on the validation loss: after `patience` consecutive
// epochs without relative improvement the lr is multiplied by `factor`; the
// patience counter resets on improvement and after each reduction. The lr
// never increases; after k reductions it is exactly lr0·factor^k.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, SchedulerConfig cfg) : cfg_(cfg), lr_(lr0) {}

    double observe(double val_loss) {
        const bool improved =
            !std::isfinite(best_) || val_loss < best_ - cfg_.threshold * std::abs(best_);
        if (improved) {
            best_ = val_loss;
            bad_ = 0;
        } else {
            ++bad_;
            if (bad_ >= cfg_.patience) {
                lr_ *= cfg_.factor;
                bad_ = 0;
                ++reductions_;
            }
        }
        return lr_;
    }

    double lr() const { return lr_; }
    int reductions() const { return reductions_; }
    bool exhausted() const { return lr_ < cfg_.min_lr; }

private:
    SchedulerConfig cfg_;
    double lr_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_ = 0;
    int reductions_ = 0;
};

// --- masking ---

// Indices of the patches to corrupt for one record; shared across both
// channels. |masked| = round(mask_ratio · N).
struct MaskPlan {
    std::vector<int64_t> masked;
};

inline MaskPlan make_mask_plan(int64_t n_tokens, double mask_ratio, CounterRng rng) {
    const auto k = static_cast<int64_t>(std::llround(mask_ratio * static_cast<double>(n_tokens)));
    std::vector<int64_t> idx(static_cast<size_t>(n_tokens));
    for (int64_t i = 0; i < n_tokens; ++i) idx[static_cast<size_t>(i)] = i;
    // partial Fisher-Yates: the first k entries become the masked set
    for (int64_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n_tokens - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    MaskPlan plan;
    plan.masked.assign(idx.begin(), idx.begin() + k);
    std::sort(plan.masked.begin(), plan.masked.end());
    return plan;
}

// Zero-mode corruption of one channel's raw N×P patches; the input is left
// untouched.
template <class T>
Tensor<T> mask_patches_zero(const Tensor<T>& raw, const MaskPlan& plan) {
    if (raw.shape.size() != 2) throw shape_error("mask_patches_zero: raw must be N×P");
    Tensor<T> out = raw;
    for (int64_t row : plan.masked) {
        if (row < 0 || row >= raw.shape[0]) throw shape_error("mask plan index out of range");
        std::fill(out.data.begin() + row * raw.shape[1], out.data.begin() + (row + 1) * raw.shape[1], T(0));
    }
    return out;
}

// --- batch assembly ---

// Raw standardized patches for a batch, record-major:
// row ((rec·2 + ch)·N + tok). This layout makes the flatten head a reshape.
inline Tensor<float> build_raw_patches(const Corpus& corpus, const std::vector<int64_t>& ids,
                                       const PatchConfig& cfg) {
    const int64_t n = cfg.token_count();
    const int64_t p = cfg.patch_len;
    const auto b = static_cast<int64_t>(ids.size());
    Tensor<float> out({b * 2 * n, p});
    for (int64_t r = 0; r < b; ++r) {
        const SignalRecord rec = standardize(corpus.records[static_cast<size_t>(ids[static_cast<size_t>(r)])]);
        for (int64_t ch = 0; ch < 2; ++ch) {
            const Tensor<float> patches = segment(rec.data.data() + ch * cfg.length, cfg.length, cfg);
            std::copy(patches.data.begin(), patches.data.end(),
                      out.data.begin() + ((r * 2 + ch) * n) * p);
        }
    }
    return out;
}

// --- freezing ---

// Fine-tuning trains only the last encoder layer and the task head.
inline std::function<bool(const std::string&)> finetune_freeze(int64_t num_layers) {
    const std::string last = "enc." + std::to_string(num_layers - 1) + ".";
    return [last](const std::string& name) {
        return name.rfind("head.", 0) == 0 || name.rfind(last, 0) == 0;
    };
}

inline std::function<bool(const std::string&)> train_all() {
    return [](const std::string&) { return true; };
}

// Scalar- and tensor-count view of a freeze plan.
struct FreezeReport {
    int64_t trainable_scalars = 0;
    int64_t total_scalars = 0;
    int64_t trainable_tensors = 0;
    int64_t total_tensors = 0;
};

template <class T>
FreezeReport freeze_report(Model<T>& model, const std::function<bool(const std::string&)>& trainable) {
    FreezeReport r;
    for (auto& p : model.registry()) {
        const bool tr = trainable(p.name);
        r.total_scalars += p.tensor->numel();
        r.total_tensors += 1;
        if (tr) {
            r.trainable_scalars += p.tensor->numel();
            r.trainable_tensors += 1;
        }
    }
    return r;
}

// --- history ---

struct HistoryRow {
    int64_t epoch = 0;
    std::string split;  // train | val
    double loss = 0;
    std::string metric_name;  // accuracy | mae_mm | recon_mse
    double metric = 0;
    double lr = 0;
};

inline void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
    std::string out;
    for (const auto& r : rows) {
        nlohmann::json j{{"epoch", r.epoch}, {"split", r.split},   {"loss", r.loss},
                         {"metric", r.metric_name}, {"value", r.metric}, {"lr", r.lr}};
        out += j.dump() + "\n";
    }
    write_text_file(path, out);
}

// --- the generic fit loop ---

enum class TrainTask { classification, regression, reconstruction };

struct FitResult {
    std::vector<HistoryRow> history;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int64_t best_epoch = 0;
    int64_t epochs_run = 0;
};

namespace detail {

template <class T>
std::vector<Tensor<T>> snapshot_params(Model<T>& model) {
    std::vector<Tensor<T>> out;
    for (auto& p : model.registry()) out.push_back(*p.tensor);
    return out;
}

template <class T>
void restore_params(Model<T>& model, const std::vector<Tensor<T>>& snap) {
    auto reg = model.registry();
    if (reg.size() != snap.size()) throw training_error("snapshot does not match registry");
    for (size_t i = 0; i < reg.size(); ++i) *reg[i].tensor = snap[i];
}

// Forward pass for a batch; returns the loss node and, for classification,
// fills `logits_out` with the logits id.
template <class T>
ValueId forward_loss(GradTape<T>& tape, Model<T>& model, const BoundModel<T>& bound, const Corpus& corpus,
                     const std::vector<int64_t>& ids, TrainTask task,
                     const std::vector<int>& label_map, const TrainConfig& cfg, bool training,
                     CounterRng& rng, int64_t epoch, ValueId* logits_out = nullptr) {
    const auto b = static_cast<int64_t>(ids.size());
    const int64_t n = model.cfg.token_count();
    Tensor<float> raw = build_raw_patches(corpus, ids, model.cfg.patch);

    std::shared_ptr<std::vector<uint8_t>> learned_rows;
    ValueId target = -1;
    std::shared_ptr<std::vector<int64_t>> masked_rows;
    if (task == TrainTask::reconstruction) {
        // Targets are the uncorrupted patches; corruption depends on the mode.
        target = tape.constant(raw.template cast<T>());
        learned_rows = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(b * 2 * n), 0);
        masked_rows = std::make_shared<std::vector<int64_t>>();
        for (int64_t r = 0; r < b; ++r) {
            const int64_t rec_id = ids[static_cast<size_t>(r)];
            MaskPlan plan = make_mask_plan(
                n, cfg.mask_ratio,
                CounterRng(cfg.seed, fnv1a64("mask")).fork(static_cast<uint64_t>(epoch), static_cast<uint64_t>(rec_id)));
            for (int64_t ch = 0; ch < 2; ++ch) {
                for (int64_t tok : plan.masked) {
                    const int64_t row = (r * 2 + ch) * n + tok;
                    (*learned_rows)[static_cast<size_t>(row)] = 1;
                    masked_rows->push_back(row);
                }
            }
            if (cfg.mask_mode == MaskMode::zero) {
                for (int64_t ch = 0; ch < 2; ++ch) {
                    for (int64_t tok : plan.masked) {
                        const int64_t row = (r * 2 + ch) * n + tok;
                        std::fill(raw.data.begin() + row * model.cfg.patch.patch_len,
                                  raw.data.begin() + (row + 1) * model.cfg.patch.patch_len, 0.0f);
                    }
                }
            }
        }
        std::sort(masked_rows->begin(), masked_rows->end());
    }

    ValueId input = tape.constant(raw.template cast<T>());
    ValueId tokens = forward_tokens(tape, bound, model.cfg, input, b * 2, training, rng,
                                    (task == TrainTask::reconstruction && cfg.mask_mode == MaskMode::learned_token)
                                        ? std::shared_ptr<const std::vector<uint8_t>>(learned_rows)
                                        : nullptr);

    if (task == TrainTask::reconstruction) {
        if (!bound.recon) throw training_error("reconstruction head missing");
        ValueId rec = reconstruct(tape, tokens, *bound.recon);
        if (cfg.ssl_loss_masked_only) {
            auto idx = std::shared_ptr<const std::vector<int64_t>>(masked_rows);
            ValueId rec_m = gather_rows(tape, rec, idx);
            ValueId tgt_m = gather_rows(tape, target, idx);
            return mse(tape, rec_m, tgt_m);
        }
        return mse(tape, rec, target);
    }

    ValueId feats = tokens_to_features(tape, model.cfg, tokens, b);
    if (task == TrainTask::classification) {
        ValueId logits;
        if (bound.lin_cls) {
            logits = linear_head(tape, feats, *bound.lin_cls);
        } else if (bound.cls) {
            logits = classify(tape, feats, *bound.cls);
        } else {
            throw training_error("classification head missing");
        }
        if (logits_out) *logits_out = logits;
        auto labels = std::make_shared<std::vector<int>>();
        labels->reserve(ids.size());
        for (int64_t id : ids) {
            int y = corpus.records[static_cast<size_t>(id)].label;
            if (!label_map.empty()) {
                if (y < 0 || y >= static_cast<int>(label_map.size()) || label_map[static_cast<size_t>(y)] < 0) {
                    throw label_error("record label " + std::to_string(y) + " outside the training label space");
                }
                y = label_map[static_cast<size_t>(y)];
            }
            labels->push_back(y);
        }
        return cross_entropy(tape, logits, std::shared_ptr<const std::vector<int>>(labels));
    }

    // regression
    ValueId pred;
    if (bound.lin_reg) {
        pred = linear_head(tape, feats, *bound.lin_reg);
    } else if (bound.reg) {
        pred = regress(tape, feats, *bound.reg);
    } else {
        throw training_error("regression head missing");
    }
    if (logits_out) *logits_out = pred;
    Tensor<T> tgt({b, 1});
    for (int64_t r = 0; r < b; ++r) {
        tgt.data[static_cast<size_t>(r)] =
            static_cast<T>(corpus.records[static_cast<size_t>(ids[static_cast<size_t>(r)])].ranging_error_mm);
    }
    return mse(tape, pred, tape.constant(std::move(tgt)));
}

}  // namespace detail

// Evaluate loss and task metric (accuracy or MAE in mm; reconstruction MSE
// for SSL) over a split. Deterministic: dropout off, no gradients.
template <class T>
std::pair<double, double> evaluate_split(Model<T>& model, const Corpus& corpus,
                                         const std::vector<int64_t>& ids, TrainTask task,
                                         const std::vector<int>& label_map, const TrainConfig& cfg,
                                         int64_t batch_size) {
    if (ids.empty()) throw config_error("evaluate_split: empty split");
    double loss_sum = 0;
    double metric_sum = 0;
    int64_t count = 0;
    CounterRng eval_rng(cfg.seed, fnv1a64("eval"));
    for (const auto& batch : make_batches(ids, batch_size, false, eval_rng)) {
        GradTape<T> tape;
        BoundModel<T> bound = bind_model(tape, model, [](const std::string&) { return false; });
        ValueId out_id = -1;
        ValueId loss = detail::forward_loss(tape, model, bound, corpus, batch, task, label_map, cfg,
                                            /*training=*/false, eval_rng, /*epoch=*/0, &out_id);
        const auto bsz = static_cast<int64_t>(batch.size());
        loss_sum += tape.val(loss).data[0] * static_cast<double>(bsz);
        if (task == TrainTask::classification) {
            const auto& logits = tape.val(out_id);
            const int64_t k = logits.shape[1];
            for (int64_t r = 0; r < bsz; ++r) {
                const T* row = logits.data.data() + r * k;
                int arg = 0;
                for (int64_t j = 1; j < k; ++j) {
                    if (row[j] > row[arg]) arg = static_cast<int>(j);
                }
                int y = corpus.records[static_cast<size_t>(batch[static_cast<size_t>(r)])].label;
                if (!label_map.empty()) y = label_map[static_cast<size_t>(y)];
                metric_sum += (arg == y) ? 1.0 : 0.0;
            }
        } else if (task == TrainTask::regression) {
            const auto& pred = tape.val(out_id);
            for (int64_t r = 0; r < bsz; ++r) {
                const double p = pred.data[static_cast<size_t>(r)];
                const double y = corpus.records[static_cast<size_t>(batch[static_cast<size_t>(r)])].ranging_error_mm;
                metric_sum += std::abs(p - y);
            }
        } else {
            metric_sum += tape.val(loss).data[0] * static_cast<double>(bsz);
        }
        count += bsz;
    }
    return {loss_sum / static_cast<double>(count), metric_sum / static_cast<double>(count)};
}

// Core loop shared by every phase. Trains on train_ids, monitors val_ids,
// keeps the best-val-loss parameters, restores them before returning.
template <class T>
FitResult fit(Model<T>& model, const Corpus& corpus, const std::vector<int64_t>& train_ids,
              const std::vector<int64_t>& val_ids, const TrainConfig& cfg, TrainTask task,
              const std::vector<int>& label_map,
              const std::function<bool(const std::string&)>& trainable) {
    cfg.validate();
    if (train_ids.empty() || val_ids.empty()) throw config_error("fit: empty train or val split");

    AdamW<T> opt;
    PlateauScheduler sched(cfg.lr, cfg.scheduler);
    FitResult result;
    std::vector<Tensor<T>> best = detail::snapshot_params(model);

    const std::string metric_name = task == TrainTask::classification ? "accuracy"
                                    : task == TrainTask::regression   ? "mae_mm"
                                                                      : "recon_mse";
    CounterRng run_rng(cfg.seed, fnv1a64("train"));

    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = sched.lr();
        auto batches = make_batches(train_ids, cfg.batch_size, /*shuffle=*/true,
                                    run_rng.fork("shuffle", static_cast<uint64_t>(epoch)));
        double train_loss = 0;
        double train_metric = 0;
        int64_t seen = 0;
        int64_t step = 0;
        for (const auto& batch : batches) {
            CounterRng batch_rng = run_rng.fork(static_cast<uint64_t>(epoch), static_cast<uint64_t>(step));
            GradTape<T> tape;
            BoundModel<T> bound = bind_model(tape, model, trainable);
            ValueId out_id = -1;
            ValueId loss = detail::forward_loss(tape, model, bound, corpus, batch, task, label_map, cfg,
                                                /*training=*/true, batch_rng, epoch, &out_id);
            tape.backward(loss);
            const auto bsz = static_cast<int64_t>(batch.size());
            train_loss += tape.val(loss).data[0] * static_cast<double>(bsz);
            if (task == TrainTask::classification) {
                const auto& logits = tape.val(out_id);
                const int64_t k = logits.shape[1];
                for (int64_t r = 0; r < bsz; ++r) {
                    const T* row = logits.data.data() + r * k;
                    int arg = 0;
                    for (int64_t j = 1; j < k; ++j) {
                        if (row[j] > row[arg]) arg = static_cast<int>(j);
                    }
                    int y = corpus.records[static_cast<size_t>(batch[static_cast<size_t>(r)])].label;
                    if (!label_map.empty()) y = label_map[static_cast<size_t>(y)];
                    train_metric += (arg == y) ? 1.0 : 0.0;
                }
            }
            seen += bsz;
            opt.step(model, bound, tape, lr, cfg.weight_decay);
            ++step;
        }
        train_loss /= static_cast<double>(seen);
        if (task == TrainTask::classification) {
            train_metric /= static_cast<double>(seen);
        } else {
            train_metric = train_loss;
        }

        auto [val_loss, val_metric] = evaluate_split(model, corpus, val_ids, task, label_map, cfg, cfg.batch_size);

        result.history.push_back({epoch, "train", train_loss, metric_name, train_metric, lr});
        result.history.push_back({epoch, "val", val_loss, metric_name, val_metric, lr});
        result.epochs_run = epoch;

        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            best = detail::snapshot_params(model);
        }
        sched.observe(val_loss);
        if (sched.exhausted()) break;
        if (cfg.early_stop_val_accuracy && task == TrainTask::classification &&
            val_metric >= *cfg.early_stop_val_accuracy) {
            break;
        }
    }
    detail::restore_params(model, best);
    return result;
}

// --- phase wrappers ---

struct PretrainOutput {
    Model<float> model;
    FitResult fit;
    std::vector<std::string> label_space;  // classes covered by the head (supervised)
    FreezeReport freeze;
};

// Label space after excluding a class: remaining names in corpus order.
// label_map sends corpus class ids to head outputs (-1 = excluded).
inline std::pair<std::vector<std::string>, std::vector<int>> excluded_label_space(
    const Corpus& corpus, const std::string& exclude_class_name) {
    std::vector<std::string> names;
    std::vector<int> map(corpus.class_names.size(), -1);
    int64_t excluded = -1;
    if (!exclude_class_name.empty()) excluded = corpus.class_id(exclude_class_name);
    for (size_t i = 0; i < corpus.class_names.size(); ++i) {
        if (static_cast<int64_t>(i) == excluded) continue;
        map[i] = static_cast<int>(names.size());
        names.push_back(corpus.class_names[i]);
    }
    return {names, map};
}

// Supervised pre-training: embedding + encoder + two-layer classification
// head, end to end, on the kept classes of the corpus' train split.
inline PretrainOutput pretrain_supervised(const Corpus& corpus, const ModelConfig& mcfg,
                                          const TrainConfig& cfg,
                                          const std::string& exclude_class_name = "") {
    if (corpus.family == LabelFamily::regression) {
        throw label_error("supervised pre-training requires classification labels");
    }
    auto [names, map] = excluded_label_space(corpus, exclude_class_name);
    PretrainOutput out;
    out.model = Model<float>::init(mcfg, cfg.seed);
    out.model.attach_cls_head(static_cast<int64_t>(names.size()), cfg.seed);
    out.label_space = names;

    auto keep = [&](const std::vector<int64_t>& ids) {
        std::vector<int64_t> kept;
        for (int64_t id : ids) {
            if (map[static_cast<size_t>(corpus.records[static_cast<size_t>(id)].label)] >= 0) kept.push_back(id);
        }
        return kept;
    };
    const auto train_ids = keep(corpus.split.ids_of(Split::train));
    const auto val_ids = keep(corpus.split.ids_of(Split::val));
    out.fit = fit(out.model, corpus, train_ids, val_ids, cfg, TrainTask::classification, map, train_all());
    out.freeze = freeze_report(out.model, train_all());
    return out;
}

// Masked-reconstruction pre-training; labels are ignored, but an excluded
// class is still withheld so the fine-tune pool stays unseen.
inline PretrainOutput pretrain_ssl(const Corpus& corpus, const ModelConfig& mcfg, const TrainConfig& cfg,
                                   const std::string& exclude_class_name = "") {
    PretrainOutput out;
    out.model = Model<float>::init(mcfg, cfg.seed);
    out.model.attach_recon_head(cfg.seed);

    std::vector<int> map;
    std::vector<int64_t> train_ids = corpus.split.ids_of(Split::train);
    std::vector<int64_t> val_ids = corpus.split.ids_of(Split::val);
    if (!exclude_class_name.empty() && corpus.family != LabelFamily::regression) {
        auto [names, m] = excluded_label_space(corpus, exclude_class_name);
        (void)names;
        auto keep = [&](std::vector<int64_t>& ids) {
            std::erase_if(ids, [&](int64_t id) {
                return m[static_cast<size_t>(corpus.records[static_cast<size_t>(id)].label)] < 0;
            });
        };
        keep(train_ids);
        keep(val_ids);
    }
    out.fit = fit(out.model, corpus, train_ids, val_ids, cfg, TrainTask::reconstruction, {}, train_all());
    out.freeze = freeze_report(out.model, train_all());
    return out;
}

struct FinetuneOutput {
    Model<float> model;
    FitResult fit;
    std::vector<std::string> label_space;
    FinetuneSplit split;
    FreezeReport freeze;
    std::vector<uint64_t> frozen_hash_before, frozen_hash_after;  // per frozen tensor
};

enum class FinetuneTask { classification, regression };

namespace detail {

template <class T>
std::vector<uint64_t> hash_params(Model<T>& model, const std::function<bool(const std::string&)>& trainable,
                                  bool frozen_only) {
    std::vector<uint64_t> out;
    for (auto& p : model.registry()) {
        if (frozen_only && trainable(p.name)) continue;
        out.push_back(fnv1a64(p.tensor->data.data(), p.tensor->data.size() * sizeof(T)));
    }
    return out;
}

}  // namespace detail

// Fine-tuning: discard the pre-training head, attach a fresh task head,
// freeze everything but the last encoder layer and that head, train with the
// fine-tune lr/wd. `same_corpus` selects the unseen-class pool (pre-training
// test split plus held-out class); otherwise the whole container is re-split.
inline FinetuneOutput finetune(const Model<float>& pretrained, const CheckpointMeta& meta,
                               const Corpus& corpus, const TrainConfig& cfg, FinetuneTask task,
                               bool same_corpus,
                               std::optional<int64_t> samples_per_class = std::nullopt,
                               double sample_fraction = 1.0) {
    if (task == FinetuneTask::classification && corpus.family == LabelFamily::regression) {
        throw label_error("classification fine-tuning requires a labelled corpus");
    }
    if (task == FinetuneTask::regression && corpus.family != LabelFamily::regression) {
        throw label_error("regression fine-tuning requires ranging labels");
    }

    FinetuneOutput out;
    out.model = pretrained;
    out.model.drop_heads();

    if (task == FinetuneTask::classification) {
        out.label_space = corpus.class_names;
        if (cfg.head_form == HeadForm::linear) {
            out.model.attach_linear_cls_head(static_cast<int64_t>(out.label_space.size()), cfg.seed);
        } else {
            out.model.attach_cls_head(static_cast<int64_t>(out.label_space.size()), cfg.seed);
        }
    } else {
        if (cfg.head_form == HeadForm::linear) {
            out.model.attach_linear_reg_head(cfg.seed);
        } else {
            out.model.attach_reg_head(1, cfg.seed);
        }
    }

    // Fine-tune pool per the flowchart: pre-training test split plus all
    // held-out-class records; disjoint from pre-training train/val by
    // construction.
    std::vector<int64_t> pool_test, heldout;
    if (same_corpus) {
        std::vector<int> seen(corpus.class_names.size(), 0);
        for (const auto& name : meta.label_space) {
            for (size_t i = 0; i < corpus.class_names.size(); ++i) {
                if (corpus.class_names[i] == name) seen[i] = 1;
            }
        }
        const bool classification_family = corpus.family != LabelFamily::regression;
        for (const auto& rec : corpus.records) {
            const bool held = classification_family && !meta.label_space.empty() &&
                              !seen[static_cast<size_t>(rec.label)];
            if (held) {
                heldout.push_back(rec.id);
            } else if (corpus.split.assign[static_cast<size_t>(rec.id)] == static_cast<uint8_t>(Split::test)) {
                pool_test.push_back(rec.id);
            }
        }
    } else {
        pool_test.resize(corpus.records.size());
        for (size_t i = 0; i < corpus.records.size(); ++i) pool_test[i] = static_cast<int64_t>(i);
    }
    out.split = make_finetune_split(corpus, pool_test, heldout, {0.7, 0.15, 0.15}, cfg.seed,
                                    samples_per_class, sample_fraction);

    std::vector<int> map;  // identity: head covers the container's class table
    auto trainable = finetune_freeze(out.model.cfg.encoder.num_layers);
    out.frozen_hash_before = detail::hash_params(out.model, trainable, /*frozen_only=*/true);
    out.fit = fit(out.model, corpus, out.split.train, out.split.val, cfg,
                  task == FinetuneTask::classification ? TrainTask::classification : TrainTask::regression,
                  map, trainable);
    out.frozen_hash_after = detail::hash_params(out.model, trainable, /*frozen_only=*/true);
    out.freeze = freeze_report(out.model, trainable);
    return out;
}

}  // namespace patchwave
