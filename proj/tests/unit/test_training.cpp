#include <catch2/catch_amalgamated.hpp>

#include "patchwave/signal_synth.hpp"
#include "patchwave/training.hpp"
#include "oracles.hpp"

using namespace patchwave;

namespace {

Corpus tiny_iq_corpus(int per_class = 30, int64_t length = 256, uint64_t seed = 5) {
    std::vector<TechnologySpec> specs{
        {"low_tone", ModulationKind::tone, 20.0, 0.01, 1.0, 64, {12, 20}},
        {"high_tone", ModulationKind::tone, 90.0, 0.01, 1.0, 64, {12, 20}},
        {"chirpy", ModulationKind::chirp, 55.0, 0.2, 1.0, 64, {12, 20}},
    };
    Corpus c;
    c.length = length;
    c.family = LabelFamily::classification;
    c.gen_seed = seed;
    for (size_t cls = 0; cls < specs.size(); ++cls) {
        c.class_names.push_back(specs[cls].name);
        for (auto& rec : gen_iq(specs[cls], per_class, length, seed)) {
            rec.label = static_cast<int>(cls);
            rec.id = static_cast<int64_t>(c.records.size());
            c.records.push_back(std::move(rec));
        }
    }
    c.split = make_split(c, {0.7, 0.15, 0.15}, seed);
    return c;
}

ModelConfig tiny_model_config(int64_t length = 256) {
    ModelConfig mc;
    mc.patch = {length, 32, 32, 16, 0.1};
    mc.encoder = {16, 2, 2, 32, 0.1, 0.1};
    mc.head_hidden = 16;
    return mc;
}

}  // namespace

TEST_CASE("adamw") {
    ModelConfig mc = tiny_model_config();
    SECTION("zero grads with zero decay leave parameters unchanged") {
        Model<float> m = Model<float>::init(mc, 1);
        auto before = m.embed_w.data;
        AdamW<float> opt;
        GradTape<float> tape;
        auto bound = bind_model(tape, m, train_all());
        // backward never called: no gradients flowed
        opt.step(m, bound, tape, 1e-3, 0.0);
        CHECK(m.embed_w.data == before);
    }
    SECTION("zero grads with decay shrink parameters by exactly (1 - lr*wd)") {
        Model<float> m = Model<float>::init(mc, 1);
        auto before = m.embed_w.data;
        AdamW<float> opt;
        GradTape<float> tape;
        auto bound = bind_model(tape, m, train_all());
        auto input = tape.constant(Tensor<float>::zeros({4, mc.patch.patch_len}));
        // forge a zero gradient by backward over a loss that ignores params:
        // instead run a manual accumulation pass
        tape.backward(mse(tape, embed_patches(tape, input, bound.embed_w, bound.embed_b),
                          tape.constant(Tensor<float>::zeros({4, mc.patch.latent_dim}))));
        // embed gradients are zero because input is zero and prediction==target
        opt.step(m, bound, tape, 0.5, 0.1);
        for (size_t i = 0; i < before.size(); ++i) {
            CHECK(m.embed_w.data[i] == Catch::Approx(before[i] * (1.0 - 0.5 * 0.1)).margin(1e-7));
        }
    }
    SECTION("single-parameter quadratic trace matches the hand-stepped oracle") {
        // loss = (2w - 3)^2 on a 1x1 parameter, 64-bit; compare 100 steps
        ModelConfig micro_cfg;
        micro_cfg.patch = {2, 1, 1, 1, 0.0};
        micro_cfg.encoder = {1, 1, 0, 1, 0.0, 0.0};
        micro_cfg.head_hidden = 1;
        Model<double> micro = Model<double>::init(micro_cfg, 3);
        micro.embed_w = Tensor<double>({1, 1}, {0.0});  // the parameter under test
        micro.embed_b = Tensor<double>::zeros({1});

        oracles::ScalarAdamW oracle;
        double wo = 0.0;
        AdamW<double> opt;
        const double lr = 0.05, wd = 0.01;
        for (int step = 0; step < 100; ++step) {
            GradTape<double> tape;
            auto bound = bind_model(tape, micro, [](const std::string& n) { return n == "embed.w"; });
            auto x = tape.constant(Tensor<double>({1, 1}, {2.0}));
            auto pred = matmul(tape, x, bound.embed_w);
            auto loss = mse(tape, pred, tape.constant(Tensor<double>({1, 1}, {3.0})));
            tape.backward(loss);
            const double g = tape.grad(bound.embed_w).data[0];
            opt.step(micro, bound, tape, lr, wd);
            wo = oracle.step(wo, g, lr, wd);
            CHECK(std::abs(micro.embed_w.data[0] - wo) < 1e-6);
        }
        // converged toward the minimum at w = 1.5 (decay pulls slightly below)
        CHECK(micro.embed_w.data[0] > 1.3);
        CHECK(micro.embed_w.data[0] < 1.6);
    }
}

TEST_CASE("plateau scheduler") {
    SchedulerConfig sc;  // factor 0.7, patience 3, threshold 1e-4
    SECTION("improving losses keep the lr") {
        PlateauScheduler s(1e-3, sc);
        for (double loss : {1.0, 0.9, 0.8}) s.observe(loss);
        CHECK(s.lr() == 1e-3);
    }
    SECTION("one reduction after three flat epochs past the best") {
        PlateauScheduler s(1e-3, sc);
        s.observe(1.0);
        s.observe(1.0);
        s.observe(1.0);
        CHECK(s.lr() == 1e-3);
        s.observe(1.0);
        CHECK(s.lr() == Catch::Approx(0.7e-3));
    }
    SECTION("two stagnation windows compose to 0.49x") {
        PlateauScheduler s(1e-3, sc);
        s.observe(1.0);
        for (int i = 0; i < 6; ++i) s.observe(1.0);
        CHECK(s.lr() == Catch::Approx(0.49e-3));
    }
    SECTION("lr is exactly lr0 * 0.7^k and never increases") {
        PlateauScheduler s(1.0, sc);
        s.observe(1.0);
        double prev = 1.0;
        for (int k = 1; k <= 5; ++k) {
            for (int i = 0; i < 3; ++i) s.observe(1.0);
            CHECK(s.lr() == Catch::Approx(std::pow(0.7, k)).epsilon(1e-12));
            CHECK(s.lr() < prev);
            prev = s.lr();
        }
    }
    SECTION("tiny jitter below the threshold does not reset patience") {
        PlateauScheduler s(1.0, sc);
        s.observe(1.0);
        s.observe(1.0 - 1e-7);
        s.observe(1.0 + 1e-7);
        s.observe(1.0 - 2e-7);
        CHECK(s.lr() == Catch::Approx(0.7));
    }
}

TEST_CASE("mask plans") {
    SECTION("mask count is round(ratio * N)") {
        auto plan = make_mask_plan(32, 0.5, CounterRng(1));
        CHECK(plan.masked.size() == 16);
        plan = make_mask_plan(32, 0.49, CounterRng(1));
        CHECK(plan.masked.size() == 16);  // round(15.68)
        plan = make_mask_plan(10, 0.26, CounterRng(1));
        CHECK(plan.masked.size() == 3);
    }
    SECTION("indices are unique and in range") {
        auto plan = make_mask_plan(32, 0.5, CounterRng(7));
        std::set<int64_t> s(plan.masked.begin(), plan.masked.end());
        CHECK(s.size() == plan.masked.size());
        for (int64_t i : plan.masked) {
            CHECK(i >= 0);
            CHECK(i < 32);
        }
    }
    SECTION("zero-mode masking zeroes exactly the planned rows, input untouched") {
        auto raw = Tensor<float>::randn({8, 4}, CounterRng(3));
        auto original = raw;
        MaskPlan plan;
        plan.masked = {1, 5};
        auto corrupted = mask_patches_zero(raw, plan);
        CHECK(raw.data == original.data);
        for (int64_t i = 0; i < 8; ++i) {
            for (int64_t j = 0; j < 4; ++j) {
                if (i == 1 || i == 5) {
                    CHECK(corrupted.at(i, j) == 0.0f);
                } else {
                    CHECK(corrupted.at(i, j) == raw.at(i, j));
                }
            }
        }
    }
    SECTION("ratio at zero or one is rejected by the config") {
        TrainConfig cfg = TrainConfig::defaults(Phase::pretrain_ssl);
        cfg.mask_ratio = 1.0;
        CHECK_THROWS_AS(cfg.validate(), config_error);
    }
}

TEST_CASE("training loops") {
    Corpus corpus = tiny_iq_corpus();
    ModelConfig mc = tiny_model_config();

    SECTION("one epoch of plumbing: history length and loss recorded") {
        TrainConfig cfg = TrainConfig::defaults(Phase::pretrain_supervised);
        cfg.epochs = 1;
        cfg.batch_size = 16;
        cfg.lr = 1e-3;
        cfg.seed = 11;
        auto out = pretrain_supervised(corpus, mc, cfg);
        REQUIRE(out.fit.history.size() == 2);  // train + val rows
        CHECK(out.fit.history[0].split == "train");
        CHECK(out.fit.history[1].split == "val");
        CHECK(out.fit.history[0].loss > 0.0);
    }
    SECTION("same config and seed give bit-identical parameters") {
        TrainConfig cfg = TrainConfig::defaults(Phase::pretrain_supervised);
        cfg.epochs = 2;
        cfg.batch_size = 16;
        cfg.lr = 1e-3;
        cfg.seed = 12;
        auto a = pretrain_supervised(corpus, mc, cfg);
        auto b = pretrain_supervised(corpus, mc, cfg);
        auto ra = a.model.registry();
        auto rb = b.model.registry();
        for (size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].tensor->data == rb[i].tensor->data);
        for (size_t i = 0; i < a.fit.history.size(); ++i) {
            CHECK(a.fit.history[i].loss == b.fit.history[i].loss);
        }
    }
    SECTION("class exclusion: label space shrinks and heldout ids never train") {
        TrainConfig cfg = TrainConfig::defaults(Phase::pretrain_supervised);
        cfg.epochs = 1;
        cfg.batch_size = 16;
        cfg.seed = 13;
        auto out = pretrain_supervised(corpus, mc, cfg, "chirpy");
        CHECK(out.label_space == std::vector<std::string>{"low_tone", "high_tone"});
        CHECK(out.model.cls_head->out_dim() == 2);
    }
    SECTION("ssl loss decreases on a learnable corpus and the masked-only flag works") {
        TrainConfig cfg = TrainConfig::defaults(Phase::pretrain_ssl);
        cfg.epochs = 4;
        cfg.batch_size = 16;
        cfg.seed = 14;
        auto out = pretrain_ssl(corpus, mc, cfg);
        const double first = out.fit.history[1].loss;   // epoch 1 val
        const double last = out.fit.history.back().loss;
        CHECK(last < first);

        cfg.ssl_loss_masked_only = true;
        cfg.epochs = 1;
        auto masked = pretrain_ssl(corpus, mc, cfg);
        CHECK(masked.fit.history[0].loss > 0.0);
    }
    SECTION("constant-zero corpus is trivially reconstructable") {
        Corpus zeros;
        zeros.length = 256;
        zeros.family = LabelFamily::regression;  // labels unused by ssl
        for (int i = 0; i < 40; ++i) {
            SignalRecord r;
            r.data.assign(512, 0.0f);
            r.id = i;
            zeros.records.push_back(std::move(r));
        }
        zeros.split = make_split(zeros, {0.7, 0.15, 0.15}, 2);
        TrainConfig cfg = TrainConfig::defaults(Phase::pretrain_ssl);
        cfg.epochs = 12;
        cfg.batch_size = 16;
        cfg.lr = 2e-3;
        cfg.seed = 15;
        cfg.mask_mode = MaskMode::zero;
        auto out = pretrain_ssl(zeros, mc, cfg);
        CHECK(out.fit.best_val_loss < 1e-3);
    }
}

TEST_CASE("finetune freezing contract") {
    Corpus corpus = tiny_iq_corpus(40);
    ModelConfig mc = tiny_model_config();

    TrainConfig pre_cfg = TrainConfig::defaults(Phase::pretrain_supervised);
    pre_cfg.epochs = 2;
    pre_cfg.batch_size = 16;
    pre_cfg.lr = 1e-3;
    pre_cfg.seed = 21;
    auto pre = pretrain_supervised(corpus, mc, pre_cfg, "chirpy");

    CheckpointMeta meta;
    meta.label_space = pre.label_space;

    TrainConfig ft_cfg = TrainConfig::defaults(Phase::finetune_cls);
    ft_cfg.epochs = 3;
    ft_cfg.batch_size = 8;
    ft_cfg.lr = 1e-3;
    ft_cfg.seed = 22;

    SECTION("frozen parameter bytes are identical before and after") {
        auto ft = finetune(pre.model, meta, corpus, ft_cfg, FinetuneTask::classification, true);
        CHECK(ft.frozen_hash_before == ft.frozen_hash_after);
        CHECK(ft.label_space == corpus.class_names);
        CHECK(ft.model.lin_cls_head->out_dim() == 3);  // K' = K + U = 2 + 1
    }
    SECTION("one optimizer step changes only head + last encoder layer") {
        Model<float> m = pre.model;
        m.drop_heads();
        m.attach_linear_cls_head(3, 1);
        auto trainable = finetune_freeze(m.cfg.encoder.num_layers);
        auto before = detail::snapshot_params(m);
        AdamW<float> opt;
        GradTape<float> tape;
        auto bound = bind_model(tape, m, trainable);
        CounterRng rng(1);
        std::vector<int64_t> batch{0, 1, 2, 40, 41, 80};
        TrainConfig cfg = ft_cfg;
        ValueId loss = patchwave::detail::forward_loss(tape, m, bound, corpus, batch,
                                                       TrainTask::classification, {}, cfg, true, rng, 1);
        tape.backward(loss);
        opt.step(m, bound, tape, 1e-3, 1e-5);
        auto reg = m.registry();
        for (size_t i = 0; i < reg.size(); ++i) {
            const bool changed = reg[i].tensor->data != before[i].data;
            if (trainable(reg[i].name)) {
                CHECK(changed);  // everything trainable received signal here
            } else {
                CHECK(!changed);
            }
        }
    }
    SECTION("task/family mismatch is a label error") {
        CHECK_THROWS_AS(finetune(pre.model, meta, corpus, ft_cfg, FinetuneTask::regression, true),
                        label_error);
    }
    SECTION("finetune split never touches pretrain train/val records") {
        auto ft = finetune(pre.model, meta, corpus, ft_cfg, FinetuneTask::classification, true);
        for (const auto* side : {&ft.split.train, &ft.split.val, &ft.split.test}) {
            for (int64_t id : *side) {
                const bool heldout = corpus.records[static_cast<size_t>(id)].label == 2;
                const bool from_test = corpus.split.assign[static_cast<size_t>(id)] == 2;
                CHECK((heldout || from_test));
            }
        }
    }
}

TEST_CASE("history file is line-delimited json") {
    std::vector<HistoryRow> rows{{1, "train", 0.5, "accuracy", 0.8, 1e-4},
                                 {1, "val", 0.6, "accuracy", 0.7, 1e-4}};
    const auto dir = oracles::make_temp_dir("hist");
    write_history(dir / "h.jsonl", rows);
    const auto text = read_text_file(dir / "h.jsonl");
    size_t lines = std::count(text.begin(), text.end(), '\n');
    CHECK(lines == 2);
    auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
    CHECK(first.at("epoch") == 1);
    CHECK(first.at("split") == "train");
    std::filesystem::remove_all(dir);
}
