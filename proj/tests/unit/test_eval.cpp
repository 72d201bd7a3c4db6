#include <catch2/catch_amalgamated.hpp>

#include "patchwave/eval.hpp"
#include "patchwave/signal_synth.hpp"
#include "oracles.hpp"

using namespace patchwave;

namespace {

Corpus balanced_corpus(int classes, int per_class, int64_t length = 256, uint64_t seed = 5) {
    Corpus c;
    c.length = length;
    c.family = LabelFamily::classification;
    CounterRng rng(seed);
    for (int cls = 0; cls < classes; ++cls) {
        c.class_names.push_back("c" + std::to_string(cls));
        TechnologySpec spec{"c" + std::to_string(cls), ModulationKind::tone,
                            20.0 + 25.0 * cls, 0.01, 1.0, 64, {12, 20}};
        for (auto& rec : gen_iq(spec, per_class, length, seed)) {
            rec.label = cls;
            rec.id = static_cast<int64_t>(c.records.size());
            c.records.push_back(std::move(rec));
        }
    }
    c.split = make_split(c, {0.7, 0.15, 0.15}, seed);
    return c;
}

}  // namespace

TEST_CASE("classification metrics from a forced predictor") {
    // zeroed model with only the head bias set drives every prediction to one
    // class: accuracy over a balanced 4-class corpus is exactly 0.25
    Corpus corpus = balanced_corpus(4, 10);
    ModelConfig mc;
    mc.patch = {256, 32, 32, 8, 0.0};
    mc.encoder = {8, 2, 1, 16, 0.0, 0.0};
    mc.head_hidden = 8;
    Model<float> model = Model<float>::init(mc, 1);
    model.attach_linear_cls_head(4, 1);
    model.lin_cls_head->w = Tensor<float>::zeros(model.lin_cls_head->w.shape);
    model.lin_cls_head->b = Tensor<float>({4}, {0.0f, 1.0f, 0.0f, 0.0f});

    std::vector<int64_t> all(corpus.records.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
    auto rep = evaluate_classification(model, corpus, all, corpus.class_names);
    CHECK(rep.accuracy == Catch::Approx(0.25));
    CHECK(rep.evaluated == 40);
    // confusion row sums equal per-class counts; all predictions in column 1
    for (int c = 0; c < 4; ++c) {
        int64_t row = 0;
        for (int j = 0; j < 4; ++j) row += rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(j)];
        CHECK(row == 10);
        CHECK(rep.confusion[static_cast<size_t>(c)][1] == 10);
    }
    // accuracy equals trace/total by construction
    int64_t trace = 0;
    for (int c = 0; c < 4; ++c) trace += rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    CHECK(rep.accuracy == Catch::Approx(static_cast<double>(trace) / 40.0));
    CHECK(rep.recall[1] == Catch::Approx(1.0));
    CHECK(rep.precision[1] == Catch::Approx(0.25));

    SECTION("empty split is an error") {
        CHECK_THROWS_AS(evaluate_classification(model, corpus, {}, corpus.class_names), config_error);
    }
    SECTION("reports are bit-identical across runs") {
        auto a = evaluate_classification(model, corpus, all, corpus.class_names).to_json().dump();
        auto b = evaluate_classification(model, corpus, all, corpus.class_names).to_json().dump();
        CHECK(a == b);
    }
}

TEST_CASE("regression metrics") {
    Corpus corpus;
    corpus.length = 256;
    corpus.family = LabelFamily::regression;
    for (int i = 0; i < 8; ++i) {
        SignalRecord r;
        r.data.assign(512, 0.0f);
        r.ranging_error_mm = (i % 2 == 0) ? 100.0f : 300.0f;
        r.id = i;
        corpus.records.push_back(std::move(r));
    }
    corpus.split = make_split(corpus, {0.5, 0.25, 0.25}, 1);

    ModelConfig mc;
    mc.patch = {256, 32, 32, 8, 0.0};
    mc.encoder = {8, 2, 1, 16, 0.0, 0.0};
    Model<float> model = Model<float>::init(mc, 1);
    model.attach_linear_reg_head(1);
    model.lin_reg_head->w = Tensor<float>::zeros(model.lin_reg_head->w.shape);

    std::vector<int64_t> all{0, 1, 2, 3, 4, 5, 6, 7};
    SECTION("zero predictor: mae equals mae_before") {
        model.lin_reg_head->b = Tensor<float>({1}, {0.0f});
        auto rep = evaluate_regression(model, corpus, all);
        CHECK(rep.mae_mm == Catch::Approx(200.0));
        CHECK(rep.mae_before_mm == Catch::Approx(200.0));
    }
    SECTION("constant predictor at 200: known mae") {
        model.lin_reg_head->b = Tensor<float>({1}, {200.0f});
        auto rep = evaluate_regression(model, corpus, all);
        CHECK(rep.mae_mm == Catch::Approx(100.0));
        CHECK(rep.mae_before_mm == Catch::Approx(200.0));
    }
    SECTION("family mismatch is a label error") {
        Corpus cls = balanced_corpus(2, 4);
        CHECK_THROWS_AS(evaluate_regression(model, cls, {0, 1}), label_error);
    }
}

TEST_CASE("hand-computed mae example") {
    // labels {100, 300}, predictions {100, 200} -> mae 50
    Corpus corpus;
    corpus.length = 4;
    corpus.family = LabelFamily::regression;
    for (int i = 0; i < 2; ++i) {
        SignalRecord r;
        r.data.assign(8, 0.0f);
        r.ranging_error_mm = i == 0 ? 100.0f : 300.0f;
        r.id = i;
        corpus.records.push_back(std::move(r));
    }
    corpus.split = make_split(corpus, {0.5, 0.25, 0.25}, 1);
    const double mae = (std::abs(100.0 - 100.0) + std::abs(200.0 - 300.0)) / 2.0;
    CHECK(mae == 50.0);
}

TEST_CASE("complexity benchmark") {
    SECTION("patch not dividing L is a config error") {
        Corpus corpus = balanced_corpus(2, 6);
        ModelConfig mc;
        mc.patch = {256, 32, 32, 8, 0.0};
        mc.encoder = {8, 2, 1, 16, 0.0, 0.0};
        TrainConfig cfg = TrainConfig::defaults(Phase::pretrain_supervised);
        CHECK_THROWS_AS(complexity_benchmark(corpus, {31}, mc, cfg, 1), config_error);
    }
    SECTION("analytic attention MACs: doubling P quarters the quadratic term") {
        EncoderConfig enc{64, 8, 2, 256, 0.0, 0.0};
        // P=128 -> N=32; P=256 -> N=16 at L=4096
        const int64_t quad_n32 = enc.num_heads * 2 * 32 * 32 * enc.head_dim();
        const int64_t quad_n16 = enc.num_heads * 2 * 16 * 16 * enc.head_dim();
        CHECK(quad_n32 == 4 * quad_n16);
        CHECK(attention_mac_count(enc, 32) > attention_mac_count(enc, 16));
    }
    SECTION("P=128 at L=4096 gives N=32") {
        PatchConfig cfg{4096, 128, 128, 64, 0.0};
        CHECK(cfg.token_count() == 32);
    }
    SECTION("sweep rows: MACs strictly decrease with P") {
        Corpus corpus = balanced_corpus(2, 8, 256);
        ModelConfig mc;
        mc.patch = {256, 32, 32, 16, 0.0};
        mc.encoder = {16, 2, 1, 32, 0.0, 0.0};
        mc.head_hidden = 8;
        TrainConfig cfg = TrainConfig::defaults(Phase::pretrain_supervised);
        cfg.batch_size = 8;
        cfg.seed = 3;
        auto rows = complexity_benchmark(corpus, {16, 32, 64}, mc, cfg, 1);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].attention_macs > rows[1].attention_macs);
        CHECK(rows[1].attention_macs > rows[2].attention_macs);
        for (const auto& r : rows) {
            CHECK(r.accuracy >= 0.0);
            CHECK(r.accuracy <= 1.0);
            CHECK(r.seconds_per_epoch > 0.0);
            CHECK(r.activation_scalars_peak > 0);
        }
        // the portable memory counter is machine-independent and reproducible
        auto rows2 = complexity_benchmark(corpus, {16, 32, 64}, mc, cfg, 1);
        for (size_t i = 0; i < rows.size(); ++i) {
            CHECK(rows[i].activation_scalars_peak == rows2[i].activation_scalars_peak);
            CHECK(rows[i].accuracy == rows2[i].accuracy);
        }
    }
}
