#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "patchwave/dataset.hpp"
#include "patchwave/signal_synth.hpp"
#include "oracles.hpp"

using namespace patchwave;

namespace {

Corpus small_corpus(int classes = 4, int per_class = 25, int64_t length = 64, uint64_t seed = 5) {
    Corpus c;
    c.length = length;
    c.family = LabelFamily::classification;
    CounterRng rng(seed);
    for (int cls = 0; cls < classes; ++cls) {
        c.class_names.push_back("class_" + std::to_string(cls));
        for (int i = 0; i < per_class; ++i) {
            SignalRecord rec;
            rec.data.resize(static_cast<size_t>(2 * length));
            auto r = rng.fork(static_cast<uint64_t>(cls), static_cast<uint64_t>(i));
            for (auto& v : rec.data) v = static_cast<float>(r.gaussian());
            rec.label = cls;
            rec.id = static_cast<int64_t>(c.records.size());
            rec.meta.source = c.class_names.back();
            c.records.push_back(std::move(rec));
        }
    }
    c.split = make_split(c, {0.7, 0.15, 0.15}, seed);
    return c;
}

}  // namespace

TEST_CASE("container round-trip is bit-exact") {
    auto corpus = small_corpus();
    const auto dir = oracles::make_temp_dir("roundtrip");
    write_container(corpus, dir);
    auto back = read_container(dir);
    REQUIRE(back.records.size() == corpus.records.size());
    for (size_t i = 0; i < corpus.records.size(); ++i) {
        CHECK(back.records[i].data == corpus.records[i].data);
        CHECK(back.records[i].label == corpus.records[i].label);
    }
    CHECK(back.split.assign == corpus.split.assign);
    CHECK(back.class_names == corpus.class_names);
    std::filesystem::remove_all(dir);
}

TEST_CASE("container integrity and format errors") {
    auto corpus = small_corpus(2, 10);
    const auto dir = oracles::make_temp_dir("integrity");
    write_container(corpus, dir);

    SECTION("truncated shard") {
        const auto shard = dir / "shard_0000.bin";
        std::filesystem::resize_file(shard, std::filesystem::file_size(shard) - 4);
        CHECK_THROWS_AS(read_container(dir), integrity_error);
    }
    SECTION("manifest count mismatch") {
        auto j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
        j["sample_count"] = 21;
        write_text_file(dir / "manifest.json", j.dump());
        CHECK_THROWS_AS(read_container(dir), integrity_error);
    }
    SECTION("wrong format tag") {
        auto j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
        j["format"] = "something-else";
        write_text_file(dir / "manifest.json", j.dump());
        CHECK_THROWS_AS(read_container(dir), format_error);
    }
    SECTION("corrupt manifest json") {
        write_text_file(dir / "manifest.json", "{not json");
        CHECK_THROWS_AS(read_container(dir), format_error);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("empty record list cannot be written") {
    Corpus c;
    c.length = 16;
    const auto dir = oracles::make_temp_dir("empty");
    CHECK_THROWS_AS(write_container(c, dir / "x"), config_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("exclude_class partitions the corpus") {
    auto corpus = small_corpus(4, 10);
    auto [kept, held] = exclude_class(corpus, "class_2");
    CHECK(kept.size() == 30);
    CHECK(held.size() == 10);
    for (int64_t id : held) CHECK(corpus.records[static_cast<size_t>(id)].label == 2);
    // union restores the original id multiset
    std::vector<int64_t> all = kept;
    all.insert(all.end(), held.begin(), held.end());
    std::sort(all.begin(), all.end());
    for (size_t i = 0; i < all.size(); ++i) CHECK(all[i] == static_cast<int64_t>(i));

    CHECK_THROWS_AS(exclude_class(corpus, "missing"), label_error);
}

TEST_CASE("stratified split keeps per-class fractions within one record") {
    auto corpus = small_corpus(4, 40);
    for (int cls = 0; cls < 4; ++cls) {
        std::array<int64_t, 3> counts{0, 0, 0};
        for (const auto& rec : corpus.records) {
            if (rec.label == cls) counts[corpus.split.assign[static_cast<size_t>(rec.id)]] += 1;
        }
        CHECK(std::abs(counts[0] - 28) <= 1);  // 0.70 * 40
        CHECK(std::abs(counts[1] - 6) <= 1);   // 0.15 * 40
        CHECK(std::abs(counts[2] - 6) <= 1);
    }
    // partitions are disjoint and exhaustive by construction of the array;
    // check sizes add up
    auto tr = corpus.split.ids_of(Split::train);
    auto va = corpus.split.ids_of(Split::val);
    auto te = corpus.split.ids_of(Split::test);
    CHECK(tr.size() + va.size() + te.size() == corpus.records.size());
}

TEST_CASE("make_finetune_split") {
    auto corpus = small_corpus(4, 40);
    auto [kept, held] = exclude_class(corpus, "class_3");
    std::vector<int64_t> pretrain_test;
    for (int64_t id : kept) {
        if (corpus.split.assign[static_cast<size_t>(id)] == 2) pretrain_test.push_back(id);
    }

    SECTION("samples_per_class fixes the train side exactly") {
        auto ft = make_finetune_split(corpus, pretrain_test, held, {0.7, 0.15, 0.15}, 9, 5);
        CHECK(ft.train.size() == 4 * 5);
        std::array<int64_t, 4> per_class{0, 0, 0, 0};
        for (int64_t id : ft.train) per_class[static_cast<size_t>(corpus.records[static_cast<size_t>(id)].label)] += 1;
        for (int cls = 0; cls < 4; ++cls) CHECK(per_class[static_cast<size_t>(cls)] == 5);
    }
    SECTION("requesting more than available fails") {
        CHECK_THROWS_AS(make_finetune_split(corpus, pretrain_test, held, {0.7, 0.15, 0.15}, 9, 500),
                        config_error);
    }
    SECTION("pool is disjoint from pretrain train/val") {
        auto ft = make_finetune_split(corpus, pretrain_test, held, {0.7, 0.15, 0.15}, 9);
        std::vector<int64_t> pool = ft.train;
        pool.insert(pool.end(), ft.val.begin(), ft.val.end());
        pool.insert(pool.end(), ft.test.begin(), ft.test.end());
        for (int64_t id : pool) {
            const bool heldout = corpus.records[static_cast<size_t>(id)].label == 3;
            const bool in_test = corpus.split.assign[static_cast<size_t>(id)] == 2;
            CHECK((heldout || in_test));
        }
    }
    SECTION("ratio split sizes for an unlabeled pool") {
        Corpus reg;
        reg.length = 8;
        reg.family = LabelFamily::regression;
        for (int i = 0; i < 1000; ++i) {
            SignalRecord r;
            r.data.resize(16, 0.0f);
            r.ranging_error_mm = static_cast<float>(i);
            r.id = i;
            reg.records.push_back(std::move(r));
        }
        reg.split = make_split(reg, {0.7, 0.15, 0.15}, 3);
        std::vector<int64_t> all(1000);
        for (int i = 0; i < 1000; ++i) all[static_cast<size_t>(i)] = i;
        auto ft = make_finetune_split(reg, all, {}, {0.7, 0.15, 0.15}, 4);
        CHECK(std::abs(static_cast<int64_t>(ft.train.size()) - 700) <= 1);
        CHECK(std::abs(static_cast<int64_t>(ft.val.size()) - 150) <= 2);
        CHECK(std::abs(static_cast<int64_t>(ft.test.size()) - 150) <= 2);
    }
    SECTION("sample_fraction trims the train side") {
        auto ft = make_finetune_split(corpus, pretrain_test, held, {0.7, 0.15, 0.15}, 9, std::nullopt, 0.1);
        auto full = make_finetune_split(corpus, pretrain_test, held, {0.7, 0.15, 0.15}, 9);
        CHECK(ft.train.size() ==
              static_cast<size_t>(std::llround(0.1 * static_cast<double>(full.train.size()))));
        CHECK(ft.val == full.val);
        CHECK(ft.test == full.test);
    }
}

TEST_CASE("standardize") {
    SECTION("constant channel maps to zeros") {
        SignalRecord rec;
        rec.data.assign(32, 3.5f);
        auto out = standardize(rec, 2);
        for (float v : out.data) CHECK(v == Catch::Approx(0.0).margin(1e-3));
    }
    SECTION("random record reaches zero mean, unit variance per channel") {
        SignalRecord rec;
        rec.data.resize(2048);
        CounterRng rng(8);
        for (auto& v : rec.data) v = static_cast<float>(rng.gaussian(2.0, 5.0));
        auto out = standardize(rec, 2);
        for (int ch = 0; ch < 2; ++ch) {
            double mean = 0, var = 0;
            for (int i = 0; i < 1024; ++i) mean += out.data[static_cast<size_t>(ch * 1024 + i)];
            mean /= 1024;
            for (int i = 0; i < 1024; ++i) {
                const double d = out.data[static_cast<size_t>(ch * 1024 + i)] - mean;
                var += d * d;
            }
            var /= 1024;
            CHECK(std::abs(mean) < 1e-6);
            CHECK(std::abs(var - 1.0) < 1e-4);
        }
    }
    SECTION("idempotent within tolerance") {
        SignalRecord rec;
        rec.data.resize(256);
        CounterRng rng(9);
        for (auto& v : rec.data) v = static_cast<float>(rng.gaussian());
        auto once = standardize(rec, 2);
        auto twice = standardize(once, 2);
        for (size_t i = 0; i < once.data.size(); ++i) {
            CHECK(twice.data[i] == Catch::Approx(once.data[i]).margin(1e-5));
        }
    }
}

TEST_CASE("batch iteration") {
    std::vector<int64_t> ids(130);
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int64_t>(i);
    SECTION("partial final batch") {
        auto batches = make_batches(ids, 64, false, CounterRng(1));
        REQUIRE(batches.size() == 3);
        CHECK(batches[0].size() == 64);
        CHECK(batches[1].size() == 64);
        CHECK(batches[2].size() == 2);
    }
    SECTION("no shuffle preserves corpus order") {
        auto batches = make_batches(ids, 50, false, CounterRng(1));
        CHECK(batches[0][0] == 0);
        CHECK(batches[0][49] == 49);
        CHECK(batches[2][29] == 129);
    }
    SECTION("same seed, same order; different seed, different order") {
        auto a = make_batches(ids, 32, true, CounterRng(5));
        auto b = make_batches(ids, 32, true, CounterRng(5));
        CHECK(a == b);
        auto c = make_batches(ids, 32, true, CounterRng(6));
        CHECK(a != c);
    }
    SECTION("batch size must be positive") {
        CHECK_THROWS_AS(make_batches(ids, 0, false, CounterRng(1)), config_error);
    }
}
