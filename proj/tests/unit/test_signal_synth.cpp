#include <catch2/catch_amalgamated.hpp>

#include "patchwave/signal_synth.hpp"
#include "oracles.hpp"

using namespace patchwave;

namespace {

std::pair<std::vector<double>, std::vector<double>> channels_of(const SignalRecord& rec, int64_t length) {
    std::vector<double> re(static_cast<size_t>(length)), im(static_cast<size_t>(length));
    for (int64_t i = 0; i < length; ++i) {
        re[static_cast<size_t>(i)] = rec.data[static_cast<size_t>(i)];
        im[static_cast<size_t>(i)] = rec.data[static_cast<size_t>(length + i)];
    }
    return {re, im};
}

}  // namespace

TEST_CASE("radix-2 fft agrees with the direct DFT") {
    CounterRng rng(3);
    std::vector<double> re(256), im(256);
    for (auto& v : re) v = rng.gaussian();
    for (auto& v : im) v = rng.gaussian();
    auto direct = oracles::dft_magnitude(re, im);
    auto fast = oracles::fft_magnitude(re, im);
    for (size_t i = 0; i < direct.size(); ++i) {
        CHECK(fast[i] == Catch::Approx(direct[i]).margin(1e-6));
    }
}

TEST_CASE("tone without noise concentrates energy at the carrier bin") {
    TechnologySpec spec{"t", ModulationKind::tone, 37.0, 0.01, 1.0, 128, {10, 20}};
    GenOptions opt;
    opt.noise_enabled = false;
    const int64_t length = 1024;
    auto recs = gen_iq(spec, 1, length, 5, opt);
    auto [re, im] = channels_of(recs[0], length);
    auto mag = oracles::dft_magnitude(re, im);  // O(L^2) oracle
    CHECK(oracles::argmax(mag) == 37);
}

TEST_CASE("tone at full window size: oracle on the configured L") {
    TechnologySpec spec{"t", ModulationKind::tone, 256.0, 0.01, 1.0, 512, {10, 20}};
    GenOptions opt;
    opt.noise_enabled = false;
    auto recs = gen_iq(spec, 1, 4096, 5, opt);
    auto [re, im] = channels_of(recs[0], 4096);
    auto mag = oracles::fft_magnitude(re, im);  // fft validated against the DFT above
    CHECK(oracles::argmax(mag) == 256);
}

TEST_CASE("burst duty 1.0 leaves no zero-energy gaps longer than a symbol") {
    TechnologySpec spec{"b", ModulationKind::noise_burst, 64.0, 0.2, 1.0, 32, {10, 20}};
    GenOptions opt;
    opt.noise_enabled = false;
    auto recs = gen_iq(spec, 2, 512, 9, opt);
    for (const auto& rec : recs) {
        auto [re, im] = channels_of(rec, 512);
        int64_t gap = 0, longest = 0;
        for (int64_t t = 0; t < 512; ++t) {
            const double e = re[static_cast<size_t>(t)] * re[static_cast<size_t>(t)] +
                             im[static_cast<size_t>(t)] * im[static_cast<size_t>(t)];
            gap = e == 0.0 ? gap + 1 : 0;
            longest = std::max(longest, gap);
        }
        CHECK(longest <= 32);
    }
}

TEST_CASE("generation is bit-deterministic given (spec, seed)") {
    TechnologySpec spec{"d", ModulationKind::psk_like, 100.0, 0.05, 0.8, 64, {5, 15}};
    auto a = gen_iq(spec, 3, 512, 77);
    auto b = gen_iq(spec, 3, 512, 77);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].data == b[i].data);
        CHECK(a[i].meta.snr_db == b[i].meta.snr_db);
    }
    auto c = gen_iq(spec, 3, 512, 78);
    CHECK(a[0].data != c[0].data);
}

TEST_CASE("cir: los argmax sits at the first path") {
    CirSpec spec = default_cir_env_a();
    GenOptions opt;
    opt.noise_enabled = false;
    auto recs = gen_cir(spec, true, 4, 512, 3, opt);
    for (const auto& rec : recs) {
        auto [re, im] = channels_of(rec, 512);
        std::vector<double> power(re.size());
        for (size_t i = 0; i < re.size(); ++i) power[i] = re[i] * re[i] + im[i] * im[i];
        CHECK(oracles::argmax(power) == spec.first_path_index);
        CHECK(rec.ranging_error_mm == 0.0f);
        CHECK(rec.label == 0);
    }
}

TEST_CASE("cir: nlos delay and bias set the label exactly when noise is off") {
    CirSpec spec = default_cir_env_a();
    spec.nlos_extra_delay = 10;
    spec.range_bias_per_delay = 30.0;
    GenOptions opt;
    opt.noise_enabled = false;
    auto recs = gen_cir(spec, false, 3, 512, 3, opt);
    for (const auto& rec : recs) {
        CHECK(rec.ranging_error_mm == 300.0f);
        CHECK(rec.label == 1);
        auto [re, im] = channels_of(rec, 512);
        std::vector<double> power(re.size());
        for (size_t i = 0; i < re.size(); ++i) power[i] = re[i] * re[i] + im[i] * im[i];
        CHECK(oracles::argmax(power) == spec.first_path_index + 10);
    }
}

TEST_CASE("cir: zero padding beyond the 150-tap region") {
    auto recs = gen_cir(default_cir_env_b(), false, 1, 1024, 4);
    const auto& d = recs[0].data;
    for (int64_t i = kCirTaps; i < 1024; ++i) {
        CHECK(d[static_cast<size_t>(i)] == 0.0f);
        CHECK(d[static_cast<size_t>(1024 + i)] == 0.0f);
    }
    // quadrature channel carries energy inside the active region
    double q_energy = 0;
    for (int64_t i = 0; i < kCirTaps; ++i) q_energy += std::abs(d[static_cast<size_t>(1024 + i)]);
    CHECK(q_energy > 0.0);
}

TEST_CASE("cir: mean los label stays within +-10 mm under 5 mm noise") {
    CirSpec spec = default_cir_env_a();
    auto recs = gen_cir(spec, true, 1000, 256, 11);
    double mean = 0;
    for (const auto& r : recs) mean += r.ranging_error_mm;
    mean /= static_cast<double>(recs.size());
    CHECK(mean > -10.0);
    CHECK(mean < 10.0);
}

TEST_CASE("build_corpus wiring") {
    const auto dir = oracles::make_temp_dir("corpus");
    SECTION("manifest counts") {
        auto specs = default_iq_catalog4();
        auto summary = build_corpus(specs, 10, 512, 21, dir / "c4");
        CHECK(summary.samples == 40);
        CHECK(summary.classes == 4);
        auto corpus = read_container(dir / "c4");
        CHECK(corpus.records.size() == 40);
        CHECK(corpus.class_names.size() == 4);
    }
    SECTION("empty spec list is an error") {
        CHECK_THROWS_AS(build_corpus({}, 10, 512, 21, dir / "bad"), config_error);
    }
    SECTION("duplicate class names are an error") {
        auto specs = default_iq_catalog4();
        specs[1].name = specs[0].name;
        CHECK_THROWS_AS(build_corpus(specs, 10, 512, 21, dir / "bad2"), config_error);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("default 4-class corpus passes the nearest-centroid separability oracle") {
    // energy + dominant-DFT-bin features must reach 80% before any model runs
    const int64_t length = 1024;
    const int per_class = 60;
    auto specs = default_iq_catalog4();
    for (auto& s : specs) s.carrier_cycles_per_window /= 4.0;  // rescale carriers to the shorter window
    oracles::CentroidFeatures data;
    for (size_t cls = 0; cls < specs.size(); ++cls) {
        auto recs = gen_iq(specs[cls], per_class, length, 31);
        for (const auto& rec : recs) {
            auto [re, im] = channels_of(rec, length);
            auto mag = oracles::fft_magnitude(re, im);
            double energy = 0;
            for (size_t i = 0; i < re.size(); ++i) energy += re[i] * re[i] + im[i] * im[i];
            data.features.push_back({std::log(energy + 1e-12), static_cast<double>(oracles::argmax(mag))});
            data.labels.push_back(static_cast<int>(cls));
        }
    }
    CHECK(oracles::nearest_centroid_accuracy(data, 4) >= 0.80);
}

TEST_CASE("catalog specs survive a json round trip") {
    for (const auto& s : default_iq_catalog()) {
        auto back = technology_spec_from_json(technology_spec_to_json(s));
        CHECK(back.name == s.name);
        CHECK(back.modulation_kind == s.modulation_kind);
        CHECK(back.carrier_cycles_per_window == s.carrier_cycles_per_window);
        CHECK(back.symbol_len == s.symbol_len);
    }
    auto env = cir_spec_from_json(cir_spec_to_json(default_cir_env_b()));
    CHECK(env.env_name == "env_b");
    CHECK(env.nlos_extra_delay == default_cir_env_b().nlos_extra_delay);
}
