#pragma once

// Synthetic corpus generation. IQ corpora stand in for captured technology
// classes (tones, chirps, PSK-like bursts, band-limited noise at configurable
// carriers/bandwidths/SNRs); CIR corpora stand in for UWB captures with
// LOS/NLOS structure and injected ranging error. Everything is deterministic
// given (spec, seed): record r draws from the stream (seed, r), so parallel
// and serial generation agree bitwise.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchwave/dataset.hpp"

namespace patchwave {

enum class ModulationKind { tone, chirp, psk_like, noise_burst };

inline std::string to_string(ModulationKind m) {
    switch (m) {
        case ModulationKind::tone: return "tone";
        case ModulationKind::chirp: return "chirp";
        case ModulationKind::psk_like: return "psk_like";
        case ModulationKind::noise_burst: return "noise_burst";
    }
    throw config_error("unknown modulation kind");
}

inline ModulationKind modulation_from_string(const std::string& s) {
    if (s == "tone") return ModulationKind::tone;
    if (s == "chirp") return ModulationKind::chirp;
    if (s == "psk_like") return ModulationKind::psk_like;
    if (s == "noise_burst") return ModulationKind::noise_burst;
    throw format_error("unknown modulation kind '" + s + "'");
}

struct TechnologySpec {
    std::string name;
    ModulationKind modulation_kind = ModulationKind::tone;
    double carrier_cycles_per_window = 256.0;  // dominant DFT bin of the clean signal
    double bandwidth_fraction = 0.01;          // (0, 1]
    double burst_duty = 1.0;                   // (0, 1]
    int64_t symbol_len = 128;                  // samples per symbol / burst slot
    std::array<double, 2> snr_db_range{8.0, 20.0};

    void validate() const {
        if (bandwidth_fraction <= 0.0 || bandwidth_fraction > 1.0) {
            throw config_error("spec '" + name + "': bandwidth_fraction must be in (0, 1]");
        }
        if (burst_duty <= 0.0 || burst_duty > 1.0) {
            throw config_error("spec '" + name + "': burst_duty must be in (0, 1]");
        }
        if (symbol_len < 1) throw config_error("spec '" + name + "': symbol_len must be >= 1");
        if (snr_db_range[0] > snr_db_range[1]) {
            throw config_error("spec '" + name + "': snr range low > high");
        }
    }
};

constexpr int64_t kCirTaps = 150;

struct CirSpec {
    std::string env_name;
    int64_t first_path_index = 25;        // [0, 150)
    int64_t n_multipath = 40;
    double decay_per_tap = 0.12;          // > 0
    int64_t nlos_extra_delay = 12;        // >= 1 samples
    double nlos_first_path_atten_db = 8.0;
    double range_bias_per_delay = 30.0;   // mm per sample of excess delay
    double label_noise_mm = 5.0;
    double tap_noise = 0.03;

    void validate() const {
        if (first_path_index < 0 || first_path_index >= kCirTaps) {
            throw config_error("cir spec: first_path_index out of [0, 150)");
        }
        if (n_multipath < 0 || nlos_extra_delay < 1 || decay_per_tap <= 0 ||
            nlos_first_path_atten_db <= 0) {
            throw config_error("cir spec: invalid parameters");
        }
        if (first_path_index + nlos_extra_delay + n_multipath >= kCirTaps) {
            throw config_error("cir spec: taps exceed the 150-sample CIR region");
        }
    }
};

struct GenOptions {
    bool noise_enabled = true;  // test hook: disables additive noise and label noise
};

namespace detail {

inline void gate_bursts(std::vector<double>& re, std::vector<double>& im, const TechnologySpec& spec,
                        CounterRng& rng) {
    const int64_t length = static_cast<int64_t>(re.size());
    const int64_t n_slots = (length + spec.symbol_len - 1) / spec.symbol_len;
    std::vector<uint8_t> active(static_cast<size_t>(n_slots));
    bool any = false;
    for (auto& a : active) {
        a = rng.next_double() < spec.burst_duty;
        any = any || a;
    }
    if (!any) active[0] = 1;  // keep at least one slot live
    for (int64_t t = 0; t < length; ++t) {
        if (!active[static_cast<size_t>(t / spec.symbol_len)]) {
            re[static_cast<size_t>(t)] = 0.0;
            im[static_cast<size_t>(t)] = 0.0;
        }
    }
}

}  // namespace detail

// Generate `count` labelled IQ records of shape 2×L (channel 0 real part,
// channel 1 imaginary part).
inline std::vector<SignalRecord> gen_iq(const TechnologySpec& spec, int64_t count, int64_t length,
                                        uint64_t seed, GenOptions opt = {}) {
    spec.validate();
    if (count < 1) throw config_error("gen_iq: count must be >= 1");
    std::vector<SignalRecord> out(static_cast<size_t>(count));
    const double two_pi = 2.0 * std::numbers::pi;
    const double f0 = spec.carrier_cycles_per_window;
    const double ld = static_cast<double>(length);

    for (int64_t r = 0; r < count; ++r) {
        CounterRng rng = CounterRng(seed, fnv1a64(spec.name)).fork("record", static_cast<uint64_t>(r));
        const double snr_db = rng.uniform(spec.snr_db_range[0], spec.snr_db_range[1]);
        const double phi0 = rng.uniform(0.0, two_pi);

        std::vector<double> re(static_cast<size_t>(length)), im(static_cast<size_t>(length));
        switch (spec.modulation_kind) {
            case ModulationKind::tone: {
                for (int64_t t = 0; t < length; ++t) {
                    const double ph = two_pi * f0 * static_cast<double>(t) / ld + phi0;
                    re[static_cast<size_t>(t)] = std::cos(ph);
                    im[static_cast<size_t>(t)] = std::sin(ph);
                }
                break;
            }
            case ModulationKind::chirp: {
                // Linear sweep of width W bins centred on the carrier.
                const double w = spec.bandwidth_fraction * ld / 2.0;
                for (int64_t t = 0; t < length; ++t) {
                    const double td = static_cast<double>(t);
                    const double ph = two_pi / ld * ((f0 - w / 2.0) * td + w * td * td / (2.0 * ld)) + phi0;
                    re[static_cast<size_t>(t)] = std::cos(ph);
                    im[static_cast<size_t>(t)] = std::sin(ph);
                }
                break;
            }
            case ModulationKind::psk_like: {
                // QPSK-style symbol phases on a carrier, rectangular pulses.
                const int64_t n_sym = (length + spec.symbol_len - 1) / spec.symbol_len;
                std::vector<double> sym_phase(static_cast<size_t>(n_sym));
                for (auto& p : sym_phase) {
                    p = std::numbers::pi / 4.0 + std::numbers::pi / 2.0 * static_cast<double>(rng.next_below(4));
                }
                for (int64_t t = 0; t < length; ++t) {
                    const double ph = two_pi * f0 * static_cast<double>(t) / ld +
                                      sym_phase[static_cast<size_t>(t / spec.symbol_len)] + phi0;
                    re[static_cast<size_t>(t)] = std::cos(ph);
                    im[static_cast<size_t>(t)] = std::sin(ph);
                }
                break;
            }
            case ModulationKind::noise_burst: {
                // Band-limited complex noise: moving-average smoothed white
                // noise mixed up to the carrier. Window ~ 2/bandwidth.
                const int64_t w = std::max<int64_t>(1, static_cast<int64_t>(std::llround(2.0 / spec.bandwidth_fraction)));
                std::vector<double> nr(static_cast<size_t>(length)), ni(static_cast<size_t>(length));
                for (int64_t t = 0; t < length; ++t) {
                    nr[static_cast<size_t>(t)] = rng.gaussian();
                    ni[static_cast<size_t>(t)] = rng.gaussian();
                }
                double sr = 0.0, si = 0.0;
                for (int64_t t = 0; t < length; ++t) {
                    sr += nr[static_cast<size_t>(t)];
                    si += ni[static_cast<size_t>(t)];
                    if (t >= w) {
                        sr -= nr[static_cast<size_t>(t - w)];
                        si -= ni[static_cast<size_t>(t - w)];
                    }
                    const double cs = std::cos(two_pi * f0 * static_cast<double>(t) / ld + phi0);
                    const double sn = std::sin(two_pi * f0 * static_cast<double>(t) / ld + phi0);
                    const double denom = std::sqrt(static_cast<double>(std::min<int64_t>(t + 1, w)));
                    const double br = sr / denom, bi = si / denom;
                    re[static_cast<size_t>(t)] = br * cs - bi * sn;
                    im[static_cast<size_t>(t)] = br * sn + bi * cs;
                }
                break;
            }
        }

        if (spec.burst_duty < 1.0 || spec.modulation_kind == ModulationKind::noise_burst) {
            detail::gate_bursts(re, im, spec, rng);
        }

        // Normalise to unit average power, then add noise at the drawn SNR.
        double power = 0.0;
        for (int64_t t = 0; t < length; ++t) {
            power += re[static_cast<size_t>(t)] * re[static_cast<size_t>(t)] +
                     im[static_cast<size_t>(t)] * im[static_cast<size_t>(t)];
        }
        power /= ld;
        if (power > 0.0) {
            const double inv = 1.0 / std::sqrt(power);
            for (int64_t t = 0; t < length; ++t) {
                re[static_cast<size_t>(t)] *= inv;
                im[static_cast<size_t>(t)] *= inv;
            }
        }
        if (opt.noise_enabled) {
            const double noise_power = std::pow(10.0, -snr_db / 10.0);
            const double sigma = std::sqrt(noise_power / 2.0);
            for (int64_t t = 0; t < length; ++t) {
                re[static_cast<size_t>(t)] += sigma * rng.gaussian();
                im[static_cast<size_t>(t)] += sigma * rng.gaussian();
            }
        }

        auto& rec = out[static_cast<size_t>(r)];
        rec.data.resize(static_cast<size_t>(2 * length));
        for (int64_t t = 0; t < length; ++t) {
            rec.data[static_cast<size_t>(t)] = static_cast<float>(re[static_cast<size_t>(t)]);
            rec.data[static_cast<size_t>(length + t)] = static_cast<float>(im[static_cast<size_t>(t)]);
        }
        rec.meta.source = spec.name;
        rec.meta.snr_db = static_cast<float>(snr_db);
    }
    return out;
}

// Generate CIR records: 150 active taps at the head of the window, zero
// padded to 2×L, channel 1 carrying the quadrature component. LOS keeps an
// unattenuated first path; NLOS attenuates it and moves the strongest path
// `nlos_extra_delay` samples later. The ranging-error label is
// range_bias_per_delay × excess delay plus zero-mean noise.
inline std::vector<SignalRecord> gen_cir(const CirSpec& spec, bool los, int64_t count, int64_t length,
                                         uint64_t seed, GenOptions opt = {}) {
    spec.validate();
    if (count < 1) throw config_error("gen_cir: count must be >= 1");
    if (length < kCirTaps) throw config_error("gen_cir: window shorter than the CIR region");
    std::vector<SignalRecord> out(static_cast<size_t>(count));
    const double two_pi = 2.0 * std::numbers::pi;

    for (int64_t r = 0; r < count; ++r) {
        CounterRng rng = CounterRng(seed, fnv1a64(spec.env_name) ^ (los ? 0x105ull : 0))
                             .fork("record", static_cast<uint64_t>(r));
        std::vector<double> taps_i(kCirTaps, 0.0), taps_q(kCirTaps, 0.0);

        auto place = [&](int64_t idx, double amp) {
            const double ph = rng.uniform(0.0, two_pi);
            taps_i[static_cast<size_t>(idx)] += amp * std::cos(ph);
            taps_q[static_cast<size_t>(idx)] += amp * std::sin(ph);
        };

        const int64_t main_idx = los ? spec.first_path_index : spec.first_path_index + spec.nlos_extra_delay;
        if (!los) {
            // Attenuated direct path
            place(spec.first_path_index, std::pow(10.0, -spec.nlos_first_path_atten_db / 20.0));
        }
        place(main_idx, 1.0);
        for (int64_t k = 0; k < spec.n_multipath; ++k) {
            const double amp = rng.uniform(0.25, 0.75) * std::exp(-spec.decay_per_tap * static_cast<double>(k + 1));
            place(main_idx + 1 + k, amp);
        }
        if (opt.noise_enabled) {
            for (int64_t i = 0; i < kCirTaps; ++i) {
                taps_i[static_cast<size_t>(i)] += spec.tap_noise * rng.gaussian();
                taps_q[static_cast<size_t>(i)] += spec.tap_noise * rng.gaussian();
            }
        }

        const double excess = los ? 0.0 : static_cast<double>(spec.nlos_extra_delay);
        double label_mm = spec.range_bias_per_delay * excess;
        if (opt.noise_enabled) label_mm += spec.label_noise_mm * rng.gaussian();

        auto& rec = out[static_cast<size_t>(r)];
        rec.data.assign(static_cast<size_t>(2 * length), 0.0f);
        for (int64_t i = 0; i < kCirTaps; ++i) {
            rec.data[static_cast<size_t>(i)] = static_cast<float>(taps_i[static_cast<size_t>(i)]);
            rec.data[static_cast<size_t>(length + i)] = static_cast<float>(taps_q[static_cast<size_t>(i)]);
        }
        rec.label = los ? 0 : 1;
        rec.ranging_error_mm = static_cast<float>(label_mm);
        rec.meta.source = spec.env_name;
        rec.meta.snr_db = 0.0f;
    }
    return out;
}

// --- corpus assembly ---

struct CorpusSummary {
    int64_t samples = 0;
    int64_t classes = 0;
};

// Build and write a classification corpus from one spec per class.
inline CorpusSummary build_corpus(const std::vector<TechnologySpec>& specs, int64_t per_class_count,
                                  int64_t length, uint64_t seed, const std::filesystem::path& out_path,
                                  std::array<double, 3> split_ratios = {0.7, 0.15, 0.15},
                                  GenOptions opt = {}) {
    if (specs.size() < 2) throw config_error("build_corpus: need at least 2 specs");
    for (size_t i = 0; i < specs.size(); ++i) {
        for (size_t j = i + 1; j < specs.size(); ++j) {
            if (specs[i].name == specs[j].name) {
                throw config_error("build_corpus: duplicate class name '" + specs[i].name + "'");
            }
        }
    }
    Corpus corpus;
    corpus.length = length;
    corpus.family = LabelFamily::classification;
    corpus.gen_seed = seed;
    for (const auto& s : specs) corpus.class_names.push_back(s.name);
    for (size_t cls = 0; cls < specs.size(); ++cls) {
        auto records = gen_iq(specs[cls], per_class_count, length, seed, opt);
        for (auto& rec : records) {
            rec.label = static_cast<int>(cls);
            rec.id = static_cast<int64_t>(corpus.records.size());
            corpus.records.push_back(std::move(rec));
        }
    }
    corpus.split = make_split(corpus, split_ratios, CounterRng(seed).fork("split-seed").next_u64());
    write_container(corpus, out_path);
    return {static_cast<int64_t>(corpus.records.size()), static_cast<int64_t>(specs.size())};
}

// Build and write a CIR corpus (half LOS, half NLOS) carrying either the
// LOS/NLOS class labels or the ranging-error labels.
inline CorpusSummary build_cir_corpus(const CirSpec& spec, LabelFamily family, int64_t per_label_count,
                                      int64_t length, uint64_t seed, const std::filesystem::path& out_path,
                                      std::array<double, 3> split_ratios = {0.7, 0.15, 0.15},
                                      GenOptions opt = {}) {
    if (family == LabelFamily::classification) {
        throw config_error("build_cir_corpus: family must be 'los' or 'regression'");
    }
    Corpus corpus;
    corpus.length = length;
    corpus.family = family;
    corpus.gen_seed = seed;
    if (family == LabelFamily::los) corpus.class_names = {"los", "nlos"};
    for (bool los : {true, false}) {
        auto records = gen_cir(spec, los, per_label_count, length, seed, opt);
        for (auto& rec : records) {
            rec.id = static_cast<int64_t>(corpus.records.size());
            corpus.records.push_back(std::move(rec));
        }
    }
    corpus.split = make_split(corpus, split_ratios, CounterRng(seed).fork("split-seed").next_u64());
    write_container(corpus, out_path);
    return {static_cast<int64_t>(corpus.records.size()), family == LabelFamily::los ? 2 : 0};
}

// --- default catalogs ---

// Eight synthetic technology classes: four narrowband (long-range-style) and
// four wideband (short-range-style), with distinct carriers so the corpus is
// separable by construction.
inline std::vector<TechnologySpec> default_iq_catalog() {
    return {
        {"sigfox_like", ModulationKind::tone, 256.0, 0.01, 1.0, 512, {8.0, 20.0}},
        {"lora_like", ModulationKind::chirp, 704.0, 0.05, 1.0, 256, {8.0, 20.0}},
        {"wifi_ah_like", ModulationKind::psk_like, 1152.0, 0.03, 0.9, 128, {8.0, 20.0}},
        {"zigbee_like", ModulationKind::psk_like, 1600.0, 0.06, 1.0, 32, {8.0, 20.0}},
        {"lte_like", ModulationKind::noise_burst, 2048.0, 0.15, 1.0, 256, {5.0, 18.0}},
        {"wifi_like", ModulationKind::noise_burst, 2496.0, 0.25, 0.55, 128, {5.0, 18.0}},
        {"nr5g_like", ModulationKind::noise_burst, 2944.0, 0.35, 0.9, 192, {5.0, 18.0}},
        {"dvbt_like", ModulationKind::chirp, 3392.0, 0.12, 1.0, 512, {8.0, 20.0}},
    };
}

// The four narrowband classes; the nearest-centroid separability oracle runs
// against this corpus.
inline std::vector<TechnologySpec> default_iq_catalog4() {
    auto all = default_iq_catalog();
    return {all[0], all[1], all[2], all[3]};
}

inline CirSpec default_cir_env_a() {
    CirSpec s;
    s.env_name = "env_a";
    s.first_path_index = 25;
    s.n_multipath = 40;
    s.decay_per_tap = 0.12;
    s.nlos_extra_delay = 12;
    s.nlos_first_path_atten_db = 8.0;
    s.range_bias_per_delay = 30.0;
    return s;
}

inline CirSpec default_cir_env_b() {
    CirSpec s;
    s.env_name = "env_b";
    s.first_path_index = 40;
    s.n_multipath = 60;
    s.decay_per_tap = 0.07;
    s.nlos_extra_delay = 8;
    s.nlos_first_path_atten_db = 6.0;
    s.range_bias_per_delay = 50.0;
    return s;
}

// --- JSON catalog files ---

inline nlohmann::json technology_spec_to_json(const TechnologySpec& s) {
    return nlohmann::json{
        {"name", s.name},
        {"modulation", to_string(s.modulation_kind)},
        {"carrier_cycles", s.carrier_cycles_per_window},
        {"bandwidth_fraction", s.bandwidth_fraction},
        {"burst_duty", s.burst_duty},
        {"symbol_len", s.symbol_len},
        {"snr_db", s.snr_db_range},
    };
}

inline nlohmann::json cir_spec_to_json(const CirSpec& s) {
    return nlohmann::json{
        {"name", s.env_name},
        {"first_path_index", s.first_path_index},
        {"n_multipath", s.n_multipath},
        {"decay_per_tap", s.decay_per_tap},
        {"nlos_extra_delay", s.nlos_extra_delay},
        {"nlos_first_path_atten_db", s.nlos_first_path_atten_db},
        {"range_bias_per_delay", s.range_bias_per_delay},
        {"label_noise_mm", s.label_noise_mm},
        {"tap_noise", s.tap_noise},
    };
}

inline TechnologySpec technology_spec_from_json(const nlohmann::json& j) {
    TechnologySpec s;
    s.name = j.at("name").get<std::string>();
    s.modulation_kind = modulation_from_string(j.at("modulation").get<std::string>());
    s.carrier_cycles_per_window = j.at("carrier_cycles").get<double>();
    s.bandwidth_fraction = j.at("bandwidth_fraction").get<double>();
    s.burst_duty = j.value("burst_duty", 1.0);
    s.symbol_len = j.value("symbol_len", 128);
    if (j.contains("snr_db")) s.snr_db_range = j.at("snr_db").get<std::array<double, 2>>();
    s.validate();
    return s;
}

inline CirSpec cir_spec_from_json(const nlohmann::json& j) {
    CirSpec s;
    s.env_name = j.at("name").get<std::string>();
    s.first_path_index = j.value("first_path_index", s.first_path_index);
    s.n_multipath = j.value("n_multipath", s.n_multipath);
    s.decay_per_tap = j.value("decay_per_tap", s.decay_per_tap);
    s.nlos_extra_delay = j.value("nlos_extra_delay", s.nlos_extra_delay);
    s.nlos_first_path_atten_db = j.value("nlos_first_path_atten_db", s.nlos_first_path_atten_db);
    s.range_bias_per_delay = j.value("range_bias_per_delay", s.range_bias_per_delay);
    s.label_noise_mm = j.value("label_noise_mm", s.label_noise_mm);
    s.tap_noise = j.value("tap_noise", s.tap_noise);
    s.validate();
    return s;
}

}  // namespace patchwave
