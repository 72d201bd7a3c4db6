#pragma once

// On-disk corpus container and split machinery. A container is a directory:
//   manifest.json   version, L, channels, class table, label family,
//                   per-record label arrays, shard list, split assignment
//   shard_NNNN.bin  raw little-endian f32, record-major, 2·L values per
//                   record, no header
// Round-trips are bit-exact; little-endian is enforced on disk.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchwave/common.hpp"
#include "patchwave/rng.hpp"

namespace patchwave {

enum class LabelFamily { classification, los, regression };

inline std::string to_string(LabelFamily f) {
    switch (f) {
        case LabelFamily::classification: return "classification";
        case LabelFamily::los: return "los";
        case LabelFamily::regression: return "regression";
    }
    throw config_error("unknown label family");
}

inline LabelFamily label_family_from_string(const std::string& s) {
    if (s == "classification") return LabelFamily::classification;
    if (s == "los") return LabelFamily::los;
    if (s == "regression") return LabelFamily::regression;
    throw format_error("unknown label family '" + s + "'");
}

struct RecordMeta {
    std::string source;  // technology / environment name
    float snr_db = 0.0f;
};

// One 2×L timeseries plus exactly one task-label family.
struct SignalRecord {
    std::vector<float> data;  // channel 0 then channel 1, each length L
    int label = -1;           // class id (classification / los families)
    float ranging_error_mm = 0.0f;
    int64_t id = -1;          // position within its corpus
    RecordMeta meta;
};

enum class Split : uint8_t { train = 0, val = 1, test = 2 };

struct SplitAssignment {
    uint64_t seed = 0;
    std::array<double, 3> ratios{0.7, 0.15, 0.15};
    std::vector<uint8_t> assign;  // parallel to records

    std::vector<int64_t> ids_of(Split s) const {
        std::vector<int64_t> out;
        for (size_t i = 0; i < assign.size(); ++i) {
            if (assign[i] == static_cast<uint8_t>(s)) out.push_back(static_cast<int64_t>(i));
        }
        return out;
    }
};

struct Corpus {
    int64_t length = 4096;
    int64_t channels = 2;
    LabelFamily family = LabelFamily::classification;
    std::vector<std::string> class_names;  // empty for regression
    std::vector<SignalRecord> records;
    SplitAssignment split;
    uint64_t gen_seed = 0;

    int64_t class_id(const std::string& name) const {
        for (size_t i = 0; i < class_names.size(); ++i) {
            if (class_names[i] == name) return static_cast<int64_t>(i);
        }
        throw label_error("unknown class '" + name + "'");
    }
};

// --- splits ---

// Stratified by class for labelled corpora (each class is partitioned
// independently, so per-split class fractions stay within one record of the
// requested ratios); plain random partition for regression.
inline SplitAssignment make_split(const Corpus& corpus, std::array<double, 3> ratios, uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (total <= 0) throw config_error("split ratios must sum to a positive value");
    for (auto& r : ratios) r /= total;

    SplitAssignment out;
    out.seed = seed;
    out.ratios = ratios;
    out.assign.assign(corpus.records.size(), 0);

    std::map<int, std::vector<int64_t>> groups;
    if (corpus.family == LabelFamily::regression) {
        groups[0].reserve(corpus.records.size());
        for (size_t i = 0; i < corpus.records.size(); ++i) groups[0].push_back(static_cast<int64_t>(i));
    } else {
        for (size_t i = 0; i < corpus.records.size(); ++i) {
            groups[corpus.records[i].label].push_back(static_cast<int64_t>(i));
        }
    }
    CounterRng rng(seed, fnv1a64("split"));
    for (auto& [cls, ids] : groups) {
        auto r = rng.fork(static_cast<uint64_t>(cls));
        for (size_t i = ids.size(); i > 1; --i) {
            std::swap(ids[i - 1], ids[r.next_below(i)]);
        }
        const int64_t n = static_cast<int64_t>(ids.size());
        int64_t n_train = static_cast<int64_t>(std::llround(ratios[0] * static_cast<double>(n)));
        int64_t n_val = static_cast<int64_t>(std::llround(ratios[1] * static_cast<double>(n)));
        n_train = std::min(n_train, n);
        n_val = std::min(n_val, n - n_train);
        for (int64_t i = 0; i < n; ++i) {
            uint8_t s = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
            out.assign[static_cast<size_t>(ids[static_cast<size_t>(i)])] = s;
        }
    }
    return out;
}

// --- container IO ---

namespace detail {
constexpr int64_t kShardRecords = 256;
}

inline void write_container(const Corpus& corpus, const std::filesystem::path& dir) {
    if (corpus.records.empty()) throw config_error("write_container: empty record list");
    const size_t rec_len = static_cast<size_t>(corpus.length * corpus.channels);
    for (const auto& r : corpus.records) {
        if (r.data.size() != rec_len) {
            throw shape_error("write_container: record " + std::to_string(r.id) + " has wrong length");
        }
    }
    if (corpus.split.assign.size() != corpus.records.size()) {
        throw shape_error("write_container: split assignment length mismatch");
    }
    std::filesystem::create_directories(dir);

    const int64_t n = static_cast<int64_t>(corpus.records.size());
    nlohmann::json shards = nlohmann::json::array();
    int shard_idx = 0;
    for (int64_t start = 0; start < n; start += detail::kShardRecords) {
        const int64_t count = std::min<int64_t>(detail::kShardRecords, n - start);
        char name[32];
        std::snprintf(name, sizeof(name), "shard_%04d.bin", shard_idx++);
        std::ofstream os(dir / name, std::ios::binary | std::ios::trunc);
        if (!os) throw io_error("cannot open shard " + (dir / name).string());
        for (int64_t i = start; i < start + count; ++i) {
            write_f32_le(os, corpus.records[static_cast<size_t>(i)].data.data(), rec_len);
        }
        if (!os) throw io_error("shard write failed");
        shards.push_back({{"file", name}, {"count", count}});
    }

    nlohmann::json labels = nlohmann::json::array();
    nlohmann::json ranging = nlohmann::json::array();
    nlohmann::json snr = nlohmann::json::array();
    nlohmann::json source = nlohmann::json::array();
    for (const auto& r : corpus.records) {
        if (corpus.family == LabelFamily::regression) {
            ranging.push_back(static_cast<double>(r.ranging_error_mm));
        } else {
            labels.push_back(r.label);
        }
        snr.push_back(static_cast<double>(r.meta.snr_db));
        source.push_back(r.meta.source);
    }

    nlohmann::json manifest{
        {"format", "patchwave-corpus"},
        {"version", 1},
        {"length", corpus.length},
        {"channels", corpus.channels},
        {"label_family", to_string(corpus.family)},
        {"class_names", corpus.class_names},
        {"sample_count", n},
        {"gen_seed", corpus.gen_seed},
        {"shards", shards},
        {"labels", labels},
        {"ranging_mm", ranging},
        {"snr_db", snr},
        {"source", source},
        {"split",
         {{"seed", corpus.split.seed},
          {"ratios", corpus.split.ratios},
          {"assign", corpus.split.assign}}},
    };
    write_text_file(dir / "manifest.json", manifest.dump() + "\n");
}

inline Corpus read_container(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw format_error("corpus manifest is not valid JSON: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "patchwave-corpus") {
        throw format_error("not a patchwave corpus: " + dir.string());
    }
    if (manifest.value("version", 0) != 1) throw format_error("unsupported corpus version");

    Corpus c;
    c.length = manifest.at("length").get<int64_t>();
    c.channels = manifest.at("channels").get<int64_t>();
    c.family = label_family_from_string(manifest.at("label_family").get<std::string>());
    c.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    c.gen_seed = manifest.value("gen_seed", 0ull);
    const int64_t n = manifest.at("sample_count").get<int64_t>();
    const size_t rec_len = static_cast<size_t>(c.length * c.channels);

    c.records.resize(static_cast<size_t>(n));
    int64_t next = 0;
    for (const auto& shard : manifest.at("shards")) {
        const std::string file = shard.at("file").get<std::string>();
        const int64_t count = shard.at("count").get<int64_t>();
        const auto path = dir / file;
        std::error_code ec;
        const auto bytes = std::filesystem::file_size(path, ec);
        if (ec) throw io_error("missing shard " + path.string());
        if (bytes != static_cast<uintmax_t>(count) * rec_len * 4) {
            throw integrity_error("shard " + file + " holds " + std::to_string(bytes) +
                                  " bytes, expected " + std::to_string(count * rec_len * 4));
        }
        if (next + count > n) throw integrity_error("shards hold more records than sample_count");
        std::ifstream is(path, std::ios::binary);
        if (!is) throw io_error("cannot open shard " + path.string());
        for (int64_t i = 0; i < count; ++i) {
            auto& rec = c.records[static_cast<size_t>(next + i)];
            rec.data.resize(rec_len);
            rec.id = next + i;
            read_f32_le(is, rec.data.data(), rec_len);
        }
        next += count;
    }
    if (next != n) {
        throw integrity_error("shards hold " + std::to_string(next) + " records, manifest says " +
                              std::to_string(n));
    }

    const auto& labels = manifest.at("labels");
    const auto& ranging = manifest.at("ranging_mm");
    const auto& snr = manifest.at("snr_db");
    const auto& source = manifest.at("source");
    if (c.family == LabelFamily::regression) {
        if (static_cast<int64_t>(ranging.size()) != n) throw integrity_error("ranging label count mismatch");
    } else {
        if (static_cast<int64_t>(labels.size()) != n) throw integrity_error("label count mismatch");
    }
    for (int64_t i = 0; i < n; ++i) {
        auto& rec = c.records[static_cast<size_t>(i)];
        if (c.family == LabelFamily::regression) {
            rec.ranging_error_mm = static_cast<float>(ranging[static_cast<size_t>(i)].get<double>());
        } else {
            rec.label = labels[static_cast<size_t>(i)].get<int>();
            if (rec.label < 0 || rec.label >= static_cast<int>(c.class_names.size())) {
                throw integrity_error("record label out of range");
            }
        }
        if (static_cast<int64_t>(snr.size()) == n) rec.meta.snr_db = static_cast<float>(snr[static_cast<size_t>(i)].get<double>());
        if (static_cast<int64_t>(source.size()) == n) rec.meta.source = source[static_cast<size_t>(i)].get<std::string>();
    }

    const auto& split = manifest.at("split");
    c.split.seed = split.at("seed").get<uint64_t>();
    c.split.ratios = split.at("ratios").get<std::array<double, 3>>();
    c.split.assign = split.at("assign").get<std::vector<uint8_t>>();
    if (c.split.assign.size() != static_cast<size_t>(n)) throw integrity_error("split assignment length mismatch");
    return c;
}

inline uint64_t container_content_hash(const std::filesystem::path& dir) {
    uint64_t h = file_content_hash(dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    for (const auto& shard : manifest.at("shards")) {
        h = detail::mix64(h ^ file_content_hash(dir / shard.at("file").get<std::string>()));
    }
    return h;
}

// --- class exclusion and fine-tune pools ---

// Partition record ids into (kept, held out) by class name.
inline std::pair<std::vector<int64_t>, std::vector<int64_t>> exclude_class(const Corpus& corpus,
                                                                           const std::string& class_name) {
    const int64_t cls = corpus.class_id(class_name);
    std::vector<int64_t> kept, held;
    for (const auto& r : corpus.records) {
        (r.label == cls ? held : kept).push_back(r.id);
    }
    return {kept, held};
}

struct FinetuneSplit {
    std::vector<int64_t> train, val, test;
};

// Fine-tuning pool: the pre-training test split plus every held-out-class
// record. Stratified; when samples_per_class is set the train side holds
// exactly that many per class and the remainder feeds val/test by ratio.
inline FinetuneSplit make_finetune_split(const Corpus& corpus, const std::vector<int64_t>& pretrain_test,
                                         const std::vector<int64_t>& heldout,
                                         std::array<double, 3> ratios, uint64_t seed,
                                         std::optional<int64_t> samples_per_class = std::nullopt,
                                         double sample_fraction = 1.0) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (total <= 0) throw config_error("finetune split: ratios must sum to a positive value");
    for (auto& r : ratios) r /= total;
    if (sample_fraction <= 0.0 || sample_fraction > 1.0) {
        throw config_error("finetune split: sample fraction must be in (0, 1]");
    }

    std::vector<int64_t> pool = pretrain_test;
    pool.insert(pool.end(), heldout.begin(), heldout.end());

    std::map<int, std::vector<int64_t>> groups;
    if (corpus.family == LabelFamily::regression) {
        groups[0] = pool;
    } else {
        for (int64_t id : pool) groups[corpus.records[static_cast<size_t>(id)].label].push_back(id);
    }

    FinetuneSplit out;
    CounterRng rng(seed, fnv1a64("finetune-split"));
    for (auto& [cls, ids] : groups) {
        auto r = rng.fork(static_cast<uint64_t>(cls));
        for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[r.next_below(i)]);
        const int64_t n = static_cast<int64_t>(ids.size());
        int64_t n_train;
        if (samples_per_class) {
            if (*samples_per_class > n) {
                throw config_error("finetune split: class " + std::to_string(cls) + " has " +
                                   std::to_string(n) + " records, requested " +
                                   std::to_string(*samples_per_class) + " per class");
            }
            n_train = *samples_per_class;
        } else {
            n_train = static_cast<int64_t>(std::llround(ratios[0] * static_cast<double>(n)));
        }
        const int64_t rest = n - n_train;
        const double val_share = ratios[1] + ratios[2] > 0 ? ratios[1] / (ratios[1] + ratios[2]) : 0.0;
        int64_t n_val = static_cast<int64_t>(std::llround(val_share * static_cast<double>(rest)));
        for (int64_t i = 0; i < n; ++i) {
            const int64_t id = ids[static_cast<size_t>(i)];
            if (i < n_train) {
                out.train.push_back(id);
            } else if (i < n_train + n_val) {
                out.val.push_back(id);
            } else {
                out.test.push_back(id);
            }
        }
    }
    if (sample_fraction < 1.0) {
        auto r = rng.fork("fraction");
        auto& tr = out.train;
        for (size_t i = tr.size(); i > 1; --i) std::swap(tr[i - 1], tr[r.next_below(i)]);
        const auto keep = static_cast<size_t>(std::llround(sample_fraction * static_cast<double>(tr.size())));
        tr.resize(std::max<size_t>(keep, 1));
    }
    // Deterministic id order within each side.
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

// --- record standardisation and batching ---

// Per-record, per-channel zero mean / unit variance (epsilon 1e-8).
inline SignalRecord standardize(const SignalRecord& rec, int64_t channels = 2) {
    SignalRecord out = rec;
    const int64_t len = static_cast<int64_t>(rec.data.size()) / channels;
    for (int64_t c = 0; c < channels; ++c) {
        float* ch = out.data.data() + c * len;
        double mean = 0;
        for (int64_t i = 0; i < len; ++i) mean += ch[i];
        mean /= static_cast<double>(len);
        double var = 0;
        for (int64_t i = 0; i < len; ++i) {
            const double d = ch[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(len);
        const double inv = 1.0 / std::sqrt(var + 1e-8);
        for (int64_t i = 0; i < len; ++i) ch[i] = static_cast<float>((ch[i] - mean) * inv);
    }
    return out;
}

// Deterministic batch schedule over record ids. The final partial batch is
// emitted.
inline std::vector<std::vector<int64_t>> make_batches(std::vector<int64_t> ids, int64_t batch_size,
                                                      bool shuffle, CounterRng rng) {
    if (batch_size < 1) throw config_error("batch size must be >= 1");
    if (shuffle) {
        for (size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.next_below(i)]);
    }
    std::vector<std::vector<int64_t>> out;
    for (size_t start = 0; start < ids.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(ids.size(), start + static_cast<size_t>(batch_size));
        out.emplace_back(ids.begin() + static_cast<int64_t>(start), ids.begin() + static_cast<int64_t>(end));
    }
    return out;
}

}  // namespace patchwave
