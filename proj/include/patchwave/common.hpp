#pragma once

// Shared plumbing: error taxonomy, hashing, endian-safe binary IO.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace patchwave {

// --- error taxonomy ---
// config_error / format_error map to CLI exit code 2, the rest to 1.

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct label_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct integrity_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct training_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- hashing ---

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// --- little-endian float IO ---
// Container and checkpoint blobs are raw little-endian IEEE-754 f32.

inline uint32_t to_le32(uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xff000000u) >> 24) | ((v & 0x00ff0000u) >> 8) | ((v & 0x0000ff00u) << 8) |
               ((v & 0x000000ffu) << 24);
    }
}

inline void write_f32_le(std::ostream& os, const float* src, size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(count * 4));
    } else {
        std::vector<uint32_t> tmp(count);
        std::memcpy(tmp.data(), src, count * 4);
        for (auto& w : tmp) w = to_le32(w);
        os.write(reinterpret_cast<const char*>(tmp.data()), static_cast<std::streamsize>(count * 4));
    }
}

inline void read_f32_le(std::istream& is, float* dst, size_t count) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * 4));
    if (static_cast<size_t>(is.gcount()) != count * 4) {
        throw integrity_error("short read: expected " + std::to_string(count * 4) + " bytes");
    }
    if constexpr (std::endian::native != std::endian::little) {
        auto* w = reinterpret_cast<uint32_t*>(dst);
        for (size_t i = 0; i < count; ++i) w[i] = to_le32(w[i]);
    }
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path.string());
    std::string out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return out;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open " + path.string() + " for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw io_error("write failed: " + path.string());
}

inline uint64_t file_content_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path.string());
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(is.gcount()), h);
    }
    return h;
}

}  // namespace patchwave
