#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace vpbench::binio {

// All on-disk binary payloads are little-endian float32/uint64 regardless of
// the host, so datasets and checkpoints are byte-portable.

inline std::uint32_t byteswap32(std::uint32_t v) {
    return ((v & 0x000000ffu) << 24) | ((v & 0x0000ff00u) << 8) |
           ((v & 0x00ff0000u) >> 8) | ((v & 0xff000000u) >> 24);
}

inline std::uint64_t byteswap64(std::uint64_t v) {
    return (static_cast<std::uint64_t>(byteswap32(static_cast<std::uint32_t>(v))) << 32) |
           byteswap32(static_cast<std::uint32_t>(v >> 32));
}

inline constexpr bool host_is_little_endian() {
    return std::endian::native == std::endian::little;
}

inline void write_u64le(std::ostream& out, std::uint64_t v) {
    if (!host_is_little_endian()) v = byteswap64(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64le(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!host_is_little_endian()) v = byteswap64(v);
    return v;
}

inline void write_f32le(std::ostream& out, std::span<const float> values) {
    if (host_is_little_endian()) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
        return;
    }
    std::vector<std::uint32_t> swapped(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        swapped[i] = byteswap32(std::bit_cast<std::uint32_t>(values[i]));
    out.write(reinterpret_cast<const char*>(swapped.data()),
              static_cast<std::streamsize>(swapped.size() * sizeof(std::uint32_t)));
}

inline void read_f32le(std::istream& in, std::span<float> values) {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!host_is_little_endian()) {
        for (float& f : values)
            f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
    }
}

/// FNV-1a (64-bit) over raw bytes; used for content hashes and cache keys.
class Fnv1a64 {
public:
    void update(const void* bytes, std::size_t count) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < count; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    void update_u64(std::uint64_t v) {
        if (!host_is_little_endian()) v = byteswap64(v);
        update(&v, sizeof(v));
    }
    void update_f32le(std::span<const float> values) {
        if (host_is_little_endian()) {
            update(values.data(), values.size() * sizeof(float));
            return;
        }
        for (float f : values) {
            std::uint32_t le = byteswap32(std::bit_cast<std::uint32_t>(f));
            update(&le, sizeof(le));
        }
    }
    void update_string(const std::string& s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return hash_; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_bytes(const void* bytes, std::size_t count) {
    Fnv1a64 h;
    h.update(bytes, count);
    return h.digest();
}

inline std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace vpbench::binio
