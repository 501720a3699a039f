#pragma once

// Parameter checkpoint container: named tensors with shapes and little-endian
// float64 payloads, preceded by a magic string and a format version.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "keyex/tensor.hpp"

namespace keyex::checkpoint {

inline constexpr char kMagic[9] = "KEXPARAM";  // 8 bytes on disk
inline constexpr uint32_t kFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double v) { put_u64(buf, std::bit_cast<uint64_t>(v)); }

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw ParseError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline void save(const std::string& path, const NamedTensors& entries) {
    std::string buf;
    buf.append(kMagic, 8);
    detail::put_u32(buf, kFormatVersion);
    detail::put_u64(buf, entries.size());
    for (const auto& [name, tensor] : entries) {
        detail::put_u32(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
        detail::put_u32(buf, static_cast<uint32_t>(tensor.shape().size()));
        for (int d : tensor.shape()) detail::put_u64(buf, static_cast<uint64_t>(d));
        for (double v : tensor.values()) detail::put_f64(buf, v);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("checkpoint: write failed: " + path);
}

inline NamedTensors load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::Reader r{buf};
    if (r.bytes(8) != std::string(kMagic, 8)) {
        throw ParseError("checkpoint: bad magic in " + path);
    }
    const uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
    }
    const uint64_t count = r.u64();
    NamedTensors entries;
    entries.reserve(count);
    for (uint64_t e = 0; e < count; ++e) {
        const uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        const uint32_t rank = r.u32();
        Shape shape;
        shape.reserve(rank);
        int64_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const auto d = static_cast<int64_t>(r.u64());
            if (d <= 0) throw ParseError("checkpoint: non-positive dimension");
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        std::vector<double> values(static_cast<size_t>(numel));
        for (auto& v : values) v = r.f64();
        entries.emplace_back(std::move(name), Tensor::of(std::move(shape), std::move(values)));
    }
    return entries;
}

}  // namespace keyex::checkpoint
