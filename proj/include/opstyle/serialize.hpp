#pragma once

// Binary tensor file format "OPT1":
//   4 ASCII magic bytes "OPT1"
//   u32 little-endian rank
//   rank x u64 little-endian dimension sizes
//   f32 little-endian payload, row-major
// Round trips are bit-exact; non-finite values are rejected on both sides.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "opstyle/tensor.hpp"

namespace opstyle {

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
    return v;
}

inline uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    return v;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    check(f != nullptr, "cannot open for writing: " + path);
    const size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
    const int rc = std::fclose(f);
    check(n == bytes.size() && rc == 0, "write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    check(f != nullptr, "cannot open for reading: " + path);
    std::fseek(f, 0, SEEK_END);
    const long sz = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> bytes(size_t(sz > 0 ? sz : 0));
    const size_t n = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    check(n == bytes.size(), "read failed: " + path);
    return bytes;
}

} // namespace detail

inline std::vector<uint8_t> tensor_to_bytes(const Tensor& t) {
    check(t.all_finite(), "save_tensor: tensor contains non-finite values");
    std::vector<uint8_t> out;
    out.reserve(16 + size_t(t.rank()) * 8 + size_t(t.size()) * 4);
    for (char c : {'O', 'P', 'T', '1'}) out.push_back(uint8_t(c));
    detail::put_u32(out, uint32_t(t.rank()));
    for (int64_t d : t.shape()) detail::put_u64(out, uint64_t(d));
    for (int64_t i = 0; i < t.size(); ++i) {
        uint32_t bits;
        float v = t[i];
        std::memcpy(&bits, &v, 4);
        detail::put_u32(out, bits);
    }
    return out;
}

inline Tensor tensor_from_bytes(const std::vector<uint8_t>& bytes, const std::string& what = "tensor") {
    check(bytes.size() >= 8, what + ": truncated header");
    check(std::memcmp(bytes.data(), "OPT1", 4) == 0, what + ": bad magic bytes");
    const uint32_t rank = detail::get_u32(bytes.data() + 4);
    check(rank <= 16, what + ": implausible rank");
    check(bytes.size() >= 8 + size_t(rank) * 8, what + ": truncated shape");
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint64_t d = detail::get_u64(bytes.data() + 8 + 8 * i);
        check(d <= (1ull << 32), what + ": implausible dimension");
        shape[i] = int64_t(d);
        numel *= shape[i];
    }
    const size_t payload_at = 8 + size_t(rank) * 8;
    check(bytes.size() == payload_at + size_t(numel) * 4,
          what + ": payload length inconsistent with shape");
    std::vector<float> data(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) {
        const uint32_t bits = detail::get_u32(bytes.data() + payload_at + size_t(i) * 4);
        std::memcpy(&data[size_t(i)], &bits, 4);
    }
    Tensor t(std::move(shape), std::move(data));
    check(t.all_finite(), what + ": non-finite values in file");
    return t;
}

inline void save_tensor(const Tensor& t, const std::string& path) {
    detail::write_file(path, tensor_to_bytes(t));
}

inline Tensor load_tensor(const std::string& path) {
    return tensor_from_bytes(detail::read_file(path), path);
}

// FNV-1a, used for checkpoint hashes in run manifests.
inline uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

} // namespace opstyle
