#pragma once

// ImageTensor (3xHxW, values in [-1,1]) and 8-bit RGB PNG import/export.
// Export quantizes with round((v+1)/2*255) after clamping; the reader is the
// inverse map p/255*2-1 and accepts 8-bit RGB / RGBA non-interlaced files.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <zlib.h>

#include "opstyle/serialize.hpp"
#include "opstyle/tensor.hpp"

namespace opstyle {

struct ImageTensor {
    Tensor chw; // shape [3, H, W]

    ImageTensor() = default;
    ImageTensor(int height, int width) : chw({3, height, width}) {}
    explicit ImageTensor(Tensor t) : chw(std::move(t)) {
        check_arg(chw.rank() == 3 && chw.dim(0) == 3, "image: expected shape [3,H,W]");
    }

    int channels() const { return 3; }
    int height() const { return chw.empty() ? 0 : int(chw.dim(1)); }
    int width() const { return chw.empty() ? 0 : int(chw.dim(2)); }

    float& at(int c, int y, int x) { return chw(c, y, x); }
    float at(int c, int y, int x) const { return chw(c, y, x); }

    bool same_shape(const ImageTensor& o) const { return chw.same_shape(o.chw); }
};

// [-1,1] -> 0..255, clamping first
inline int png_quantize(float v) {
    v = std::min(1.0f, std::max(-1.0f, v));
    return int(std::lround((v + 1.0f) * 0.5f * 255.0f));
}

namespace detail {

inline void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(uint8_t(v >> (8 * i)));
}

inline uint32_t get_u32_be(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4],
                      const uint8_t* data, size_t n) {
    put_u32_be(out, uint32_t(n));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + n);
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + start, uInt(4 + n));
    put_u32_be(out, uint32_t(crc));
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace detail

inline std::vector<uint8_t> encode_png(const ImageTensor& img) {
    check_arg(img.height() > 0 && img.width() > 0, "export_png: empty image");
    check(img.chw.all_finite(), "export_png: non-finite pixel values");
    const int h = img.height(), w = img.width();

    std::vector<uint8_t> raw(size_t(h) * (size_t(w) * 3 + 1));
    size_t p = 0;
    for (int y = 0; y < h; ++y) {
        raw[p++] = 0; // filter: none
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                raw[p++] = uint8_t(png_quantize(img.at(c, y, x)));
    }

    uLongf comp_len = compressBound(uLong(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    check(compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) == Z_OK,
          "export_png: deflate failed");
    comp.resize(comp_len);

    std::vector<uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};
    uint8_t ihdr[13];
    ihdr[0] = uint8_t(uint32_t(w) >> 24); ihdr[1] = uint8_t(uint32_t(w) >> 16);
    ihdr[2] = uint8_t(uint32_t(w) >> 8);  ihdr[3] = uint8_t(w);
    ihdr[4] = uint8_t(uint32_t(h) >> 24); ihdr[5] = uint8_t(uint32_t(h) >> 16);
    ihdr[6] = uint8_t(uint32_t(h) >> 8);  ihdr[7] = uint8_t(h);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type: truecolor RGB
    ihdr[10] = 0; ihdr[11] = 0; ihdr[12] = 0;
    detail::png_chunk(out, "IHDR", ihdr, 13);
    detail::png_chunk(out, "IDAT", comp.data(), comp.size());
    detail::png_chunk(out, "IEND", nullptr, 0);
    return out;
}

inline void export_png(const ImageTensor& img, const std::string& path) {
    detail::write_file(path, encode_png(img));
}

inline ImageTensor decode_png(const std::vector<uint8_t>& bytes, const std::string& what = "png") {
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    check(bytes.size() > 8 && std::memcmp(bytes.data(), sig, 8) == 0, what + ": not a PNG file");

    int w = 0, h = 0, bpp = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = detail::get_u32_be(&bytes[pos]);
        check(pos + 12 + len <= bytes.size(), what + ": truncated chunk");
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const uint8_t* data = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            check(len == 13, what + ": bad IHDR");
            w = int(detail::get_u32_be(data));
            h = int(detail::get_u32_be(data + 4));
            check(data[8] == 8, what + ": only 8-bit depth supported");
            check(data[9] == 2 || data[9] == 6, what + ": only RGB/RGBA color supported");
            check(data[12] == 0, what + ": interlaced PNG not supported");
            bpp = data[9] == 2 ? 3 : 4;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    check(w > 0 && h > 0 && !idat.empty(), what + ": missing image data");

    const size_t stride = size_t(w) * size_t(bpp) + 1;
    std::vector<uint8_t> raw(stride * size_t(h));
    uLongf raw_len = uLongf(raw.size());
    check(uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) == Z_OK &&
              raw_len == raw.size(),
          what + ": inflate failed");

    // undo per-scanline filters
    std::vector<uint8_t> prev(size_t(w) * size_t(bpp), 0);
    ImageTensor img(h, w);
    for (int y = 0; y < h; ++y) {
        const uint8_t filter = raw[size_t(y) * stride];
        uint8_t* row = &raw[size_t(y) * stride + 1];
        for (int i = 0; i < w * bpp; ++i) {
            const int a = i >= bpp ? row[i - bpp] : 0;
            const int b = prev[size_t(i)];
            const int c = i >= bpp ? prev[size_t(i - bpp)] : 0;
            int v = row[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: fail(what + ": unknown scanline filter");
            }
            row[i] = uint8_t(v);
        }
        std::memcpy(prev.data(), row, prev.size());
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img.at(ch, y, x) = float(row[x * bpp + ch]) / 255.0f * 2.0f - 1.0f;
    }
    return img;
}

inline ImageTensor load_png(const std::string& path) {
    return decode_png(detail::read_file(path), path);
}

} // namespace opstyle
