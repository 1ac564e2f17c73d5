#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace handgen {

// Minimal PNG container on top of zlib. Always writes filter 0 rows at a
// fixed compression level so identical pixels give identical bytes; the
// reader handles all five standard row filters for externally produced files.
namespace png {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

inline void write_chunk(std::vector<uint8_t>& out, const char type[4],
                        const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = static_cast<uint32_t>(
        crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

// pixels: row-major, `channels` bytes per pixel (1 = gray, 3 = rgb)
inline std::vector<uint8_t> encode(const std::vector<uint8_t>& pixels, int w, int h, int channels) {
    if (channels != 1 && channels != 3) throw ValidationError("png: only gray/rgb supported");
    if (static_cast<size_t>(w) * h * channels != pixels.size())
        throw ValidationError("png: pixel buffer size mismatch");

    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * channels));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0); // filter type 0
        const uint8_t* row = pixels.data() + static_cast<size_t>(y) * w * channels;
        raw.insert(raw.end(), row, row + static_cast<size_t>(w) * channels);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    compressed.resize(bound);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(w));
    put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);                                  // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);              // color type
    ihdr.push_back(0);                                  // compression
    ihdr.push_back(0);                                  // filter
    ihdr.push_back(0);                                  // interlace
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", compressed);
    write_chunk(out, "IEND", {});
    return out;
}

struct Decoded {
    int w = 0, h = 0, channels = 0;
    std::vector<uint8_t> pixels; // row-major, `channels` per pixel
};

inline Decoded decode(const std::vector<uint8_t>& file) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
        throw ValidationError("png: bad signature");

    int w = 0, h = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= file.size()) {
        uint32_t len = get_u32(&file[pos]);
        if (pos + 12 + len > file.size()) throw ValidationError("png: truncated chunk");
        std::string type(reinterpret_cast<const char*>(&file[pos + 4]), 4);
        const uint8_t* payload = &file[pos + 8];
        if (type == "IHDR") {
            w = static_cast<int>(get_u32(payload));
            h = static_cast<int>(get_u32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw ValidationError("png: interlacing unsupported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw ValidationError("png: missing IHDR");
    if (bit_depth != 8) throw ValidationError("png: only 8-bit supported");
    int in_ch;
    switch (color_type) {
        case 0: in_ch = 1; break;
        case 2: in_ch = 3; break;
        case 4: in_ch = 2; break;
        case 6: in_ch = 4; break;
        default: throw ValidationError("png: palette images unsupported");
    }

    size_t raw_size = static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * in_ch);
    std::vector<uint8_t> raw(raw_size);
    uLongf dst_len = static_cast<uLongf>(raw_size);
    if (uncompress(raw.data(), &dst_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        dst_len != raw_size)
        throw ValidationError("png: inflate failed");

    // undo per-row filters
    int bpp = in_ch;
    size_t stride = static_cast<size_t>(w) * in_ch;
    std::vector<uint8_t> img(static_cast<size_t>(h) * stride);
    for (int y = 0; y < h; ++y) {
        uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1) + 1];
        uint8_t* dst = &img[static_cast<size_t>(y) * stride];
        const uint8_t* up = y > 0 ? &img[static_cast<size_t>(y - 1) * stride] : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<size_t>(bpp) ? dst[i - bpp] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= static_cast<size_t>(bpp)) ? up[i - bpp] : 0;
            int x = src[i];
            int val;
            switch (filter) {
                case 0: val = x; break;
                case 1: val = x + a; break;
                case 2: val = x + b; break;
                case 3: val = x + (a + b) / 2; break;
                case 4: {
                    int p = a + b - c;
                    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    int pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    val = x + pred;
                    break;
                }
                default: throw ValidationError("png: unknown filter");
            }
            dst[i] = static_cast<uint8_t>(val & 0xff);
        }
    }

    // normalize to gray or rgb (strip alpha)
    Decoded out;
    out.w = w;
    out.h = h;
    if (in_ch == 1 || in_ch == 3) {
        out.channels = in_ch;
        out.pixels = std::move(img);
    } else {
        out.channels = in_ch == 2 ? 1 : 3;
        out.pixels.resize(static_cast<size_t>(w) * h * out.channels);
        for (size_t p = 0; p < static_cast<size_t>(w) * h; ++p)
            for (int c = 0; c < out.channels; ++c)
                out.pixels[p * out.channels + c] = img[p * in_ch + c];
    }
    return out;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace png

} // namespace handgen
