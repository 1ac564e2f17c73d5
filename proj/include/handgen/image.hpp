#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "png_io.hpp"
#include "tensor.hpp"

namespace handgen {

// RGB image, channel-major [3,H,W], values in [0,1].
struct Image {
    int h = 0, w = 0;
    Tensor data; // [3,h,w]

    Image() = default;
    Image(int height, int width) : h(height), w(width), data({3, height, width}) {}

    real& at(int c, int y, int x) { return data.v[(static_cast<size_t>(c) * h + y) * w + x]; }
    real at(int c, int y, int x) const { return data.v[(static_cast<size_t>(c) * h + y) * w + x]; }

    void fill(real r, real g, real b) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                at(0, y, x) = r;
                at(1, y, x) = g;
                at(2, y, x) = b;
            }
    }

    real luminance(int y, int x) const {
        return 0.2126 * at(0, y, x) + 0.7152 * at(1, y, x) + 0.0722 * at(2, y, x);
    }
};

inline uint8_t to_byte(real v) {
    real c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

inline std::vector<uint8_t> to_rgb8(const Image& img) {
    std::vector<uint8_t> out(static_cast<size_t>(img.h) * img.w * 3);
    size_t i = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            out[i++] = to_byte(img.at(0, y, x));
            out[i++] = to_byte(img.at(1, y, x));
            out[i++] = to_byte(img.at(2, y, x));
        }
    return out;
}

inline Image from_rgb8(const std::vector<uint8_t>& px, int w, int h, int channels) {
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t p = (static_cast<size_t>(y) * w + x) * channels;
            if (channels == 1) {
                real v = px[p] / 255.0;
                img.at(0, y, x) = img.at(1, y, x) = img.at(2, y, x) = v;
            } else {
                img.at(0, y, x) = px[p] / 255.0;
                img.at(1, y, x) = px[p + 1] / 255.0;
                img.at(2, y, x) = px[p + 2] / 255.0;
            }
        }
    return img;
}

inline void save_png(const Image& img, const std::string& path) {
    png::write_file(path, png::encode(to_rgb8(img), img.w, img.h, 3));
}

inline Image load_png(const std::string& path) {
    auto dec = png::decode(png::read_file(path));
    return from_rgb8(dec.pixels, dec.w, dec.h, dec.channels);
}

inline void save_gray_png(const Tensor& gray, const std::string& path) {
    if (gray.ndim() != 2) throw ValidationError("save_gray_png: need [H,W]");
    int h = gray.dim(0), w = gray.dim(1);
    std::vector<uint8_t> px(static_cast<size_t>(h) * w);
    for (int64_t i = 0; i < gray.numel(); ++i) px[static_cast<size_t>(i)] = to_byte(gray[i]);
    png::write_file(path, png::encode(px, w, h, 1));
}

// bilinear sample with clamped coordinates (pixel centers at integer coords)
inline real bilinear_sample(const Image& img, int c, real y, real x) {
    real yc = std::clamp(y, 0.0, static_cast<real>(img.h - 1));
    real xc = std::clamp(x, 0.0, static_cast<real>(img.w - 1));
    int y0 = static_cast<int>(std::floor(yc));
    int x0 = static_cast<int>(std::floor(xc));
    int y1 = std::min(y0 + 1, img.h - 1);
    int x1 = std::min(x0 + 1, img.w - 1);
    real fy = yc - y0, fx = xc - x0;
    return (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
           fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
}

inline Image resize_bilinear(const Image& img, int oh, int ow) {
    Image out(oh, ow);
    real sy = static_cast<real>(img.h) / oh;
    real sx = static_cast<real>(img.w) / ow;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            real srcy = (y + 0.5) * sy - 0.5;
            real srcx = (x + 0.5) * sx - 0.5;
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = bilinear_sample(img, c, srcy, srcx);
        }
    return out;
}

// luminance-thresholded foreground mask
inline std::vector<uint8_t> foreground_mask(const Image& img, real threshold) {
    std::vector<uint8_t> mask(static_cast<size_t>(img.h) * img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            mask[static_cast<size_t>(y) * img.w + x] = img.luminance(y, x) > threshold ? 1 : 0;
    return mask;
}

} // namespace handgen
