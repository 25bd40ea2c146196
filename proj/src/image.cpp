#include "dssl/image.hpp"

#include "dssl/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace dssl {

bool ImageSample::valid() const {
    return height > 0 && width > 0 && pixels.size() == static_cast<std::size_t>(kChannels) * plane();
}

bool ImageSample::in_unit_range() const {
    return std::all_of(pixels.begin(), pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

namespace pixel {
namespace {

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    const float maxc = std::max({r, g, b});
    const float minc = std::min({r, g, b});
    v = maxc;
    const float delta = maxc - minc;
    if (delta <= 0.0f) {
        h = 0.0f;
        s = 0.0f;
        return;
    }
    s = delta / maxc;
    float hh;
    if (maxc == r)
        hh = (g - b) / delta;
    else if (maxc == g)
        hh = 2.0f + (b - r) / delta;
    else
        hh = 4.0f + (r - g) / delta;
    hh /= 6.0f;
    if (hh < 0.0f) hh += 1.0f;
    h = hh;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    if (s <= 0.0f) {
        r = g = b = v;
        return;
    }
    const float h6 = h * 6.0f;
    const int sector = static_cast<int>(std::floor(h6)) % 6;
    const float f = h6 - std::floor(h6);
    const float p = v * (1.0f - s);
    const float q = v * (1.0f - s * f);
    const float t = v * (1.0f - s * (1.0f - f));
    switch (sector) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
}

inline int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

}  // namespace

void clamp_unit(ImageSample& img) {
    for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

ImageSample resized_crop(const ImageSample& img, double top, double left, double h, double w,
                         int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resized_crop: non-positive output size");
    ImageSample out(out_h, out_w, img.id);
    const double sy = h / out_h;
    const double sx = w / out_w;
    std::vector<int> x0(out_w), x1(out_w);
    std::vector<float> fx(out_w);
    for (int ox = 0; ox < out_w; ++ox) {
        double src = left + (ox + 0.5) * sx - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(img.width - 1));
        const int lo = static_cast<int>(std::floor(src));
        x0[ox] = lo;
        x1[ox] = std::min(lo + 1, img.width - 1);
        fx[ox] = static_cast<float>(src - lo);
    }
    for (int oy = 0; oy < out_h; ++oy) {
        double src = top + (oy + 0.5) * sy - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(std::floor(src));
        const int y1 = std::min(y0 + 1, img.height - 1);
        const float fy = static_cast<float>(src - y0);
        for (int c = 0; c < ImageSample::kChannels; ++c) {
            for (int ox = 0; ox < out_w; ++ox) {
                const float a = img.at(c, y0, x0[ox]);
                const float b = img.at(c, y0, x1[ox]);
                const float d = img.at(c, y1, x0[ox]);
                const float e = img.at(c, y1, x1[ox]);
                const float top_row = fx[ox] == 0.0f ? a : a + fx[ox] * (b - a);
                const float bottom_row = fx[ox] == 0.0f ? d : d + fx[ox] * (e - d);
                out.at(c, oy, ox) = fy == 0.0f ? top_row : top_row + fy * (bottom_row - top_row);
            }
        }
    }
    return out;
}

ImageSample resize(const ImageSample& img, int out_h, int out_w) {
    if (out_h == img.height && out_w == img.width) return img;
    return resized_crop(img, 0.0, 0.0, img.height, img.width, out_h, out_w);
}

void hflip(ImageSample& img) {
    for (int c = 0; c < ImageSample::kChannels; ++c)
        for (int y = 0; y < img.height; ++y) {
            auto row = img.channel(c).subspan(static_cast<std::size_t>(y) * img.width, img.width);
            std::reverse(row.begin(), row.end());
        }
}

std::vector<float> luma(const ImageSample& img) {
    std::vector<float> out(img.plane());
    auto r = img.channel(0), g = img.channel(1), b = img.channel(2);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
    return out;
}

void to_grayscale(ImageSample& img) {
    const auto y = luma(img);
    for (int c = 0; c < ImageSample::kChannels; ++c) std::copy(y.begin(), y.end(), img.channel(c).begin());
}

void blend_towards(ImageSample& img, std::span<const float> base, double factor) {
    for (int c = 0; c < ImageSample::kChannels; ++c) {
        auto ch = img.channel(c);
        for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = clamp01(base[i] + factor * (ch[i] - base[i]));
    }
}

void adjust_brightness(ImageSample& img, double factor) {
    for (auto& v : img.pixels) v = clamp01(v * factor);
}

void adjust_contrast(ImageSample& img, double factor) {
    const auto y = luma(img);
    double mean = 0.0;
    for (float v : y) mean += v;
    mean /= static_cast<double>(y.size());
    const std::vector<float> base(y.size(), static_cast<float>(mean));
    blend_towards(img, base, factor);
}

void adjust_saturation(ImageSample& img, double factor) { blend_towards(img, luma(img), factor); }

void adjust_hue(ImageSample& img, double shift) {
    auto r = img.channel(0), g = img.channel(1), b = img.channel(2);
    for (std::size_t i = 0; i < img.plane(); ++i) {
        float h, s, v;
        rgb_to_hsv(r[i], g[i], b[i], h, s, v);
        h = static_cast<float>(std::fmod(h + shift + 1.0, 1.0));
        hsv_to_rgb(h, s, v, r[i], g[i], b[i]);
    }
    clamp_unit(img);
}

void adjust_sharpness(ImageSample& img, double factor) {
    if (img.height < 3 || img.width < 3) return;
    ImageSample smooth = img;
    for (int c = 0; c < ImageSample::kChannels; ++c)
        for (int y = 1; y + 1 < img.height; ++y)
            for (int x = 1; x + 1 < img.width; ++x) {
                float acc = 4.0f * img.at(c, y, x);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) acc += img.at(c, y + dy, x + dx);
                smooth.at(c, y, x) = acc / 13.0f;
            }
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = clamp01(smooth.pixels[i] + factor * (img.pixels[i] - smooth.pixels[i]));
}

void gaussian_blur(ImageSample& img, double sigma, int kernel_size) {
    if (kernel_size < 1 || kernel_size % 2 == 0) throw Error("gaussian_blur: kernel size must be odd");
    const int radius = kernel_size / 2;
    std::vector<float> kernel(kernel_size);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[i + radius] = static_cast<float>(w);
        total += w;
    }
    for (auto& w : kernel) w = static_cast<float>(w / total);

    std::vector<float> tmp(img.plane());
    for (int c = 0; c < ImageSample::kChannels; ++c) {
        auto ch = img.channel(c);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                float acc = 0.0f;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[k + radius] * ch[static_cast<std::size_t>(y) * img.width + reflect(x + k, img.width)];
                tmp[static_cast<std::size_t>(y) * img.width + x] = acc;
            }
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                float acc = 0.0f;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[k + radius] * tmp[static_cast<std::size_t>(reflect(y + k, img.height)) * img.width + x];
                ch[static_cast<std::size_t>(y) * img.width + x] = std::clamp(acc, 0.0f, 1.0f);
            }
    }
}

void solarize(ImageSample& img, double threshold) {
    for (auto& v : img.pixels)
        if (v > threshold) v = 1.0f - v;
}

void posterize(ImageSample& img, int bits) {
    bits = std::clamp(bits, 1, 8);
    const auto mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
    for (auto& v : img.pixels) v = static_cast<float>(to_byte(v) & mask) / 255.0f;
}

void autocontrast(ImageSample& img) {
    for (int c = 0; c < ImageSample::kChannels; ++c) {
        auto ch = img.channel(c);
        const auto [lo_it, hi_it] = std::minmax_element(ch.begin(), ch.end());
        const float lo = *lo_it, hi = *hi_it;
        if (hi <= lo) continue;
        for (auto& v : ch) v = std::clamp((v - lo) / (hi - lo), 0.0f, 1.0f);
    }
}

void equalize(ImageSample& img) {
    for (int c = 0; c < ImageSample::kChannels; ++c) {
        auto ch = img.channel(c);
        std::array<std::int64_t, 256> hist{};
        for (float v : ch) ++hist[to_byte(v)];
        std::int64_t last_nonzero = 0, total = 0;
        for (auto count : hist) {
            total += count;
            if (count) last_nonzero = count;
        }
        const std::int64_t step = (total - last_nonzero) / 255;
        if (step == 0) continue;
        std::array<std::uint8_t, 256> lut{};
        std::int64_t n = step / 2;
        for (int i = 0; i < 256; ++i) {
            lut[i] = static_cast<std::uint8_t>(std::min<std::int64_t>(n / step, 255));
            n += hist[i];
        }
        for (auto& v : ch) v = static_cast<float>(lut[to_byte(v)]) / 255.0f;
    }
}

void invert(ImageSample& img) {
    for (auto& v : img.pixels) v = 1.0f - v;
}

void warp_affine(ImageSample& img, const double (&m)[6], float fill) {
    ImageSample out(img.height, img.width, img.id, fill);
    const double cx = (img.width - 1) * 0.5;
    const double cy = (img.height - 1) * 0.5;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double px = x - cx, py = y - cy;
            const double sx = m[0] * px + m[1] * py + m[2] + cx;
            const double sy = m[3] * px + m[4] * py + m[5] + cy;
            const long ix = std::lround(sx), iy = std::lround(sy);
            if (ix < 0 || iy < 0 || ix >= img.width || iy >= img.height) continue;
            for (int c = 0; c < ImageSample::kChannels; ++c) out.at(c, y, x) = img.at(c, static_cast<int>(iy), static_cast<int>(ix));
        }
    img.pixels = std::move(out.pixels);
}

void rotate(ImageSample& img, double degrees) {
    const double rad = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double m[6] = {c, s, 0.0, -s, c, 0.0};
    warp_affine(img, m);
}

void shear_x(ImageSample& img, double factor) {
    const double m[6] = {1.0, factor, 0.0, 0.0, 1.0, 0.0};
    warp_affine(img, m);
}

void shear_y(ImageSample& img, double factor) {
    const double m[6] = {1.0, 0.0, 0.0, factor, 1.0, 0.0};
    warp_affine(img, m);
}

void translate(ImageSample& img, double dx, double dy) {
    const double m[6] = {1.0, 0.0, -dx, 0.0, 1.0, -dy};
    warp_affine(img, m);
}

}  // namespace pixel
}  // namespace dssl
