#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dssl {

/// A 3-channel float image in planar CHW layout with values in [0, 1].
struct ImageSample {
    static constexpr int kChannels = 3;

    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // size 3 * height * width
    std::int64_t id = -1;       // stable per-dataset index

    ImageSample() = default;
    ImageSample(int h, int w, std::int64_t image_id = -1, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(kChannels) * h * w, fill), id(image_id) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    float& at(int c, int y, int x) { return pixels[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int y, int x) const { return pixels[c * plane() + static_cast<std::size_t>(y) * width + x]; }

    std::span<float> channel(int c) { return {pixels.data() + c * plane(), plane()}; }
    std::span<const float> channel(int c) const { return {pixels.data() + c * plane(), plane()}; }

    bool valid() const;
    bool in_unit_range() const;

    friend bool operator==(const ImageSample& a, const ImageSample& b) {
        return a.height == b.height && a.width == b.width && a.pixels == b.pixels;
    }
};

/// Pixel-level building blocks shared by the standard and heavy pipelines.
namespace pixel {

void clamp_unit(ImageSample& img);

/// Bilinear resampling of the rectangle (top, left, h, w) onto out_h x out_w,
/// half-pixel centred. Sampling a full-size rectangle onto the same size is exact.
ImageSample resized_crop(const ImageSample& img, double top, double left, double h, double w,
                         int out_h, int out_w);
ImageSample resize(const ImageSample& img, int out_h, int out_w);

void hflip(ImageSample& img);

/// ITU-R 601 luma, one value per pixel.
std::vector<float> luma(const ImageSample& img);
void to_grayscale(ImageSample& img);

/// out = base + factor * (img - base), clamped.
void blend_towards(ImageSample& img, std::span<const float> base_per_pixel, double factor);
void adjust_brightness(ImageSample& img, double factor);
void adjust_contrast(ImageSample& img, double factor);
void adjust_saturation(ImageSample& img, double factor);
/// Rotates hue by `shift` turns (shift in [-0.5, 0.5]).
void adjust_hue(ImageSample& img, double shift);
void adjust_sharpness(ImageSample& img, double factor);

void gaussian_blur(ImageSample& img, double sigma, int kernel_size);

/// Inverts pixels strictly above `threshold`.
void solarize(ImageSample& img, double threshold);
/// Keeps the top `bits` bits of the 8-bit quantised value.
void posterize(ImageSample& img, int bits);
void autocontrast(ImageSample& img);
void equalize(ImageSample& img);
void invert(ImageSample& img);

/// Inverse-mapped affine warp with nearest sampling about the image centre;
/// matrix maps output coords to input coords. Out-of-bounds pixels become `fill`.
void warp_affine(ImageSample& img, const double (&inverse)[6], float fill = 0.0f);
void rotate(ImageSample& img, double degrees);
void shear_x(ImageSample& img, double factor);
void shear_y(ImageSample& img, double factor);
void translate(ImageSample& img, double dx, double dy);

}  // namespace pixel
}  // namespace dssl
