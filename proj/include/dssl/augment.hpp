#pragma once

#include "dssl/core.hpp"
#include "dssl/image.hpp"

#include <array>
#include <string_view>
#include <utility>
#include <vector>

/// Standard pipeline T and the heavy families (RandAugment, Jigsaw,
/// UniformAugment). Every op is a pure function of (image, config, rng state).
namespace dssl::augment {

struct StandardAugmentConfig {
    std::array<double, 2> crop_scale_range{0.2, 1.0};
    std::array<double, 2> crop_ratio_range{3.0 / 4.0, 4.0 / 3.0};
    int crop_size = 32;
    double hflip_prob = 0.5;
    std::array<double, 4> color_strengths{0.4, 0.4, 0.4, 0.1};  // brightness, contrast, saturation, hue
    double color_prob = 0.8;
    double grayscale_prob = 0.2;
    std::array<double, 2> blur_sigma_range{0.1, 2.0};
    double blur_prob = 0.5;

    void validate() const;

    friend bool operator==(const StandardAugmentConfig&, const StandardAugmentConfig&) = default;
};

/// Smallest side length apply_standard accepts.
inline constexpr int kMinCroppableSide = 2;

enum class Op {
    identity,
    auto_contrast,
    equalize,
    rotate,
    solarize,
    color,
    posterize,
    contrast,
    brightness,
    sharpness,
    shear_x,
    shear_y,
    translate_x,
    translate_y,
};

std::string_view op_name(Op op);
Op parse_op(std::string_view name);

/// The 14-op RandAugment list in canonical order.
const std::vector<Op>& randaugment_ops();
/// The 13-op UniformAugment list.
const std::vector<Op>& uniformaugment_ops();

inline constexpr int kMaxMagnitude = 30;

struct RandAugmentConfig {
    int num_ops = 2;
    int magnitude = 5;
    std::vector<Op> policy_list = randaugment_ops();

    void validate() const;

    friend bool operator==(const RandAugmentConfig&, const RandAugmentConfig&) = default;
};

struct JigsawConfig {
    int grid_n = 4;

    void validate() const;

    friend bool operator==(const JigsawConfig&, const JigsawConfig&) = default;
};

enum class HeavyPolicy { randaugment, jigsaw, uniformaugment, none };

std::string_view policy_name(HeavyPolicy policy);
HeavyPolicy parse_policy(std::string_view name);

struct HeavyAugmentConfig {
    std::vector<std::pair<HeavyPolicy, double>> mixture{{HeavyPolicy::randaugment, 0.9},
                                                        {HeavyPolicy::jigsaw, 0.1}};
    RandAugmentConfig randaugment{};
    JigsawConfig jigsaw{};
    int uniformaugment_slots = 2;

    void validate() const;

    friend bool operator==(const HeavyAugmentConfig&, const HeavyAugmentConfig&) = default;
};

/// crop-and-resize -> hflip -> colour jitter -> grayscale -> blur.
ImageSample apply_standard(const ImageSample& image, const StandardAugmentConfig& cfg, Rng& rng);

/// Applies one op at `level` in [0, 1] of its maximum range; signed ops draw
/// their sign from `rng`.
void apply_op(ImageSample& image, Op op, double level, Rng& rng);

ImageSample rand_augment(const ImageSample& image, const RandAugmentConfig& cfg, Rng& rng);

/// Tile `i` of the output (row-major) is tile `permutation[i]` of the input.
ImageSample jigsaw_with_permutation(const ImageSample& image, int grid_n, const std::vector<int>& permutation);
ImageSample jigsaw(const ImageSample& image, const JigsawConfig& cfg, Rng& rng);

ImageSample uniform_augment(const ImageSample& image, Rng& rng, int slots = 2);

struct HeavyResult {
    ImageSample image;
    HeavyPolicy policy;
};

HeavyResult apply_heavy(const ImageSample& image, const HeavyAugmentConfig& cfg, Rng& rng);

}  // namespace dssl::augment
