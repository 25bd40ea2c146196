#include "dssl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dssl::augment {
namespace {

struct OpEntry {
    Op op;
    std::string_view name;
};

constexpr std::array<OpEntry, 14> kOpNames{{
    {Op::identity, "identity"},
    {Op::auto_contrast, "auto_contrast"},
    {Op::equalize, "equalize"},
    {Op::rotate, "rotate"},
    {Op::solarize, "solarize"},
    {Op::color, "color"},
    {Op::posterize, "posterize"},
    {Op::contrast, "contrast"},
    {Op::brightness, "brightness"},
    {Op::sharpness, "sharpness"},
    {Op::shear_x, "shear_x"},
    {Op::shear_y, "shear_y"},
    {Op::translate_x, "translate_x"},
    {Op::translate_y, "translate_y"},
}};

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

double signed_level(double level, Rng& rng) { return rng.bernoulli(0.5) ? -level : level; }

// Largest tile-divisible size closest to `side`.
int nearest_multiple(int side, int n) { return std::max(n, static_cast<int>(std::lround(static_cast<double>(side) / n)) * n); }

}  // namespace

std::string_view op_name(Op op) {
    for (const auto& e : kOpNames)
        if (e.op == op) return e.name;
    return "unknown";
}

Op parse_op(std::string_view name) {
    for (const auto& e : kOpNames)
        if (e.name == name) return e.op;
    throw ConfigError("augment.op", "unknown augmentation op '" + std::string(name) + "'");
}

const std::vector<Op>& randaugment_ops() {
    static const std::vector<Op> ops{Op::identity,   Op::auto_contrast, Op::equalize,    Op::rotate,
                                     Op::solarize,   Op::color,         Op::posterize,   Op::contrast,
                                     Op::brightness, Op::sharpness,     Op::shear_x,     Op::shear_y,
                                     Op::translate_x, Op::translate_y};
    return ops;
}

const std::vector<Op>& uniformaugment_ops() {
    static const std::vector<Op> ops{Op::shear_x,   Op::shear_y,  Op::translate_x,   Op::translate_y, Op::rotate,
                                     Op::auto_contrast, Op::equalize, Op::solarize, Op::posterize,
                                     Op::contrast,  Op::color,    Op::brightness,    Op::sharpness};
    return ops;
}

void StandardAugmentConfig::validate() const {
    const auto [lo, hi] = crop_scale_range;
    if (!(lo > 0.0 && hi <= 1.0 && lo <= hi))
        throw ConfigError("augment.standard.crop_scale_range", "expected 0 < low <= high <= 1");
    if (!(crop_ratio_range[0] > 0.0 && crop_ratio_range[0] <= crop_ratio_range[1]))
        throw ConfigError("augment.standard.crop_ratio_range", "expected 0 < low <= high");
    if (crop_size < kMinCroppableSide) throw ConfigError("augment.standard.crop_size", "too small");
    if (!is_probability(hflip_prob)) throw ConfigError("augment.standard.hflip_prob", "not a probability");
    if (!is_probability(color_prob)) throw ConfigError("augment.standard.color_prob", "not a probability");
    if (!is_probability(grayscale_prob)) throw ConfigError("augment.standard.grayscale_prob", "not a probability");
    if (!is_probability(blur_prob)) throw ConfigError("augment.standard.blur_prob", "not a probability");
    for (double s : color_strengths)
        if (s < 0.0) throw ConfigError("augment.standard.color_strengths", "strengths must be >= 0");
    if (color_strengths[3] > 0.5) throw ConfigError("augment.standard.color_strengths", "hue strength must be <= 0.5");
    if (!(blur_sigma_range[0] > 0.0 && blur_sigma_range[0] <= blur_sigma_range[1]))
        throw ConfigError("augment.standard.blur_sigma_range", "expected 0 < low <= high");
}

void RandAugmentConfig::validate() const {
    if (num_ops < 1) throw ConfigError("augment.randaugment.num_ops", "must be >= 1");
    if (magnitude < 0 || magnitude > kMaxMagnitude)
        throw ConfigError("augment.randaugment.magnitude", "must lie in [0, 30]");
    if (policy_list.size() != 14) throw ConfigError("augment.randaugment.policy_list", "must list exactly 14 ops");
}

void JigsawConfig::validate() const {
    if (grid_n < 2) throw ConfigError("augment.jigsaw.grid_n", "must be >= 2");
}

std::string_view policy_name(HeavyPolicy policy) {
    switch (policy) {
        case HeavyPolicy::randaugment: return "randaugment";
        case HeavyPolicy::jigsaw: return "jigsaw";
        case HeavyPolicy::uniformaugment: return "uniformaugment";
        case HeavyPolicy::none: return "none";
    }
    return "unknown";
}

HeavyPolicy parse_policy(std::string_view name) {
    for (auto p : {HeavyPolicy::randaugment, HeavyPolicy::jigsaw, HeavyPolicy::uniformaugment, HeavyPolicy::none})
        if (policy_name(p) == name) return p;
    throw ConfigError("augment.heavy.mixture", "unknown heavy policy '" + std::string(name) + "'");
}

void HeavyAugmentConfig::validate() const {
    if (mixture.empty()) throw ConfigError("augment.heavy.mixture", "must not be empty");
    double total = 0.0;
    for (const auto& [policy, weight] : mixture) {
        if (!is_probability(weight)) throw ConfigError("augment.heavy.mixture", "weights must lie in [0, 1]");
        total += weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("augment.heavy.mixture", "weights must sum to 1");
    randaugment.validate();
    jigsaw.validate();
    if (uniformaugment_slots < 1) throw ConfigError("augment.heavy.uniformaugment_slots", "must be >= 1");
}

ImageSample apply_standard(const ImageSample& image, const StandardAugmentConfig& cfg, Rng& rng) {
    if (!image.valid()) throw ShapeError("apply_standard: malformed image");
    if (image.height < kMinCroppableSide || image.width < kMinCroppableSide)
        throw ShapeError("apply_standard: image smaller than the minimum croppable size");

    // Random resized crop.
    const double area = static_cast<double>(image.height) * image.width;
    const double log_lo = std::log(cfg.crop_ratio_range[0]);
    const double log_hi = std::log(cfg.crop_ratio_range[1]);
    double crop_h = image.height, crop_w = image.width, top = 0.0, left = 0.0;
    bool found = false;
    for (int attempt = 0; attempt < 10 && !found; ++attempt) {
        const double target = area * rng.uniform(cfg.crop_scale_range[0], cfg.crop_scale_range[1]);
        const double ratio = std::exp(rng.uniform(log_lo, log_hi));
        const long w = std::lround(std::sqrt(target * ratio));
        const long h = std::lround(std::sqrt(target / ratio));
        if (w > 0 && h > 0 && w <= image.width && h <= image.height) {
            crop_w = static_cast<double>(w);
            crop_h = static_cast<double>(h);
            top = static_cast<double>(rng.uniform_int(0, image.height - h));
            left = static_cast<double>(rng.uniform_int(0, image.width - w));
            found = true;
        }
    }
    if (!found) {
        // Centre crop at the clamped aspect ratio.
        const double in_ratio = static_cast<double>(image.width) / image.height;
        if (in_ratio < cfg.crop_ratio_range[0]) {
            crop_w = image.width;
            crop_h = std::round(crop_w / cfg.crop_ratio_range[0]);
        } else if (in_ratio > cfg.crop_ratio_range[1]) {
            crop_h = image.height;
            crop_w = std::round(crop_h * cfg.crop_ratio_range[1]);
        }
        top = std::floor((image.height - crop_h) / 2.0);
        left = std::floor((image.width - crop_w) / 2.0);
    }
    ImageSample out = pixel::resized_crop(image, top, left, crop_h, crop_w, cfg.crop_size, cfg.crop_size);

    if (rng.bernoulli(cfg.hflip_prob)) pixel::hflip(out);

    if (rng.bernoulli(cfg.color_prob)) {
        const auto [sb, sc, ss, sh] = cfg.color_strengths;
        const double b = rng.uniform(std::max(0.0, 1.0 - sb), 1.0 + sb);
        const double c = rng.uniform(std::max(0.0, 1.0 - sc), 1.0 + sc);
        const double s = rng.uniform(std::max(0.0, 1.0 - ss), 1.0 + ss);
        const double h = rng.uniform(-sh, sh);
        pixel::adjust_brightness(out, b);
        pixel::adjust_contrast(out, c);
        pixel::adjust_saturation(out, s);
        pixel::adjust_hue(out, h);
    }

    if (rng.bernoulli(cfg.grayscale_prob)) pixel::to_grayscale(out);

    if (rng.bernoulli(cfg.blur_prob)) {
        const double sigma = rng.uniform(cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]);
        int kernel = static_cast<int>(0.1 * cfg.crop_size);
        if (kernel % 2 == 0) ++kernel;
        pixel::gaussian_blur(out, sigma, std::max(3, kernel));
    }
    return out;
}

void apply_op(ImageSample& image, Op op, double level, Rng& rng) {
    level = std::clamp(level, 0.0, 1.0);
    switch (op) {
        case Op::identity: break;
        case Op::auto_contrast: pixel::autocontrast(image); break;
        case Op::equalize: pixel::equalize(image); break;
        case Op::rotate: pixel::rotate(image, signed_level(30.0 * level, rng)); break;
        case Op::solarize: pixel::solarize(image, 1.0 - level); break;
        case Op::posterize: pixel::posterize(image, 8 - static_cast<int>(std::lround(4.0 * level))); break;
        case Op::color: pixel::adjust_saturation(image, 1.0 + signed_level(0.9 * level, rng)); break;
        case Op::contrast: pixel::adjust_contrast(image, 1.0 + signed_level(0.9 * level, rng)); break;
        case Op::brightness: pixel::adjust_brightness(image, 1.0 + signed_level(0.9 * level, rng)); break;
        case Op::sharpness: pixel::adjust_sharpness(image, 1.0 + signed_level(0.9 * level, rng)); break;
        case Op::shear_x: pixel::shear_x(image, signed_level(0.3 * level, rng)); break;
        case Op::shear_y: pixel::shear_y(image, signed_level(0.3 * level, rng)); break;
        case Op::translate_x:
            pixel::translate(image, signed_level(150.0 / 331.0 * level * image.width, rng), 0.0);
            break;
        case Op::translate_y:
            pixel::translate(image, 0.0, signed_level(150.0 / 331.0 * level * image.height, rng));
            break;
    }
}

ImageSample rand_augment(const ImageSample& image, const RandAugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    ImageSample out = image;
    const double level = static_cast<double>(cfg.magnitude) / kMaxMagnitude;
    for (int i = 0; i < cfg.num_ops; ++i) {
        const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(cfg.policy_list.size()) - 1);
        apply_op(out, cfg.policy_list[static_cast<std::size_t>(pick)], level, rng);
    }
    return out;
}

ImageSample jigsaw_with_permutation(const ImageSample& image, int grid_n, const std::vector<int>& permutation) {
    if (grid_n < 2) throw ConfigError("augment.jigsaw.grid_n", "must be >= 2");
    if (permutation.size() != static_cast<std::size_t>(grid_n * grid_n))
        throw ShapeError("jigsaw: permutation size must be grid_n^2");
    const bool divisible = image.height % grid_n == 0 && image.width % grid_n == 0;
    const ImageSample work = divisible ? image
                                       : pixel::resize(image, nearest_multiple(image.height, grid_n),
                                                       nearest_multiple(image.width, grid_n));
    const int th = work.height / grid_n;
    const int tw = work.width / grid_n;
    ImageSample out(work.height, work.width, image.id);
    for (int dst = 0; dst < grid_n * grid_n; ++dst) {
        const int src = permutation[static_cast<std::size_t>(dst)];
        const int sy = (src / grid_n) * th, sx = (src % grid_n) * tw;
        const int dy = (dst / grid_n) * th, dx = (dst % grid_n) * tw;
        for (int c = 0; c < ImageSample::kChannels; ++c)
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) out.at(c, dy + y, dx + x) = work.at(c, sy + y, sx + x);
    }
    if (!divisible) return pixel::resize(out, image.height, image.width);
    return out;
}

ImageSample jigsaw(const ImageSample& image, const JigsawConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<int> perm(static_cast<std::size_t>(cfg.grid_n * cfg.grid_n));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(perm[i], perm[j]);
    }
    return jigsaw_with_permutation(image, cfg.grid_n, perm);
}

ImageSample uniform_augment(const ImageSample& image, Rng& rng, int slots) {
    const auto& ops = uniformaugment_ops();
    ImageSample out = image;
    for (int i = 0; i < slots; ++i) {
        const bool apply = rng.bernoulli(0.5);
        const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(ops.size()) - 1);
        const double level = rng.uniform();
        if (apply) apply_op(out, ops[static_cast<std::size_t>(pick)], level, rng);
    }
    return out;
}

HeavyResult apply_heavy(const ImageSample& image, const HeavyAugmentConfig& cfg, Rng& rng) {
    const double draw = rng.uniform();
    double cumulative = 0.0;
    HeavyPolicy chosen = cfg.mixture.back().first;
    for (const auto& [policy, weight] : cfg.mixture) {
        cumulative += weight;
        if (draw < cumulative) {
            chosen = policy;
            break;
        }
    }
    switch (chosen) {
        case HeavyPolicy::randaugment: return {rand_augment(image, cfg.randaugment, rng), chosen};
        case HeavyPolicy::jigsaw: return {jigsaw(image, cfg.jigsaw, rng), chosen};
        case HeavyPolicy::uniformaugment: return {uniform_augment(image, rng, cfg.uniformaugment_slots), chosen};
        case HeavyPolicy::none: return {image, chosen};
    }
    return {image, chosen};
}

}  // namespace dssl::augment
