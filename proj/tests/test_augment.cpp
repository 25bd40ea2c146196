#include "dssl/augment.hpp"

#include "doctest_torch.hpp"

#include <algorithm>
#include <cmath>
#include <map>

using namespace dssl;
using namespace dssl::augment;

namespace {

ImageSample random_image(Rng& rng, int h = 32, int w = 32) {
    ImageSample img(h, w);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    return img;
}

// Gradient-plus-blob picture: any sub-pixel resampling error stays small on
// it, so the 2/255 bound tests the op rather than the interpolation.
ImageSample smooth_image(Rng& rng, int h = 32, int w = 32) {
    ImageSample img(h, w);
    const double cx = rng.uniform(8, 24), cy = rng.uniform(8, 24);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                img.at(c, y, x) = static_cast<float>(0.2 + 0.3 * x / w + 0.4 * std::exp(-r2 / 60.0) * (c + 1) / 3.0);
            }
    return img;
}

float max_abs_diff(const ImageSample& a, const ImageSample& b) {
    float m = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

std::vector<std::vector<float>> tiles(const ImageSample& img, int n) {
    const int th = img.height / n, tw = img.width / n;
    std::vector<std::vector<float>> out;
    for (int ty = 0; ty < n; ++ty)
        for (int tx = 0; tx < n; ++tx) {
            std::vector<float> t;
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < th; ++y)
                    for (int x = 0; x < tw; ++x) t.push_back(img.at(c, ty * th + y, tx * tw + x));
            out.push_back(std::move(t));
        }
    return out;
}

const std::vector<Op> kGeometric = {Op::rotate, Op::shear_x, Op::shear_y, Op::translate_x, Op::translate_y};

}  // namespace

TEST_CASE("op lists") {
    CHECK(randaugment_ops().size() == 14);
    CHECK(uniformaugment_ops().size() == 13);
    for (auto op : randaugment_ops()) CHECK(parse_op(op_name(op)) == op);
    for (auto p : {HeavyPolicy::randaugment, HeavyPolicy::jigsaw, HeavyPolicy::uniformaugment, HeavyPolicy::none})
        CHECK(parse_policy(policy_name(p)) == p);
    CHECK_THROWS_AS(parse_op("warp"), ConfigError);
}

TEST_CASE("jigsaw conserves the tile multiset") {
    Rng rng(7);
    for (int t = 0; t < 200; ++t) {
        const auto img = random_image(rng);
        const int n = 2 + t % 3;  // 2, 3 (uneven tiles are not used) or 4
        if (32 % n) continue;
        const auto out = jigsaw(img, JigsawConfig{n}, rng);
        auto a = tiles(img, n), b = tiles(out, n);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
}

TEST_CASE("jigsaw_with_permutation places input tile perm[i] at output i") {
    Rng rng(1);
    const auto img = random_image(rng);
    const std::vector<int> perm = {3, 0, 2, 1};
    const auto out = jigsaw_with_permutation(img, 2, perm);
    const auto in_t = tiles(img, 2), out_t = tiles(out, 2);
    for (int i = 0; i < 4; ++i) CHECK(out_t[static_cast<std::size_t>(i)] == in_t[static_cast<std::size_t>(perm[i])]);
}

TEST_CASE("zero-magnitude geometric ops are near identity") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const auto img = smooth_image(rng);
        for (auto op : kGeometric) {
            auto out = img;
            apply_op(out, op, 0.0, rng);
            CHECK(max_abs_diff(img, out) <= 2.0f / 255.0f);
        }
    }
}

TEST_CASE("every op and policy keeps pixels in [0, 1]") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const auto img = random_image(rng);
        for (auto op : randaugment_ops())
            for (double level : {0.0, 0.5, 1.0}) {
                auto out = img;
                apply_op(out, op, level, rng);
                CHECK(out.in_unit_range());
            }
        RandAugmentConfig strong;
        strong.magnitude = kMaxMagnitude;
        strong.num_ops = 3;
        CHECK(rand_augment(img, strong, rng).in_unit_range());
        CHECK(uniform_augment(img, rng).in_unit_range());
        CHECK(jigsaw(img, {}, rng).in_unit_range());
        CHECK(apply_standard(img, {}, rng).in_unit_range());
    }
}

TEST_CASE("seeded determinism is bit-exact") {
    Rng src(9);
    const auto img = random_image(src);
    for (std::uint64_t seed : {0ULL, 1ULL, 12345ULL}) {
        Rng a(seed), b(seed);
        CHECK(apply_standard(img, {}, a).pixels == apply_standard(img, {}, b).pixels);
        HeavyAugmentConfig h;
        h.mixture = {{HeavyPolicy::randaugment, 0.4}, {HeavyPolicy::jigsaw, 0.3}, {HeavyPolicy::uniformaugment, 0.3}};
        for (int i = 0; i < 10; ++i) {
            const auto ra = apply_heavy(img, h, a), rb = apply_heavy(img, h, b);
            CHECK(ra.policy == rb.policy);
            CHECK(ra.image.pixels == rb.image.pixels);
        }
    }
}

TEST_CASE("heavy mixture frequencies match their weights") {
    Rng rng(21);
    const auto img = random_image(rng, 8, 8);
    HeavyAugmentConfig h;
    h.mixture = {{HeavyPolicy::randaugment, 0.6}, {HeavyPolicy::jigsaw, 0.3}, {HeavyPolicy::none, 0.1}};
    h.jigsaw.grid_n = 2;
    std::map<HeavyPolicy, int> counts;
    const int draws = 6000;
    for (int i = 0; i < draws; ++i) ++counts[apply_heavy(img, h, rng).policy];
    for (const auto& [p, w] : h.mixture) CHECK(std::abs(counts[p] / double(draws) - w) < 0.02);
}

TEST_CASE("policy none returns the input") {
    Rng rng(2);
    const auto img = random_image(rng);
    HeavyAugmentConfig h;
    h.mixture = {{HeavyPolicy::none, 1.0}};
    CHECK(apply_heavy(img, h, rng).image.pixels == img.pixels);
}

TEST_CASE("standard pipeline output size and validation") {
    Rng rng(4);
    const auto img = random_image(rng, 40, 48);
    StandardAugmentConfig cfg;
    cfg.crop_size = 24;
    const auto out = apply_standard(img, cfg, rng);
    CHECK(out.height == 24);
    CHECK(out.width == 24);

    StandardAugmentConfig bad;
    bad.crop_scale_range = {0.9, 0.2};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.hflip_prob = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    RandAugmentConfig ra;
    ra.magnitude = kMaxMagnitude + 1;
    CHECK_THROWS_AS(ra.validate(), ConfigError);
    CHECK_THROWS_AS((JigsawConfig{0}.validate()), ConfigError);
}

TEST_CASE("solarize inverts strictly above the threshold") {
    ImageSample img(1, 3);
    for (int c = 0; c < 3; ++c) {
        img.at(c, 0, 0) = 0.4f;
        img.at(c, 0, 1) = 0.5f;
        img.at(c, 0, 2) = 0.75f;
    }
    pixel::solarize(img, 0.5);
    CHECK(img.at(0, 0, 0) == doctest::Approx(0.4f));
    CHECK(img.at(0, 0, 1) == doctest::Approx(0.5f));
    CHECK(img.at(0, 0, 2) == doctest::Approx(0.25f));
}
