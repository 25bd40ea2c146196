#include "dssl/views.hpp"

#include "doctest_torch.hpp"

using namespace dssl;
using namespace dssl::views;

namespace {

ImageSample random_image(Rng& rng, std::int64_t id) {
    ImageSample img(32, 32, id);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    return img;
}

ViewConfig mixed_heavy() {
    ViewConfig cfg;
    cfg.heavy.mixture = {{augment::HeavyPolicy::randaugment, 0.5},
                         {augment::HeavyPolicy::jigsaw, 0.25},
                         {augment::HeavyPolicy::uniformaugment, 0.25}};
    return cfg;
}

}  // namespace

TEST_CASE("dssl view sets: partial order holds and heavy views replay from their parents") {
    Rng rng(17);
    const auto cfg = mixed_heavy();
    for (int i = 0; i < 1000; ++i) {
        const auto img = random_image(rng, i);
        const auto set = build_training_views(img, ViewMode::dssl, cfg, derive_seed(3, 0, static_cast<std::uint64_t>(i), 0));
        REQUIRE_NOTHROW(set.check_invariants());
        CHECK(set.views[2].parent == 0);
        CHECK(set.views[3].parent == 1);
        CHECK(replay_matches(set, 2, cfg.heavy));
        CHECK(replay_matches(set, 3, cfg.heavy));
        CHECK(!replay_matches(set, 0, cfg.heavy));  // standard views have no parent
    }
}

TEST_CASE("replay detects a tampered heavy view") {
    Rng rng(1);
    const auto cfg = mixed_heavy();
    auto set = build_training_views(random_image(rng, 0), ViewMode::dssl, cfg, 99);
    set.views[2].image.pixels[5] += 0.01f;
    CHECK(!replay_matches(set, 2, cfg.heavy));
}

TEST_CASE("view sets are pure in the seed") {
    Rng rng(2);
    const auto img = random_image(rng, 4);
    const ViewConfig cfg;
    const auto a = build_training_views(img, ViewMode::dssl, cfg, 123);
    const auto b = build_training_views(img, ViewMode::dssl, cfg, 123);
    const auto c = build_training_views(img, ViewMode::dssl, cfg, 124);
    for (std::size_t s = 0; s < 4; ++s) CHECK(a.views[s].image.pixels == b.views[s].image.pixels);
    CHECK(a.views[0].image.pixels != c.views[0].image.pixels);
    CHECK((a.edges == b.edges));
}

TEST_CASE("baseline layouts") {
    Rng rng(3);
    const auto img = random_image(rng, 0);
    const ViewConfig cfg;
    {
        const auto s = build_training_views(img, ViewMode::baseline_1pair, cfg, 1);
        CHECK(s.views.size() == 2);
        CHECK((s.edges == std::vector<Edge>{{0, 1, EdgeKind::symmetric}}));
        CHECK_NOTHROW(s.check_invariants());
    }
    {
        const auto s = build_training_views(img, ViewMode::baseline_2pairs, cfg, 1);
        CHECK(s.views.size() == 4);
        CHECK(s.edges.size() == 2);
        for (const auto& v : s.views) CHECK(v.kind == ViewKind::standard);
        CHECK_NOTHROW(s.check_invariants());
    }
    {
        const auto s = build_training_views(img, ViewMode::baseline_joint, cfg, 1);
        CHECK(s.views.size() == 2);
        for (const auto& v : s.views) {
            CHECK(v.kind == ViewKind::heavy);
            CHECK(!v.parent);
            CHECK(v.trace.size() == 2);  // standard, then the heavy policy
        }
        CHECK_NOTHROW(s.check_invariants());
    }
    CHECK(views_per_image(ViewMode::dssl) == 4);
    CHECK(views_per_image(ViewMode::baseline_1pair) == 2);
}

TEST_CASE("edge discipline violations are caught") {
    Rng rng(4);
    const auto good = build_training_views(random_image(rng, 0), ViewMode::dssl, ViewConfig{}, 5);
    auto bad = good;
    bad.views[2].parent.reset();
    CHECK_THROWS_AS(bad.check_invariants(), ShapeError);
    bad = good;
    bad.edges[1] = {2, 1, EdgeKind::directed};  // points at the wrong standard view
    CHECK_THROWS_AS(bad.check_invariants(), ShapeError);
    bad = good;
    bad.edges.push_back({2, 3, EdgeKind::symmetric});
    CHECK_THROWS_AS(bad.check_invariants(), ShapeError);
    bad = good;
    bad.edges.push_back({0, 2, EdgeKind::directed});  // standard -> heavy
    CHECK_THROWS_AS(bad.check_invariants(), ShapeError);
    bad = good;
    bad.views.pop_back();
    CHECK_THROWS_AS(bad.check_invariants(), ShapeError);
}

TEST_CASE("heavy source variants keep the parent edge but change the input") {
    Rng rng(6);
    const auto img = random_image(rng, 0);
    ViewConfig cfg;
    cfg.heavy.mixture = {{augment::HeavyPolicy::jigsaw, 1.0}};
    for (auto src : {HeavySource::raw, HeavySource::independent}) {
        cfg.heavy_source = src;
        const auto set = build_training_views(img, ViewMode::dssl, cfg, 77);
        CHECK_NOTHROW(set.check_invariants());
        CHECK(set.heavy_source == src);
        CHECK(set.views[2].parent == 0);
        // a jigsaw of something other than the parent cannot replay from it
        CHECK(!replay_matches(set, 2, cfg.heavy));
    }
    CHECK(parse_heavy_source("independent") == HeavySource::independent);
    CHECK_THROWS_AS(parse_heavy_source("other"), ConfigError);
}

TEST_CASE("mode names round-trip") {
    for (auto m : {ViewMode::dssl, ViewMode::baseline_2pairs, ViewMode::baseline_joint, ViewMode::baseline_1pair})
        CHECK(parse_view_mode(mode_name(m)) == m);
    CHECK_THROWS_AS(parse_view_mode("triplet"), ConfigError);
}
