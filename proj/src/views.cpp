#include "dssl/views.hpp"

#include <string>

namespace dssl::views {
namespace {

constexpr std::uint64_t standard_stream(int draw) { return 2ULL * static_cast<std::uint64_t>(draw); }
constexpr std::uint64_t heavy_stream(int slot) { return 2ULL * static_cast<std::uint64_t>(slot) + 1ULL; }

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t stream) {
    return mix64(base ^ mix64(stream + 0x5851F42D4C957F2DULL));
}

View standard_view(const ImageSample& image, const augment::StandardAugmentConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    View view;
    view.image = augment::apply_standard(image, cfg, rng);
    view.kind = ViewKind::standard;
    view.trace.push_back({"standard", seed});
    return view;
}

View heavy_view(const ImageSample& input, std::vector<AugmentRecord> inherited,
                const augment::HeavyAugmentConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    auto result = derive_heavy(input, cfg, rng);
    View view;
    view.image = std::move(result.image);
    view.kind = ViewKind::heavy;
    view.trace = std::move(inherited);
    view.trace.push_back({std::string(augment::policy_name(result.policy)), seed});
    return view;
}

}  // namespace

std::string_view mode_name(ViewMode mode) {
    switch (mode) {
        case ViewMode::dssl: return "dssl";
        case ViewMode::baseline_2pairs: return "baseline_2pairs";
        case ViewMode::baseline_joint: return "baseline_joint";
        case ViewMode::baseline_1pair: return "baseline_1pair";
    }
    return "unknown";
}

ViewMode parse_view_mode(std::string_view name) {
    for (auto m : {ViewMode::dssl, ViewMode::baseline_2pairs, ViewMode::baseline_joint, ViewMode::baseline_1pair})
        if (mode_name(m) == name) return m;
    throw ConfigError("views.mode", "unknown view mode '" + std::string(name) +
                                        "' (expected dssl|baseline_2pairs|baseline_joint|baseline_1pair)");
}

std::string_view heavy_source_name(HeavySource source) {
    switch (source) {
        case HeavySource::standard: return "standard";
        case HeavySource::raw: return "raw";
        case HeavySource::independent: return "independent";
    }
    return "unknown";
}

HeavySource parse_heavy_source(std::string_view name) {
    for (auto s : {HeavySource::standard, HeavySource::raw, HeavySource::independent})
        if (heavy_source_name(s) == name) return s;
    throw ConfigError("views.heavy_source",
                      "unknown heavy source '" + std::string(name) + "' (expected standard|raw|independent)");
}

int views_per_image(ViewMode mode) {
    switch (mode) {
        case ViewMode::dssl:
        case ViewMode::baseline_2pairs: return 4;
        case ViewMode::baseline_joint:
        case ViewMode::baseline_1pair: return 2;
    }
    return 0;
}

const ImageSample* ViewSet::v_hat() const {
    return views.size() > 2 && views[2].kind == ViewKind::heavy ? &views[2].image : nullptr;
}

const ImageSample* ViewSet::v_hat_prime() const {
    return views.size() > 3 && views[3].kind == ViewKind::heavy ? &views[3].image : nullptr;
}

void ViewSet::check_invariants() const {
    if (static_cast<int>(views.size()) != views_per_image(mode))
        throw ShapeError("ViewSet: wrong number of views for mode " + std::string(mode_name(mode)));
    for (const auto& e : edges) {
        if (e.src < 0 || e.dst < 0 || e.src >= static_cast<int>(views.size()) ||
            e.dst >= static_cast<int>(views.size()))
            throw ShapeError("ViewSet: edge endpoint out of range");
    }
    if (mode != ViewMode::dssl) return;

    int standard = 0, heavy = 0;
    for (const auto& view : views) (view.kind == ViewKind::standard ? standard : heavy)++;
    if (standard != 2 || heavy != 2) throw ShapeError("ViewSet: dssl mode needs 2 standard and 2 heavy views");

    for (int slot = 0; slot < static_cast<int>(views.size()); ++slot) {
        const auto& view = views[static_cast<std::size_t>(slot)];
        if (view.kind == ViewKind::standard) {
            if (view.parent) throw ShapeError("ViewSet: standard view with a parent");
            continue;
        }
        if (!view.parent) throw ShapeError("ViewSet: heavy view without parent");
        const int parent = *view.parent;
        if (views.at(static_cast<std::size_t>(parent)).kind != ViewKind::standard)
            throw ShapeError("ViewSet: heavy view parent is not a standard view");
        int directed = 0;
        for (const auto& e : edges)
            if (e.kind == EdgeKind::directed && e.src == slot) {
                if (e.dst != parent) throw ShapeError("ViewSet: directed edge does not point at the parent");
                ++directed;
            }
        if (directed != 1) throw ShapeError("ViewSet: heavy view must have exactly one directed edge");
    }
    for (const auto& e : edges) {
        const auto src_kind = views[static_cast<std::size_t>(e.src)].kind;
        const auto dst_kind = views[static_cast<std::size_t>(e.dst)].kind;
        if (e.kind == EdgeKind::symmetric && (src_kind != ViewKind::standard || dst_kind != ViewKind::standard))
            throw ShapeError("ViewSet: symmetric edge touches a heavy view");
        if (e.kind == EdgeKind::directed && (src_kind != ViewKind::heavy || dst_kind != ViewKind::standard))
            throw ShapeError("ViewSet: directed edge must point heavy -> standard");
    }
}

std::pair<ImageSample, ImageSample> make_standard_pair(const ImageSample& image,
                                                       const augment::StandardAugmentConfig& cfg, Rng& rng) {
    Rng first(rng.fork_seed());
    Rng second(rng.fork_seed());
    return {augment::apply_standard(image, cfg, first), augment::apply_standard(image, cfg, second)};
}

augment::HeavyResult derive_heavy(const ImageSample& v, const augment::HeavyAugmentConfig& cfg, Rng& rng) {
    return augment::apply_heavy(v, cfg, rng);
}

ViewSet build_training_views(const ImageSample& image, ViewMode mode, const ViewConfig& cfg,
                             std::uint64_t views_seed) {
    ViewSet set;
    set.source_id = image.id;
    set.mode = mode;
    set.heavy_source = cfg.heavy_source;
    auto std_draw = [&](int draw) { return standard_view(image, cfg.standard, stream_seed(views_seed, standard_stream(draw))); };

    switch (mode) {
        case ViewMode::baseline_1pair:
            set.views = {std_draw(0), std_draw(1)};
            set.edges = {{0, 1, EdgeKind::symmetric}};
            break;
        case ViewMode::baseline_2pairs:
            set.views = {std_draw(0), std_draw(1), std_draw(2), std_draw(3)};
            set.edges = {{0, 1, EdgeKind::symmetric}, {2, 3, EdgeKind::symmetric}};
            break;
        case ViewMode::baseline_joint:
            for (int slot = 0; slot < 2; ++slot) {
                View base = std_draw(slot);
                set.views.push_back(heavy_view(base.image, base.trace, cfg.heavy,
                                               stream_seed(views_seed, heavy_stream(slot))));
            }
            set.edges = {{0, 1, EdgeKind::symmetric}};
            break;
        case ViewMode::dssl: {
            set.views = {std_draw(0), std_draw(1)};
            for (int parent = 0; parent < 2; ++parent) {
                const int slot = parent + 2;
                const auto seed = stream_seed(views_seed, heavy_stream(slot));
                View child;
                switch (cfg.heavy_source) {
                    case HeavySource::standard: {
                        const auto& p = set.views[static_cast<std::size_t>(parent)];
                        child = heavy_view(p.image, p.trace, cfg.heavy, seed);
                        break;
                    }
                    case HeavySource::raw: {
                        const ImageSample raw = pixel::resize(image, cfg.standard.crop_size, cfg.standard.crop_size);
                        child = heavy_view(raw, {}, cfg.heavy, seed);
                        break;
                    }
                    case HeavySource::independent: {
                        View other = std_draw(slot);
                        child = heavy_view(other.image, other.trace, cfg.heavy, seed);
                        break;
                    }
                }
                child.parent = parent;
                set.views.push_back(std::move(child));
            }
            set.edges = {{0, 1, EdgeKind::symmetric}, {2, 0, EdgeKind::directed}, {3, 1, EdgeKind::directed}};
            break;
        }
    }
    for (auto& view : set.views) view.image.id = image.id;
    return set;
}

ViewSet build_training_views(const ImageSample& image, ViewMode mode, const ViewConfig& cfg, Rng& rng) {
    return build_training_views(image, mode, cfg, rng.fork_seed());
}

bool replay_matches(const ViewSet& set, int slot, const augment::HeavyAugmentConfig& cfg) {
    const auto& view = set.views.at(static_cast<std::size_t>(slot));
    if (view.kind != ViewKind::heavy || !view.parent || view.trace.empty()) return false;
    const auto& parent = set.views.at(static_cast<std::size_t>(*view.parent));
    Rng rng(view.trace.back().seed);
    auto replay = derive_heavy(parent.image, cfg, rng);
    return augment::policy_name(replay.policy) == view.trace.back().name && replay.image.pixels == view.image.pixels;
}

}  // namespace dssl::views
