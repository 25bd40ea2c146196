#pragma once

#include "dssl/augment.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

/// Partially-ordered view sets: symmetric standard pairs plus heavy children
/// derived from (and pointing back to) their standard parents.
namespace dssl::views {

enum class ViewMode { dssl, baseline_2pairs, baseline_joint, baseline_1pair };
std::string_view mode_name(ViewMode mode);
ViewMode parse_view_mode(std::string_view name);

/// Input of a heavy child. `standard` is t̂(t(I)); `raw` is t̂(I); `independent`
/// is t̂ applied to a fresh standard draw that is not the loss target.
enum class HeavySource { standard, raw, independent };
std::string_view heavy_source_name(HeavySource source);
HeavySource parse_heavy_source(std::string_view name);

enum class ViewKind { standard, heavy };
enum class EdgeKind { symmetric, directed };

/// For directed edges `src` is the heavy view and `dst` its prediction target.
struct Edge {
    int src = 0;
    int dst = 0;
    EdgeKind kind = EdgeKind::symmetric;
    friend bool operator==(const Edge&, const Edge&) = default;
};

struct AugmentRecord {
    std::string name;  // "standard" or the heavy policy that fired
    std::uint64_t seed = 0;
};

struct View {
    ImageSample image;
    ViewKind kind = ViewKind::standard;
    std::optional<int> parent;  // heavy views only
    std::vector<AugmentRecord> trace;
};

/// Slot convention: 0 = v, 1 = v', 2 = v̂ (child of 0), 3 = v̂' (child of 1).
/// Baseline modes fill slots with standard (or jointly augmented) views.
struct ViewSet {
    std::vector<View> views;
    std::vector<Edge> edges;
    std::int64_t source_id = -1;
    ViewMode mode = ViewMode::dssl;
    HeavySource heavy_source = HeavySource::standard;

    const ImageSample& v() const { return views.at(0).image; }
    const ImageSample& v_prime() const { return views.at(1).image; }
    const ImageSample* v_hat() const;
    const ImageSample* v_hat_prime() const;

    /// Throws ShapeError when the slot layout or edge discipline is broken.
    void check_invariants() const;
};

struct ViewConfig {
    augment::StandardAugmentConfig standard{};
    augment::HeavyAugmentConfig heavy{};
    HeavySource heavy_source = HeavySource::standard;

    friend bool operator==(const ViewConfig&, const ViewConfig&) = default;
};

/// Number of image slots a mode produces per source image.
int views_per_image(ViewMode mode);

std::pair<ImageSample, ImageSample> make_standard_pair(const ImageSample& image,
                                                       const augment::StandardAugmentConfig& cfg, Rng& rng);

/// v̂ = t̂(v); `v` must already be a standard view.
augment::HeavyResult derive_heavy(const ImageSample& v, const augment::HeavyAugmentConfig& cfg, Rng& rng);

/// All per-slot streams are derived from `views_seed`, so a ViewSet is a pure
/// function of (image, mode, cfg, views_seed).
ViewSet build_training_views(const ImageSample& image, ViewMode mode, const ViewConfig& cfg,
                             std::uint64_t views_seed);
ViewSet build_training_views(const ImageSample& image, ViewMode mode, const ViewConfig& cfg, Rng& rng);

/// Re-applies the recorded heavy op of `slot` to its parent's pixels and
/// compares bit-exactly. Only meaningful for HeavySource::standard.
bool replay_matches(const ViewSet& set, int slot, const augment::HeavyAugmentConfig& cfg);

}  // namespace dssl::views
