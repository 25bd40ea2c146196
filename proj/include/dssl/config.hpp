#pragma once

#include "dssl/dataset.hpp"
#include "dssl/frameworks.hpp"
#include "dssl/objectives.hpp"
#include "dssl/views.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dssl {

struct DataConfig {
    std::string name = "synthetic-tiny";
    std::string cache_dir;  // empty: $DSSL_CACHE_DIR or ./.dssl_cache
    std::string archive;
    std::string md5 = data::kCifar10Md5;
    std::uint64_t seed = 0;
    int synthetic_train = 1000;
    int synthetic_test = 200;
    int image_size = 32;
    bool class_colour = true;
    int train_limit = 0;
    int test_limit = 0;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

enum class TauSchedule { constant, cosine };

struct OptimConfig {
    double lr = 0.03;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int warmup_epochs = 0;
    double byol_tau = 0.99;
    TauSchedule byol_tau_schedule = TauSchedule::constant;

    friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

struct MonitorConfig {
    int eval_every = 1;  // epochs between kNN / collapse evaluations
    int knn_k = 200;
    double knn_temperature = 0.1;
    double collapse_factor = 0.2;  // threshold = factor / sqrt(d)
    int collapse_patience = 1;
    int checkpoint_every = 0;      // epochs; 0 keeps only the final checkpoint
    int log_every = 1;             // steps between step records

    friend bool operator==(const MonitorConfig&, const MonitorConfig&) = default;
};

struct RunConfig {
    std::string run_id;
    std::uint64_t seed = 0;
    int epochs = 800;
    int batch_size = 512;
    int workers = 1;
    bool deterministic = true;
    std::string device = "cpu";

    DataConfig data{};
    frameworks::ModelConfig model{};
    views::ViewMode mode = views::ViewMode::dssl;
    views::ViewConfig views{};
    std::optional<objectives::LossWeights> weights;  // unset: mode default
    double temperature = 0.5;
    objectives::AsymForm asym_form = objectives::AsymForm::cosine;
    OptimConfig optim{};
    MonitorConfig monitor{};

    /// (1,0,1,0) for dssl, (1,0,0,0) for the baselines, unless set explicitly.
    objectives::LossWeights effective_weights() const;
    objectives::SimilarityObjective similarity() const;
    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

std::string_view tau_schedule_name(TauSchedule s);

/// Parses the sectioned TOML config. Unknown keys and type mismatches raise
/// ConfigError naming the dotted field.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Dotted-key overrides applied on top of a config text, e.g. {"loss.delta", "0.3"}.
/// Values use TOML literal syntax (strings quoted or bare words).
using Overrides = std::vector<std::pair<std::string, std::string>>;
RunConfig parse_config(const std::string& text, const Overrides& overrides);

/// Canonical text: every key written, sorted, with resolved defaults.
std::string serialize_config(const RunConfig& cfg);

/// SHA-256 of the canonical text with run.id and run.workers blanked: the
/// fields that cannot change results.
std::string config_hash(const RunConfig& cfg);

}  // namespace dssl
