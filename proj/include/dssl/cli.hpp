#pragma once

#include "dssl/config.hpp"
#include "dssl/eval.hpp"
#include "dssl/trainer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dssl::cli {

/// A completed run id was requested again without --force.
class RunExistsError : public Error {
public:
    using Error::Error;
};

/// manifest.json at the root of every run, grid and report directory.
/// Identity fields are fixed when the run starts; only status and the
/// artifact list change afterwards.
struct ExperimentManifest {
    std::string kind = "pretrain";  // pretrain | ablate | report
    std::string run_id;
    std::string config_text;
    std::string config_hash;
    std::string git_commit;          // "unknown" outside a checkout
    std::string status = "running";  // running | completed | failed
    std::string error;
    std::vector<std::string> artifacts;  // relative to the manifest's directory
};

std::string manifest_json(const ExperimentManifest& m);
ExperimentManifest parse_manifest(const std::string& json_text);
void write_manifest(const std::string& dir, const ExperimentManifest& m);
std::optional<ExperimentManifest> read_manifest(const std::string& dir);

/// Best-effort `git rev-parse HEAD` of the working directory.
std::string git_commit();

/// run.id if set, else <framework>-<mode>-<first 8 of config hash>.
std::string resolve_run_id(const RunConfig& cfg);

/// Command-line flags layered on top of a config file.
struct CommonFlags {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> device;  // falls back to $DSSL_DEVICE
    std::optional<bool> deterministic;
    std::optional<int> workers;
    Overrides overrides;
};

/// Reads and validates a config; `--set` overrides, then flags, win.
RunConfig load_run_config(const std::string& path, const CommonFlags& flags);
RunConfig apply_flags(const std::string& text, const CommonFlags& flags);

struct RunSummary {
    std::string run_id;
    std::string run_dir;
    std::string config_hash;
    std::int64_t steps = 0;
    double final_knn = 0.0;
    double final_feature_std = 0.0;
    bool collapsed = false;
    std::optional<int> collapse_epoch;
    std::optional<double> linear_acc;
    int epochs = 0;
};

std::string summary_json(const RunSummary& s);
RunSummary read_summary(const std::string& run_dir);

/// `<out_root>/<run id>`: manifest.json, config.toml, metrics.{jsonl,csv},
/// checkpoints/final, summary.json. Refuses a completed run id unless `force`.
RunSummary cmd_pretrain(const RunConfig& cfg, const std::string& out_root, bool force = false);

/// Evaluates a finished run's final checkpoint (cfg.mode picks linear or kNN),
/// writes eval_<mode>.json into the run directory and lists it in the manifest.
/// A linear accuracy is also folded into summary.json.
eval::EvalReport eval_run(const std::string& run_dir, const eval::EvalConfig& cfg);

struct GridCell {
    std::string tag;
    Overrides overrides;
};

struct GridSpec {
    std::string name;
    std::vector<GridCell> cells;
};

/// fig4: paradigms a-j over crop + colour standard views and RA(2,5) heavy views.
GridSpec fig4_preset();
/// fig5: δ ∈ {0, 0.1, ..., 1} with α = 1, β = 0, γ = 1 - δ.
GridSpec fig5_preset();
GridSpec preset(const std::string& name);
/// `[[cell]]` tables with a `tag` and dotted override keys, e.g. `"loss.delta" = 0.3`.
GridSpec parse_grid(const std::string& toml_text, const std::string& name);

struct AblateOptions {
    std::string out_root = "runs";
    int parallel = 1;
    bool force = false;
    bool linear = true;
    eval::EvalConfig eval{};
};

struct AblationRow {
    std::string tag;
    std::string run_id;
    std::string run_dir;
    std::string status;  // ok | error
    std::string error;
    std::string mode;
    std::string framework;
    objectives::LossWeights weights{};
    std::string heavy_source;
    std::int64_t steps = 0;
    std::optional<double> final_knn;
    std::optional<double> linear_acc;
    std::optional<double> feature_std;
    bool collapsed = false;
    std::optional<int> collapse_epoch;
};

/// Runs every cell; a failing cell becomes an error row and the grid goes on.
/// Writes <out_root>/<grid>/ablation.csv and its manifest.
std::vector<AblationRow> cmd_ablate(const std::string& base_text, const CommonFlags& flags, const GridSpec& grid,
                                    const AblateOptions& opts);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct ReportRun {
    std::string run_id;
    std::string dir;
    RunConfig config;
    RunSummary summary;
    std::vector<trainer::MetricsRecord> epochs;  // epoch records only
};

struct ReportResult {
    std::string markdown_path;
    std::string csv_path;
    std::string knn_plot;
    std::optional<std::string> delta_plot;  // only when the runs form a δ sweep
};

ReportRun load_report_run(const std::string& run_dir);
/// Expands grid directories (with ablation.csv) into their cell runs.
std::vector<std::string> expand_run_dirs(const std::vector<std::string>& inputs);
/// True when every run is dssl with α = 1, β = 0, γ + δ = 1 and δ takes ≥ 2 values.
bool is_delta_sweep(const std::vector<ReportRun>& runs);
ReportResult cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

/// Grid PNG of `count` training ViewSets (one row per image) plus a JSON
/// sidecar with each view's parent and augmentation trace.
struct DumpResult {
    std::string png;
    std::string json;
};
DumpResult dump_views(const RunConfig& cfg, int count, const std::string& out_dir, int epoch = 0);

}  // namespace dssl::cli
