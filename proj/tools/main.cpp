#include "dssl/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace dssl;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --set key=value, repeatable
Overrides parse_sets(const std::vector<std::string>& sets) {
    Overrides out;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set", "expected key=value, got '" + s + "'");
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    std::string device;
    bool deterministic = true;
    int workers = -1;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* device_opt = nullptr;
    CLI::Option* det_opt = nullptr;

    void attach(CLI::App* app, bool config_required) {
        auto* c = app->add_option("--config", config, "run config (TOML)");
        if (config_required) c->required();
        c->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override a config key, e.g. --set loss.delta=0.3");
        seed_opt = app->add_option("--seed", seed, "run seed");
        device_opt = app->add_option("--device", device, "cpu (default: $DSSL_DEVICE or the config)");
        det_opt = app->add_option("--deterministic", deterministic, "per-sample seeding (true/false)");
        app->add_option("--workers", workers, "view-building threads (0 = inline)");
    }

    cli::CommonFlags flags() const {
        cli::CommonFlags f;
        f.overrides = parse_sets(sets);
        if (*seed_opt) f.seed = seed;
        if (*device_opt) f.device = device;
        if (*det_opt) f.deterministic = deterministic;
        if (workers >= 0) f.workers = workers;
        return f;
    }
};

void add_eval_options(CLI::App* app, eval::EvalConfig& e) {
    app->add_option("--epochs", e.epochs, "linear head epochs")->capture_default_str();
    app->add_option("--base-lr", e.base_lr, "scaled by batch/256")->capture_default_str();
    app->add_option("--batch-size", e.batch_size)->capture_default_str();
    app->add_option("--k", e.k, "kNN neighbours")->capture_default_str();
    app->add_option("--temperature", e.temperature, "kNN vote temperature")->capture_default_str();
    app->add_option("--eval-seed", e.seed)->capture_default_str();
}

// A run directory or a checkpoint directory.
std::pair<std::string, std::string> resolve_checkpoint(const std::string& path) {
    const fs::path p(path);
    if (fs::exists(p / "checkpoints" / "final" / "manifest.json")) return {path, (p / "checkpoints" / "final").string()};
    if (fs::exists(p / "manifest.json") && fs::exists(p / "config.toml")) return {"", path};
    throw Error("not a run or checkpoint directory: " + path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised pretraining with partially ordered views"};
    app.require_subcommand(1);

    Common pre;
    std::string out_root = "runs";
    bool force = false;
    auto* pretrain = app.add_subcommand("pretrain", "pretrain one run from a config");
    pre.attach(pretrain, true);
    pretrain->add_option("--out", out_root, "root of run directories")->capture_default_str();
    pretrain->add_flag("--force", force, "re-run a completed run id");

    std::string lin_target, lin_out;
    eval::EvalConfig lin_cfg;
    auto* lin = app.add_subcommand("eval-linear", "linear probe on frozen encoder features");
    lin->add_option("target", lin_target, "run directory or checkpoint directory")->required();
    lin->add_option("--out", lin_out, "report path (default: alongside the run)");
    add_eval_options(lin, lin_cfg);

    std::string knn_target, knn_out;
    eval::EvalConfig knn_cfg;
    knn_cfg.mode = eval::EvalMode::knn;
    auto* knn = app.add_subcommand("eval-knn", "kNN classification on frozen encoder features");
    knn->add_option("target", knn_target, "run directory or checkpoint directory")->required();
    knn->add_option("--out", knn_out, "report path (default: alongside the run)");
    add_eval_options(knn, knn_cfg);

    Common abl;
    std::string preset_name, grid_file, abl_out = "runs";
    int parallel = 1;
    bool abl_force = false, no_linear = false;
    eval::EvalConfig abl_eval;
    auto* ablate = app.add_subcommand("ablate", "run a grid of configs");
    abl.attach(ablate, true);
    auto* preset_opt = ablate->add_option("--preset", preset_name, "built-in grid: fig4 | fig5");
    ablate->add_option("--grid", grid_file, "grid file with [[cell]] tables")->excludes(preset_opt);
    ablate->add_option("--parallel", parallel, "cells run concurrently")->capture_default_str();
    ablate->add_option("--out", abl_out, "root of run directories")->capture_default_str();
    ablate->add_flag("--force", abl_force, "re-run completed cells");
    ablate->add_flag("--no-linear", no_linear, "skip the per-cell linear probe");
    ablate->add_option("--linear-epochs", abl_eval.epochs, "linear probe epochs")->capture_default_str();

    std::vector<std::string> report_inputs;
    std::string report_out = "report";
    auto* report = app.add_subcommand("report", "plots and summary tables over runs or grids");
    report->add_option("runs", report_inputs, "run or grid directories")->required();
    report->add_option("--out", report_out, "output directory")->capture_default_str();

    Common dv;
    int count = 8, epoch = 0;
    std::string dv_out = "views";
    auto* dump = app.add_subcommand("dump-views", "render training view sets as a PNG grid");
    dv.attach(dump, true);
    dump->add_option("--count", count, "source images")->capture_default_str();
    dump->add_option("--epoch", epoch, "epoch whose seeds to use")->capture_default_str();
    dump->add_option("--out", dv_out, "output directory")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pretrain) {
            const auto cfg = cli::load_run_config(pre.config, pre.flags());
            const auto s = cli::cmd_pretrain(cfg, out_root, force);
            std::cout << s.run_dir << "\n";
            std::cout << "steps " << s.steps << " final_knn " << s.final_knn << " collapsed "
                      << (s.collapsed ? "yes" : "no") << "\n";
        } else if (*lin || *knn) {
            const bool linear = lin->parsed();
            auto cfg = linear ? lin_cfg : knn_cfg;
            const auto [run_dir, ckpt] = resolve_checkpoint(linear ? lin_target : knn_target);
            eval::EvalReport r;
            if (!run_dir.empty()) {
                r = cli::eval_run(run_dir, cfg);
            } else {
                const auto loaded = eval::load_model(ckpt);
                const auto data = trainer::load_data(loaded.config);
                const auto cache = loaded.config.data.cache_dir.empty() ? data::default_cache_dir()
                                                                        : loaded.config.data.cache_dir;
                r = linear ? eval::linear_eval(ckpt, data, cfg, cache)
                           : eval::knn_eval(ckpt, data.train, data.test, cfg, cache);
            }
            // a bare checkpoint has no run manifest, so its report only goes where asked
            if (const auto& out = linear ? lin_out : knn_out; !out.empty()) eval::write_report(out, r);
            std::cout << eval::report_json(r) << "\n";
        } else if (*ablate) {
            if (preset_name.empty() && grid_file.empty()) throw ConfigError("--preset", "give --preset or --grid");
            const auto grid = preset_name.empty()
                                  ? cli::parse_grid(read_file(grid_file), fs::path(grid_file).stem().string())
                                  : cli::preset(preset_name);
            cli::AblateOptions opts;
            opts.out_root = abl_out;
            opts.parallel = parallel;
            opts.force = abl_force;
            opts.linear = !no_linear;
            opts.eval = abl_eval;
            const auto rows = cli::cmd_ablate(read_file(abl.config), abl.flags(), grid, opts);
            std::cout << cli::ablation_csv(rows);
            const auto failed = std::count_if(rows.begin(), rows.end(), [](auto& r) { return r.status != "ok"; });
            if (failed) {
                std::cerr << failed << " cell(s) failed\n";
                return 3;
            }
        } else if (*report) {
            const auto r = cli::cmd_report(report_inputs, report_out);
            std::cout << r.markdown_path << "\n" << r.csv_path << "\n" << r.knn_plot << "\n";
            if (r.delta_plot) std::cout << *r.delta_plot << "\n";
        } else if (*dump) {
            const auto cfg = cli::load_run_config(dv.config, dv.flags());
            const auto r = cli::dump_views(cfg, count, dv_out, epoch);
            std::cout << r.png << "\n" << r.json << "\n";
        }
    } catch (const cli::RunExistsError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
