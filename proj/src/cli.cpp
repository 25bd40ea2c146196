#include "dssl/cli.hpp"

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <toml.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dssl::cli {
namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << text;
        if (!out) throw Error("cannot write " + p.string());
    }
    fs::rename(tmp, p);
}

bool is_experiment_dir(const fs::path& dir) {
    const auto p = dir / "manifest.json";
    if (!fs::exists(p)) return false;
    try {
        const auto j = json::parse(read_text(p));
        return j.is_object() && j.contains("kind") && j.contains("run_id");
    } catch (const std::exception&) {
        return false;
    }
}

// Files under `dir`, minus its manifest and minus nested experiment
// directories (those list their own files).
std::vector<std::string> list_artifacts(const fs::path& dir) {
    std::vector<std::string> out;
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
        if (it->is_directory()) {
            if (is_experiment_dir(it->path())) it.disable_recursion_pending();
            continue;
        }
        if (!it->is_regular_file()) continue;
        auto rel = fs::relative(it->path(), dir).generic_string();
        if (rel != "manifest.json") out.push_back(rel);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// One TOML value in inline syntax, suitable for an override.
std::string inline_toml(const toml::node& n) {
    if (const auto* t = n.as_table()) {
        std::string s = "{ ";
        bool first = true;
        for (const auto& [k, v] : *t) {
            s += (first ? "" : ", ") + std::string(k.str()) + " = " + inline_toml(v);
            first = false;
        }
        return s + " }";
    }
    if (const auto* a = n.as_array()) {
        std::string s = "[";
        for (std::size_t i = 0; i < a->size(); ++i) s += (i ? ", " : "") + inline_toml((*a)[i]);
        return s + "]";
    }
    std::ostringstream ss;
    n.visit([&](auto&& v) { ss << toml::toml_formatter(v); });
    return ss.str();
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(prec) << v;
    return ss.str();
}

std::string opt_fmt(const std::optional<double>& v, int prec = 4) { return v ? fmt(*v, prec) : ""; }

}  // namespace

// ---------------------------------------------------------------- manifest

std::string manifest_json(const ExperimentManifest& m) {
    json j = {{"kind", m.kind},
              {"run_id", m.run_id},
              {"config_hash", m.config_hash},
              {"git_commit", m.git_commit},
              {"status", m.status},
              {"error", m.error},
              {"artifacts", m.artifacts},
              {"config", m.config_text}};
    return j.dump(2) + "\n";
}

ExperimentManifest parse_manifest(const std::string& text) {
    const auto j = json::parse(text);
    ExperimentManifest m;
    m.kind = j.value("kind", "pretrain");
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.value("config_hash", "");
    m.git_commit = j.value("git_commit", "");
    m.status = j.value("status", "");
    m.error = j.value("error", "");
    m.artifacts = j.value("artifacts", std::vector<std::string>{});
    m.config_text = j.value("config", "");
    return m;
}

void write_manifest(const std::string& dir, const ExperimentManifest& m) {
    const fs::path path = fs::path(dir) / "manifest.json";
    if (auto prev = read_manifest(dir); prev && prev->status == "running") {
        if (prev->run_id != m.run_id || prev->config_hash != m.config_hash || prev->config_text != m.config_text)
            throw Error("manifest identity is immutable once a run starts: " + path.string());
    }
    write_text(path, manifest_json(m));
}

std::optional<ExperimentManifest> read_manifest(const std::string& dir) {
    const fs::path path = fs::path(dir) / "manifest.json";
    if (!fs::exists(path)) return std::nullopt;
    return parse_manifest(read_text(path));
}

std::string git_commit() {
    std::string out;
    if (FILE* p = popen("git rev-parse HEAD 2>/dev/null", "r")) {
        std::array<char, 128> buf{};
        while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
        pclose(p);
    }
    while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
    return out.size() == 40 ? out : "unknown";
}

std::string resolve_run_id(const RunConfig& cfg) {
    if (!cfg.run_id.empty()) return cfg.run_id;
    return std::string(frameworks::framework_name(cfg.model.framework)) + "-" + std::string(views::mode_name(cfg.mode)) +
           "-" + config_hash(cfg).substr(0, 8);
}

// ---------------------------------------------------------------- config

RunConfig apply_flags(const std::string& text, const CommonFlags& flags) {
    auto ov = flags.overrides;
    if (flags.seed) ov.emplace_back("run.seed", std::to_string(*flags.seed));
    std::optional<std::string> device = flags.device;
    if (!device)
        if (const char* env = std::getenv("DSSL_DEVICE"); env && *env) device = env;
    if (device) ov.emplace_back("run.device", "\"" + *device + "\"");
    if (flags.deterministic) ov.emplace_back("run.deterministic", *flags.deterministic ? "true" : "false");
    if (flags.workers) ov.emplace_back("run.workers", std::to_string(*flags.workers));
    auto cfg = parse_config(text, ov);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path, const CommonFlags& flags) {
    if (!fs::exists(path)) throw ConfigError("config", "no such file " + path);
    return apply_flags(read_text(path), flags);
}

// ---------------------------------------------------------------- pretrain

std::string summary_json(const RunSummary& s) {
    json j = {{"run_id", s.run_id},
              {"config_hash", s.config_hash},
              {"manifest", "manifest.json"},
              {"epochs", s.epochs},
              {"steps", s.steps},
              {"final_knn", s.final_knn},
              {"final_feature_std", s.final_feature_std},
              {"collapsed", s.collapsed}};
    j["collapse_epoch"] = s.collapse_epoch ? json(*s.collapse_epoch) : json(nullptr);
    j["linear_acc"] = s.linear_acc ? json(*s.linear_acc) : json(nullptr);
    return j.dump(2) + "\n";
}

RunSummary read_summary(const std::string& run_dir) {
    const auto j = json::parse(read_text(fs::path(run_dir) / "summary.json"));
    RunSummary s;
    s.run_id = j.at("run_id").get<std::string>();
    s.run_dir = run_dir;
    s.config_hash = j.value("config_hash", "");
    s.epochs = j.value("epochs", 0);
    s.steps = j.value("steps", std::int64_t{0});
    s.final_knn = j.value("final_knn", 0.0);
    s.final_feature_std = j.value("final_feature_std", 0.0);
    s.collapsed = j.value("collapsed", false);
    if (j.contains("collapse_epoch") && !j["collapse_epoch"].is_null()) s.collapse_epoch = j["collapse_epoch"].get<int>();
    if (j.contains("linear_acc") && !j["linear_acc"].is_null()) s.linear_acc = j["linear_acc"].get<double>();
    return s;
}

RunSummary cmd_pretrain(const RunConfig& cfg_in, const std::string& out_root, bool force) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    cfg.run_id = resolve_run_id(cfg);
    const fs::path dir = fs::path(out_root) / cfg.run_id;
    if (auto prev = read_manifest(dir.string())) {
        if (prev->status == "completed" && !force)
            throw RunExistsError("run '" + cfg.run_id + "' already completed in " + dir.string() +
                                 " (use --force to re-run)");
    }
    // a stale, failed or forced run starts from an empty directory
    if (fs::exists(dir)) fs::remove_all(dir);
    fs::create_directories(dir);

    ExperimentManifest m;
    m.kind = "pretrain";
    m.run_id = cfg.run_id;
    m.config_text = serialize_config(cfg);
    m.config_hash = config_hash(cfg);
    m.git_commit = git_commit();
    write_manifest(dir.string(), m);
    write_text(dir / "config.toml", m.config_text);

    RunSummary s;
    s.run_id = cfg.run_id;
    s.run_dir = dir.string();
    s.config_hash = m.config_hash;
    s.epochs = cfg.epochs;
    try {
        auto r = trainer::pretrain(cfg, dir.string());
        s.steps = r.steps;
        s.final_knn = r.final_knn;
        s.final_feature_std = r.final_feature_std;
        s.collapsed = r.collapsed;
        s.collapse_epoch = r.collapse_epoch;
        write_text(dir / "summary.json", summary_json(s));
        m.status = "completed";
    } catch (const std::exception& e) {
        m.status = "failed";
        m.error = e.what();
        m.artifacts = list_artifacts(dir);
        write_manifest(dir.string(), m);
        throw;
    }
    m.artifacts = list_artifacts(dir);
    write_manifest(dir.string(), m);
    return s;
}

eval::EvalReport eval_run(const std::string& run_dir, const eval::EvalConfig& ecfg) {
    auto m = read_manifest(run_dir);
    if (!m || m->kind != "pretrain" || m->status != "completed") throw Error("run is not completed: " + run_dir);
    const auto cfg = parse_config(m->config_text);
    const auto data = trainer::load_data(cfg);
    const auto cache = cfg.data.cache_dir.empty() ? data::default_cache_dir() : cfg.data.cache_dir;
    const auto ckpt = (fs::path(run_dir) / "checkpoints" / "final").string();
    const bool linear = ecfg.mode == eval::EvalMode::linear;
    auto report = linear ? eval::linear_eval(ckpt, data, ecfg, cache)
                         : eval::knn_eval(ckpt, data.train, data.test, ecfg, cache);
    eval::write_report((fs::path(run_dir) / ("eval_" + std::string(eval::eval_mode_name(ecfg.mode)) + ".json")).string(),
                       report);
    if (linear) {
        auto s = read_summary(run_dir);
        s.linear_acc = report.accuracy;
        write_text(fs::path(run_dir) / "summary.json", summary_json(s));
    }
    m->artifacts = list_artifacts(run_dir);
    write_manifest(run_dir, *m);
    return report;
}

// ---------------------------------------------------------------- ablate

GridSpec fig4_preset() {
    // Standard views for this grid are resized crops with colour distortion only.
    const Overrides common = {{"views.hflip_prob", "0.0"},
                              {"views.blur_prob", "0.0"},
                              {"heavy.mixture", "{ randaugment = 1.0 }"},
                              {"heavy.ra_num_ops", "2"},
                              {"heavy.ra_magnitude", "5"}};
    auto cell = [&](std::string tag, std::string mode, std::array<double, 4> w, std::string source) {
        GridCell c{std::move(tag), common};
        c.overrides.emplace_back("views.mode", "\"" + mode + "\"");
        c.overrides.emplace_back("views.heavy_source", "\"" + source + "\"");
        const char* keys[] = {"loss.alpha", "loss.beta", "loss.gamma", "loss.delta"};
        for (int i = 0; i < 4; ++i) c.overrides.emplace_back(keys[i], fmt(w[static_cast<std::size_t>(i)], 1));
        return c;
    };
    GridSpec g{"fig4", {}};
    g.cells.push_back(cell("a", "baseline_1pair", {1, 0, 0, 0}, "standard"));
    g.cells.push_back(cell("b", "baseline_2pairs", {1, 0, 0, 0}, "standard"));
    g.cells.push_back(cell("c", "dssl", {0, 1, 0, 0}, "standard"));
    g.cells.push_back(cell("d", "dssl", {1, 0, 1, 1}, "standard"));
    g.cells.push_back(cell("e", "dssl", {1, 1, 1, 1}, "standard"));
    g.cells.push_back(cell("f", "dssl", {1, 1, 0, 0}, "standard"));
    g.cells.push_back(cell("g", "dssl", {1, 0, 1, 0}, "raw"));
    g.cells.push_back(cell("h", "dssl", {1, 0, 0, 1}, "standard"));
    g.cells.push_back(cell("i", "dssl", {1, 0, 1, 0}, "independent"));
    g.cells.push_back(cell("j", "dssl", {1, 0, 1, 0}, "standard"));
    return g;
}

GridSpec fig5_preset() {
    GridSpec g{"fig5", {}};
    for (int i = 0; i <= 10; ++i) {
        const double delta = i / 10.0;
        g.cells.push_back({"delta=" + fmt(delta, 1),
                           {{"views.mode", "\"dssl\""},
                            {"loss.alpha", "1.0"},
                            {"loss.beta", "0.0"},
                            {"loss.gamma", fmt(1.0 - delta, 1)},
                            {"loss.delta", fmt(delta, 1)}}});
    }
    return g;
}

GridSpec preset(const std::string& name) {
    if (name == "fig4") return fig4_preset();
    if (name == "fig5") return fig5_preset();
    throw ConfigError("preset", "unknown preset '" + name + "' (expected fig4|fig5)");
}

// Bare dotted keys arrive as nested tables; emit one override per leaf.
static void flatten_into(Overrides& out, const std::string& prefix, const toml::node& v) {
    if (const auto* t = v.as_table()) {
        for (const auto& [k, child] : *t) flatten_into(out, prefix + "." + std::string(k.str()), child);
        return;
    }
    out.emplace_back(prefix, inline_toml(v));
}

GridSpec parse_grid(const std::string& text, const std::string& name) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        throw ConfigError("grid", std::string(e.description()));
    }
    const auto* cells = root["cell"].as_array();
    if (!cells || cells->empty()) throw ConfigError("grid.cell", "expected at least one [[cell]]");
    GridSpec g{name, {}};
    std::set<std::string> tags;
    for (std::size_t i = 0; i < cells->size(); ++i) {
        const auto* t = (*cells)[i].as_table();
        const std::string where = "grid.cell[" + std::to_string(i) + "]";
        if (!t) throw ConfigError(where, "expected a table");
        GridCell c;
        for (const auto& [k, v] : *t) {
            const std::string key(k.str());
            if (key == "tag") {
                if (!v.is_string()) throw ConfigError(where + ".tag", "expected a string");
                c.tag = v.as_string()->get();
                continue;
            }
            flatten_into(c.overrides, key, v);
        }
        if (c.tag.empty()) c.tag = std::to_string(i);
        if (!tags.insert(c.tag).second) throw ConfigError(where + ".tag", "duplicate tag '" + c.tag + "'");
        g.cells.push_back(std::move(c));
    }
    return g;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "tag,run_id,status,framework,mode,alpha,beta,gamma,delta,heavy_source,steps,final_knn,linear_acc,"
           "feature_std,collapsed,collapse_epoch,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), '"', '\'');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << r.tag << "," << r.run_id << "," << r.status << "," << r.framework << "," << r.mode << ","
            << r.weights.alpha << "," << r.weights.beta << "," << r.weights.gamma << "," << r.weights.delta << ","
            << r.heavy_source << "," << r.steps << "," << opt_fmt(r.final_knn) << "," << opt_fmt(r.linear_acc) << ","
            << opt_fmt(r.feature_std, 6) << "," << (r.collapsed ? 1 : 0) << ","
            << (r.collapse_epoch ? std::to_string(*r.collapse_epoch) : "") << ",\"" << err << "\"\n";
    }
    return out.str();
}

std::vector<AblationRow> cmd_ablate(const std::string& base_text, const CommonFlags& flags, const GridSpec& grid,
                                    const AblateOptions& opts) {
    if (grid.cells.empty()) throw ConfigError("grid", "no cells");
    if (opts.parallel < 1) throw ConfigError("parallel", "must be >= 1");
    const fs::path grid_dir = fs::path(opts.out_root) / grid.name;
    fs::create_directories(grid_dir);

    ExperimentManifest m;
    m.kind = "ablate";
    m.run_id = grid.name;
    {
        std::ostringstream text;
        text << base_text << "\n# grid " << grid.name << "\n";
        for (const auto& c : grid.cells) {
            text << "# " << c.tag << ":";
            for (const auto& [k, v] : c.overrides) text << " " << k << "=" << v;
            text << "\n";
        }
        m.config_text = text.str();
    }
    m.config_hash = sha256_hex(std::string_view(m.config_text));
    m.git_commit = git_commit();
    if (auto prev = read_manifest(grid_dir.string()); prev && prev->config_hash != m.config_hash) {
        fs::remove(grid_dir / "manifest.json");  // a different grid is reusing the directory
    }
    write_manifest(grid_dir.string(), m);

    auto linear_cfg = opts.eval;
    linear_cfg.mode = eval::EvalMode::linear;
    std::vector<AblationRow> rows(grid.cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mu;
    auto run_cell = [&](std::size_t i) {
        const auto& cell = grid.cells[i];
        AblationRow& row = rows[i];
        row.tag = cell.tag;
        row.run_id = grid.name + "-" + cell.tag;
        try {
            CommonFlags f = flags;
            f.overrides.insert(f.overrides.end(), cell.overrides.begin(), cell.overrides.end());
            f.overrides.emplace_back("run.id", "\"" + row.run_id + "\"");
            const auto cfg = apply_flags(base_text, f);
            row.mode = std::string(views::mode_name(cfg.mode));
            row.framework = std::string(frameworks::framework_name(cfg.model.framework));
            row.weights = cfg.effective_weights();
            row.heavy_source = std::string(views::heavy_source_name(cfg.views.heavy_source));
            {
                std::lock_guard lock(log_mu);
                std::cerr << "[ablate " << grid.name << "] cell " << cell.tag << " (" << i + 1 << "/"
                          << grid.cells.size() << ")\n";
            }
            auto s = cmd_pretrain(cfg, grid_dir.string(), opts.force);
            row.run_dir = s.run_dir;
            row.steps = s.steps;
            row.final_knn = s.final_knn;
            row.feature_std = s.final_feature_std;
            row.collapsed = s.collapsed;
            row.collapse_epoch = s.collapse_epoch;
            if (opts.linear) row.linear_acc = eval_run(s.run_dir, linear_cfg).accuracy;
            row.status = "ok";
        } catch (const RunExistsError&) {
            // completed earlier: reuse its results
            row.run_dir = (grid_dir / row.run_id).string();
            try {
                const auto s = read_summary(row.run_dir);
                row.steps = s.steps;
                row.final_knn = s.final_knn;
                row.feature_std = s.final_feature_std;
                row.collapsed = s.collapsed;
                row.collapse_epoch = s.collapse_epoch;
                row.linear_acc = s.linear_acc;
                if (opts.linear && !row.linear_acc) row.linear_acc = eval_run(row.run_dir, linear_cfg).accuracy;
                row.status = "ok";
            } catch (const std::exception& e) {
                row.status = "error";
                row.error = e.what();
            }
        } catch (const std::exception& e) {
            row.status = "error";
            row.error = e.what();
            std::lock_guard lock(log_mu);
            std::cerr << "[ablate " << grid.name << "] cell " << cell.tag << " failed: " << e.what() << "\n";
        }
    };
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < grid.cells.size();) run_cell(i);
    };
    if (opts.parallel == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < std::min<int>(opts.parallel, static_cast<int>(grid.cells.size())); ++t)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    write_text(grid_dir / "ablation.csv", ablation_csv(rows));
    m.status = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.status == "ok"; }) ? "completed"
                                                                                                    : "failed";
    m.artifacts = list_artifacts(grid_dir);
    write_manifest(grid_dir.string(), m);
    return rows;
}

// ---------------------------------------------------------------- report

ReportRun load_report_run(const std::string& run_dir) {
    ReportRun r;
    r.dir = run_dir;
    auto m = read_manifest(run_dir);
    if (!m || m->kind != "pretrain") throw Error("not a run directory: " + run_dir);
    r.run_id = m->run_id;
    r.config = parse_config(m->config_text);
    r.summary = read_summary(run_dir);
    for (auto& rec : trainer::read_metrics_jsonl((fs::path(run_dir) / "metrics.jsonl").string()))
        if (rec.kind == "epoch") r.epochs.push_back(std::move(rec));
    return r;
}

std::vector<std::string> expand_run_dirs(const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const auto& in : inputs) {
        auto m = read_manifest(in);
        if (m && m->kind == "ablate") {
            std::vector<std::string> cells;
            for (const auto& e : fs::directory_iterator(in))
                if (e.is_directory())
                    if (auto cm = read_manifest(e.path().string()); cm && cm->kind == "pretrain" && cm->status == "completed")
                        cells.push_back(e.path().string());
            std::sort(cells.begin(), cells.end());
            out.insert(out.end(), cells.begin(), cells.end());
        } else {
            out.push_back(in);
        }
    }
    return out;
}

bool is_delta_sweep(const std::vector<ReportRun>& runs) {
    if (runs.size() < 2) return false;
    std::set<double> deltas;
    for (const auto& r : runs) {
        const auto w = r.config.effective_weights();
        if (r.config.mode != views::ViewMode::dssl || w.alpha != 1.0 || w.beta != 0.0 ||
            std::abs(w.gamma + w.delta - 1.0) > 1e-9)
            return false;
        deltas.insert(w.delta);
    }
    return deltas.size() >= 2;
}

namespace {

const std::array<cv::Scalar, 8> kPalette = {cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255),
                                            cv::Scalar(44, 160, 44),  cv::Scalar(40, 39, 214),
                                            cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140),
                                            cv::Scalar(194, 119, 227), cv::Scalar(127, 127, 127)};

struct Axes {
    cv::Mat img;
    cv::Rect area;
    double x0, x1, y0, y1;

    cv::Point map(double x, double y) const {
        const double fx = x1 > x0 ? (x - x0) / (x1 - x0) : 0.5;
        const double fy = y1 > y0 ? (y - y0) / (y1 - y0) : 0.5;
        return {area.x + static_cast<int>(std::lround(fx * area.width)),
                area.y + area.height - static_cast<int>(std::lround(fy * area.height))};
    }
};

Axes make_axes(double x0, double x1, double y0, double y1, const std::string& title, const std::string& xlabel,
               const std::string& ylabel, int legend_rows) {
    const int w = 800, h = 520 + 22 * legend_rows;
    Axes a{cv::Mat(h, w, CV_8UC3, cv::Scalar(255, 255, 255)), cv::Rect(80, 50, 680, 400), x0, x1, y0, y1};
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    cv::putText(a.img, title, {80, 30}, font, 0.6, {0, 0, 0}, 1, cv::LINE_AA);
    for (int i = 0; i <= 5; ++i) {
        const double yv = y0 + (y1 - y0) * i / 5.0;
        const auto p = a.map(x0, yv);
        cv::line(a.img, p, {a.area.x + a.area.width, p.y}, {225, 225, 225}, 1);
        cv::putText(a.img, fmt(yv, 2), {p.x - 55, p.y + 5}, font, 0.45, {60, 60, 60}, 1, cv::LINE_AA);
        const double xv = x0 + (x1 - x0) * i / 5.0;
        const auto q = a.map(xv, y0);
        cv::putText(a.img, fmt(xv, x1 - x0 > 5 ? 0 : 1), {q.x - 12, q.y + 20}, font, 0.45, {60, 60, 60}, 1,
                    cv::LINE_AA);
    }
    cv::rectangle(a.img, a.area, {0, 0, 0}, 1);
    cv::putText(a.img, xlabel, {a.area.x + a.area.width / 2 - 30, a.area.y + a.area.height + 45}, font, 0.5,
                {0, 0, 0}, 1, cv::LINE_AA);
    cv::putText(a.img, ylabel, {10, a.area.y - 12}, font, 0.5, {0, 0, 0}, 1, cv::LINE_AA);
    return a;
}

void write_png(const fs::path& p, const cv::Mat& img) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    if (!cv::imwrite(p.string(), img)) throw Error("cannot write " + p.string());
}

std::string weights_label(const objectives::LossWeights& w) {
    return "(" + fmt(w.alpha, 1) + "," + fmt(w.beta, 1) + "," + fmt(w.gamma, 1) + "," + fmt(w.delta, 1) + ")";
}

}  // namespace

ReportResult cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
    const auto dirs = expand_run_dirs(inputs);
    if (dirs.empty()) throw Error("report: no run directories given");
    std::vector<ReportRun> runs;
    for (const auto& d : dirs) runs.push_back(load_report_run(d));
    fs::create_directories(out_dir);
    ReportResult res;
    const auto font = cv::FONT_HERSHEY_SIMPLEX;

    // kNN accuracy against epoch, one curve per run
    int max_epoch = 1;
    for (const auto& r : runs)
        for (const auto& e : r.epochs) max_epoch = std::max(max_epoch, e.epoch + 1);
    auto ax = make_axes(0, max_epoch, 0, 1, "kNN accuracy during pretraining", "epoch", "kNN acc",
                        static_cast<int>(runs.size()));
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto colour = kPalette[i % kPalette.size()];
        std::vector<cv::Point> pts;
        for (const auto& e : runs[i].epochs)
            if (e.knn_acc) pts.push_back(ax.map(e.epoch + 1, *e.knn_acc));
        if (pts.size() > 1) cv::polylines(ax.img, pts, false, colour, 2, cv::LINE_AA);
        for (const auto& p : pts) cv::circle(ax.img, p, 3, colour, cv::FILLED, cv::LINE_AA);
        std::string label = runs[i].run_id;
        if (runs[i].summary.collapsed) {
            label += " (collapse)";
            const int ce = runs[i].summary.collapse_epoch.value_or(runs[i].summary.epochs - 1);
            for (const auto& e : runs[i].epochs)
                if (e.epoch == ce && e.knn_acc) {
                    const auto p = ax.map(e.epoch + 1, *e.knn_acc);
                    cv::drawMarker(ax.img, p, colour, cv::MARKER_TILTED_CROSS, 14, 2);
                    cv::putText(ax.img, "collapse", {p.x + 6, p.y - 8}, font, 0.45, colour, 1, cv::LINE_AA);
                }
        }
        const int ly = ax.area.y + ax.area.height + 70 + 22 * static_cast<int>(i);
        cv::line(ax.img, {90, ly - 5}, {120, ly - 5}, colour, 3);
        cv::putText(ax.img, label, {130, ly}, font, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
    }
    res.knn_plot = (fs::path(out_dir) / "knn_vs_epoch.png").string();
    write_png(res.knn_plot, ax.img);

    const bool have_linear =
        std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.summary.linear_acc.has_value(); });
    auto accuracy = [&](const ReportRun& r) { return have_linear ? *r.summary.linear_acc : r.summary.final_knn; };
    const std::string acc_name = have_linear ? "linear acc" : "final kNN acc";

    if (is_delta_sweep(runs)) {
        std::vector<const ReportRun*> sorted;
        for (const auto& r : runs) sorted.push_back(&r);
        std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) {
            return a->config.effective_weights().delta < b->config.effective_weights().delta;
        });
        auto dx = make_axes(0, 1, 0, 1, "accuracy against delta (gamma = 1 - delta)", "delta", acc_name, 0);
        std::vector<cv::Point> pts;
        for (auto* r : sorted) pts.push_back(dx.map(r->config.effective_weights().delta, accuracy(*r)));
        cv::polylines(dx.img, pts, false, kPalette[0], 2, cv::LINE_AA);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            cv::circle(dx.img, pts[i], 4, kPalette[0], cv::FILLED, cv::LINE_AA);
            if (sorted[i]->summary.collapsed)
                cv::putText(dx.img, "collapse", {pts[i].x + 5, pts[i].y - 8}, font, 0.45, kPalette[3], 1,
                            cv::LINE_AA);
        }
        res.delta_plot = (fs::path(out_dir) / "delta_vs_accuracy.png").string();
        write_png(*res.delta_plot, dx.img);
    }

    // summary tables; collapsed runs are italicised and flagged
    std::ostringstream md, csv;
    md << "# Run report\n\n";
    md << "| run | framework | views | heavy source | weights (a,b,g,d) | epochs | steps | final kNN | linear | "
          "feature std | status |\n";
    md << "|---|---|---|---|---|---|---|---|---|---|---|\n";
    csv << "run_id,framework,mode,heavy_source,alpha,beta,gamma,delta,epochs,steps,final_knn,linear_acc,feature_std,"
           "collapsed,collapse_epoch,run_dir\n";
    for (const auto& r : runs) {
        const auto w = r.config.effective_weights();
        const auto& s = r.summary;
        auto cell = [&](const std::string& v) { return s.collapsed && !v.empty() ? "*" + v + "*" : v; };
        md << "| " << r.run_id << " | " << frameworks::framework_name(r.config.model.framework) << " | "
           << views::mode_name(r.config.mode) << " | " << views::heavy_source_name(r.config.views.heavy_source)
           << " | " << weights_label(w) << " | " << s.epochs << " | " << s.steps << " | "
           << cell(fmt(s.final_knn * 100, 2)) << " | " << cell(s.linear_acc ? fmt(*s.linear_acc * 100, 2) : "")
           << " | " << fmt(s.final_feature_std, 4) << " | "
           << (s.collapsed ? "collapse (epoch " + std::to_string(s.collapse_epoch.value_or(-1) + 1) + ")" : "ok")
           << " |\n";
        csv << r.run_id << "," << frameworks::framework_name(r.config.model.framework) << ","
            << views::mode_name(r.config.mode) << "," << views::heavy_source_name(r.config.views.heavy_source) << ","
            << w.alpha << "," << w.beta << "," << w.gamma << "," << w.delta << "," << s.epochs << "," << s.steps
            << "," << fmt(s.final_knn) << "," << opt_fmt(s.linear_acc) << "," << fmt(s.final_feature_std, 6) << ","
            << (s.collapsed ? 1 : 0) << "," << (s.collapse_epoch ? std::to_string(*s.collapse_epoch) : "") << ","
            << r.dir << "\n";
    }
    md << "\nAccuracies in percent. Italic entries belong to runs whose collapse monitor fired.\n\n";
    md << "![kNN accuracy](knn_vs_epoch.png)\n";
    if (res.delta_plot) md << "\n![accuracy against delta](delta_vs_accuracy.png)\n";
    res.markdown_path = (fs::path(out_dir) / "report.md").string();
    res.csv_path = (fs::path(out_dir) / "summary.csv").string();
    write_text(res.markdown_path, md.str());
    write_text(res.csv_path, csv.str());

    ExperimentManifest m;
    m.kind = "report";
    m.run_id = "report";
    std::string inputs_text;
    for (const auto& d : dirs) inputs_text += d + "\n";
    m.config_text = inputs_text;
    m.config_hash = sha256_hex(std::string_view(inputs_text));
    m.git_commit = git_commit();
    m.status = "completed";
    m.artifacts = list_artifacts(out_dir);
    if (fs::exists(fs::path(out_dir) / "manifest.json")) fs::remove(fs::path(out_dir) / "manifest.json");
    write_manifest(out_dir, m);
    return res;
}

// ---------------------------------------------------------------- dump-views

DumpResult dump_views(const RunConfig& cfg, int count, const std::string& out_dir, int epoch) {
    if (count < 1) throw ConfigError("count", "must be >= 1");
    const auto data = trainer::load_data(cfg);
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(count), data.train.size());
    constexpr int kScale = 4, kPad = 6, kCaption = 16;
    const int tile = data.train.images.front().height * kScale;
    const int cols = 1 + views::views_per_image(cfg.mode);
    cv::Mat grid(static_cast<int>(n) * (tile + kPad + kCaption) + kPad, cols * (tile + kPad) + kPad, CV_8UC3,
                 cv::Scalar(255, 255, 255));

    auto blit = [&](const ImageSample& img, int row, int col, const std::string& caption) {
        cv::Mat m(img.height, img.width, CV_8UC3);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < 3; ++c)  // RGB planes -> BGR
                    m.at<cv::Vec3b>(y, x)[2 - c] =
                        static_cast<std::uint8_t>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
        cv::Mat big;
        cv::resize(m, big, {tile, tile}, 0, 0, cv::INTER_NEAREST);
        const int top = kPad + row * (tile + kPad + kCaption), left = kPad + col * (tile + kPad);
        big.copyTo(grid(cv::Rect(left, top, tile, tile)));
        cv::putText(grid, caption, {left, top + tile + 12}, cv::FONT_HERSHEY_SIMPLEX, 0.38, {0, 0, 0}, 1,
                    cv::LINE_AA);
    };

    json rows = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& img = data.train.images[i];
        const auto seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(img.id), 0);
        const auto set = views::build_training_views(img, cfg.mode, cfg.views, seed);
        blit(img, static_cast<int>(i), 0, "source " + std::to_string(img.id));
        json vj = json::array();
        for (std::size_t s = 0; s < set.views.size(); ++s) {
            const auto& v = set.views[s];
            const bool heavy = v.kind == views::ViewKind::heavy;
            std::string caption = "slot " + std::to_string(s) + (heavy ? " heavy" : " std");
            if (heavy && !v.trace.empty()) caption += " " + v.trace.back().name;
            blit(v.image, static_cast<int>(i), static_cast<int>(s) + 1, caption);
            json trace = json::array();
            for (const auto& t : v.trace) trace.push_back({{"name", t.name}, {"seed", t.seed}});
            vj.push_back({{"slot", s},
                          {"kind", heavy ? "heavy" : "standard"},
                          {"parent", v.parent ? json(*v.parent) : json(nullptr)},
                          {"trace", trace}});
        }
        json ej = json::array();
        for (const auto& e : set.edges)
            ej.push_back({{"src", e.src}, {"dst", e.dst},
                          {"kind", e.kind == views::EdgeKind::symmetric ? "symmetric" : "directed"}});
        rows.push_back({{"row", i},
                        {"source_id", img.id},
                        {"label", data.train.labels[i]},
                        {"views_seed", seed},
                        {"views", vj},
                        {"edges", ej}});
    }
    DumpResult out;
    out.png = (fs::path(out_dir) / "views.png").string();
    out.json = (fs::path(out_dir) / "views.json").string();
    write_png(out.png, grid);
    json side = {{"image", "views.png"},
                 {"config_hash", config_hash(cfg)},
                 {"mode", views::mode_name(cfg.mode)},
                 {"heavy_source", views::heavy_source_name(cfg.views.heavy_source)},
                 {"dataset", data.train.name},
                 {"seed", cfg.seed},
                 {"epoch", epoch},
                 {"rows", rows}};
    write_text(out.json, side.dump(2) + "\n");
    return out;
}

}  // namespace dssl::cli
