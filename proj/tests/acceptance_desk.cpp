// Desk-scale trend checks (criteria 8-11). Runs are cached under the
// acceptance directory and reused by later invocations; delete it to retrain.
#include "dssl/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace dssl;

namespace {

constexpr double kChance = 0.10;
constexpr double kChanceMargin = 0.05;  // "within 5 points of chance"
constexpr double kStabilityMargin = 0.02;
constexpr int kBudgetEpochs = 60;

int failures = 0;

void verdict(bool ok, const std::string& id, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", v * 100.0);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, cli::AblationRow> by_tag(const std::vector<cli::AblationRow>& rows) {
    std::map<std::string, cli::AblationRow> m;
    for (const auto& r : rows) m[r.tag] = r;
    return m;
}

std::string describe(const cli::AblationRow& r) {
    if (r.status != "ok") return r.tag + " failed (" + r.error + ")";
    std::string s = r.tag + " kNN " + pct(r.final_knn.value_or(0));
    if (r.linear_acc) s += " linear " + pct(*r.linear_acc);
    s += r.collapsed ? " collapse@" + std::to_string(r.collapse_epoch.value_or(-1) + 1) : " no-collapse";
    return s;
}

}  // namespace

int main() {
    const char* env_root = std::getenv("DSSL_ACCEPT_DIR");
    const fs::path root = env_root && *env_root ? fs::path(env_root) : fs::path(DSSL_ACCEPT_DIR);
    const std::string base = read_file(fs::path(DSSL_SOURCE_DIR) / "configs" / "desk_simsiam.toml");
    fs::create_directories(root);

    cli::CommonFlags flags;
    flags.overrides = {{"data.cache_dir", "\"" + (root / "cache").string() + "\""},
                       {"run.epochs", std::to_string(kBudgetEpochs)}};
    cli::AblateOptions opts;
    opts.out_root = root.string();

    std::printf("desk acceptance: runs under %s\n", root.string().c_str());

    // Criteria 8, 9: SimSiam under three view constructions with RA(2,5) heavy views.
    cli::GridSpec desk{"desk",
                       {{"1pair", {{"views.mode", "\"baseline_1pair\""}}},
                        {"joint", {{"views.mode", "\"baseline_joint\""}}},
                        {"dssl", {{"views.mode", "\"dssl\""}}}}};
    const auto d = by_tag(cli::cmd_ablate(base, flags, desk, opts));
    cli::cmd_report({(root / "desk").string()}, (root / "report_desk").string());

    {
        const auto& j = d.at("joint");
        const bool ok = j.status == "ok" &&
                        (j.final_knn.value_or(1) <= kChance + kChanceMargin ||
                         (j.collapsed && j.collapse_epoch.value_or(kBudgetEpochs) < kBudgetEpochs));
        verdict(ok, "8 collapse reproduction (baseline_joint)",
                describe(j) + "; need kNN <= " + pct(kChance + kChanceMargin) + " or collapse flag before epoch " +
                    std::to_string(kBudgetEpochs));
    }
    {
        const auto& s = d.at("dssl");
        const auto& p = d.at("1pair");
        const bool ok = s.status == "ok" && p.status == "ok" && !s.collapsed &&
                        s.final_knn.value_or(0) >= p.final_knn.value_or(1) - kStabilityMargin;
        verdict(ok, "9 dssl stability", describe(s) + " vs " + describe(p) + "; need no collapse and kNN >= 1pair - " +
                                            pct(kStabilityMargin));
    }

    // Criterion 10: fig4 cells c and f (symmetric heavy-heavy, no asymmetric anchor) against j.
    auto fig4 = cli::fig4_preset();
    std::erase_if(fig4.cells, [](const auto& c) { return c.tag != "c" && c.tag != "f" && c.tag != "j"; });
    const auto f4 = by_tag(cli::cmd_ablate(base, flags, fig4, opts));
    {
        auto degenerate = [](const cli::AblationRow& r) {
            return r.status == "ok" && (r.collapsed || r.final_knn.value_or(1) <= kChance + kChanceMargin);
        };
        const auto& c = f4.at("c");
        const auto& f = f4.at("f");
        const auto& j = f4.at("j");
        const bool j_ok = j.status == "ok" && !degenerate(j);
        const bool ok = degenerate(c) && degenerate(f) && j_ok;
        verdict(ok, "10 ablation grid sanity (fig4 c/f vs j)",
                describe(c) + "; " + describe(f) + "; " + describe(j) +
                    "; need c and f collapsed or within 5 points of chance, j neither");
    }

    // Criterion 11: δ sweep.
    const auto f5rows = cli::cmd_ablate(base, flags, cli::fig5_preset(), opts);
    const auto f5 = by_tag(f5rows);
    {
        bool complete = f5rows.size() == 11;
        for (const auto& r : f5rows) complete = complete && r.status == "ok";
        std::optional<std::string> delta_plot;
        std::string report_error;
        try {
            delta_plot = cli::cmd_report({(root / "fig5").string()}, (root / "report_fig5").string()).delta_plot;
        } catch (const std::exception& e) {
            report_error = e.what();
        }
        const auto& lo = f5.at("delta=0.0");
        const auto& hi = f5.at("delta=1.0");
        auto acc = [](const cli::AblationRow& r) { return r.linear_acc.value_or(r.final_knn.value_or(0)); };
        std::string curve;
        for (const auto& r : f5rows) curve += (curve.empty() ? "" : " ") + r.tag.substr(6) + ":" + pct(acc(r));
        const bool ok = complete && delta_plot.has_value() && acc(lo) >= acc(hi);
        verdict(ok, "11 delta sweep",
                std::string(complete ? "11/11 cells" : "incomplete grid") +
                    (delta_plot ? ", plot " + *delta_plot : ", no delta plot " + report_error) + "; linear acc " +
                    curve + "; need acc(0) >= acc(1)");
    }

    std::printf("%d desk criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
