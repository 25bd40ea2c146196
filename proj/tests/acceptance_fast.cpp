// Property and oracle acceptance checks (criteria 1-7, 12). One line per
// criterion; non-zero exit if any fails.
#include "dssl/augment.hpp"
#include "dssl/trainer.hpp"
#include "dssl/views.hpp"

#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

using namespace dssl;
using testing::Matrix;
using testing::oracle_neg_cosine;
using testing::to_matrix;

namespace {

constexpr double kLossTol = 1e-6;
constexpr double kGradTol = 1e-7;
constexpr double kNtXentTol = 1e-5;
constexpr float kZeroMagTol = 2.0f / 255.0f;

int failures = 0;

void verdict(bool ok, const std::string& id, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

void criterion_loss_identity() {
    torch::manual_seed(101);
    const auto s = objectives::SimilarityObjective::for_framework(frameworks::Framework::simsiam);
    double worst_alg = 0.0, worst_general = 0.0;
    for (int t = 0; t < 100; ++t) {
        const auto n = 2 + t % 15, d = 3 + t % 29;
        auto f = testing::random_features(n, d);
        // L = D(z1, y2)/4 + D(z2, y1)/4 + D(ẑ1, y1)/4 + D(ẑ2, y2)/4, slots 0,1 standard and 2,3 heavy
        const double transcribed = oracle_neg_cosine(to_matrix(f.z[0]), to_matrix(f.y[1])) / 4 +
                                   oracle_neg_cosine(to_matrix(f.z[1]), to_matrix(f.y[0])) / 4 +
                                   oracle_neg_cosine(to_matrix(f.z[2]), to_matrix(f.y[0])) / 4 +
                                   oracle_neg_cosine(to_matrix(f.z[3]), to_matrix(f.y[1])) / 4;
        const double got = objectives::dssl_loss(f, s).item<double>();
        const double general = objectives::general_loss(f, objectives::LossWeights{1, 0, 1, 0}, s).total.item<double>();
        worst_alg = std::max(worst_alg, std::abs(got - transcribed));
        worst_general = std::max(worst_general, std::abs(general - got));
    }
    verdict(worst_alg <= kLossTol && worst_general <= kLossTol, "1 loss identity",
            "100 sets; max |dssl - transcription| " + sci(worst_alg) + ", max |general(1,0,1,0) - dssl| " +
                sci(worst_general) + " (tol " + sci(kLossTol) + ")");
}

void criterion_stop_gradient() {
    torch::manual_seed(202);
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    // Toy network: online 2-layer MLP (W1, W2) and a separate target branch (T1, T2).
    auto w1 = torch::randn({6, 5}, opts).requires_grad_(true), w2 = torch::randn({4, 6}, opts).requires_grad_(true);
    auto t1 = torch::randn({6, 5}, opts).requires_grad_(true), t2 = torch::randn({4, 6}, opts).requires_grad_(true);
    auto x1 = torch::randn({8, 5}, opts), x2 = torch::randn({8, 5}, opts);
    auto net = [](const torch::Tensor& x, const torch::Tensor& a, const torch::Tensor& b) {
        return torch::relu(x.mm(a.t())).mm(b.t());
    };

    // (a) target-branch parameters get exactly zero gradient.
    auto z = net(x1, w1, w2);
    auto y = net(x2, t1, t2);
    auto loss = objectives::neg_cosine(z, frameworks::stop_gradient(y)) + 0.0 * (t1.sum() + t2.sum());
    loss.backward();
    const double target_grad = t1.grad().abs().max().item<double>() + t2.grad().abs().max().item<double>();

    // (b) shared weights, symmetric loss: autodiff vs the detached-constant oracle.
    w1.mutable_grad() = torch::Tensor();
    w2.mutable_grad() = torch::Tensor();
    auto za = net(x1, w1, w2), zb = net(x2, w1, w2);
    auto full = 0.5 * objectives::neg_cosine(za, frameworks::stop_gradient(zb)) +
                0.5 * objectives::neg_cosine(zb, frameworks::stop_gradient(za));
    full.backward();
    const auto g1 = w1.grad().clone(), g2 = w2.grad().clone();

    // Oracle: targets rebuilt as fresh leaf constants from their values.
    auto ca = torch::tensor(at::ArrayRef<double>(za.detach().contiguous().data_ptr<double>(), za.numel()), opts)
                  .view(za.sizes());
    auto cb = torch::tensor(at::ArrayRef<double>(zb.detach().contiguous().data_ptr<double>(), zb.numel()), opts)
                  .view(zb.sizes());
    auto o1 = w1.detach().clone().requires_grad_(true), o2 = w2.detach().clone().requires_grad_(true);
    auto cos_mean = [](const torch::Tensor& p, const torch::Tensor& c) {
        return -((p / p.norm(2, 1, true)) * (c / c.norm(2, 1, true))).sum(1).mean();
    };
    auto oracle = 0.5 * cos_mean(net(x1, o1, o2), cb) + 0.5 * cos_mean(net(x2, o1, o2), ca);
    oracle.backward();
    const double diff = std::max((g1 - o1.grad()).abs().max().item<double>(), (g2 - o2.grad()).abs().max().item<double>());
    verdict(target_grad == 0.0 && diff <= kGradTol, "2 stop-gradient",
            "target-branch grad max " + sci(target_grad) + " (need exactly 0); full-loss grad vs oracle " + sci(diff) +
                " (tol " + sci(kGradTol) + ")");
}

void criterion_ema() {
    torch::manual_seed(303);
    const double eps = std::numeric_limits<double>::epsilon();
    double worst = 0.0;  // in units of eps * local magnitude
    for (double tau : {0.0, 0.5, 0.99, 1.0}) {
        std::vector<torch::Tensor> xi, theta, xi0;
        for (auto shape : {std::vector<std::int64_t>{16, 8}, {8}, {3, 3, 2, 2}}) {
            xi.push_back(torch::randn(shape, torch::kFloat64));
            theta.push_back(torch::randn(shape, torch::kFloat64));
            xi0.push_back(xi.back().clone());
        }
        frameworks::ema_update(xi, theta, tau);
        for (std::size_t p = 0; p < xi.size(); ++p) {
            auto g = xi[p].flatten(), a = xi0[p].flatten(), b = theta[p].flatten();
            const double* gp = g.data_ptr<double>();
            const double* ap = a.data_ptr<double>();
            const double* bp = b.data_ptr<double>();
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const double want = tau * ap[i] + (1.0 - tau) * bp[i];
                const double scale = std::abs(tau * ap[i]) + std::abs((1.0 - tau) * bp[i]) + 1e-300;
                worst = std::max(worst, std::abs(gp[i] - want) / (eps * scale));
            }
        }
    }
    verdict(worst <= 2.0, "3 EMA exactness",
            "tau in {0, 0.5, 0.99, 1}; max error " + sci(worst) + " eps relative (tol 2 eps)");
}

double brute_nt_xent(const Matrix& a, const Matrix& b, double tau) {
    Matrix rows = a;
    rows.insert(rows.end(), b.begin(), b.end());
    for (auto& r : rows) {
        double n = 0;
        for (double v : r) n += v * v;
        for (double& v : r) v /= std::sqrt(n);
    }
    const std::size_t m = rows.size(), n = a.size();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t pos = (i + n) % m;
        double denom = 0.0, pos_logit = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            if (k == i) continue;
            double dot = 0;
            for (std::size_t j = 0; j < rows[i].size(); ++j) dot += rows[i][j] * rows[k][j];
            denom += std::exp(dot / tau);
            if (k == pos) pos_logit = dot / tau;
        }
        total -= pos_logit - std::log(denom);
    }
    return total / static_cast<double>(m);
}

void criterion_nt_xent() {
    torch::manual_seed(404);
    double worst = 0.0;
    bool counts = true;
    std::string count_detail;
    for (int n : {2, 4, 8}) {
        for (double tau : {0.1, 0.5, 1.0}) {
            auto a = torch::randn({n, 7}, torch::kFloat64), b = torch::randn({n, 7}, torch::kFloat64);
            const double got = objectives::nt_xent_standard(a, b, tau).item<double>();
            worst = std::max(worst, std::abs(got - brute_nt_xent(to_matrix(a), to_matrix(b), tau)));
        }
        auto a = torch::randn({n, 7}), b = torch::randn({n, 7}), ha = torch::randn({n, 7}), hb = torch::randn({n, 7});
        const auto r = objectives::nt_xent(a, b, 0.5, ha, hb);
        counts = counts && r.similarity_terms == 2 * n * n + 2 * n;
        count_detail += (count_detail.empty() ? "" : ", ") + std::to_string(r.similarity_terms) + "/" +
                        std::to_string(2 * n * n + 2 * n);
    }
    verdict(worst <= kNtXentTol && counts, "4 NT-Xent oracle",
            "n in {2,4,8} x tau in {0.1,0.5,1}; max diff " + sci(worst) + " (tol " + sci(kNtXentTol) +
                "); heavy term counts " + count_detail);
}

ImageSample random_image(Rng& rng) {
    ImageSample img(32, 32);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    return img;
}

ImageSample smooth_image(Rng& rng) {
    ImageSample img(32, 32);
    const double cx = rng.uniform(8, 24), cy = rng.uniform(8, 24);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                img.at(c, y, x) = static_cast<float>(0.2 + 0.3 * x / 32.0 + 0.4 * std::exp(-r2 / 60.0) * (c + 1) / 3.0);
            }
    return img;
}

std::vector<std::vector<float>> sorted_tiles(const ImageSample& img, int n) {
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
    std::sort(out.begin(), out.end());
    return out;
}

void criterion_augment() {
    Rng rng(505);
    int jigsaw_bad = 0, range_bad = 0, determinism_bad = 0;
    float zero_mag = 0.0f;
    const std::vector<augment::Op> geometric = {augment::Op::rotate, augment::Op::shear_x, augment::Op::shear_y,
                                                augment::Op::translate_x, augment::Op::translate_y};
    augment::HeavyAugmentConfig mix;
    mix.mixture = {{augment::HeavyPolicy::randaugment, 0.4},
                   {augment::HeavyPolicy::jigsaw, 0.3},
                   {augment::HeavyPolicy::uniformaugment, 0.3}};
    for (int t = 0; t < 200; ++t) {
        const auto img = random_image(rng);
        const int n = t % 2 ? 2 : 4;
        if (sorted_tiles(augment::jigsaw(img, augment::JigsawConfig{n}, rng), n) != sorted_tiles(img, n)) ++jigsaw_bad;

        const auto smooth = smooth_image(rng);
        for (auto op : geometric) {
            auto out = smooth;
            augment::apply_op(out, op, 0.0, rng);
            for (std::size_t i = 0; i < out.pixels.size(); ++i)
                zero_mag = std::max(zero_mag, std::abs(out.pixels[i] - smooth.pixels[i]));
        }

        for (auto op : augment::randaugment_ops()) {
            auto out = img;
            augment::apply_op(out, op, rng.uniform(), rng);
            range_bad += !out.in_unit_range();
        }
        range_bad += !augment::apply_standard(img, {}, rng).in_unit_range();
        range_bad += !augment::apply_heavy(img, mix, rng).image.in_unit_range();

        const auto seed = static_cast<std::uint64_t>(t) * 7919u;
        Rng a(seed), b(seed);
        const auto va = augment::apply_heavy(augment::apply_standard(img, {}, a), mix, a);
        const auto vb = augment::apply_heavy(augment::apply_standard(img, {}, b), mix, b);
        determinism_bad += va.image.pixels != vb.image.pixels;
    }
    const bool ok = jigsaw_bad == 0 && zero_mag <= kZeroMagTol && range_bad == 0 && determinism_bad == 0;
    verdict(ok, "5 augmentation invariants",
            "200 images; jigsaw multiset violations " + std::to_string(jigsaw_bad) + ", zero-magnitude geometric max diff " +
                sci(zero_mag * 255.0) + "/255 (tol 2/255), out-of-range outputs " + std::to_string(range_bad) +
                ", non-deterministic pairs " + std::to_string(determinism_bad));
}

void criterion_partial_order() {
    Rng rng(606);
    views::ViewConfig cfg;
    cfg.heavy.mixture = {{augment::HeavyPolicy::randaugment, 0.5},
                         {augment::HeavyPolicy::jigsaw, 0.25},
                         {augment::HeavyPolicy::uniformaugment, 0.25}};
    int replay_bad = 0, invariant_bad = 0;
    for (int i = 0; i < 1000; ++i) {
        ImageSample img(32, 32, i);
        for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
        const auto set = views::build_training_views(img, views::ViewMode::dssl, cfg,
                                                     derive_seed(606, 0, static_cast<std::uint64_t>(i), 0));
        try {
            set.check_invariants();
        } catch (const std::exception&) {
            ++invariant_bad;
        }
        for (std::size_t s = 0; s < set.views.size(); ++s)
            if (set.views[s].kind == views::ViewKind::heavy && !views::replay_matches(set, static_cast<int>(s), cfg.heavy))
                ++replay_bad;
    }
    verdict(replay_bad == 0 && invariant_bad == 0, "6 view partial order",
            "1000 dssl view sets; heavy views failing replay " + std::to_string(replay_bad) +
                ", edge-discipline violations " + std::to_string(invariant_bad));
}

void criterion_monitor() {
    torch::manual_seed(707);
    constexpr int d = 64, batch = 256, trials = 100;
    int missed = 0, false_alarms = 0;
    for (int t = 0; t < trials; ++t) {
        trainer::CollapseDetector on_identical, on_isotropic;
        auto row = torch::randn({1, d});
        if (!on_identical.update(row.expand({batch, d}).contiguous()).flag) ++missed;
        if (on_isotropic.update(torch::randn({batch, d})).flag) ++false_alarms;
    }
    verdict(missed == 0 && false_alarms == 0, "7 monitor calibration",
            "d=64, batch 256, 100 trials each; identical embeddings missed " + std::to_string(missed) +
                ", isotropic embeddings flagged " + std::to_string(false_alarms));
}

void criterion_step_accounting() {
    auto cfg = testing::tiny_config(testing::temp_dir("accept-steps").string(), 2);
    const auto data = trainer::load_data(cfg);
    auto two = cfg;
    two.mode = views::ViewMode::baseline_2pairs;
    two.weights = objectives::LossWeights::symmetric_only();
    trainer::Trainer a(cfg, data), b(two, data);
    const auto ra = a.run(), rb = b.run();
    verdict(ra.steps == rb.steps && ra.steps == a.total_steps(), "12 step accounting",
            "dssl " + std::to_string(ra.steps) + " steps, baseline_2pairs " + std::to_string(rb.steps) + " steps");
}

}  // namespace

int main() {
    criterion_loss_identity();
    criterion_stop_gradient();
    criterion_ema();
    criterion_nt_xent();
    criterion_augment();
    criterion_partial_order();
    criterion_monitor();
    criterion_step_accounting();
    std::printf("%d fast criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
