#include "support.hpp"

#include "doctest_torch.hpp"

#include <cmath>
#include <limits>

using namespace dssl;
using namespace dssl::frameworks;

namespace {

ModelConfig small_model(Framework f) {
    ModelConfig cfg;
    cfg.framework = f;
    cfg.encoder.base_width = 8;
    cfg.heads = {32, 32, 2, 16};
    return cfg;
}

ViewBatch batch_for(views::ViewMode mode, int n) {
    Rng rng(8);
    std::vector<views::ViewSet> sets;
    for (int i = 0; i < n; ++i) {
        ImageSample img(32, 32, i);
        for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
        sets.push_back(views::build_training_views(img, mode, views::ViewConfig{}, 100 + static_cast<std::uint64_t>(i)));
    }
    return stack_views(sets);
}

// Largest deviation from the element-wise double oracle, in units of the
// local magnitude (one rounding per op is allowed).
double ema_rel_error(const torch::Tensor& got, const torch::Tensor& xi0, const torch::Tensor& theta, double tau) {
    auto g = got.flatten(), x = xi0.flatten(), t = theta.flatten();
    double worst = 0.0;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
        const double want = tau * x[i].item<double>() + (1.0 - tau) * t[i].item<double>();
        const double scale = std::abs(x[i].item<double>()) + std::abs(t[i].item<double>()) + 1e-300;
        worst = std::max(worst, std::abs(g[i].item<double>() - want) / scale);
    }
    return worst;
}

}  // namespace

TEST_CASE("ema_update matches the element-wise formula at machine precision") {
    torch::manual_seed(4);
    const double eps = std::numeric_limits<double>::epsilon();
    for (double tau : {0.0, 0.5, 0.99, 1.0}) {
        auto xi_a = torch::randn({7, 3}, torch::kFloat64), xi_b = torch::randn({5}, torch::kFloat64);
        auto th_a = torch::randn({7, 3}, torch::kFloat64), th_b = torch::randn({5}, torch::kFloat64);
        const auto a0 = xi_a.clone(), b0 = xi_b.clone();
        ema_update({xi_a, xi_b}, {th_a, th_b}, tau);
        CHECK(ema_rel_error(xi_a, a0, th_a, tau) <= 4 * eps);
        CHECK(ema_rel_error(xi_b, b0, th_b, tau) <= 4 * eps);
        if (tau == 1.0) CHECK(torch::equal(xi_a, a0));
        if (tau == 0.0) CHECK(torch::equal(xi_a, th_a));
    }
    CHECK_THROWS_AS(ema_update({torch::zeros({2})}, {}, 0.5), ShapeError);
    CHECK_THROWS_AS(ema_update({torch::zeros({2})}, {torch::zeros({3})}, 0.5), ShapeError);
}

TEST_CASE("BYOL momentum networks start as exact copies and follow the EMA") {
    auto model = make_model(small_model(Framework::byol), 1);
    REQUIRE(model.has_momentum());
    auto on = model.encoder->parameters(), mo = model.momentum_encoder->parameters();
    REQUIRE(on.size() == mo.size());
    for (std::size_t i = 0; i < on.size(); ++i) {
        CHECK(torch::equal(on[i], mo[i]));
        CHECK(!mo[i].requires_grad());
    }
    {
        torch::NoGradGuard ng;
        for (auto& p : on) p.add_(1.0);
    }
    const auto before = mo[0].clone();
    ema_update(model, 0.9);
    CHECK(torch::allclose(mo[0], 0.9 * before + 0.1 * on[0]));

    auto simsiam = make_model(small_model(Framework::simsiam), 1);
    CHECK(!simsiam.has_momentum());
    CHECK_THROWS_AS(ema_update(simsiam, 0.5), Error);
}

TEST_CASE("seeded construction is reproducible") {
    auto a = make_model(small_model(Framework::simsiam), 42);
    auto b = make_model(small_model(Framework::simsiam), 42);
    auto c = make_model(small_model(Framework::simsiam), 43);
    const auto sa = a.named_state(), sb = b.named_state(), sc = c.named_state();
    REQUIRE(sa.size() == sb.size());
    bool differs = false;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].first == sb[i].first);
        CHECK(torch::equal(sa[i].second, sb[i].second));
        differs = differs || !torch::equal(sa[i].second, sc[i].second);
    }
    CHECK(differs);
}

TEST_CASE("stop_gradient keeps values and cuts the graph") {
    auto x = torch::randn({3, 4}, torch::kFloat64).requires_grad_(true);
    auto w = torch::randn({4, 2}, torch::kFloat64).requires_grad_(true);
    auto y = x.mm(w);
    auto sg = stop_gradient(y);
    CHECK(torch::equal(sg, y));
    CHECK(!sg.requires_grad());
    auto loss = (sg * y).sum();
    loss.backward();
    // d/dw of sum(c * xw) with c constant is x^T c
    CHECK(torch::allclose(w.grad(), x.detach().t().mm(sg)));
}

TEST_CASE("PairLayout from view sets") {
    const auto d = batch_for(views::ViewMode::dssl, 2).layout;
    CHECK(d.slots() == 4);
    CHECK((d.sym_standard == std::vector<std::pair<int, int>>{{0, 1}}));
    CHECK((d.sym_heavy == std::vector<std::pair<int, int>>{{2, 3}}));
    CHECK((d.directed == std::vector<std::pair<int, int>>{{2, 0}, {3, 1}}));
    CHECK((default_target_slots(d) == std::vector<bool>{true, true, false, false}));

    const auto two = batch_for(views::ViewMode::baseline_2pairs, 2).layout;
    CHECK(two.sym_standard.size() == 2);
    CHECK(two.sym_heavy.empty());
    CHECK(two.directed.empty());

    const auto one = batch_for(views::ViewMode::baseline_1pair, 2).layout;
    CHECK(one.slots() == 2);
    CHECK(one.directed.empty());
}

TEST_CASE("forward_views shapes and target semantics per framework") {
    const auto batch = batch_for(views::ViewMode::dssl, 4);
    CHECK(batch.batch_size() == 4);
    CHECK(batch.slots[0].sizes().vec() == std::vector<std::int64_t>{4, 3, 32, 32});
    for (auto fw : {Framework::simsiam, Framework::byol, Framework::simclr}) {
        CAPTURE(framework_name(fw));
        auto model = make_model(small_model(fw), 3);
        model.train(true);
        const auto f = forward_views(model, batch);
        REQUIRE(f.z.size() == 4);
        for (int s = 0; s < 4; ++s) {
            CHECK(f.z[static_cast<std::size_t>(s)].size(0) == 4);
            CHECK(f.z[static_cast<std::size_t>(s)].size(1) == 32);
            CHECK(f.projections[static_cast<std::size_t>(s)].size(1) == 32);
        }
        CHECK(f.has_target(0));
        CHECK(f.has_target(1));
        CHECK(f.z[0].requires_grad());
        if (fw == Framework::simclr) {
            CHECK(f.y[0].requires_grad());  // contrastive targets carry gradient
        } else {
            CHECK(!f.y[0].requires_grad());
        }
    }
}

TEST_CASE("framework names and validation") {
    for (auto fw : {Framework::simsiam, Framework::byol, Framework::simclr})
        CHECK(parse_framework(framework_name(fw)) == fw);
    CHECK_THROWS_AS(parse_framework("moco"), ConfigError);
    for (auto a : {EncoderArch::small, EncoderArch::resnet18_cifar, EncoderArch::resnet50})
        CHECK(parse_arch(arch_name(a)) == a);
    auto bad = small_model(Framework::simsiam);
    bad.heads.projector_out = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ResNet-18 CIFAR encoder has 512-d features") {
    EncoderConfig cfg;
    cfg.arch = EncoderArch::resnet18_cifar;
    Encoder enc(cfg);
    CHECK(enc->feature_dim() == 512);
    enc->eval();
    torch::NoGradGuard ng;
    CHECK(enc->forward(torch::zeros({2, 3, 32, 32})).sizes().vec() == std::vector<std::int64_t>{2, 512});
}
