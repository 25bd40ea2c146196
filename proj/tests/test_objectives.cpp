#include "support.hpp"

#include "doctest_torch.hpp"

#include <cmath>

using namespace dssl;
using namespace dssl::objectives;
using testing::Matrix;
using testing::oracle_neg_cosine;
using testing::to_matrix;

namespace {

double item(const torch::Tensor& t) { return t.item<double>(); }

// Brute-force NT-Xent: for every anchor among the 2n rows, enumerate the
// softmax over all other rows and take -log p(positive).
double oracle_nt_xent(const Matrix& a, const Matrix& b, double tau) {
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
        const std::size_t pos = i < n ? i + n : i - n;
        double denom = 0.0, pos_logit = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            if (k == i) continue;
            double dot = 0;
            for (std::size_t j = 0; j < rows[i].size(); ++j) dot += rows[i][j] * rows[k][j];
            denom += std::exp(dot / tau);
            if (k == pos) pos_logit = dot / tau;
        }
        total += -(pos_logit - std::log(denom));
    }
    return total / static_cast<double>(m);
}

}  // namespace

TEST_CASE("neg_cosine: values, zero norms, shapes") {
    auto z = torch::tensor({{1.0, 0.0}, {0.0, 2.0}}, torch::kFloat64);
    auto y = torch::tensor({{3.0, 0.0}, {0.0, -1.0}}, torch::kFloat64);
    CHECK(item(neg_cosine(z, y)) == doctest::Approx(0.0));  // (-1 + 1) / 2
    CHECK(item(neg_cosine(z, z)) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(neg_cosine(torch::zeros({2, 2}), torch::ones({2, 2})), ZeroNormError);
    CHECK_THROWS_AS(neg_cosine(torch::ones({2, 3}), torch::ones({3, 2})), ShapeError);
}

TEST_CASE("neg_cosine matches the plain-double oracle") {
    torch::manual_seed(3);
    for (int t = 0; t < 10; ++t) {
        auto z = torch::randn({7, 5}, torch::kFloat64), y = torch::randn({7, 5}, torch::kFloat64);
        CHECK(std::abs(item(neg_cosine(z, y)) - oracle_neg_cosine(to_matrix(z), to_matrix(y))) < 1e-12);
    }
}

TEST_CASE("dssl_loss is the four-term pseudocode and general_loss(1,0,1,0)") {
    torch::manual_seed(5);
    const auto s = SimilarityObjective::for_framework(frameworks::Framework::simsiam);
    for (int t = 0; t < 20; ++t) {
        auto f = testing::random_features(6, 8);
        // D(z, y')/4 + D(z', y)/4 + D(ẑ, y)/4 + D(ẑ', y')/4
        const double want = (oracle_neg_cosine(to_matrix(f.z[0]), to_matrix(f.y[1])) +
                             oracle_neg_cosine(to_matrix(f.z[1]), to_matrix(f.y[0])) +
                             oracle_neg_cosine(to_matrix(f.z[2]), to_matrix(f.y[0])) +
                             oracle_neg_cosine(to_matrix(f.z[3]), to_matrix(f.y[1]))) /
                            4.0;
        CHECK(std::abs(item(dssl_loss(f, s)) - want) < 1e-12);
        const auto g = general_loss(f, LossWeights::dssl(), s);
        CHECK(std::abs(item(g.total) - want) < 1e-12);
        CHECK(g.normalizer == 4.0);
    }
}

TEST_CASE("general_loss normaliser counts weighted terms") {
    torch::manual_seed(1);
    auto f = testing::random_features(4, 6);
    const auto s = SimilarityObjective{};
    CHECK(general_loss(f, LossWeights::symmetric_only(), s).normalizer == 2.0);
    CHECK(general_loss(f, LossWeights::all_views(), s).normalizer == 8.0);
    CHECK(general_loss(f, LossWeights{1, 0, 0.5, 0.5}, s).normalizer == 4.0);

    // (1,1,1,1): every collection once, over 8 terms
    const double want = (oracle_neg_cosine(to_matrix(f.z[0]), to_matrix(f.y[1])) +
                         oracle_neg_cosine(to_matrix(f.z[1]), to_matrix(f.y[0])) +
                         oracle_neg_cosine(to_matrix(f.z[2]), to_matrix(f.y[3])) +
                         oracle_neg_cosine(to_matrix(f.z[3]), to_matrix(f.y[2])) +
                         oracle_neg_cosine(to_matrix(f.z[2]), to_matrix(f.y[0])) +
                         oracle_neg_cosine(to_matrix(f.z[3]), to_matrix(f.y[1])) +
                         oracle_neg_cosine(to_matrix(f.z[0]), to_matrix(f.y[2])) +
                         oracle_neg_cosine(to_matrix(f.z[1]), to_matrix(f.y[3]))) /
                        8.0;
    const auto g = general_loss(f, LossWeights::all_views(), s);
    CHECK(std::abs(item(g.total) - want) < 1e-12);
    CHECK(g.reverse == doctest::Approx(oracle_neg_cosine(to_matrix(f.z[0]), to_matrix(f.y[2])) +
                                       oracle_neg_cosine(to_matrix(f.z[1]), to_matrix(f.y[3]))));
}

TEST_CASE("general_loss rejects weights without their view collection") {
    auto f = testing::random_features(3, 4);
    f.layout.sym_heavy.clear();
    CHECK_THROWS_AS(general_loss(f, LossWeights{1, 1, 0, 0}, SimilarityObjective{}), ShapeError);
    f.layout.directed.clear();
    CHECK_THROWS_AS(general_loss(f, LossWeights{1, 0, 1, 0}, SimilarityObjective{}), ShapeError);
}

TEST_CASE("LossWeights validation names the field") {
    try {
        LossWeights{1, -0.5, 0, 0}.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "loss.beta");
    }
    CHECK_THROWS_AS((LossWeights{0, 0, 0, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((LossWeights{1, 0, std::nan(""), 0}.validate()), ConfigError);
    CHECK(LossWeights::delta_sweep(0.3).gamma == doctest::Approx(0.7));
}

TEST_CASE("directional blocks the target's gradient") {
    auto z = torch::randn({5, 4}, torch::kFloat64).requires_grad_(true);
    auto y = torch::randn({5, 4}, torch::kFloat64).requires_grad_(true);
    auto loss = directional(z, y) + 0.0 * y.sum();  // keep y in the graph
    loss.backward();
    CHECK(z.grad().abs().sum().item<double>() > 0.0);
    CHECK(y.grad().abs().sum().item<double>() == 0.0);
}

TEST_CASE("BYOL similarity is 2 + 2 neg_cosine") {
    auto z = torch::randn({6, 3}, torch::kFloat64), y = torch::randn({6, 3}, torch::kFloat64);
    const auto s = SimilarityObjective::for_framework(frameworks::Framework::byol);
    CHECK(item(pairwise_similarity(s, z, y)) == doctest::Approx(2.0 + 2.0 * item(neg_cosine(z, y))));
    // equals the mean squared distance of unit vectors
    auto zn = z / z.norm(2, 1, true), yn = y / y.norm(2, 1, true);
    CHECK(item(pairwise_similarity(s, z, y)) == doctest::Approx(item((zn - yn).pow(2).sum(1).mean())));
}

TEST_CASE("NT-Xent matches brute-force enumeration") {
    torch::manual_seed(11);
    for (int n : {2, 4, 8})
        for (double tau : {0.1, 0.5, 1.0}) {
            auto a = torch::randn({n, 6}, torch::kFloat64), b = torch::randn({n, 6}, torch::kFloat64);
            const double got = item(nt_xent_standard(a, b, tau));
            CHECK(std::abs(got - oracle_nt_xent(to_matrix(a), to_matrix(b), tau)) < 1e-9);
        }
}

TEST_CASE("NT-Xent with identical embeddings is log(2n - 1)") {
    for (int n : {2, 5, 16}) {
        auto a = torch::ones({n, 4}, torch::kFloat64);
        CHECK(item(nt_xent_standard(a, a, 0.5)) == doctest::Approx(std::log(2.0 * n - 1)));
    }
    CHECK_THROWS_AS(nt_xent_standard(torch::ones({1, 3}), torch::ones({1, 3}), 0.5), ShapeError);
}

TEST_CASE("NT-Xent heavy extension: term count and directional pull") {
    torch::manual_seed(2);
    for (int n : {2, 4, 8}) {
        auto a = torch::randn({n, 5}, torch::kFloat64), b = torch::randn({n, 5}, torch::kFloat64);
        auto ha = torch::randn({n, 5}, torch::kFloat64), hb = torch::randn({n, 5}, torch::kFloat64);
        const auto plain = nt_xent(a, b, 0.5);
        CHECK(plain.similarity_terms == 2 * n * n);
        CHECK(plain.similarity_terms == nt_xent_similarity_count(n, false));
        const auto ext = nt_xent(a, b, 0.5, ha, hb);
        CHECK(ext.similarity_terms == 2 * n * n + 2 * n);
        CHECK(ext.similarity_terms == nt_xent_similarity_count(n, true));
        const double asym = (oracle_neg_cosine(to_matrix(ha), to_matrix(a)) +
                             oracle_neg_cosine(to_matrix(hb), to_matrix(b))) /
                            2.0;
        CHECK(item(ext.asymmetric) == doctest::Approx(asym));
        CHECK(item(ext.loss) == doctest::Approx(item(ext.standard) + asym));
    }
}

TEST_CASE("NT-Xent heavy rows never receive gradient from the standard term") {
    auto a = torch::randn({4, 3}, torch::kFloat64).requires_grad_(true);
    auto b = torch::randn({4, 3}, torch::kFloat64).requires_grad_(true);
    auto ha = torch::randn({4, 3}, torch::kFloat64).requires_grad_(true);
    auto hb = torch::randn({4, 3}, torch::kFloat64).requires_grad_(true);
    const auto r = nt_xent(a, b, 0.5, ha, hb);
    r.asymmetric.backward();
    // the directional pull moves heavy rows only; parents are detached targets
    CHECK(ha.grad().abs().sum().item<double>() > 0);
    CHECK(!a.grad().defined());
}

TEST_CASE("asym_form parses both spellings") {
    CHECK(parse_asym_form("cosine") == AsymForm::cosine);
    CHECK(parse_asym_form("softmax") == AsymForm::softmax);
    CHECK_THROWS_AS(parse_asym_form("dot"), ConfigError);
}
