#pragma once

#include "dssl/config.hpp"
#include "dssl/frameworks.hpp"
#include "dssl/objectives.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace testing {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const torch::Tensor& t) {
    auto c = t.to(torch::kFloat64).contiguous();
    Matrix m(static_cast<std::size_t>(c.size(0)), std::vector<double>(static_cast<std::size_t>(c.size(1))));
    auto a = c.accessor<double, 2>();
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = a[static_cast<long>(i)][static_cast<long>(j)];
    return m;
}

// -mean_i <z_i/|z_i|, y_i/|y_i|>, in plain doubles.
inline double oracle_neg_cosine(const Matrix& z, const Matrix& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        double dot = 0, nz = 0, ny = 0;
        for (std::size_t j = 0; j < z[i].size(); ++j) {
            dot += z[i][j] * y[i][j];
            nz += z[i][j] * z[i][j];
            ny += y[i][j] * y[i][j];
        }
        acc += dot / (std::sqrt(nz) * std::sqrt(ny));
    }
    return -acc / static_cast<double>(z.size());
}

// Slots 0,1 standard; 2 -> 0 and 3 -> 1 heavy children.
inline dssl::frameworks::PairLayout dssl_layout() {
    using dssl::views::ViewKind;
    dssl::frameworks::PairLayout l;
    l.kinds = {ViewKind::standard, ViewKind::standard, ViewKind::heavy, ViewKind::heavy};
    l.sym_standard = {{0, 1}};
    l.sym_heavy = {{2, 3}};
    l.directed = {{2, 0}, {3, 1}};
    return l;
}

// Random z/y per slot; every slot has a target.
inline dssl::frameworks::ViewFeatures random_features(std::int64_t n, std::int64_t d, bool requires_grad = false,
                                                     torch::Dtype dtype = torch::kFloat64) {
    dssl::frameworks::ViewFeatures f;
    f.layout = dssl_layout();
    for (int s = 0; s < 4; ++s) {
        f.z.push_back(torch::randn({n, d}, dtype).requires_grad_(requires_grad));
        f.y.push_back(torch::randn({n, d}, dtype).requires_grad_(requires_grad));
    }
    return f;
}

// Small, fast run on the synthetic set.
inline dssl::RunConfig tiny_config(const std::string& cache_dir, int epochs = 1) {
    const std::string text = R"(
[run]
epochs = )" + std::to_string(epochs) + R"(
batch_size = 16
workers = 0
[data]
name = "synthetic-tiny"
cache_dir = ")" + cache_dir + R"("
synthetic_train = 40
synthetic_test = 20
[model]
framework = "simsiam"
arch = "small"
base_width = 8
projector_hidden = 32
projector_out = 32
predictor_hidden = 16
[views]
mode = "dssl"
[monitor]
knn_k = 5
collapse_factor = 1e-6
)";
    return dssl::parse_config(text);
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dssl-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing
