#pragma once

#include "dssl/frameworks.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <string_view>

/// D, the symmetric and directional losses, the four-weight objective and NT-Xent.
namespace dssl::objectives {

/// Coefficients of the four pair-collection sums:
/// alpha·V_T  +  beta·V_T̂  +  gamma·V_{T<-T̂}  +  delta·V_{T̂<-T}.
struct LossWeights {
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 1.0;
    double delta = 0.0;

    void validate() const;

    static LossWeights dssl() { return {1.0, 0.0, 1.0, 0.0}; }
    static LossWeights symmetric_only() { return {1.0, 0.0, 0.0, 0.0}; }
    static LossWeights all_views() { return {1.0, 1.0, 1.0, 1.0}; }
    /// α = 1, β = 0, γ = 1 - δ.
    static LossWeights delta_sweep(double delta) { return {1.0, 0.0, 1.0 - delta, delta}; }

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

enum class SimilarityKind { neg_cosine, nt_xent, normalized_mse };
std::string_view similarity_name(SimilarityKind kind);

/// How SimCLR's directional term is formed.
enum class AsymForm { cosine, softmax };
std::string_view asym_form_name(AsymForm form);
AsymForm parse_asym_form(std::string_view name);

struct SimilarityObjective {
    SimilarityKind kind = SimilarityKind::neg_cosine;
    double temperature = 0.5;  // nt_xent only
    AsymForm asym_form = AsymForm::cosine;

    void validate() const;
    static SimilarityObjective for_framework(frameworks::Framework f, double temperature = 0.5);

    friend bool operator==(const SimilarityObjective&, const SimilarityObjective&) = default;
};

/// -<z,y>/(|z||y|), averaged over rows for 2-D inputs. Zero-norm rows throw.
torch::Tensor neg_cosine(const torch::Tensor& z, const torch::Tensor& y);

/// D: neg_cosine against a detached target.
torch::Tensor directional(const torch::Tensor& z, const torch::Tensor& y);

/// Pairwise S for the siamese frameworks (neg_cosine, or 2 + 2·neg_cosine for BYOL).
torch::Tensor pairwise_similarity(const SimilarityObjective& s, const torch::Tensor& z, const torch::Tensor& y);

/// S(z, y(v')) + S(z', y(v)) over the first symmetric standard pair.
torch::Tensor sym_loss(const frameworks::ViewFeatures& f, const SimilarityObjective& s);

/// Σ over directed edges of D(ẑ, y(parent)).
torch::Tensor asym_loss(const frameworks::ViewFeatures& f);

/// (S(z,y') + S(z',y) + D(ẑ,y) + D(ẑ',y')) / 4 on a dssl slot layout.
torch::Tensor dssl_loss(const frameworks::ViewFeatures& f, const SimilarityObjective& s);

struct LossTerms {
    torch::Tensor total;
    // Raw (unweighted) sums of each collection; zero when a collection is inactive.
    double sym_standard = 0.0;
    double sym_heavy = 0.0;
    double directed = 0.0;
    double reverse = 0.0;
    /// Σ_k w_k · (terms in collection k); total = weighted sum / normalizer.
    double normalizer = 0.0;
};

/// Slots whose targets a weight setting needs.
std::vector<bool> required_targets(const frameworks::PairLayout& layout, const LossWeights& w);

/// Weighted four-collection objective, normalised by the weighted term count so
/// every paradigm sits on the same scale (the four dssl terms are divided by 4).
LossTerms general_loss(const frameworks::ViewFeatures& f, const LossWeights& w, const SimilarityObjective& s);

struct NtXentResult {
    torch::Tensor loss;        // combined objective
    torch::Tensor standard;    // NT-Xent over the 2n standard views
    torch::Tensor asymmetric;  // mean directional term (undefined without the heavy extension)
    std::int64_t similarity_terms = 0;
};

/// Pair-similarity accounting: the two n x n cross-view logit blocks, plus one
/// term per heavy child when the extension is on.
constexpr std::int64_t nt_xent_similarity_count(std::int64_t n, bool heavy_extension) {
    return 2 * n * n + (heavy_extension ? 2 * n : 0);
}

/// NT-Xent over views a[i] <-> b[i]. Standard views only:
torch::Tensor nt_xent_standard(const torch::Tensor& a, const torch::Tensor& b, double temperature);

/// With heavy_a/heavy_b defined, heavy child rows are pulled toward their
/// parents (a, b respectively) and never act as negatives or targets.
NtXentResult nt_xent(const torch::Tensor& a, const torch::Tensor& b, double temperature,
                     const torch::Tensor& heavy_a = {}, const torch::Tensor& heavy_b = {},
                     AsymForm form = AsymForm::cosine);

}  // namespace dssl::objectives
