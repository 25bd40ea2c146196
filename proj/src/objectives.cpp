#include "dssl/objectives.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dssl::objectives {
namespace {

using frameworks::Framework;
using frameworks::ViewFeatures;

const torch::Tensor& z_at(const ViewFeatures& f, int slot) {
    const auto& z = f.z.at(static_cast<std::size_t>(slot));
    if (!z.defined()) throw ShapeError("loss: missing embedding for slot " + std::to_string(slot));
    return z;
}

const torch::Tensor& y_at(const ViewFeatures& f, int slot) {
    if (!f.has_target(slot)) throw ShapeError("loss: slot " + std::to_string(slot) + " has no target");
    return f.y[static_cast<std::size_t>(slot)];
}

torch::Tensor row_normalize(const torch::Tensor& x, const char* who) {
    auto norms = x.norm(2, -1, true);
    if ((norms == 0).any().item<bool>()) throw ZeroNormError(std::string(who) + ": zero-norm embedding");
    return x / norms;
}

// One symmetric pair under S: two terms.
torch::Tensor pair_term(const ViewFeatures& f, const SimilarityObjective& s, int a, int b) {
    if (s.kind == SimilarityKind::nt_xent) return 2.0 * nt_xent_standard(z_at(f, a), z_at(f, b), s.temperature);
    return pairwise_similarity(s, z_at(f, a), y_at(f, b)) + pairwise_similarity(s, z_at(f, b), y_at(f, a));
}

// Pull `src` toward the detached target of `dst`: one term.
torch::Tensor directed_term(const ViewFeatures& f, int src, int dst) { return directional(z_at(f, src), y_at(f, dst)); }

torch::Tensor zero_like_features(const ViewFeatures& f) {
    for (const auto& z : f.z)
        if (z.defined()) return torch::zeros({}, z.options());
    return torch::zeros({});
}

}  // namespace

void LossWeights::validate() const {
    const std::pair<const char*, double> fields[] = {{"loss.alpha", alpha}, {"loss.beta", beta},
                                                     {"loss.gamma", gamma}, {"loss.delta", delta}};
    for (const auto& [name, value] : fields)
        if (!std::isfinite(value) || value < 0.0) throw ConfigError(name, "weight must be finite and >= 0");
    if (alpha + beta + gamma + delta <= 0.0) throw ConfigError("loss", "at least one weight must be positive");
}

std::string_view similarity_name(SimilarityKind kind) {
    switch (kind) {
        case SimilarityKind::neg_cosine: return "neg_cosine";
        case SimilarityKind::nt_xent: return "nt_xent";
        case SimilarityKind::normalized_mse: return "normalized_mse";
    }
    return "unknown";
}

std::string_view asym_form_name(AsymForm form) { return form == AsymForm::cosine ? "cosine" : "softmax"; }

AsymForm parse_asym_form(std::string_view name) {
    if (name == "cosine") return AsymForm::cosine;
    if (name == "softmax") return AsymForm::softmax;
    throw ConfigError("loss.asym_form", "unknown form '" + std::string(name) + "' (expected cosine|softmax)");
}

void SimilarityObjective::validate() const {
    if (kind == SimilarityKind::nt_xent && !(temperature > 0.0 && std::isfinite(temperature)))
        throw ConfigError("loss.temperature", "temperature must be positive");
}

SimilarityObjective SimilarityObjective::for_framework(Framework f, double temperature) {
    SimilarityObjective s;
    s.temperature = temperature;
    switch (f) {
        case Framework::simsiam: s.kind = SimilarityKind::neg_cosine; break;
        case Framework::byol: s.kind = SimilarityKind::normalized_mse; break;
        case Framework::simclr: s.kind = SimilarityKind::nt_xent; break;
    }
    return s;
}

torch::Tensor neg_cosine(const torch::Tensor& z, const torch::Tensor& y) {
    if (!z.sizes().equals(y.sizes())) throw ShapeError("neg_cosine: shape mismatch");
    if (z.dim() < 1 || z.dim() > 2) throw ShapeError("neg_cosine: expected a vector or a [B,d] batch");
    auto cos = (row_normalize(z, "neg_cosine") * row_normalize(y, "neg_cosine")).sum(-1);
    return -cos.mean();
}

torch::Tensor directional(const torch::Tensor& z, const torch::Tensor& y) {
    return neg_cosine(z, frameworks::stop_gradient(y));
}

torch::Tensor pairwise_similarity(const SimilarityObjective& s, const torch::Tensor& z, const torch::Tensor& y) {
    switch (s.kind) {
        case SimilarityKind::neg_cosine: return neg_cosine(z, y);
        case SimilarityKind::normalized_mse: return 2.0 + 2.0 * neg_cosine(z, y);
        case SimilarityKind::nt_xent: break;
    }
    throw Error("pairwise_similarity: nt_xent is a batch objective, not a pairwise one");
}

torch::Tensor sym_loss(const ViewFeatures& f, const SimilarityObjective& s) {
    if (f.layout.sym_standard.empty()) throw ShapeError("sym_loss: no standard view pair");
    const auto [a, b] = f.layout.sym_standard.front();
    return pair_term(f, s, a, b);
}

torch::Tensor asym_loss(const ViewFeatures& f) {
    int heavy = 0;
    for (auto k : f.layout.kinds) heavy += k == views::ViewKind::heavy;
    if (heavy == 0 || static_cast<int>(f.layout.directed.size()) != heavy)
        throw ShapeError("asym_loss: every heavy view needs exactly one parent edge");
    auto total = zero_like_features(f);
    for (const auto& [h, p] : f.layout.directed) total = total + directed_term(f, h, p);
    return total;
}

torch::Tensor dssl_loss(const ViewFeatures& f, const SimilarityObjective& s) {
    if (f.layout.sym_standard.size() != 1 || f.layout.directed.size() != 2)
        throw ShapeError("dssl_loss: expected one standard pair and two heavy children");
    return (sym_loss(f, s) + asym_loss(f)) / 4.0;
}

std::vector<bool> required_targets(const frameworks::PairLayout& layout, const LossWeights& w) {
    std::vector<bool> need(layout.kinds.size(), false);
    if (w.alpha > 0)
        for (const auto& [a, b] : layout.sym_standard) need[a] = need[b] = true;
    if (w.beta > 0)
        for (const auto& [a, b] : layout.sym_heavy) need[a] = need[b] = true;
    if (w.gamma > 0)
        for (const auto& [h, p] : layout.directed) need[p] = true;
    if (w.delta > 0)
        for (const auto& [h, p] : layout.directed) need[h] = true;
    return need;
}

LossTerms general_loss(const ViewFeatures& f, const LossWeights& w, const SimilarityObjective& s) {
    w.validate();
    s.validate();
    const auto& L = f.layout;
    if (w.alpha > 0 && L.sym_standard.empty()) throw ShapeError("general_loss: alpha > 0 but no standard pairs");
    if (w.beta > 0 && L.sym_heavy.empty()) throw ShapeError("general_loss: beta > 0 but no heavy pairs");
    if ((w.gamma > 0 || w.delta > 0) && L.directed.empty())
        throw ShapeError("general_loss: gamma/delta > 0 but no heavy children");

    LossTerms out;
    auto total = zero_like_features(f);
    auto add = [&](double weight, std::size_t terms, auto&& sum_fn, double& raw) {
        if (weight <= 0.0) return;
        auto sum = sum_fn();
        raw = sum.template item<double>();
        total = total + weight * sum;
        out.normalizer += weight * static_cast<double>(terms);
    };
    add(w.alpha, 2 * L.sym_standard.size(), [&] {
        auto t = zero_like_features(f);
        for (const auto& [a, b] : L.sym_standard) t = t + pair_term(f, s, a, b);
        return t;
    }, out.sym_standard);
    add(w.beta, 2 * L.sym_heavy.size(), [&] {
        auto t = zero_like_features(f);
        for (const auto& [a, b] : L.sym_heavy) t = t + pair_term(f, s, a, b);
        return t;
    }, out.sym_heavy);
    add(w.gamma, L.directed.size(), [&] {
        auto t = zero_like_features(f);
        for (const auto& [h, p] : L.directed) t = t + directed_term(f, h, p);
        return t;
    }, out.directed);
    add(w.delta, L.directed.size(), [&] {
        auto t = zero_like_features(f);
        for (const auto& [h, p] : L.directed) t = t + directed_term(f, p, h);
        return t;
    }, out.reverse);
    out.total = total / out.normalizer;
    return out;
}

torch::Tensor nt_xent_standard(const torch::Tensor& a, const torch::Tensor& b, double temperature) {
    if (a.dim() != 2 || !a.sizes().equals(b.sizes())) throw ShapeError("nt_xent: expected matching [n,d] batches");
    const auto n = a.size(0);
    if (n < 2) throw ShapeError("nt_xent: batch of 1 has no negatives");
    if (!(temperature > 0.0)) throw ConfigError("loss.temperature", "temperature must be positive");
    auto reps = torch::cat({row_normalize(a, "nt_xent"), row_normalize(b, "nt_xent")}, 0);
    auto logits = reps.matmul(reps.t()) / temperature;
    auto eye = torch::eye(2 * n, torch::TensorOptions().dtype(torch::kBool).device(a.device()));
    logits = logits.masked_fill(eye, -std::numeric_limits<double>::infinity());
    auto idx = torch::arange(n, torch::TensorOptions().dtype(torch::kLong).device(a.device()));
    auto labels = torch::cat({idx + n, idx});
    return torch::nn::functional::cross_entropy(logits, labels);
}

NtXentResult nt_xent(const torch::Tensor& a, const torch::Tensor& b, double temperature, const torch::Tensor& heavy_a,
                     const torch::Tensor& heavy_b, AsymForm form) {
    NtXentResult out;
    out.standard = nt_xent_standard(a, b, temperature);
    const auto n = a.size(0);
    out.similarity_terms = 2 * n * n;
    out.loss = out.standard;
    if (heavy_a.defined() != heavy_b.defined()) throw ShapeError("nt_xent: heavy views must come for both sides");
    if (!heavy_a.defined()) return out;
    if (!heavy_a.sizes().equals(a.sizes()) || !heavy_b.sizes().equals(b.sizes()))
        throw ShapeError("nt_xent: each instance needs one heavy child per standard view");

    if (form == AsymForm::cosine) {
        out.asymmetric = (directional(heavy_a, a) + directional(heavy_b, b)) / 2.0;
        out.similarity_terms += heavy_a.size(0) + heavy_b.size(0);
    } else {
        // Parent is the sole positive among the detached standard embeddings.
        auto targets = row_normalize(torch::cat({a, b}, 0).detach(), "nt_xent");
        auto queries = row_normalize(torch::cat({heavy_a, heavy_b}, 0), "nt_xent");
        auto logits = queries.matmul(targets.t()) / temperature;
        auto labels = torch::arange(2 * n, torch::TensorOptions().dtype(torch::kLong).device(a.device()));
        out.asymmetric = torch::nn::functional::cross_entropy(logits, labels);
        out.similarity_terms += logits.numel();
    }
    out.loss = out.standard + out.asymmetric;
    return out;
}

}  // namespace dssl::objectives
