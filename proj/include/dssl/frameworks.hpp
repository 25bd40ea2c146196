#pragma once

#include "dssl/views.hpp"

#include <torch/torch.h>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dssl::frameworks {

enum class Framework { simsiam, byol, simclr };
std::string_view framework_name(Framework f);
Framework parse_framework(std::string_view name);

/// `small` is a 3-stage basic-block ResNet for desk-scale runs; `resnet18_cifar`
/// is ResNet-18 with a 3x3 stem and no max-pool; `resnet50` is the ImageNet one.
enum class EncoderArch { small, resnet18_cifar, resnet50 };
std::string_view arch_name(EncoderArch a);
EncoderArch parse_arch(std::string_view name);

struct EncoderConfig {
    EncoderArch arch = EncoderArch::small;
    int base_width = 16;  // ignored by the ResNet-18/50 presets

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct HeadConfig {
    int projector_hidden = 512;
    int projector_out = 512;
    int projector_layers = 2;
    int predictor_hidden = 128;

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

/// Head widths of each framework's reference CIFAR recipe.
HeadConfig default_heads(Framework f);

struct ModelConfig {
    Framework framework = Framework::simsiam;
    EncoderConfig encoder{};
    HeadConfig heads = default_heads(Framework::simsiam);

    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class BasicBlockImpl : public torch::nn::Module {
public:
    BasicBlockImpl(int in, int out, int stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
    torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
    torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

class BottleneckImpl : public torch::nn::Module {
public:
    static constexpr int kExpansion = 4;
    BottleneckImpl(int in, int width, int stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
    torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
    torch::nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Backbone f: image batch [B,3,H,W] -> globally pooled representation [B, feature_dim].
class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const EncoderConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);
    int feature_dim() const { return feature_dim_; }

private:
    torch::nn::Sequential stem_{nullptr};
    torch::nn::Sequential stages_{nullptr};
    int feature_dim_ = 0;
};
TORCH_MODULE(Encoder);

/// Projector g for a framework, matching the cited originals' layouts.
torch::nn::Sequential make_projector(Framework f, int in_dim, const HeadConfig& heads);
/// Predictor h (SimSiam/BYOL only).
torch::nn::Sequential make_predictor(Framework f, const HeadConfig& heads);

/// Online networks plus, for BYOL, the momentum copy (parameters ξ).
struct ModelBundle {
    ModelConfig config;
    Encoder encoder{nullptr};
    torch::nn::Sequential projector{nullptr};
    torch::nn::Sequential predictor{nullptr};
    Encoder momentum_encoder{nullptr};
    torch::nn::Sequential momentum_projector{nullptr};

    Framework framework() const { return config.framework; }
    bool has_predictor() const { return !predictor.is_empty(); }
    bool has_momentum() const { return !momentum_encoder.is_empty(); }

    /// Parameters updated by the optimizer (encoder, projector, predictor).
    std::vector<torch::Tensor> trainable_parameters() const;
    /// Every named tensor (parameters and buffers) grouped as "<group>/<name>".
    std::vector<std::pair<std::string, torch::Tensor>> named_state() const;
    void train(bool on = true);
};

/// Builds the online networks; BYOL bundles also get an initialised momentum copy.
ModelBundle make_model(const ModelConfig& cfg);
/// Seeds torch's global generator and builds under a process-wide lock, so
/// concurrent runs get the same initial weights as sequential ones.
ModelBundle make_model(const ModelConfig& cfg, std::uint64_t init_seed);
/// (Re)creates the momentum networks as an exact copy of the online ones.
void init_momentum(ModelBundle& model);

/// Which collections of slots play which role in the loss.
struct PairLayout {
    std::vector<views::ViewKind> kinds;
    std::vector<std::pair<int, int>> sym_standard;  // V_T
    std::vector<std::pair<int, int>> sym_heavy;     // V_T̂
    std::vector<std::pair<int, int>> directed;      // (heavy, parent): V_{T<-T̂}

    static PairLayout from_view_set(const views::ViewSet& set);
    int slots() const { return static_cast<int>(kinds.size()); }
};

/// One batch of ViewSets stacked slot-wise into [B,3,H,W] tensors.
struct ViewBatch {
    std::vector<torch::Tensor> slots;
    PairLayout layout;
    std::int64_t batch_size() const { return slots.empty() ? 0 : slots.front().size(0); }
};

torch::Tensor to_tensor(const ImageSample& img);
torch::Tensor stack_images(const std::vector<const ImageSample*>& images);
ViewBatch stack_views(const std::vector<views::ViewSet>& sets);

/// Per-slot z-side predictions and y-side targets; y is undefined for slots
/// that never act as targets.
struct ViewFeatures {
    std::vector<torch::Tensor> z;
    std::vector<torch::Tensor> y;
    std::vector<torch::Tensor> projections;  // online projector outputs (monitoring)
    PairLayout layout;
    Framework framework = Framework::simsiam;

    bool has_target(int slot) const { return y.at(static_cast<std::size_t>(slot)).defined(); }
};

/// Slots that act as targets under the layout's symmetric pairs and directed edges.
std::vector<bool> default_target_slots(const PairLayout& layout);

ViewFeatures forward_views(ModelBundle& model, const ViewBatch& batch);
ViewFeatures forward_views(ModelBundle& model, const ViewBatch& batch, const std::vector<bool>& target_slots);

/// Value-identical copy that blocks gradient flow to its producers.
torch::Tensor stop_gradient(const torch::Tensor& x);

/// Framework target y(v) computed from scratch for a view batch.
torch::Tensor target(ModelBundle& model, const torch::Tensor& views);

/// ξ <- τ ξ + (1 - τ) θ over matched parameter lists.
void ema_update(const std::vector<torch::Tensor>& momentum_params, const std::vector<torch::Tensor>& online_params,
                double tau);
void ema_update(ModelBundle& model, double tau);

}  // namespace dssl::frameworks
