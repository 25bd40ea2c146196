#include "dssl/frameworks.hpp"

#include <mutex>
#include <string>

namespace dssl::frameworks {
namespace nn = torch::nn;

std::string_view framework_name(Framework f) {
    switch (f) {
        case Framework::simsiam: return "simsiam";
        case Framework::byol: return "byol";
        case Framework::simclr: return "simclr";
    }
    return "unknown";
}

Framework parse_framework(std::string_view name) {
    for (auto f : {Framework::simsiam, Framework::byol, Framework::simclr})
        if (framework_name(f) == name) return f;
    throw ConfigError("model.framework",
                      "unknown framework '" + std::string(name) + "' (expected simsiam|byol|simclr)");
}

std::string_view arch_name(EncoderArch a) {
    switch (a) {
        case EncoderArch::small: return "small";
        case EncoderArch::resnet18_cifar: return "resnet18_cifar";
        case EncoderArch::resnet50: return "resnet50";
    }
    return "unknown";
}

EncoderArch parse_arch(std::string_view name) {
    for (auto a : {EncoderArch::small, EncoderArch::resnet18_cifar, EncoderArch::resnet50})
        if (arch_name(a) == name) return a;
    throw ConfigError("model.encoder",
                      "unknown encoder '" + std::string(name) + "' (expected small|resnet18_cifar|resnet50)");
}

HeadConfig default_heads(Framework f) {
    switch (f) {
        case Framework::simsiam: return {2048, 2048, 2, 512};
        case Framework::byol: return {4096, 256, 2, 4096};
        case Framework::simclr: return {512, 128, 2, 0};
    }
    return {};
}

void ModelConfig::validate() const {
    if (encoder.base_width < 1) throw ConfigError("model.base_width", "must be >= 1");
    if (heads.projector_hidden < 1) throw ConfigError("model.projector_hidden", "must be >= 1");
    if (heads.projector_out < 1) throw ConfigError("model.projector_out", "must be >= 1");
    if (heads.projector_layers < 2 || heads.projector_layers > 3)
        throw ConfigError("model.projector_layers", "must be 2 or 3");
    if (framework != Framework::simclr && heads.predictor_hidden < 1)
        throw ConfigError("model.predictor_hidden", "must be >= 1 for simsiam/byol");
}

namespace {

nn::Conv2d conv(int in, int out, int k, int stride, int pad) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(false));
}

nn::Sequential downsample(int in, int out, int stride) {
    if (in == out && stride == 1) return nn::Sequential();
    return nn::Sequential(conv(in, out, 1, stride, 0), nn::BatchNorm2d(out));
}

}  // namespace

BasicBlockImpl::BasicBlockImpl(int in, int out, int stride) {
    conv1_ = register_module("conv1", conv(in, out, 3, stride, 1));
    bn1_ = register_module("bn1", nn::BatchNorm2d(out));
    conv2_ = register_module("conv2", conv(out, out, 3, 1, 1));
    bn2_ = register_module("bn2", nn::BatchNorm2d(out));
    shortcut_ = register_module("shortcut", downsample(in, out, stride));
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1_(conv1_(x)));
    out = bn2_(conv2_(out));
    auto skip = shortcut_->is_empty() ? x : shortcut_->forward(x);
    return torch::relu(out + skip);
}

BottleneckImpl::BottleneckImpl(int in, int width, int stride) {
    const int out = width * kExpansion;
    conv1_ = register_module("conv1", conv(in, width, 1, 1, 0));
    bn1_ = register_module("bn1", nn::BatchNorm2d(width));
    conv2_ = register_module("conv2", conv(width, width, 3, stride, 1));
    bn2_ = register_module("bn2", nn::BatchNorm2d(width));
    conv3_ = register_module("conv3", conv(width, out, 1, 1, 0));
    bn3_ = register_module("bn3", nn::BatchNorm2d(out));
    shortcut_ = register_module("shortcut", downsample(in, out, stride));
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1_(conv1_(x)));
    out = torch::relu(bn2_(conv2_(out)));
    out = bn3_(conv3_(out));
    auto skip = shortcut_->is_empty() ? x : shortcut_->forward(x);
    return torch::relu(out + skip);
}

EncoderImpl::EncoderImpl(const EncoderConfig& cfg) {
    stem_ = nn::Sequential();
    stages_ = nn::Sequential();
    switch (cfg.arch) {
        case EncoderArch::small:
        case EncoderArch::resnet18_cifar: {
            const bool small = cfg.arch == EncoderArch::small;
            const int base = small ? cfg.base_width : 64;
            const std::vector<int> widths = small ? std::vector<int>{base, base * 2, base * 4}
                                                  : std::vector<int>{64, 128, 256, 512};
            const std::vector<int> blocks = small ? std::vector<int>{1, 1, 1} : std::vector<int>{2, 2, 2, 2};
            stem_->push_back(conv(3, base, 3, 1, 1));
            stem_->push_back(nn::BatchNorm2d(base));
            stem_->push_back(nn::ReLU());
            int in = base;
            for (std::size_t s = 0; s < widths.size(); ++s)
                for (int b = 0; b < blocks[s]; ++b) {
                    const int stride = (s > 0 && b == 0) ? 2 : 1;
                    stages_->push_back(BasicBlock(in, widths[s], stride));
                    in = widths[s];
                }
            feature_dim_ = in;
            break;
        }
        case EncoderArch::resnet50: {
            stem_->push_back(conv(3, 64, 7, 2, 3));
            stem_->push_back(nn::BatchNorm2d(64));
            stem_->push_back(nn::ReLU());
            stem_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
            const std::vector<int> widths{64, 128, 256, 512};
            const std::vector<int> blocks{3, 4, 6, 3};
            int in = 64;
            for (std::size_t s = 0; s < widths.size(); ++s)
                for (int b = 0; b < blocks[s]; ++b) {
                    const int stride = (s > 0 && b == 0) ? 2 : 1;
                    stages_->push_back(Bottleneck(in, widths[s], stride));
                    in = widths[s] * BottleneckImpl::kExpansion;
                }
            feature_dim_ = in;
            break;
        }
    }
    register_module("stem", stem_);
    register_module("stages", stages_);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("encoder expects [B,3,H,W] input");
    auto h = stages_->forward(stem_->forward(x));
    return torch::adaptive_avg_pool2d(h, {1, 1}).flatten(1);
}

torch::nn::Sequential make_projector(Framework f, int in_dim, const HeadConfig& heads) {
    nn::Sequential seq;
    const int hidden = heads.projector_hidden;
    switch (f) {
        case Framework::simsiam: {
            int in = in_dim;
            for (int l = 0; l + 1 < heads.projector_layers; ++l) {
                seq->push_back(nn::Linear(nn::LinearOptions(in, hidden).bias(false)));
                seq->push_back(nn::BatchNorm1d(hidden));
                seq->push_back(nn::ReLU());
                in = hidden;
            }
            seq->push_back(nn::Linear(nn::LinearOptions(in, heads.projector_out).bias(false)));
            seq->push_back(nn::BatchNorm1d(nn::BatchNormOptions(heads.projector_out).affine(false)));
            break;
        }
        case Framework::byol: {
            int in = in_dim;
            for (int l = 0; l + 1 < heads.projector_layers; ++l) {
                seq->push_back(nn::Linear(in, hidden));
                seq->push_back(nn::BatchNorm1d(hidden));
                seq->push_back(nn::ReLU());
                in = hidden;
            }
            seq->push_back(nn::Linear(in, heads.projector_out));
            break;
        }
        case Framework::simclr: {
            int in = in_dim;
            for (int l = 0; l + 1 < heads.projector_layers; ++l) {
                seq->push_back(nn::Linear(in, hidden));
                seq->push_back(nn::ReLU());
                in = hidden;
            }
            seq->push_back(nn::Linear(in, heads.projector_out));
            break;
        }
    }
    return seq;
}

torch::nn::Sequential make_predictor(Framework f, const HeadConfig& heads) {
    if (f == Framework::simclr) return nn::Sequential(nullptr);
    const int dim = heads.projector_out;
    const int hidden = heads.predictor_hidden;
    if (f == Framework::simsiam)
        return nn::Sequential(nn::Linear(nn::LinearOptions(dim, hidden).bias(false)), nn::BatchNorm1d(hidden),
                              nn::ReLU(), nn::Linear(hidden, dim));
    return nn::Sequential(nn::Linear(dim, hidden), nn::BatchNorm1d(hidden), nn::ReLU(), nn::Linear(hidden, dim));
}

std::vector<torch::Tensor> ModelBundle::trainable_parameters() const {
    auto params = encoder->parameters();
    for (auto& p : projector->parameters()) params.push_back(p);
    if (has_predictor())
        for (auto& p : predictor->parameters()) params.push_back(p);
    return params;
}

std::vector<std::pair<std::string, torch::Tensor>> ModelBundle::named_state() const {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    auto add = [&out](const std::string& group, const torch::nn::Module& m) {
        for (const auto& item : m.named_parameters()) out.emplace_back(group + "/" + item.key(), item.value());
        for (const auto& item : m.named_buffers()) out.emplace_back(group + "/" + item.key(), item.value());
    };
    add("encoder", *encoder);
    add("projector", *projector);
    if (has_predictor()) add("predictor", *predictor);
    if (has_momentum()) {
        add("momentum_encoder", *momentum_encoder);
        add("momentum_projector", *momentum_projector);
    }
    return out;
}

void ModelBundle::train(bool on) {
    encoder->train(on);
    projector->train(on);
    if (has_predictor()) predictor->train(on);
    if (has_momentum()) {
        momentum_encoder->train(on);
        momentum_projector->train(on);
    }
}

ModelBundle make_model(const ModelConfig& cfg, std::uint64_t init_seed) {
    static std::mutex mu;
    std::lock_guard lock(mu);
    torch::manual_seed(init_seed);
    return make_model(cfg);
}

ModelBundle make_model(const ModelConfig& cfg) {
    cfg.validate();
    ModelBundle model;
    model.config = cfg;
    model.encoder = Encoder(cfg.encoder);
    model.projector = make_projector(cfg.framework, model.encoder->feature_dim(), cfg.heads);
    model.predictor = make_predictor(cfg.framework, cfg.heads);
    if (cfg.framework == Framework::byol) init_momentum(model);
    return model;
}

void init_momentum(ModelBundle& model) {
    model.momentum_encoder = Encoder(model.config.encoder);
    model.momentum_projector = make_projector(model.config.framework, model.encoder->feature_dim(), model.config.heads);
    torch::NoGradGuard no_grad;
    auto copy_into = [](torch::nn::Module& dst, const torch::nn::Module& src) {
        auto d = dst.parameters();
        auto s = src.parameters();
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i].copy_(s[i]);
            d[i].set_requires_grad(false);
        }
        auto db = dst.buffers();
        auto sb = src.buffers();
        for (std::size_t i = 0; i < db.size(); ++i) db[i].copy_(sb[i]);
    };
    copy_into(*model.momentum_encoder, *model.encoder);
    copy_into(*model.momentum_projector, *model.projector);
}

PairLayout PairLayout::from_view_set(const views::ViewSet& set) {
    PairLayout layout;
    for (const auto& v : set.views) layout.kinds.push_back(v.kind);
    for (const auto& e : set.edges) {
        if (e.kind == views::EdgeKind::symmetric)
            layout.sym_standard.emplace_back(e.src, e.dst);
        else
            layout.directed.emplace_back(e.src, e.dst);
    }
    if (set.mode == views::ViewMode::dssl && layout.directed.size() == 2)
        layout.sym_heavy.emplace_back(layout.directed[0].first, layout.directed[1].first);
    return layout;
}

torch::Tensor to_tensor(const ImageSample& img) {
    return torch::from_blob(const_cast<float*>(img.pixels.data()), {3, img.height, img.width}, torch::kFloat32)
        .clone();
}

torch::Tensor stack_images(const std::vector<const ImageSample*>& images) {
    if (images.empty()) throw ShapeError("stack_images: empty batch");
    const int h = images.front()->height, w = images.front()->width;
    auto out = torch::empty({static_cast<std::int64_t>(images.size()), 3, h, w}, torch::kFloat32);
    float* dst = out.data_ptr<float>();
    const std::size_t per = static_cast<std::size_t>(3) * h * w;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->height != h || images[i]->width != w) throw ShapeError("stack_images: mixed image sizes");
        std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), dst + i * per);
    }
    return out;
}

ViewBatch stack_views(const std::vector<views::ViewSet>& sets) {
    if (sets.empty()) throw ShapeError("stack_views: empty batch");
    ViewBatch batch;
    batch.layout = PairLayout::from_view_set(sets.front());
    const std::size_t slots = sets.front().views.size();
    for (std::size_t s = 0; s < slots; ++s) {
        std::vector<const ImageSample*> images;
        images.reserve(sets.size());
        for (const auto& set : sets) {
            if (set.views.size() != slots) throw ShapeError("stack_views: inconsistent slot counts");
            images.push_back(&set.views[s].image);
        }
        batch.slots.push_back(stack_images(images));
    }
    return batch;
}

std::vector<bool> default_target_slots(const PairLayout& layout) {
    std::vector<bool> needed(layout.kinds.size(), false);
    for (const auto& [a, b] : layout.sym_standard) needed[a] = needed[b] = true;
    for (const auto& [heavy, parent] : layout.directed) needed[parent] = true;
    return needed;
}

torch::Tensor stop_gradient(const torch::Tensor& x) { return x.detach(); }

ViewFeatures forward_views(ModelBundle& model, const ViewBatch& batch) {
    return forward_views(model, batch, default_target_slots(batch.layout));
}

ViewFeatures forward_views(ModelBundle& model, const ViewBatch& batch, const std::vector<bool>& target_slots) {
    const auto slots = batch.slots.size();
    if (static_cast<int>(slots) != batch.layout.slots() || target_slots.size() != slots)
        throw ShapeError("forward_views: slot layout mismatch");
    ViewFeatures out;
    out.layout = batch.layout;
    out.framework = model.framework();
    out.z.resize(slots);
    out.y.resize(slots);
    out.projections.resize(slots);
    for (std::size_t s = 0; s < slots; ++s) {
        auto p = model.projector->forward(model.encoder->forward(batch.slots[s]));
        out.projections[s] = p;
        out.z[s] = model.has_predictor() ? model.predictor->forward(p) : p;
        if (!target_slots[s]) continue;
        switch (model.framework()) {
            case Framework::simsiam: out.y[s] = stop_gradient(p); break;
            case Framework::simclr: out.y[s] = p; break;
            case Framework::byol: out.y[s] = target(model, batch.slots[s]); break;
        }
    }
    return out;
}

torch::Tensor target(ModelBundle& model, const torch::Tensor& views) {
    switch (model.framework()) {
        case Framework::simclr: return model.projector->forward(model.encoder->forward(views));
        case Framework::simsiam: return stop_gradient(model.projector->forward(model.encoder->forward(views)));
        case Framework::byol: {
            if (!model.has_momentum()) throw Error("byol target requested before momentum initialisation");
            torch::NoGradGuard no_grad;
            return model.momentum_projector->forward(model.momentum_encoder->forward(views)).detach();
        }
    }
    throw Error("target: unknown framework");
}

void ema_update(const std::vector<torch::Tensor>& momentum_params, const std::vector<torch::Tensor>& online_params,
                double tau) {
    if (momentum_params.size() != online_params.size())
        throw ShapeError("ema_update: parameter count mismatch between momentum and online networks");
    for (std::size_t i = 0; i < momentum_params.size(); ++i)
        if (!momentum_params[i].sizes().equals(online_params[i].sizes()))
            throw ShapeError("ema_update: parameter shape mismatch at index " + std::to_string(i));
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < momentum_params.size(); ++i) {
        auto xi = momentum_params[i];
        xi.mul_(tau).add_(online_params[i].detach(), 1.0 - tau);
    }
}

void ema_update(ModelBundle& model, double tau) {
    if (!model.has_momentum()) throw Error("ema_update: model has no momentum networks");
    auto momentum = model.momentum_encoder->parameters();
    for (auto& p : model.momentum_projector->parameters()) momentum.push_back(p);
    auto online = model.encoder->parameters();
    for (auto& p : model.projector->parameters()) online.push_back(p);
    ema_update(momentum, online, tau);
}

}  // namespace dssl::frameworks
