#include "dssl/eval.hpp"

#include "dssl/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dssl::eval {
namespace {

bool read_feature_cache(const fs::path& path, torch::Tensor& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::int64_t shape[2] = {0, 0};
    in.read(reinterpret_cast<char*>(shape), sizeof(shape));
    if (!in || shape[0] <= 0 || shape[1] <= 0) return false;
    auto t = torch::empty({shape[0], shape[1]}, torch::kFloat32);
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) return false;
    out = t;
    return true;
}

void write_feature_cache(const fs::path& path, const torch::Tensor& feats) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    auto t = feats.to(torch::kFloat32).contiguous();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        const std::int64_t shape[2] = {t.size(0), t.size(1)};
        out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
        out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!out) throw Error("feature cache write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace

std::string_view eval_mode_name(EvalMode m) { return m == EvalMode::linear ? "linear" : "knn"; }

void EvalConfig::validate() const {
    if (epochs < 1) throw ConfigError("eval.epochs", "must be >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("eval.base_lr", "must be positive");
    if (batch_size < 1) throw ConfigError("eval.batch_size", "must be >= 1");
    if (k < 1) throw ConfigError("eval.k", "must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("eval.temperature", "must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("eval.momentum", "must be in [0, 1)");
}

LoadedCheckpoint load_model(const std::string& checkpoint_dir) {
    const auto cfg_path = fs::path(checkpoint_dir) / "config.toml";
    if (!fs::exists(cfg_path)) throw Error("checkpoint has no config.toml: " + checkpoint_dir);
    LoadedCheckpoint out;
    out.config = load_config(cfg_path.string());
    out.model = frameworks::make_model(out.config.model, 0);
    trainer::load_checkpoint(checkpoint_dir, out.model, nullptr);
    out.model.train(false);
    out.hash = trainer::checkpoint_hash(checkpoint_dir);
    return out;
}

ImageSample prepare_eval_image(const ImageSample& img, int crop_size, const EvalConfig& cfg) {
    if (img.height == crop_size && img.width == crop_size) return img;
    if (cfg.crop == CropPolicy::center) {
        if (img.height < crop_size || img.width < crop_size) return pixel::resize(img, crop_size, crop_size);
        const double top = (img.height - crop_size) / 2.0, left = (img.width - crop_size) / 2.0;
        return pixel::resized_crop(img, top, left, crop_size, crop_size, crop_size, crop_size);
    }
    const int short_side = cfg.eval_resize > 0 ? cfg.eval_resize : crop_size * 8 / 7;
    const double scale = static_cast<double>(short_side) / std::min(img.height, img.width);
    const int h = std::max(crop_size, static_cast<int>(std::lround(img.height * scale)));
    const int w = std::max(crop_size, static_cast<int>(std::lround(img.width * scale)));
    const auto resized = pixel::resize(img, h, w);
    return pixel::resized_crop(resized, (h - crop_size) / 2.0, (w - crop_size) / 2.0, crop_size, crop_size, crop_size,
                               crop_size);
}

torch::Tensor extract_features(frameworks::ModelBundle& model, const data::Dataset& ds, const EvalConfig& cfg,
                               const std::string& cache_dir, const std::string& checkpoint_hash,
                               const std::string& split) {
    fs::path cache_path;
    if (!cache_dir.empty() && !checkpoint_hash.empty()) {
        cache_path = fs::path(cache_dir) / ("features-" + checkpoint_hash.substr(0, 16) + "-" + ds.name + "-" + split +
                                            "-" + std::to_string(ds.size()) + ".bin");
        torch::Tensor cached;
        if (read_feature_cache(cache_path, cached)) return cached;
    }
    const int crop = ds.images.empty() ? 0 : ds.images.front().height;
    data::Dataset prepared;
    prepared.name = ds.name;
    prepared.num_classes = ds.num_classes;
    prepared.labels = ds.labels;
    prepared.images.reserve(ds.size());
    for (const auto& img : ds.images) prepared.images.push_back(prepare_eval_image(img, crop, cfg));
    auto feats = trainer::encode_dataset(model, prepared, std::max(1, cfg.batch_size)).contiguous();
    if (!cache_path.empty()) write_feature_cache(cache_path, feats);
    return feats;
}

double linear_probe(const torch::Tensor& train_x, const torch::Tensor& train_y, const torch::Tensor& test_x,
                    const torch::Tensor& test_y, int num_classes, const EvalConfig& cfg) {
    cfg.validate();
    if (train_x.size(0) != train_y.size(0) || test_x.size(0) != test_y.size(0))
        throw ShapeError("linear_probe: label/feature count mismatch");
    if (train_x.size(1) != test_x.size(1)) throw ShapeError("linear_probe: feature dims differ");
    auto xtr = train_x.to(torch::kFloat32).detach();
    auto xte = test_x.to(torch::kFloat32).detach();
    double scale = xtr.norm(2, 1).mean().item<double>();
    if (!(scale > 0.0)) scale = 1.0;
    xtr = xtr / scale;
    xte = xte / scale;
    const auto ytr = train_y.to(torch::kLong);

    auto W = torch::zeros({xtr.size(1), num_classes}, torch::kFloat32).requires_grad_(true);
    auto b = torch::zeros({num_classes}, torch::kFloat32).requires_grad_(true);
    trainer::Sgd opt({W, b}, cfg.momentum, cfg.weight_decay);
    const auto n = xtr.size(0);
    const auto bs = std::min<std::int64_t>(cfg.batch_size, n);
    const std::int64_t per_epoch = (n + bs - 1) / bs;
    const std::int64_t total = per_epoch * cfg.epochs;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::int64_t> order(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0, 0x11EA));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        auto perm = torch::tensor(order, torch::kLong);
        for (std::int64_t start = 0; start < n; start += bs) {
            auto idx = perm.slice(0, start, std::min(start + bs, n));
            auto logits = xtr.index_select(0, idx).matmul(W) + b;
            auto loss = torch::nn::functional::cross_entropy(logits, ytr.index_select(0, idx));
            opt.zero_grad();
            loss.backward();
            opt.step(trainer::cosine_lr(step++, total, cfg.lr()));
        }
    }
    torch::NoGradGuard no_grad;
    auto pred = (xte.matmul(W) + b).argmax(1);
    return pred.eq(test_y.to(torch::kLong)).to(torch::kFloat64).mean().item<double>();
}

EvalReport linear_eval(const std::string& checkpoint_dir, const data::DatasetSplits& data, const EvalConfig& cfg,
                       const std::string& cache_dir) {
    cfg.validate();
    auto loaded = load_model(checkpoint_dir);
    EvalReport r;
    r.mode = EvalMode::linear;
    r.config = cfg;
    r.checkpoint_hash = loaded.hash;
    r.encoder_hash_before = trainer::parameter_hash(*loaded.model.encoder);
    auto tr = extract_features(loaded.model, data.train, cfg, cache_dir, loaded.hash, "train");
    auto te = extract_features(loaded.model, data.test, cfg, cache_dir, loaded.hash, "test");
    r.accuracy = linear_probe(tr, trainer::labels_tensor(data.train), te, trainer::labels_tensor(data.test),
                              data.train.num_classes, cfg);
    r.encoder_hash_after = trainer::parameter_hash(*loaded.model.encoder);
    if (r.encoder_hash_before != r.encoder_hash_after) throw Error("linear_eval: encoder parameters changed");
    return r;
}

EvalReport knn_eval(const std::string& checkpoint_dir, const data::Dataset& memory, const data::Dataset& queries,
                    const EvalConfig& cfg, const std::string& cache_dir) {
    cfg.validate();
    auto loaded = load_model(checkpoint_dir);
    EvalReport r;
    r.mode = EvalMode::knn;
    r.config = cfg;
    r.checkpoint_hash = loaded.hash;
    r.encoder_hash_before = r.encoder_hash_after = trainer::parameter_hash(*loaded.model.encoder);
    auto mem = extract_features(loaded.model, memory, cfg, cache_dir, loaded.hash, "train");
    auto q = extract_features(loaded.model, queries, cfg, cache_dir, loaded.hash, "test");
    r.accuracy = trainer::knn_accuracy(mem, trainer::labels_tensor(memory), q, trainer::labels_tensor(queries), cfg.k,
                                       cfg.temperature, memory.num_classes);
    return r;
}

std::string report_json(const EvalReport& r) {
    json config = {{"epochs", r.config.epochs},
                   {"base_lr", r.config.base_lr},
                   {"lr", r.config.lr()},
                   {"momentum", r.config.momentum},
                   {"weight_decay", r.config.weight_decay},
                   {"batch_size", r.config.batch_size},
                   {"k", r.config.k},
                   {"temperature", r.config.temperature},
                   {"crop", r.config.crop == CropPolicy::center ? "center" : "resize_center"},
                   {"seed", r.config.seed}};
    json j = {{"checkpoint_hash", r.checkpoint_hash},
              {"mode", eval_mode_name(r.mode)},
              {"accuracy", r.accuracy},
              {"config", config}};
    return j.dump(2);
}

void write_report(const std::string& path, const EvalReport& r) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    out << report_json(r) << "\n";
    if (!out) throw Error("cannot write report " + path);
}

}  // namespace dssl::eval
