#pragma once

#include "dssl/config.hpp"
#include "dssl/dataset.hpp"
#include "dssl/frameworks.hpp"

#include <torch/torch.h>

#include <string>

namespace dssl::eval {

enum class EvalMode { linear, knn };
std::string_view eval_mode_name(EvalMode m);

/// `center`: images already at the encoder's input size are used as is;
/// `resize_center`: resize the short side to eval_resize, then centre-crop crop_size.
enum class CropPolicy { center, resize_center };

struct EvalConfig {
    EvalMode mode = EvalMode::linear;
    int epochs = 50;
    double base_lr = 0.3;  // scaled by batch_size / 256
    double momentum = 0.9;
    double weight_decay = 0.0;
    int batch_size = 256;
    int k = 200;
    double temperature = 0.1;
    CropPolicy crop = CropPolicy::center;
    int eval_resize = 0;  // resize_center only; 0 = crop_size * 8 / 7
    std::uint64_t seed = 0;

    void validate() const;
    double lr() const { return base_lr * batch_size / 256.0; }
};

/// A model restored from a checkpoint directory (tensors plus its config.toml).
struct LoadedCheckpoint {
    RunConfig config;
    frameworks::ModelBundle model;
    std::string hash;  // checkpoint_hash of the directory
};
LoadedCheckpoint load_model(const std::string& checkpoint_dir);

/// Applies the crop policy so every image matches `crop_size`.
ImageSample prepare_eval_image(const ImageSample& img, int crop_size, const EvalConfig& cfg);

/// Frozen, globally pooled encoder features for a dataset. With a non-empty
/// `cache_dir`, features are stored under a key of (checkpoint hash, dataset
/// name, split, size) and reused bit-for-bit.
torch::Tensor extract_features(frameworks::ModelBundle& model, const data::Dataset& ds, const EvalConfig& cfg,
                               const std::string& cache_dir = "", const std::string& checkpoint_hash = "",
                               const std::string& split = "");

/// Multinomial logistic regression on fixed features: zero-initialised linear
/// layer, SGD with cosine decay. Features share one global scale factor
/// (the training set's mean norm). Returns held-out top-1.
double linear_probe(const torch::Tensor& train_x, const torch::Tensor& train_y, const torch::Tensor& test_x,
                    const torch::Tensor& test_y, int num_classes, const EvalConfig& cfg);

struct EvalReport {
    std::string checkpoint_hash;
    EvalMode mode = EvalMode::linear;
    double accuracy = 0.0;
    EvalConfig config{};
    std::string encoder_hash_before;
    std::string encoder_hash_after;
};

EvalReport linear_eval(const std::string& checkpoint_dir, const data::DatasetSplits& data, const EvalConfig& cfg,
                       const std::string& cache_dir = "");
EvalReport knn_eval(const std::string& checkpoint_dir, const data::Dataset& memory, const data::Dataset& queries,
                    const EvalConfig& cfg, const std::string& cache_dir = "");

/// {checkpoint_hash, mode, accuracy, config}.
std::string report_json(const EvalReport& r);
void write_report(const std::string& path, const EvalReport& r);

}  // namespace dssl::eval
