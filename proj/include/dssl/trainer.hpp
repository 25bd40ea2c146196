#pragma once

#include "dssl/config.hpp"
#include "dssl/dataset.hpp"
#include "dssl/frameworks.hpp"
#include "dssl/objectives.hpp"

#include <torch/torch.h>

#include <chrono>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace dssl::trainer {

/// The loss went non-finite; a diagnostic dump has been written.
class NanLossError : public Error {
public:
    using Error::Error;
};

/// base · ½(1 + cos(π·step/total)).
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

/// Linear warmup over `warmup_steps`, then cosine decay over the remainder.
double scheduled_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr);

/// BYOL target decay: constant, or 1 - (1 - τ_base)(cos(πk/K) + 1)/2.
double byol_tau(std::int64_t step, std::int64_t total_steps, double base_tau, TauSchedule schedule);

/// ⌈N / batch⌉.
std::int64_t steps_per_epoch(std::size_t dataset_size, int batch_size);

/// SGD with momentum and L2 weight decay (d = g + wd·θ; v = μv + d; θ -= lr·v).
/// Kept local so its state is a plain tensor list for checkpoints.
class Sgd {
public:
    Sgd(std::vector<torch::Tensor> params, double momentum, double weight_decay);
    void zero_grad();
    void step(double lr);
    std::vector<torch::Tensor>& momentum_buffers() { return buffers_; }
    const std::vector<torch::Tensor>& params() const { return params_; }

private:
    std::vector<torch::Tensor> params_;
    std::vector<torch::Tensor> buffers_;
    double momentum_;
    double weight_decay_;
};

/// L2-normalised rows.
torch::Tensor l2_normalize(const torch::Tensor& x);

/// Weighted kNN vote: the k most cosine-similar memory rows each add
/// exp(sim / T) to their class. Inputs need not be normalised.
torch::Tensor knn_predict(const torch::Tensor& memory, const torch::Tensor& memory_labels, const torch::Tensor& queries,
                          int k, double temperature, int num_classes);
double knn_accuracy(const torch::Tensor& memory, const torch::Tensor& memory_labels, const torch::Tensor& queries,
                    const torch::Tensor& query_labels, int k, double temperature, int num_classes);

/// Frozen encoder (or encoder + projector) outputs over a dataset, in eval mode.
torch::Tensor encode_dataset(frameworks::ModelBundle& model, const data::Dataset& ds, int batch_size,
                             bool through_projector = false);
torch::Tensor labels_tensor(const data::Dataset& ds);

/// kNN top-1 of frozen encoder features: memory = train images, queries = held-out images.
double knn_monitor(frameworks::ModelBundle& model, const data::Dataset& memory, const data::Dataset& queries, int k,
                   double temperature, int batch_size = 256);

/// Mean over dimensions of the per-dimension population std of L2-normalised embeddings.
double feature_std(const torch::Tensor& embeddings);

struct CollapseReading {
    bool flag = false;   // patience satisfied (latched once fired)
    bool below = false;  // this reading alone is under threshold
    double feature_std = 0.0;
    double threshold = 0.0;
};

/// Fires once feature_std < factor/√d (strict) on `patience` consecutive readings.
class CollapseDetector {
public:
    explicit CollapseDetector(double factor = 0.2, int patience = 1);
    CollapseReading update(const torch::Tensor& embeddings);
    bool fired() const { return fired_; }
    void restore(int streak, bool fired);
    int streak() const { return streak_; }

private:
    double factor_;
    int patience_;
    int streak_ = 0;
    bool fired_ = false;
};

struct MetricsRecord {
    std::string kind;  // "step" or "epoch"
    int epoch = 0;
    std::int64_t step = 0;
    double loss = 0.0;
    double sym_standard = 0.0;
    double sym_heavy = 0.0;
    double directed = 0.0;
    double reverse = 0.0;
    double lr = 0.0;
    std::optional<double> feature_std;
    std::optional<double> knn_acc;
    bool collapse = false;
    double wall_time = 0.0;
};

/// Appends to metrics.jsonl and metrics.csv in `dir`.
class MetricsWriter {
public:
    MetricsWriter(const std::string& dir, std::string run_id);
    void write(const MetricsRecord& r);

private:
    std::string run_id_;
    std::ofstream jsonl_;
    std::ofstream csv_;
};

std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path);

struct TrainState {
    int epoch = 0;              // completed epochs
    std::int64_t step = 0;      // completed optimizer steps
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string framework;
    bool collapsed = false;
    int collapse_streak = 0;
};

/// Directory with one raw float blob per group and a manifest.json recording
/// each tensor's name, shape, dtype, offset and byte size.
/// `config_text`, when given, is stored alongside as config.toml.
void save_checkpoint(const std::string& dir, const frameworks::ModelBundle& model, Sgd* optimizer,
                     const TrainState& state, const std::string& config_text = "");
/// Restores tensors in place. Throws on framework or shape mismatch.
TrainState load_checkpoint(const std::string& dir, frameworks::ModelBundle& model, Sgd* optimizer);

/// SHA-256 over a module's parameters and buffers (names, shapes, bytes).
std::string parameter_hash(const torch::nn::Module& module);
std::string checkpoint_hash(const std::string& dir);

struct PretrainResult {
    std::string final_checkpoint;
    std::vector<MetricsRecord> metrics;
    std::int64_t steps = 0;
    bool collapsed = false;
    std::optional<int> collapse_epoch;
    double final_knn = 0.0;
    double final_feature_std = 0.0;
};

/// Owns the model, optimizer and data; single training thread, pooled view building.
class Trainer {
public:
    /// `run_dir` empty: no files are written.
    Trainer(RunConfig cfg, data::DatasetSplits data, std::string run_dir = "");

    /// One optimizer step on the given batch position; returns the loss terms.
    objectives::LossTerms train_step(int epoch, std::int64_t batch_index);
    /// All remaining steps of the current epoch, then monitoring.
    void train_epoch();
    PretrainResult run();

    void save(const std::string& dir);
    void resume(const std::string& checkpoint_dir);

    const RunConfig& config() const { return cfg_; }
    frameworks::ModelBundle& model() { return model_; }
    const TrainState& state() const { return state_; }
    const std::vector<MetricsRecord>& metrics() const { return metrics_; }
    std::int64_t total_steps() const { return total_steps_; }
    std::int64_t steps_per_epoch() const { return steps_per_epoch_; }

    /// Sample ids of batch `b` in epoch `e` (the last batch wraps to at least 2).
    std::vector<std::size_t> batch_indices(int epoch, std::int64_t b) const;
    /// View sets for a batch; pure in (seed, epoch, sample).
    std::vector<views::ViewSet> build_batch(int epoch, std::int64_t b) const;

private:
    objectives::LossTerms step_prebuilt(int epoch, const std::vector<views::ViewSet>& sets);
    MetricsRecord evaluate(int epoch);
    void emit(const MetricsRecord& r);
    std::vector<std::size_t> epoch_order(int epoch) const;

    RunConfig cfg_;
    data::DatasetSplits data_;
    std::string run_dir_;
    frameworks::ModelBundle model_;
    std::unique_ptr<Sgd> optimizer_;
    objectives::LossWeights weights_;
    objectives::SimilarityObjective similarity_;
    CollapseDetector detector_;
    std::unique_ptr<MetricsWriter> writer_;
    std::vector<MetricsRecord> metrics_;
    TrainState state_;
    std::int64_t steps_per_epoch_ = 0;
    std::int64_t total_steps_ = 0;
    std::optional<int> collapse_epoch_;
    double last_knn_ = 0.0;
    double last_std_ = 0.0;
    std::chrono::steady_clock::time_point start_;
};

/// Dataset splits named by cfg.data, materialising the cache on first use.
data::DatasetSplits load_data(const RunConfig& cfg);

/// Loads data per the config and runs to completion.
PretrainResult pretrain(const RunConfig& cfg, const std::string& run_dir);

}  // namespace dssl::trainer
