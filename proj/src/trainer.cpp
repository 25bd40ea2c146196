#include "dssl/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dssl::trainer {
namespace {

// Fixed pool; tasks are handed out FIFO.
class ThreadPool {
public:
    explicit ThreadPool(int n) {
        for (int i = 0; i < n; ++i)
            threads_.emplace_back([this] {
                for (;;) {
                    std::function<void()> task;
                    {
                        std::unique_lock lock(mu_);
                        cv_.wait(lock, [&] { return stop_ || !tasks_.empty(); });
                        if (stop_ && tasks_.empty()) return;
                        task = std::move(tasks_.front());
                        tasks_.pop_front();
                    }
                    task();
                }
            });
    }
    ~ThreadPool() {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    template <typename F>
    auto submit(F f) -> std::future<decltype(f())> {
        auto task = std::make_shared<std::packaged_task<decltype(f())()>>(std::move(f));
        auto fut = task->get_future();
        {
            std::lock_guard lock(mu_);
            tasks_.emplace_back([task] { (*task)(); });
        }
        cv_.notify_one();
        return fut;
    }

private:
    std::vector<std::thread> threads_;
    std::deque<std::function<void()>> tasks_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
};

std::string dtype_name(const torch::Tensor& t) {
    if (t.scalar_type() == torch::kFloat32) return "float32";
    if (t.scalar_type() == torch::kInt64) return "int64";
    if (t.scalar_type() == torch::kFloat64) return "float64";
    throw Error("checkpoint: unsupported dtype " + std::string(c10::toString(t.scalar_type())));
}

torch::ScalarType parse_dtype(const std::string& name) {
    if (name == "float32") return torch::kFloat32;
    if (name == "int64") return torch::kInt64;
    if (name == "float64") return torch::kFloat64;
    throw Error("checkpoint: unknown dtype " + name);
}

std::string group_of(const std::string& name) { return name.substr(0, name.find('/')); }

std::vector<std::pair<std::string, torch::Tensor>> checkpoint_tensors(const frameworks::ModelBundle& model,
                                                                      Sgd* optimizer) {
    auto named = model.named_state();
    if (optimizer) {
        auto& bufs = optimizer->momentum_buffers();
        for (std::size_t i = 0; i < bufs.size(); ++i) named.emplace_back("optimizer/" + std::to_string(i), bufs[i]);
    }
    return named;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

}  // namespace

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
    if (total_steps <= 0) return base_lr;
    const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double scheduled_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr) {
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    return cosine_lr(step - warmup_steps, total_steps - warmup_steps, base_lr);
}

double byol_tau(std::int64_t step, std::int64_t total_steps, double base_tau, TauSchedule schedule) {
    if (schedule == TauSchedule::constant || total_steps <= 0) return base_tau;
    const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
    return 1.0 - (1.0 - base_tau) * (std::cos(std::numbers::pi * t) + 1.0) / 2.0;
}

std::int64_t steps_per_epoch(std::size_t dataset_size, int batch_size) {
    if (batch_size < 1) throw ConfigError("run.batch_size", "must be >= 1");
    return static_cast<std::int64_t>((dataset_size + static_cast<std::size_t>(batch_size) - 1) /
                                     static_cast<std::size_t>(batch_size));
}

Sgd::Sgd(std::vector<torch::Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : params_) buffers_.push_back(torch::zeros_like(p));
}

void Sgd::zero_grad() {
    for (auto& p : params_)
        if (p.grad().defined()) p.mutable_grad().zero_();
}

void Sgd::step(double lr) {
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.grad().defined()) continue;
        auto d = p.grad();
        if (weight_decay_ != 0.0) d = d + weight_decay_ * p;
        buffers_[i].mul_(momentum_).add_(d);
        p.add_(buffers_[i], -lr);
    }
}

torch::Tensor l2_normalize(const torch::Tensor& x) {
    return x / x.norm(2, -1, true).clamp_min(1e-12);
}

torch::Tensor knn_predict(const torch::Tensor& memory, const torch::Tensor& memory_labels, const torch::Tensor& queries,
                          int k, double temperature, int num_classes) {
    if (memory.size(0) == 0) throw ShapeError("knn: empty memory set");
    if (k < 1 || k > memory.size(0))
        throw ConfigError("monitor.knn_k", "k = " + std::to_string(k) + " exceeds memory size " +
                                               std::to_string(memory.size(0)));
    torch::NoGradGuard no_grad;
    auto mem = l2_normalize(memory.to(torch::kFloat32));
    auto labels = memory_labels.to(torch::kLong);
    std::vector<torch::Tensor> preds;
    constexpr std::int64_t kChunk = 256;
    for (std::int64_t start = 0; start < queries.size(0); start += kChunk) {
        auto q = l2_normalize(queries.slice(0, start, std::min(start + kChunk, queries.size(0))).to(torch::kFloat32));
        auto sim = q.matmul(mem.t());
        auto [vals, idx] = sim.topk(k, 1, true, true);
        auto weights = (vals / temperature).exp();
        auto neigh = labels.index_select(0, idx.reshape({-1})).reshape(idx.sizes());
        auto votes = torch::zeros({q.size(0), num_classes}, torch::kFloat32);
        votes.scatter_add_(1, neigh, weights);
        preds.push_back(votes.argmax(1));
    }
    return torch::cat(preds);
}

double knn_accuracy(const torch::Tensor& memory, const torch::Tensor& memory_labels, const torch::Tensor& queries,
                    const torch::Tensor& query_labels, int k, double temperature, int num_classes) {
    if (queries.size(0) != query_labels.size(0)) throw ShapeError("knn: query/label count mismatch");
    auto pred = knn_predict(memory, memory_labels, queries, k, temperature, num_classes);
    return pred.eq(query_labels.to(torch::kLong)).to(torch::kFloat64).mean().item<double>();
}

torch::Tensor encode_dataset(frameworks::ModelBundle& model, const data::Dataset& ds, int batch_size,
                             bool through_projector) {
    if (ds.size() == 0) throw ShapeError("encode_dataset: empty dataset");
    const bool was_training = model.encoder->is_training();
    model.train(false);
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(batch_size)) {
        std::vector<const ImageSample*> batch;
        for (std::size_t i = start; i < std::min(ds.size(), start + static_cast<std::size_t>(batch_size)); ++i)
            batch.push_back(&ds.images[i]);
        auto f = model.encoder->forward(frameworks::stack_images(batch));
        if (through_projector) f = model.projector->forward(f);
        out.push_back(f);
    }
    model.train(was_training);
    return torch::cat(out);
}

torch::Tensor labels_tensor(const data::Dataset& ds) {
    std::vector<std::int64_t> l(ds.labels.begin(), ds.labels.end());
    return torch::tensor(l, torch::kLong);
}

double knn_monitor(frameworks::ModelBundle& model, const data::Dataset& memory, const data::Dataset& queries, int k,
                   double temperature, int batch_size) {
    auto mem = encode_dataset(model, memory, batch_size);
    auto q = encode_dataset(model, queries, batch_size);
    return knn_accuracy(mem, labels_tensor(memory), q, labels_tensor(queries), k, temperature, memory.num_classes);
}

double feature_std(const torch::Tensor& embeddings) {
    if (embeddings.dim() != 2 || embeddings.size(0) < 2) throw ShapeError("feature_std: need a [B>=2, d] batch");
    torch::NoGradGuard no_grad;
    auto x = l2_normalize(embeddings.to(torch::kFloat64));
    return x.std(0, /*unbiased=*/false).mean().item<double>();
}

CollapseDetector::CollapseDetector(double factor, int patience) : factor_(factor), patience_(patience) {
    if (!(factor > 0.0)) throw ConfigError("monitor.collapse_factor", "must be positive");
    if (patience < 1) throw ConfigError("monitor.collapse_patience", "must be >= 1");
}

void CollapseDetector::restore(int streak, bool fired) {
    streak_ = streak;
    fired_ = fired;
}

CollapseReading CollapseDetector::update(const torch::Tensor& embeddings) {
    CollapseReading r;
    r.feature_std = feature_std(embeddings);
    r.threshold = factor_ / std::sqrt(static_cast<double>(embeddings.size(1)));
    r.below = r.feature_std < r.threshold;
    streak_ = r.below ? streak_ + 1 : 0;
    if (streak_ >= patience_) fired_ = true;
    r.flag = fired_;
    return r;
}

MetricsWriter::MetricsWriter(const std::string& dir, std::string run_id) : run_id_(std::move(run_id)) {
    fs::create_directories(dir);
    const auto csv_path = fs::path(dir) / "metrics.csv";
    const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
    jsonl_.open(fs::path(dir) / "metrics.jsonl", std::ios::app);
    csv_.open(csv_path, std::ios::app);
    if (!jsonl_ || !csv_) throw Error("cannot open metrics files in " + dir);
    if (fresh)
        csv_ << "run_id,kind,epoch,step,loss,sym_standard,sym_heavy,directed,reverse,lr,feature_std,knn_acc,"
                "collapse,wall_time\n";
}

void MetricsWriter::write(const MetricsRecord& r) {
    json j = {{"run_id", run_id_},         {"kind", r.kind},           {"epoch", r.epoch},
              {"step", r.step},            {"loss", r.loss},           {"sym_standard", r.sym_standard},
              {"sym_heavy", r.sym_heavy},  {"directed", r.directed},   {"reverse", r.reverse},
              {"lr", r.lr},                {"collapse", r.collapse},   {"wall_time", r.wall_time}};
    j["feature_std"] = r.feature_std ? json(*r.feature_std) : json(nullptr);
    j["knn_acc"] = r.knn_acc ? json(*r.knn_acc) : json(nullptr);
    jsonl_ << j.dump() << "\n";
    csv_ << run_id_ << ',' << r.kind << ',' << r.epoch << ',' << r.step << ',' << fmt(r.loss) << ','
         << fmt(r.sym_standard) << ',' << fmt(r.sym_heavy) << ',' << fmt(r.directed) << ',' << fmt(r.reverse) << ','
         << fmt(r.lr) << ',' << (r.feature_std ? fmt(*r.feature_std) : "") << ','
         << (r.knn_acc ? fmt(*r.knn_acc) : "") << ',' << (r.collapse ? 1 : 0) << ',' << fmt(r.wall_time) << "\n";
    jsonl_.flush();
    csv_.flush();
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        MetricsRecord r;
        r.kind = j.at("kind");
        r.epoch = j.at("epoch");
        r.step = j.at("step");
        r.loss = j.at("loss");
        r.sym_standard = j.value("sym_standard", 0.0);
        r.sym_heavy = j.value("sym_heavy", 0.0);
        r.directed = j.value("directed", 0.0);
        r.reverse = j.value("reverse", 0.0);
        r.lr = j.value("lr", 0.0);
        if (j.contains("feature_std") && !j["feature_std"].is_null()) r.feature_std = j["feature_std"].get<double>();
        if (j.contains("knn_acc") && !j["knn_acc"].is_null()) r.knn_acc = j["knn_acc"].get<double>();
        r.collapse = j.value("collapse", false);
        r.wall_time = j.value("wall_time", 0.0);
        out.push_back(r);
    }
    return out;
}

void save_checkpoint(const std::string& dir, const frameworks::ModelBundle& model, Sgd* optimizer,
                     const TrainState& state, const std::string& config_text) {
    const fs::path final_dir(dir);
    const fs::path tmp = final_dir.string() + ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    json manifest = {{"framework", state.framework},   {"epoch", state.epoch},
                     {"step", state.step},             {"seed", state.seed},
                     {"config_hash", state.config_hash}, {"collapsed", state.collapsed},
                     {"collapse_streak", state.collapse_streak}};
    json tensors = json::array();
    std::map<std::string, std::ofstream> files;
    std::map<std::string, std::uint64_t> offsets;
    for (const auto& [name, tensor] : checkpoint_tensors(model, optimizer)) {
        const auto group = group_of(name);
        auto& out = files[group];
        if (!out.is_open()) out.open(tmp / (group + ".bin"), std::ios::binary);
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        const auto bytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
        out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
        if (!out) throw Error("checkpoint write failed (disk full?): " + tmp.string());
        tensors.push_back({{"name", name},
                           {"file", group + ".bin"},
                           {"shape", t.sizes().vec()},
                           {"dtype", dtype_name(t)},
                           {"offset", offsets[group]},
                           {"bytes", bytes}});
        offsets[group] += bytes;
    }
    for (auto& [_, f] : files) f.close();
    manifest["tensors"] = tensors;
    std::ofstream(tmp / "manifest.json") << manifest.dump(2) << "\n";
    if (!config_text.empty()) std::ofstream(tmp / "config.toml") << config_text;
    fs::remove_all(final_dir);
    fs::rename(tmp, final_dir);
}

TrainState load_checkpoint(const std::string& dir, frameworks::ModelBundle& model, Sgd* optimizer) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw Error("checkpoint manifest missing in " + dir);
    const auto manifest = json::parse(in);
    TrainState state;
    state.framework = manifest.at("framework");
    if (state.framework != frameworks::framework_name(model.framework()))
        throw Error("checkpoint framework " + state.framework + " does not match model");
    state.epoch = manifest.at("epoch");
    state.step = manifest.at("step");
    state.seed = manifest.at("seed");
    state.config_hash = manifest.at("config_hash");
    state.collapsed = manifest.value("collapsed", false);
    state.collapse_streak = manifest.value("collapse_streak", 0);

    std::map<std::string, json> by_name;
    for (const auto& t : manifest.at("tensors")) by_name[t.at("name")] = t;
    std::map<std::string, std::vector<char>> blobs;
    torch::NoGradGuard no_grad;
    for (auto& [name, tensor] : checkpoint_tensors(model, optimizer)) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint lacks tensor " + name);
        const auto& meta = it->second;
        const auto shape = meta.at("shape").get<std::vector<std::int64_t>>();
        if (!tensor.sizes().equals(shape)) throw ShapeError("checkpoint shape mismatch for " + name);
        const std::string file = meta.at("file");
        auto& blob = blobs[file];
        if (blob.empty()) {
            std::ifstream b(fs::path(dir) / file, std::ios::binary);
            blob.assign(std::istreambuf_iterator<char>(b), std::istreambuf_iterator<char>());
        }
        const std::uint64_t offset = meta.at("offset"), bytes = meta.at("bytes");
        if (offset + bytes > blob.size()) throw Error("checkpoint blob truncated: " + file);
        auto src = torch::from_blob(blob.data() + offset, shape, parse_dtype(meta.at("dtype")));
        tensor.copy_(src);
    }
    return state;
}

std::string parameter_hash(const torch::nn::Module& module) {
    std::vector<std::uint8_t> bytes;
    auto add = [&](const std::string& name, const torch::Tensor& t) {
        bytes.insert(bytes.end(), name.begin(), name.end());
        for (auto s : t.sizes()) {
            const auto str = std::to_string(s) + ",";
            bytes.insert(bytes.end(), str.begin(), str.end());
        }
        auto c = t.detach().to(torch::kCPU).contiguous();
        const auto* p = static_cast<const std::uint8_t*>(c.data_ptr());
        bytes.insert(bytes.end(), p, p + c.numel() * c.element_size());
    };
    for (const auto& item : module.named_parameters()) add(item.key(), item.value());
    for (const auto& item : module.named_buffers()) add(item.key(), item.value());
    return sha256_hex(std::span<const std::uint8_t>(bytes));
}

std::string checkpoint_hash(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += f + ":" + sha256_file_hex((fs::path(dir) / f).string()) + "\n";
    return sha256_hex(std::string_view(acc));
}

Trainer::Trainer(RunConfig cfg, data::DatasetSplits data, std::string run_dir)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      run_dir_(std::move(run_dir)),
      detector_(cfg_.monitor.collapse_factor, cfg_.monitor.collapse_patience) {
    cfg_.validate();
    if (cfg_.device != "cpu") throw ConfigError("run.device", "this build trains on cpu only");
    if (data_.train.size() < 2) throw ShapeError("trainer: need at least 2 training images");
    model_ = frameworks::make_model(cfg_.model, derive_seed(cfg_.seed, 0, 0, 0xC0FFEE));
    model_.train(true);
    optimizer_ = std::make_unique<Sgd>(model_.trainable_parameters(), cfg_.optim.momentum, cfg_.optim.weight_decay);
    weights_ = cfg_.effective_weights();
    similarity_ = cfg_.similarity();
    steps_per_epoch_ = trainer::steps_per_epoch(data_.train.size(), cfg_.batch_size);
    total_steps_ = steps_per_epoch_ * cfg_.epochs;
    state_.seed = cfg_.seed;
    state_.config_hash = config_hash(cfg_);
    state_.framework = std::string(frameworks::framework_name(cfg_.model.framework));
    if (!run_dir_.empty()) writer_ = std::make_unique<MetricsWriter>(run_dir_, cfg_.run_id);
    start_ = std::chrono::steady_clock::now();
}

std::vector<std::size_t> Trainer::epoch_order(int epoch) const {
    std::vector<std::size_t> order(data_.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(epoch), ~0ULL, 1));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    return order;
}

std::vector<std::size_t> Trainer::batch_indices(int epoch, std::int64_t b) const {
    if (b < 0 || b >= steps_per_epoch_) throw ShapeError("batch index out of range");
    const auto order = epoch_order(epoch);
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    const std::size_t start = static_cast<std::size_t>(b) * bs;
    const std::size_t end = std::min(order.size(), start + bs);
    std::vector<std::size_t> out(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    // BatchNorm needs two samples; wrap to the epoch's head.
    for (std::size_t i = 0; out.size() < 2; ++i) out.push_back(order[i]);
    return out;
}

std::vector<views::ViewSet> Trainer::build_batch(int epoch, std::int64_t b) const {
    std::vector<views::ViewSet> sets;
    for (auto idx : batch_indices(epoch, b)) {
        const auto& img = data_.train.images[idx];
        const auto seed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(img.id), 0);
        sets.push_back(views::build_training_views(img, cfg_.mode, cfg_.views, seed));
    }
    return sets;
}

objectives::LossTerms Trainer::train_step(int epoch, std::int64_t batch_index) {
    return step_prebuilt(epoch, build_batch(epoch, batch_index));
}

objectives::LossTerms Trainer::step_prebuilt(int epoch, const std::vector<views::ViewSet>& sets) {
    auto batch = frameworks::stack_views(sets);
    auto features = frameworks::forward_views(model_, batch, objectives::required_targets(batch.layout, weights_));
    auto terms = objectives::general_loss(features, weights_, similarity_);
    const double loss = terms.total.item<double>();
    const double lr = scheduled_lr(state_.step, total_steps_, cfg_.optim.warmup_epochs * steps_per_epoch_, cfg_.optim.lr);

    if (!std::isfinite(loss)) {
        json dump = {{"epoch", epoch},          {"step", state_.step},      {"loss", loss},
                     {"lr", lr},                {"sym_standard", terms.sym_standard}, {"sym_heavy", terms.sym_heavy},
                     {"directed", terms.directed}, {"reverse", terms.reverse}};
        json norms = json::object();
        for (const auto& [name, t] : model_.named_state())
            if (t.is_floating_point()) norms[name] = t.norm().item<double>();
        dump["tensor_norms"] = norms;
        json slots = json::array();
        for (const auto& z : features.projections) slots.push_back(z.norm(2, 1).mean().item<double>());
        dump["projection_norms"] = slots;
        if (!run_dir_.empty()) std::ofstream(fs::path(run_dir_) / "nan_dump.json") << dump.dump(2) << "\n";
        std::cerr << "non-finite loss at step " << state_.step << ": " << dump.dump() << "\n";
        throw NanLossError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(state_.step));
    }

    optimizer_->zero_grad();
    terms.total.backward();
    optimizer_->step(lr);
    if (model_.has_momentum())
        frameworks::ema_update(model_, byol_tau(state_.step, total_steps_, cfg_.optim.byol_tau, cfg_.optim.byol_tau_schedule));
    ++state_.step;

    if (state_.step % cfg_.monitor.log_every == 0) {
        MetricsRecord r;
        r.kind = "step";
        r.epoch = epoch;
        r.step = state_.step;
        r.loss = loss;
        r.sym_standard = terms.sym_standard;
        r.sym_heavy = terms.sym_heavy;
        r.directed = terms.directed;
        r.reverse = terms.reverse;
        r.lr = lr;
        r.collapse = detector_.fired();
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        emit(r);
    }
    return terms;
}

void Trainer::emit(const MetricsRecord& r) {
    metrics_.push_back(r);
    if (writer_) writer_->write(r);
}

MetricsRecord Trainer::evaluate(int epoch) {
    MetricsRecord r;
    r.kind = "epoch";
    r.epoch = epoch;
    r.step = state_.step;
    r.lr = scheduled_lr(std::min(state_.step, total_steps_), total_steps_, cfg_.optim.warmup_epochs * steps_per_epoch_,
                        cfg_.optim.lr);
    const auto& memory = data_.train;
    const auto& queries = data_.test.size() > 0 ? data_.test : data_.train;
    const int k = std::min<int>(cfg_.monitor.knn_k, static_cast<int>(memory.size()));
    last_knn_ = knn_monitor(model_, memory, queries, k, cfg_.monitor.knn_temperature);
    const auto reading = detector_.update(encode_dataset(model_, queries, 256, /*through_projector=*/true));
    last_std_ = reading.feature_std;
    if (reading.flag && !collapse_epoch_) {
        collapse_epoch_ = epoch;
        std::cerr << "[" << cfg_.run_id << "] collapse detected at epoch " << epoch << ": feature_std "
                  << reading.feature_std << " < " << reading.threshold << "\n";
    }
    r.knn_acc = last_knn_;
    r.feature_std = last_std_;
    r.collapse = detector_.fired();
    if (!metrics_.empty()) {
        // Epoch loss: mean of this epoch's step records.
        double sum = 0.0;
        int n = 0;
        for (auto it = metrics_.rbegin(); it != metrics_.rend() && it->kind == "step" && it->epoch == epoch; ++it) {
            sum += it->loss;
            ++n;
        }
        r.loss = n ? sum / n : 0.0;
    }
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return r;
}

void Trainer::train_epoch() {
    const int epoch = state_.epoch;
    if (epoch >= cfg_.epochs) throw Error("trainer: all epochs already completed");
    const std::int64_t first = state_.step - static_cast<std::int64_t>(epoch) * steps_per_epoch_;

    if (cfg_.workers <= 0) {
        for (std::int64_t b = first; b < steps_per_epoch_; ++b) train_step(epoch, b);
    } else {
        // Views for upcoming batches are built in the pool; the step itself stays on this thread.
        ThreadPool pool(cfg_.workers);
        std::deque<std::future<std::vector<views::ViewSet>>> window;
        std::int64_t next = first;
        const std::int64_t depth = 2 * cfg_.workers;
        auto refill = [&] {
            while (next < steps_per_epoch_ && static_cast<std::int64_t>(window.size()) < depth) {
                const auto b = next++;
                window.push_back(pool.submit([this, epoch, b] { return build_batch(epoch, b); }));
            }
        };
        refill();
        for (std::int64_t b = first; b < steps_per_epoch_; ++b) {
            auto sets = window.front().get();
            window.pop_front();
            refill();
            step_prebuilt(epoch, sets);
        }
    }

    const bool last = epoch + 1 == cfg_.epochs;
    if ((epoch + 1) % cfg_.monitor.eval_every == 0 || last) {
        auto r = evaluate(epoch);
        emit(r);
        std::cerr << "[" << cfg_.run_id << "] epoch " << epoch + 1 << "/" << cfg_.epochs << " loss " << r.loss
                  << " knn " << *r.knn_acc << " feature_std " << *r.feature_std << "\n";
    }
    state_.epoch = epoch + 1;
    state_.collapsed = detector_.fired();
    state_.collapse_streak = detector_.streak();
    if (!run_dir_.empty() && cfg_.monitor.checkpoint_every > 0 && state_.epoch % cfg_.monitor.checkpoint_every == 0 &&
        !last)
        save((fs::path(run_dir_) / "checkpoints" / ("epoch_" + std::to_string(state_.epoch))).string());
}

PretrainResult Trainer::run() {
    while (state_.epoch < cfg_.epochs) train_epoch();
    PretrainResult out;
    if (!run_dir_.empty()) {
        out.final_checkpoint = (fs::path(run_dir_) / "checkpoints" / "final").string();
        save(out.final_checkpoint);
    }
    out.metrics = metrics_;
    out.steps = state_.step;
    out.collapsed = detector_.fired();
    out.collapse_epoch = collapse_epoch_;
    out.final_knn = last_knn_;
    out.final_feature_std = last_std_;
    return out;
}

void Trainer::save(const std::string& dir) {
    state_.collapsed = detector_.fired();
    state_.collapse_streak = detector_.streak();
    save_checkpoint(dir, model_, optimizer_.get(), state_, serialize_config(cfg_));
}

void Trainer::resume(const std::string& checkpoint_dir) {
    auto loaded = load_checkpoint(checkpoint_dir, model_, optimizer_.get());
    if (loaded.config_hash != state_.config_hash)
        std::cerr << "warning: resuming from a checkpoint with a different config hash\n";
    state_.epoch = loaded.epoch;
    state_.step = loaded.step;
    state_.collapsed = loaded.collapsed;
    state_.collapse_streak = loaded.collapse_streak;
    detector_.restore(loaded.collapse_streak, loaded.collapsed);
}

data::DatasetSplits load_data(const RunConfig& cfg) {
    data::IngestOptions opts;
    opts.seed = cfg.data.seed;
    opts.synthetic = {cfg.data.seed, cfg.data.synthetic_train, cfg.data.synthetic_test, cfg.data.image_size,
                      cfg.data.class_colour};
    opts.archive = cfg.data.archive;
    opts.expected_md5 = cfg.data.md5;
    opts.train_limit = static_cast<std::size_t>(cfg.data.train_limit);
    opts.test_limit = static_cast<std::size_t>(cfg.data.test_limit);
    const auto cache = cfg.data.cache_dir.empty() ? data::default_cache_dir() : cfg.data.cache_dir;
    return data::ingest_dataset(cfg.data.name, cache, opts);
}

PretrainResult pretrain(const RunConfig& cfg, const std::string& run_dir) {
    Trainer t(cfg, load_data(cfg), run_dir);
    return t.run();
}

}  // namespace dssl::trainer
