#include "dssl/config.hpp"

#include <toml.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dssl {
namespace {

using objectives::LossWeights;

std::string describe(const toml::node& n) {
    switch (n.type()) {
        case toml::node_type::string: return "string";
        case toml::node_type::integer: return "integer";
        case toml::node_type::floating_point: return "float";
        case toml::node_type::boolean: return "boolean";
        case toml::node_type::table: return "table";
        case toml::node_type::array: return "array";
        default: return "value";
    }
}

class Reader {
public:
    explicit Reader(const toml::table& root) : root_(root) {}

    const toml::node* find(const std::string& path) {
        seen_.insert(path);
        return root_.at_path(path).node();
    }

    bool has(const std::string& path) { return find(path) != nullptr; }

    std::string str(const std::string& path, std::string fallback) {
        const auto* n = find(path);
        if (!n) return fallback;
        if (!n->is_string()) throw ConfigError(path, "expected a string, got " + describe(*n));
        return n->as_string()->get();
    }

    std::int64_t integer(const std::string& path, std::int64_t fallback) {
        const auto* n = find(path);
        if (!n) return fallback;
        if (!n->is_integer()) throw ConfigError(path, "expected an integer, got " + describe(*n));
        return n->as_integer()->get();
    }

    int small_int(const std::string& path, int fallback) {
        const auto v = integer(path, fallback);
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
            throw ConfigError(path, "integer out of range");
        return static_cast<int>(v);
    }

    double real(const std::string& path, double fallback) {
        const auto* n = find(path);
        if (!n) return fallback;
        if (n->is_integer()) return static_cast<double>(n->as_integer()->get());
        if (!n->is_floating_point()) throw ConfigError(path, "expected a number, got " + describe(*n));
        return n->as_floating_point()->get();
    }

    bool boolean(const std::string& path, bool fallback) {
        const auto* n = find(path);
        if (!n) return fallback;
        if (!n->is_boolean()) throw ConfigError(path, "expected true/false, got " + describe(*n));
        return n->as_boolean()->get();
    }

    /// Every leaf that no getter asked for.
    void reject_unknown() const { walk(root_, ""); }

private:
    void walk(const toml::table& t, const std::string& prefix) const {
        for (const auto& [k, v] : t) {
            const std::string path = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
            if (const auto* sub = v.as_table()) {
                if (seen_.count(path)) continue;  // consumed as a whole
                walk(*sub, path);
            } else if (!seen_.count(path)) {
                throw ConfigError(path, "unknown key");
            }
        }
    }

    const toml::table& root_;
    std::set<std::string> seen_;
};

template <typename F>
auto field(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        if (e.field() == path) throw;
        throw ConfigError(path, e.what());
    } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
    }
}

void set_path(toml::table& root, const std::string& path, toml::node&& value) {
    toml::table* t = &root;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError(path, "malformed key");
        if (dot == std::string::npos) {
            t->insert_or_assign(key, std::move(value));
            return;
        }
        auto* next = (*t)[key].as_table();
        if (!next) {
            if (t->contains(key)) throw ConfigError(path, "'" + key + "' is not a table");
            t->insert(key, toml::table{});
            next = (*t)[key].as_table();
        }
        t = next;
        start = dot + 1;
    }
}

void apply_override(toml::table& root, const std::string& key, const std::string& value) {
    toml::table parsed;
    try {
        parsed = toml::parse("v = " + value);
    } catch (const toml::parse_error&) {
        parsed = toml::table{{"v", value}};  // bare word: treat as a string
    }
    auto* node = parsed.get("v");
    std::string path = key;
    if (path == "loss.lambda") path = "loss.gamma";
    node->visit([&](auto&& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, toml::table>) set_path(root, path, toml::table(v));
        else if constexpr (std::is_same_v<T, toml::array>) set_path(root, path, toml::array(v));
        else set_path(root, path, T(v));
    });
}

toml::table parse_toml(const std::string& text) {
    try {
        return toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << e.description() << " at line " << e.source().begin.line;
        throw ConfigError("config", msg.str());
    }
}

RunConfig from_table(const toml::table& root) {
    Reader r(root);
    RunConfig c;
    c.run_id = r.str("run.id", "");
    const auto seed = r.integer("run.seed", 0);
    if (seed < 0) throw ConfigError("run.seed", "must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
    c.epochs = r.small_int("run.epochs", c.epochs);
    c.batch_size = r.small_int("run.batch_size", c.batch_size);
    c.workers = r.small_int("run.workers", c.workers);
    c.deterministic = r.boolean("run.deterministic", c.deterministic);
    c.device = r.str("run.device", c.device);

    auto& d = c.data;
    d.name = r.str("data.name", d.name);
    d.cache_dir = r.str("data.cache_dir", d.cache_dir);
    d.archive = r.str("data.archive", d.archive);
    d.md5 = r.str("data.md5", d.md5);
    const auto dseed = r.integer("data.seed", 0);
    if (dseed < 0) throw ConfigError("data.seed", "must be >= 0");
    d.seed = static_cast<std::uint64_t>(dseed);
    d.synthetic_train = r.small_int("data.synthetic_train", d.synthetic_train);
    d.synthetic_test = r.small_int("data.synthetic_test", d.synthetic_test);
    d.image_size = r.small_int("data.image_size", d.image_size);
    d.class_colour = r.boolean("data.class_colour", d.class_colour);
    d.train_limit = r.small_int("data.train_limit", d.train_limit);
    d.test_limit = r.small_int("data.test_limit", d.test_limit);

    auto& m = c.model;
    m.framework = field("model.framework", [&] { return frameworks::parse_framework(r.str("model.framework", "simsiam")); });
    m.encoder.arch = field("model.arch", [&] { return frameworks::parse_arch(r.str("model.arch", "small")); });
    m.encoder.base_width = r.small_int("model.base_width", m.encoder.base_width);
    m.heads = frameworks::default_heads(m.framework);
    m.heads.projector_hidden = r.small_int("model.projector_hidden", m.heads.projector_hidden);
    m.heads.projector_out = r.small_int("model.projector_out", m.heads.projector_out);
    m.heads.projector_layers = r.small_int("model.projector_layers", m.heads.projector_layers);
    m.heads.predictor_hidden = r.small_int("model.predictor_hidden", m.heads.predictor_hidden);

    c.mode = views::parse_view_mode(r.str("views.mode", "dssl"));
    c.views.heavy_source = views::parse_heavy_source(r.str("views.heavy_source", "standard"));
    auto& s = c.views.standard;
    s.crop_size = r.small_int("views.crop_size", s.crop_size);
    s.crop_scale_range = {r.real("views.crop_scale_min", s.crop_scale_range[0]),
                          r.real("views.crop_scale_max", s.crop_scale_range[1])};
    s.crop_ratio_range = {r.real("views.crop_ratio_min", s.crop_ratio_range[0]),
                          r.real("views.crop_ratio_max", s.crop_ratio_range[1])};
    s.hflip_prob = r.real("views.hflip_prob", s.hflip_prob);
    s.color_strengths = {r.real("views.brightness", s.color_strengths[0]), r.real("views.contrast", s.color_strengths[1]),
                         r.real("views.saturation", s.color_strengths[2]), r.real("views.hue", s.color_strengths[3])};
    s.color_prob = r.real("views.color_prob", s.color_prob);
    s.grayscale_prob = r.real("views.grayscale_prob", s.grayscale_prob);
    s.blur_sigma_range = {r.real("views.blur_sigma_min", s.blur_sigma_range[0]),
                          r.real("views.blur_sigma_max", s.blur_sigma_range[1])};
    s.blur_prob = r.real("views.blur_prob", s.blur_prob);

    auto& h = c.views.heavy;
    if (const auto* mix = r.find("heavy.mixture")) {
        const auto* t = mix->as_table();
        if (!t) throw ConfigError("heavy.mixture", "expected a table of policy = weight");
        h.mixture.clear();
        for (auto p : {augment::HeavyPolicy::randaugment, augment::HeavyPolicy::jigsaw,
                       augment::HeavyPolicy::uniformaugment, augment::HeavyPolicy::none}) {
            const std::string key = "heavy.mixture." + std::string(augment::policy_name(p));
            if (r.has(key)) h.mixture.emplace_back(p, r.real(key, 0.0));
        }
        for (const auto& [k, v] : *t) {
            (void)v;
            field("heavy.mixture." + std::string(k.str()), [&] { return augment::parse_policy(k.str()); });
        }
    }
    h.randaugment.num_ops = r.small_int("heavy.ra_num_ops", h.randaugment.num_ops);
    h.randaugment.magnitude = r.small_int("heavy.ra_magnitude", h.randaugment.magnitude);
    h.jigsaw.grid_n = r.small_int("heavy.jigsaw_grid", h.jigsaw.grid_n);
    h.uniformaugment_slots = r.small_int("heavy.ua_slots", h.uniformaugment_slots);

    const bool has_lambda = r.has("loss.lambda");
    const bool any_weight = r.has("loss.alpha") || r.has("loss.beta") || r.has("loss.gamma") ||
                            r.has("loss.delta") || has_lambda;
    LossWeights w = c.mode == views::ViewMode::dssl ? LossWeights::dssl() : LossWeights::symmetric_only();
    if (any_weight) {
        // Omitted weights in an explicit block default to 0, except alpha.
        w.alpha = r.real("loss.alpha", 1.0);
        w.beta = r.real("loss.beta", 0.0);
        w.gamma = r.real("loss.gamma", 0.0);
        w.delta = r.real("loss.delta", 0.0);
        if (has_lambda) {
            const double lambda = r.real("loss.lambda", 0.0);
            if (r.has("loss.gamma") && lambda != w.gamma)
                throw ConfigError("loss.lambda", "alias of loss.gamma but the two values differ");
            w.gamma = lambda;
        }
    }
    c.weights = w;
    c.temperature = r.real("loss.temperature", c.temperature);
    c.asym_form = objectives::parse_asym_form(r.str("loss.asym_form", "cosine"));

    auto& o = c.optim;
    o.lr = r.real("optim.lr", o.lr);
    o.momentum = r.real("optim.momentum", o.momentum);
    o.weight_decay = r.real("optim.weight_decay", o.weight_decay);
    o.warmup_epochs = r.small_int("optim.warmup_epochs", o.warmup_epochs);
    o.byol_tau = r.real("optim.byol_tau", o.byol_tau);
    const auto sched = r.str("optim.byol_tau_schedule", "constant");
    if (sched == "constant") o.byol_tau_schedule = TauSchedule::constant;
    else if (sched == "cosine") o.byol_tau_schedule = TauSchedule::cosine;
    else throw ConfigError("optim.byol_tau_schedule", "expected constant|cosine, got '" + sched + "'");

    auto& mo = c.monitor;
    mo.eval_every = r.small_int("monitor.eval_every", mo.eval_every);
    mo.knn_k = r.small_int("monitor.knn_k", mo.knn_k);
    mo.knn_temperature = r.real("monitor.knn_temperature", mo.knn_temperature);
    mo.collapse_factor = r.real("monitor.collapse_factor", mo.collapse_factor);
    mo.collapse_patience = r.small_int("monitor.collapse_patience", mo.collapse_patience);
    mo.checkpoint_every = r.small_int("monitor.checkpoint_every", mo.checkpoint_every);
    mo.log_every = r.small_int("monitor.log_every", mo.log_every);

    r.reject_unknown();
    c.validate();
    return c;
}

}  // namespace

std::string_view tau_schedule_name(TauSchedule s) { return s == TauSchedule::constant ? "constant" : "cosine"; }

LossWeights RunConfig::effective_weights() const {
    if (weights) return *weights;
    return mode == views::ViewMode::dssl ? LossWeights::dssl() : LossWeights::symmetric_only();
}

objectives::SimilarityObjective RunConfig::similarity() const {
    auto s = objectives::SimilarityObjective::for_framework(model.framework, temperature);
    s.asym_form = asym_form;
    return s;
}

void RunConfig::validate() const {
    if (epochs < 1) throw ConfigError("run.epochs", "must be >= 1");
    if (batch_size < 2) throw ConfigError("run.batch_size", "must be >= 2");
    if (workers < 0) throw ConfigError("run.workers", "must be >= 0");
    if (device != "cpu" && device != "cuda") throw ConfigError("run.device", "expected cpu|cuda");
    if (data.name != "synthetic-tiny" && data.name != "cifar10")
        throw ConfigError("data.name", "unknown dataset '" + data.name + "' (expected synthetic-tiny|cifar10)");
    if (data.synthetic_train < 10) throw ConfigError("data.synthetic_train", "must be >= 10");
    if (data.synthetic_test < 1) throw ConfigError("data.synthetic_test", "must be >= 1");
    if (data.image_size < 8) throw ConfigError("data.image_size", "must be >= 8");
    if (data.train_limit < 0 || data.test_limit < 0) throw ConfigError("data.train_limit", "must be >= 0");
    model.validate();
    views.standard.validate();
    views.heavy.validate();
    const auto w = effective_weights();
    w.validate();
    if (mode != views::ViewMode::dssl && (w.beta > 0 || w.gamma > 0 || w.delta > 0))
        throw ConfigError("loss", "beta/gamma/delta need heavy children, which only views.mode = dssl builds");
    if (!(temperature > 0.0)) throw ConfigError("loss.temperature", "must be positive");
    if (!(optim.lr > 0.0)) throw ConfigError("optim.lr", "must be positive");
    if (optim.momentum < 0.0 || optim.momentum >= 1.0) throw ConfigError("optim.momentum", "must be in [0, 1)");
    if (optim.weight_decay < 0.0) throw ConfigError("optim.weight_decay", "must be >= 0");
    if (optim.warmup_epochs < 0 || optim.warmup_epochs >= epochs)
        throw ConfigError("optim.warmup_epochs", "must be in [0, epochs)");
    if (optim.byol_tau < 0.0 || optim.byol_tau > 1.0) throw ConfigError("optim.byol_tau", "must be in [0, 1]");
    if (monitor.eval_every < 1) throw ConfigError("monitor.eval_every", "must be >= 1");
    if (monitor.knn_k < 1) throw ConfigError("monitor.knn_k", "must be >= 1");
    if (!(monitor.knn_temperature > 0.0)) throw ConfigError("monitor.knn_temperature", "must be positive");
    if (!(monitor.collapse_factor > 0.0)) throw ConfigError("monitor.collapse_factor", "must be positive");
    if (monitor.collapse_patience < 1) throw ConfigError("monitor.collapse_patience", "must be >= 1");
    if (monitor.checkpoint_every < 0) throw ConfigError("monitor.checkpoint_every", "must be >= 0");
    if (monitor.log_every < 1) throw ConfigError("monitor.log_every", "must be >= 1");
}

RunConfig parse_config(const std::string& text) { return parse_config(text, {}); }

RunConfig parse_config(const std::string& text, const Overrides& overrides) {
    auto root = parse_toml(text);
    for (const auto& [k, v] : overrides) apply_override(root, k, v);
    return from_table(root);
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
    toml::table root;
    auto put = [&](const std::string& path, auto value) {
        using T = decltype(value);
        if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>)
            set_path(root, path, toml::value<std::int64_t>(static_cast<std::int64_t>(value)));
        else if constexpr (std::is_same_v<T, std::string_view>)
            set_path(root, path, toml::value<std::string>(std::string(value)));
        else
            set_path(root, path, toml::value<T>(value));
    };
    put("run.id", c.run_id);
    put("run.seed", c.seed);
    put("run.epochs", c.epochs);
    put("run.batch_size", c.batch_size);
    put("run.workers", c.workers);
    put("run.deterministic", c.deterministic);
    put("run.device", c.device);

    put("data.name", c.data.name);
    put("data.cache_dir", c.data.cache_dir);
    put("data.archive", c.data.archive);
    put("data.md5", c.data.md5);
    put("data.seed", c.data.seed);
    put("data.synthetic_train", c.data.synthetic_train);
    put("data.synthetic_test", c.data.synthetic_test);
    put("data.image_size", c.data.image_size);
    put("data.class_colour", c.data.class_colour);
    put("data.train_limit", c.data.train_limit);
    put("data.test_limit", c.data.test_limit);

    put("model.framework", frameworks::framework_name(c.model.framework));
    put("model.arch", frameworks::arch_name(c.model.encoder.arch));
    put("model.base_width", c.model.encoder.base_width);
    put("model.projector_hidden", c.model.heads.projector_hidden);
    put("model.projector_out", c.model.heads.projector_out);
    put("model.projector_layers", c.model.heads.projector_layers);
    put("model.predictor_hidden", c.model.heads.predictor_hidden);

    const auto& s = c.views.standard;
    put("views.mode", views::mode_name(c.mode));
    put("views.heavy_source", views::heavy_source_name(c.views.heavy_source));
    put("views.crop_size", s.crop_size);
    put("views.crop_scale_min", s.crop_scale_range[0]);
    put("views.crop_scale_max", s.crop_scale_range[1]);
    put("views.crop_ratio_min", s.crop_ratio_range[0]);
    put("views.crop_ratio_max", s.crop_ratio_range[1]);
    put("views.hflip_prob", s.hflip_prob);
    put("views.brightness", s.color_strengths[0]);
    put("views.contrast", s.color_strengths[1]);
    put("views.saturation", s.color_strengths[2]);
    put("views.hue", s.color_strengths[3]);
    put("views.color_prob", s.color_prob);
    put("views.grayscale_prob", s.grayscale_prob);
    put("views.blur_sigma_min", s.blur_sigma_range[0]);
    put("views.blur_sigma_max", s.blur_sigma_range[1]);
    put("views.blur_prob", s.blur_prob);

    const auto& h = c.views.heavy;
    for (const auto& [p, wgt] : h.mixture) put("heavy.mixture." + std::string(augment::policy_name(p)), wgt);
    put("heavy.ra_num_ops", h.randaugment.num_ops);
    put("heavy.ra_magnitude", h.randaugment.magnitude);
    put("heavy.jigsaw_grid", h.jigsaw.grid_n);
    put("heavy.ua_slots", h.uniformaugment_slots);

    const auto w = c.effective_weights();
    put("loss.alpha", w.alpha);
    put("loss.beta", w.beta);
    put("loss.gamma", w.gamma);
    put("loss.delta", w.delta);
    put("loss.temperature", c.temperature);
    put("loss.asym_form", objectives::asym_form_name(c.asym_form));

    put("optim.lr", c.optim.lr);
    put("optim.momentum", c.optim.momentum);
    put("optim.weight_decay", c.optim.weight_decay);
    put("optim.warmup_epochs", c.optim.warmup_epochs);
    put("optim.byol_tau", c.optim.byol_tau);
    put("optim.byol_tau_schedule", tau_schedule_name(c.optim.byol_tau_schedule));

    put("monitor.eval_every", c.monitor.eval_every);
    put("monitor.knn_k", c.monitor.knn_k);
    put("monitor.knn_temperature", c.monitor.knn_temperature);
    put("monitor.collapse_factor", c.monitor.collapse_factor);
    put("monitor.collapse_patience", c.monitor.collapse_patience);
    put("monitor.checkpoint_every", c.monitor.checkpoint_every);
    put("monitor.log_every", c.monitor.log_every);

    std::ostringstream out;
    out << toml::toml_formatter(root, toml::toml_formatter::default_flags & ~toml::format_flags::indentation)
        << "\n";
    return out.str();
}

std::string config_hash(const RunConfig& cfg) {
    RunConfig c = cfg;
    c.run_id.clear();
    c.workers = 1;
    return sha256_hex(std::string_view(serialize_config(c)));
}

}  // namespace dssl
