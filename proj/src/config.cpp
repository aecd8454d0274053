#include "vmnf/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vmnf/error.hpp"

namespace vmnf {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& path,
                    std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) known = true;
        if (!known) {
            const std::string full = path.empty() ? item.key() : path + "." + item.key();
            throw ConfigError("unknown config key: " + full, full);
        }
    }
}

const json* find(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

std::int64_t get_int(const json& obj, const std::string& path, const char* key,
                     std::int64_t def, std::int64_t min_value) {
    const json* v = find(obj, key);
    if (!v) return def;
    const std::string full = path + "." + key;
    if (!v->is_number_integer() && !v->is_number_unsigned())
        throw ConfigError("expected an integer at " + full, full);
    const std::int64_t out = v->get<std::int64_t>();
    if (out < min_value)
        throw ConfigError("value out of range at " + full, full);
    return out;
}

double get_num(const json& obj, const std::string& path, const char* key, double def,
               double min_value) {
    const json* v = find(obj, key);
    if (!v) return def;
    const std::string full = path + "." + key;
    if (!v->is_number()) throw ConfigError("expected a number at " + full, full);
    const double out = v->get<double>();
    if (!(out >= min_value)) throw ConfigError("value out of range at " + full, full);
    return out;
}

std::string get_str(const json& obj, const std::string& path, const char* key,
                    const std::string& def) {
    const json* v = find(obj, key);
    if (!v) return def;
    const std::string full = path + "." + key;
    if (!v->is_string()) throw ConfigError("expected a string at " + full, full);
    return v->get<std::string>();
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool def) {
    const json* v = find(obj, key);
    if (!v) return def;
    const std::string full = path + "." + key;
    if (!v->is_boolean()) throw ConfigError("expected a boolean at " + full, full);
    return v->get<bool>();
}

DatasetConfig parse_dataset(const json& obj) {
    const std::string path = "dataset";
    reject_unknown(obj, path,
                   {"name", "seed", "n_per_class", "labeled_per_class", "classes", "radial_std",
                    "tangential_std", "rate", "radii", "noise_std", "images", "labels", "digits",
                    "limit", "raw"});
    DatasetConfig c;
    c.name = get_str(obj, path, "name", "");
    if (!c.name.empty() && c.name != "pinwheel" && c.name != "two_circles" && c.name != "mnist")
        throw ConfigError("dataset.name must be pinwheel, two_circles, or mnist",
                          "dataset.name");
    c.seed = static_cast<unsigned long>(get_int(obj, path, "seed", 0, 0));
    c.n_per_class = static_cast<std::size_t>(get_int(obj, path, "n_per_class", 512, 1));
    c.labeled_per_class =
        static_cast<std::size_t>(get_int(obj, path, "labeled_per_class", 0, 0));
    c.classes = static_cast<std::size_t>(get_int(obj, path, "classes", 5, 1));
    c.radial_std = get_num(obj, path, "radial_std", 0.3, 0.0);
    c.tangential_std = get_num(obj, path, "tangential_std", 0.05, 0.0);
    c.rate = get_num(obj, path, "rate", 0.25, 0.0);
    if (const json* v = find(obj, "radii")) {
        if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
            throw ConfigError("dataset.radii must be an array of two numbers", "dataset.radii");
        c.radii = {(*v)[0].get<double>(), (*v)[1].get<double>()};
    }
    c.noise_std = get_num(obj, path, "noise_std", 0.03, 0.0);
    c.images = get_str(obj, path, "images", "");
    c.labels = get_str(obj, path, "labels", "");
    if (const json* v = find(obj, "digits")) {
        if (!v->is_array())
            throw ConfigError("dataset.digits must be an array", "dataset.digits");
        for (const auto& d : *v) {
            if (!d.is_number_integer() && !d.is_number_unsigned())
                throw ConfigError("dataset.digits entries must be integers", "dataset.digits");
            const std::int64_t dv = d.get<std::int64_t>();
            if (dv < 0 || dv > 9)
                throw ConfigError("dataset.digits entries must be in 0..9", "dataset.digits");
            c.digits.push_back(static_cast<int>(dv));
        }
    }
    c.limit = static_cast<std::size_t>(get_int(obj, path, "limit", 0, 0));
    c.raw = get_bool(obj, path, "raw", false);
    return c;
}

ModelConfig parse_model(const json& obj) {
    const std::string path = "model";
    reject_unknown(obj, path, {"type", "components", "blocks", "hidden", "posterior_hidden"});
    ModelConfig c;
    c.type = get_str(obj, path, "type", "realnvp");
    if (c.type != "realnvp" && c.type != "maf")
        throw ConfigError("model.type must be realnvp or maf", "model.type");
    c.components = static_cast<std::size_t>(get_int(obj, path, "components", 1, 1));
    c.blocks = static_cast<std::size_t>(get_int(obj, path, "blocks", 1, 1));
    c.hidden = static_cast<std::size_t>(get_int(obj, path, "hidden", 8, 1));
    if (const json* v = find(obj, "posterior_hidden")) {
        if (!v->is_array())
            throw ConfigError("model.posterior_hidden must be an array",
                              "model.posterior_hidden");
        for (const auto& w : *v) {
            if ((!w.is_number_integer() && !w.is_number_unsigned()) || w.get<std::int64_t>() < 1)
                throw ConfigError("model.posterior_hidden entries must be positive integers",
                                  "model.posterior_hidden");
            c.posterior_hidden.push_back(static_cast<std::size_t>(w.get<std::int64_t>()));
        }
    }
    return c;
}

TrainingConfig parse_training(const json& obj) {
    const std::string path = "training";
    reject_unknown(obj, path,
                   {"mode", "epochs", "batch_size", "learning_rate", "weight_decay", "seed",
                    "temperature", "pretrain_epochs", "interleave"});
    TrainingConfig c;
    c.mode = get_str(obj, path, "mode", "unsupervised");
    if (c.mode != "unsupervised" && c.mode != "semisupervised")
        throw ConfigError("training.mode must be unsupervised or semisupervised",
                          "training.mode");
    c.epochs = static_cast<std::size_t>(get_int(obj, path, "epochs", 0, 0));
    c.batch_size = static_cast<std::size_t>(get_int(obj, path, "batch_size", 64, 1));
    c.learning_rate = get_num(obj, path, "learning_rate", 0.001, 0.0);
    c.weight_decay = get_num(obj, path, "weight_decay", 0.0, 0.0);
    c.seed = static_cast<unsigned long>(get_int(obj, path, "seed", 0, 0));
    if (const json* v = find(obj, "temperature")) {
        if (!v->is_object())
            throw ConfigError("training.temperature must be an object",
                              "training.temperature");
        reject_unknown(*v, "training.temperature", {"t0", "t_min"});
        c.t0 = get_num(*v, "training.temperature", "t0", 5.0, 0.0);
        c.t_min = get_num(*v, "training.temperature", "t_min", 1.0, 0.0);
    }
    if (!(c.t_min > 0.0) || !(c.t0 >= c.t_min))
        throw ConfigError("training.temperature needs t0 >= t_min > 0",
                          "training.temperature");
    c.pretrain_epochs = static_cast<std::size_t>(get_int(obj, path, "pretrain_epochs", 0, 0));
    c.interleave = static_cast<std::size_t>(get_int(obj, path, "interleave", 1, 0));
    return c;
}

OutputConfig parse_output(const json& obj) {
    reject_unknown(obj, "output", {"checkpoint", "metrics"});
    OutputConfig c;
    c.checkpoint = get_str(obj, "output", "checkpoint", "");
    c.metrics = get_str(obj, "output", "metrics", "");
    return c;
}

std::string resolve_data_path(const std::string& p) {
    if (p.empty() || p.front() == '/') return p;
    const char* dir = std::getenv("VMNF_DATA_DIR");
    if (!dir || !*dir) return p;
    std::string d(dir);
    if (d.back() != '/') d += '/';
    return d + p;
}

// First labeled_per_class rows of every class move to the labeled split;
// the rest stay in the training pool, optionally capped.
ExperimentData split_labeled(LabeledDataset&& full, std::size_t labeled_per_class,
                             std::size_t limit) {
    ExperimentData out;
    const std::size_t d = full.dim();
    std::vector<std::size_t> lab_rows, train_rows;
    std::vector<std::size_t> taken(full.num_classes, 0);
    for (std::size_t i = 0; i < full.size(); ++i) {
        const std::size_t cls = full.labels.empty() ? 0 : full.labels[i];
        if (labeled_per_class > 0 && taken[cls] < labeled_per_class) {
            ++taken[cls];
            lab_rows.push_back(i);
        } else if (limit == 0 || train_rows.size() < limit) {
            train_rows.push_back(i);
        }
    }
    auto subset = [&](const std::vector<std::size_t>& rows) {
        LabeledDataset ds;
        ds.points = Tensor(Shape{rows.size(), d});
        ds.name = full.name;
        ds.num_classes = full.num_classes;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) ds.points.at(i, j) = full.points.at(rows[i], j);
            if (!full.labels.empty()) ds.labels.push_back(full.labels[rows[i]]);
        }
        return ds;
    };
    out.train = subset(train_rows);
    out.labeled = subset(lab_rows);
    out.labeled.name += "_labeled";
    return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what(), "");
    }
    if (!root.is_object()) throw ConfigError("config root must be an object", "");
    reject_unknown(root, "", {"dataset", "model", "training", "output"});

    ExperimentConfig cfg;
    cfg.text = text;
    if (const json* v = find(root, "dataset")) {
        if (!v->is_object()) throw ConfigError("dataset must be an object", "dataset");
        cfg.dataset = parse_dataset(*v);
    }
    if (const json* v = find(root, "model")) {
        if (!v->is_object()) throw ConfigError("model must be an object", "model");
        cfg.model = parse_model(*v);
    }
    if (const json* v = find(root, "training")) {
        if (!v->is_object()) throw ConfigError("training must be an object", "training");
        cfg.training = parse_training(*v);
    }
    if (const json* v = find(root, "output")) {
        if (!v->is_object()) throw ConfigError("output must be an object", "output");
        cfg.output = parse_output(*v);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::size_t dataset_dim(const DatasetConfig& cfg) {
    if (cfg.name == "pinwheel" || cfg.name == "two_circles") return 2;
    if (cfg.name == "mnist") return 784;
    throw ConfigError("dataset.name is required", "dataset.name");
}

ExperimentData build_dataset(const DatasetConfig& cfg) {
    if (cfg.name == "pinwheel") {
        LabeledDataset full =
            gen_pinwheel(cfg.n_per_class + cfg.labeled_per_class, cfg.classes, cfg.seed,
                         cfg.radial_std, cfg.tangential_std, cfg.rate);
        return split_labeled(std::move(full), cfg.labeled_per_class, 0);
    }
    if (cfg.name == "two_circles") {
        LabeledDataset full = gen_two_circles(cfg.n_per_class + cfg.labeled_per_class, cfg.seed,
                                              cfg.radii, cfg.noise_std);
        return split_labeled(std::move(full), cfg.labeled_per_class, 0);
    }
    if (cfg.name == "mnist") {
        if (cfg.images.empty() || cfg.labels.empty())
            throw ConfigError("dataset.images and dataset.labels are required for mnist",
                              "dataset.images");
        std::set<int> filter(cfg.digits.begin(), cfg.digits.end());
        LabeledDataset full = load_mnist_idx(resolve_data_path(cfg.images),
                                             resolve_data_path(cfg.labels), filter, cfg.seed,
                                             cfg.raw);
        return split_labeled(std::move(full), cfg.labeled_per_class, cfg.limit);
    }
    throw ConfigError("dataset.name is required", "dataset.name");
}

MixtureModel build_model(const ModelConfig& cfg, std::size_t dim, Rng& rng) {
    std::vector<std::unique_ptr<FlowStack>> comps;
    for (std::size_t k = 0; k < cfg.components; ++k) {
        if (cfg.type == "maf")
            comps.push_back(make_maf_stack(dim, cfg.blocks, cfg.hidden, rng));
        else
            comps.push_back(make_realnvp_stack(dim, cfg.blocks, cfg.hidden, rng));
    }
    std::vector<std::size_t> widths;
    widths.push_back(dim);
    for (std::size_t w : cfg.posterior_hidden) widths.push_back(w);
    widths.push_back(cfg.components);
    Mlp posterior(widths, rng);
    return MixtureModel(std::move(comps), std::move(posterior));
}

}  // namespace vmnf
