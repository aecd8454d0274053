#include "vmnf/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "vmnf/checkpoint.hpp"
#include "vmnf/config.hpp"
#include "vmnf/error.hpp"
#include "vmnf/eval.hpp"

namespace vmnf {

namespace {

using nlohmann::json;

template <typename F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    const std::size_t d = t.cols();
    Tensor out(Shape{end - begin, d});
    for (std::size_t i = begin; i < end; ++i)
        for (std::size_t j = 0; j < d; ++j) out.at(i - begin, j) = t.at(i, j);
    return out;
}

struct LoadedModel {
    ExperimentConfig cfg;
    Checkpoint ckpt;
    MixtureModel model;
};

LoadedModel load_model(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    ExperimentConfig cfg = parse_config_text(ckpt.config_text);
    Rng rng(0);
    MixtureModel model = build_model(cfg.model, dataset_dim(cfg.dataset), rng);
    restore_model(model, ckpt);
    model.set_training(false);
    return {std::move(cfg), std::move(ckpt), std::move(model)};
}

std::size_t parse_component_index(const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("component must be a nonnegative index or 'all'", "component");
    try {
        return std::stoul(s);
    } catch (const std::exception&) {
        throw ConfigError("component index out of range", "component");
    }
}

}  // namespace

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&]() -> int {
        ExperimentConfig cfg = load_config(opt.config_path);
        if (opt.seed_override) cfg.training.seed = *opt.seed_override;
        const std::size_t dim = dataset_dim(cfg.dataset);
        ExperimentData data = build_dataset(cfg.dataset);
        if (data.train.size() == 0) throw ConfigError("training pool is empty", "dataset");
        Rng rng(cfg.training.seed);
        MixtureModel model = build_model(cfg.model, dim, rng);
        MixtureOptimizer optim(model, cfg.training.learning_rate, cfg.training.weight_decay);

        std::ofstream metrics;
        if (!cfg.output.metrics.empty()) {
            metrics.open(cfg.output.metrics);
            if (!metrics) throw IoError("cannot open metrics file " + cfg.output.metrics);
            metrics << "epoch,elbo,recon,prior,entropy,temperature,seconds\n";
        }
        auto emit = [&](std::size_t epoch, const EpochMetrics& m, double T, double secs) {
            if (!metrics.is_open()) return;
            metrics << epoch << ',' << fmt(m.elbo) << ',' << fmt(m.recon) << ',' << fmt(m.prior)
                    << ',' << fmt(m.entropy) << ',' << fmt(T) << ',' << fmt(secs) << '\n';
        };

        TemperatureSchedule sched{cfg.training.t0, cfg.training.t_min, 0.0};
        if (cfg.training.epochs > 0)
            sched = TemperatureSchedule::for_total_epochs(cfg.training.epochs, cfg.training.t0,
                                                          cfg.training.t_min);
        const bool semi = cfg.training.mode == "semisupervised";
        std::size_t logged = 0;
        double last_elbo = std::numeric_limits<double>::quiet_NaN();

        if (!semi) {
            for (std::size_t e = 0; e < cfg.training.epochs; ++e) {
                const double T = sched.at(e);
                Timer timer;
                EpochMetrics m = train_epoch_unsupervised(model, optim, data.train.points, T,
                                                          cfg.training.batch_size, rng);
                emit(e, m, T, timer.seconds());
                last_elbo = m.elbo;
                ++logged;
            }
        } else {
            if (data.labeled.size() == 0)
                throw ConfigError("semisupervised training needs dataset.labeled_per_class >= 1",
                                  "dataset.labeled_per_class");
            bool warned = false;
            auto warn_skips = [&](const SupervisedEpochMetrics& sm) {
                if (warned) return;
                warned = true;
                for (std::size_t k : sm.skipped_components)
                    err << "warning: component " << k
                        << " has no labeled examples; skipping its supervised steps\n";
            };
            for (std::size_t e = 0; e < cfg.training.pretrain_epochs; ++e) {
                Timer timer;
                SupervisedEpochMetrics sm =
                    supervised_epoch(model, optim, data.labeled.points, data.labeled.labels);
                warn_skips(sm);
                EpochMetrics m = eval_elbo(model, data.train.points, cfg.training.t0);
                emit(e, m, cfg.training.t0, timer.seconds());
                last_elbo = m.elbo;
                ++logged;
            }
            const std::size_t base = cfg.training.pretrain_epochs;
            for (std::size_t e = 0; e < cfg.training.epochs; ++e) {
                const double T = sched.at(e);
                Timer timer;
                EpochMetrics m;
                if (e % (cfg.training.interleave + 1) == 0) {
                    SupervisedEpochMetrics sm =
                        supervised_epoch(model, optim, data.labeled.points, data.labeled.labels);
                    warn_skips(sm);
                    m = eval_elbo(model, data.train.points, T);
                } else {
                    m = train_epoch_unsupervised(model, optim, data.train.points, T,
                                                 cfg.training.batch_size, rng);
                }
                emit(base + e, m, T, timer.seconds());
                last_elbo = m.elbo;
                ++logged;
            }
        }

        if (metrics.is_open()) {
            metrics.close();
            out << "metrics written to " << cfg.output.metrics << "\n";
        }
        if (!cfg.output.checkpoint.empty()) {
            const std::uint64_t total =
                cfg.training.epochs + (semi ? cfg.training.pretrain_epochs : 0);
            save_checkpoint(snapshot_model(model, cfg.text, total, rng), cfg.output.checkpoint);
            out << "checkpoint written to " << cfg.output.checkpoint << "\n";
        }
        out << "trained " << cfg.training.mode << " for " << logged << " epochs";
        if (logged > 0) out << "; final elbo " << fmt(last_elbo);
        out << "\n";
        return 0;
    });
}

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&]() -> int {
        LoadedModel lm = load_model(opt.checkpoint);
        ExperimentConfig eval_cfg = load_config(opt.dataset_config);
        ExperimentData data = build_dataset(eval_cfg.dataset);
        if (data.train.size() == 0) throw ConfigError("evaluation dataset is empty", "dataset");
        if (data.train.dim() != lm.model.dim())
            throw ConfigError("dataset dimension does not match the checkpoint model",
                              "dataset.name");

        const std::size_t n = data.train.size();
        const std::size_t chunk = 256;
        double sum_ev = 0.0, sum_elbo = 0.0, sum_recon = 0.0, sum_prior = 0.0, sum_ent = 0.0;
        std::vector<std::size_t> clusters;
        clusters.reserve(n);
        for (std::size_t b = 0; b < n; b += chunk) {
            const std::size_t m = std::min(chunk, n - b);
            Tensor batch = slice_rows(data.train.points, b, b + m);
            Tensor ev = lm.model.exact_log_evidence(constant(batch));
            for (std::size_t i = 0; i < m; ++i) sum_ev += ev[i];
            EpochMetrics em = eval_elbo(lm.model, batch, 1.0);
            sum_elbo += em.elbo * static_cast<double>(m);
            sum_recon += em.recon * static_cast<double>(m);
            sum_prior += em.prior * static_cast<double>(m);
            sum_ent += em.entropy * static_cast<double>(m);
            std::vector<std::size_t> cl = lm.model.assign_cluster(batch);
            clusters.insert(clusters.end(), cl.begin(), cl.end());
        }
        const double dn = static_cast<double>(n);
        json result{{"checkpoint", opt.checkpoint},
                    {"dataset", data.train.name},
                    {"n", n},
                    {"epoch", lm.ckpt.epoch},
                    {"mean_log_evidence", sum_ev / dn},
                    {"mean_elbo", sum_elbo / dn},
                    {"mean_recon", sum_recon / dn},
                    {"mean_prior", sum_prior / dn},
                    {"mean_entropy", sum_ent / dn}};
        if (data.train.labeled()) {
            ContingencyTable table = contingency(data.train.labels, clusters);
            result["contingency"] = table.counts;
            try {
                ClusterMatch match = cluster_accuracy(data.train.labels, clusters);
                result["accuracy"] = match.accuracy;
                result["cluster_to_class"] = match.permutation;
            } catch (const ContractError&) {
                // more than eight labels; the table still tells the story
            }
        }
        out << result.dump(2) << "\n";
        return 0;
    });
}

int cmd_sample(const SampleOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&]() -> int {
        if (opt.out_path.empty()) throw ConfigError("sample needs --out", "out");
        LoadedModel lm = load_model(opt.checkpoint);
        const unsigned long seed = opt.seed.value_or(0);
        if (opt.component == "all") {
            sample_dump(lm.model, opt.n, seed, opt.out_path);
            out << "wrote " << opt.n * lm.model.num_components() << " samples to "
                << opt.out_path << "\n";
            return 0;
        }
        const std::size_t k = parse_component_index(opt.component);
        Tensor s = lm.model.sample_component(k, opt.n, seed + static_cast<unsigned long>(k));
        std::ofstream f(opt.out_path);
        if (!f) throw IoError("cannot open " + opt.out_path);
        for (std::size_t j = 0; j < lm.model.dim(); ++j) f << 'x' << j << ',';
        f << "component\n";
        for (std::size_t i = 0; i < s.rows(); ++i) {
            for (std::size_t j = 0; j < s.cols(); ++j) f << fmt(s.at(i, j)) << ',';
            f << k << '\n';
        }
        out << "wrote " << opt.n << " samples to " << opt.out_path << "\n";
        return 0;
    });
}

int cmd_grid(const GridOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&]() -> int {
        if (opt.out_stem.empty()) throw ConfigError("grid needs --out", "out");
        LoadedModel lm = load_model(opt.checkpoint);
        const Bounds2D bounds{{opt.bounds[0], opt.bounds[1]}, {opt.bounds[2], opt.bounds[3]}};
        if (opt.kind == "density") {
            Grid2D grid = density_grid(lm.model, bounds, opt.resolution);
            save_grid_csv(grid, opt.out_stem + ".csv");
            write_pgm(grid, opt.out_stem + ".pgm");
            out << "wrote " << opt.out_stem << ".csv and " << opt.out_stem << ".pgm\n";
        } else if (opt.kind == "partition") {
            std::vector<std::size_t> cells = partition_grid(lm.model, bounds, opt.resolution);
            save_partition_csv(cells, bounds, opt.resolution, opt.out_stem + ".csv");
            write_ppm_partition(cells, opt.resolution, opt.out_stem + ".ppm");
            out << "wrote " << opt.out_stem << ".csv and " << opt.out_stem << ".ppm\n";
        } else {
            throw ConfigError("grid kind must be density or partition", "kind");
        }
        return 0;
    });
}

}  // namespace vmnf
