#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vmnf/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mixtures of normalizing flows: train, evaluate, sample, rasterize"};
    app.require_subcommand(1);

    unsigned long global_seed = 0;
    CLI::Option* global_seed_opt =
        app.add_option("--seed", global_seed, "override the config's training seed");

    std::string train_config;
    CLI::App* train = app.add_subcommand("train", "train a mixture from a json config");
    train->add_option("config", train_config, "experiment config path")->required();

    vmnf::EvalOptions eopt;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("checkpoint", eopt.checkpoint, "checkpoint path")->required();
    eval->add_option("dataset-config", eopt.dataset_config, "config whose dataset block to use")
        ->required();

    vmnf::SampleOptions sopt;
    unsigned long sample_seed = 0;
    CLI::App* sample = app.add_subcommand("sample", "draw samples into a csv");
    sample->add_option("checkpoint", sopt.checkpoint, "checkpoint path")->required();
    sample->add_option("--component", sopt.component, "component index or 'all'");
    sample->add_option("--n", sopt.n, "samples per component");
    CLI::Option* sample_seed_opt = sample->add_option("--seed", sample_seed, "sampling seed");
    sample->add_option("--out", sopt.out_path, "output csv path")->required();

    vmnf::GridOptions gopt;
    std::vector<double> bounds;
    CLI::App* grid = app.add_subcommand("grid", "rasterize the density or partition");
    grid->add_option("checkpoint", gopt.checkpoint, "checkpoint path")->required();
    grid->add_option("--kind", gopt.kind, "density or partition");
    grid->add_option("--bounds", bounds, "lo0 hi0 lo1 hi1")->expected(4);
    grid->add_option("--res", gopt.resolution, "cells per axis");
    grid->add_option("--out", gopt.out_stem, "output stem for .csv and raster")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (*train) {
        vmnf::TrainOptions topt{train_config, std::nullopt};
        if (global_seed_opt->count() > 0) topt.seed_override = global_seed;
        return vmnf::cmd_train(topt, std::cout, std::cerr);
    }
    if (*eval) return vmnf::cmd_eval(eopt, std::cout, std::cerr);
    if (*sample) {
        if (sample_seed_opt->count() > 0)
            sopt.seed = sample_seed;
        else if (global_seed_opt->count() > 0)
            sopt.seed = global_seed;
        return vmnf::cmd_sample(sopt, std::cout, std::cerr);
    }
    if (*grid) {
        if (bounds.size() == 4) gopt.bounds = {bounds[0], bounds[1], bounds[2], bounds[3]};
        return vmnf::cmd_grid(gopt, std::cout, std::cerr);
    }
    return 2;
}
