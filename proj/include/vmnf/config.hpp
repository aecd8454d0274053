#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmnf/datasets.hpp"
#include "vmnf/vmonf.hpp"

namespace vmnf {

struct DatasetConfig {
    std::string name;  // pinwheel | two_circles | mnist
    unsigned long seed = 0;
    std::size_t n_per_class = 512;
    std::size_t labeled_per_class = 0;  // split off for semi-supervised runs
    // pinwheel
    std::size_t classes = 5;
    double radial_std = 0.3;
    double tangential_std = 0.05;
    double rate = 0.25;
    // two_circles
    std::pair<double, double> radii{1.0, 0.5};
    double noise_std = 0.03;
    // mnist
    std::string images;
    std::string labels;
    std::vector<int> digits;
    std::size_t limit = 0;  // cap on training rows after filtering, 0 = all
    bool raw = false;
};

struct ModelConfig {
    std::string type = "realnvp";  // realnvp | maf
    std::size_t components = 1;
    std::size_t blocks = 1;
    std::size_t hidden = 8;
    std::vector<std::size_t> posterior_hidden;
};

struct TrainingConfig {
    std::string mode = "unsupervised";  // unsupervised | semisupervised
    std::size_t epochs = 0;
    std::size_t batch_size = 64;
    double learning_rate = 0.001;
    double weight_decay = 0.0;
    unsigned long seed = 0;
    double t0 = 5.0;
    double t_min = 1.0;
    std::size_t pretrain_epochs = 0;
    std::size_t interleave = 1;  // unsupervised epochs per supervised one
};

struct OutputConfig {
    std::string checkpoint;
    std::string metrics;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    TrainingConfig training;
    OutputConfig output;
    std::string text;  // verbatim source, echoed into checkpoints
};

// Strict parse: unknown keys anywhere are rejected with the offending key's
// full path; values outside documented ranges are rejected the same way.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Data dimensionality implied by the dataset block.
std::size_t dataset_dim(const DatasetConfig& cfg);

struct ExperimentData {
    LabeledDataset train;    // pool for density/clustering; labels kept for eval
    LabeledDataset labeled;  // labeled split, empty unless labeled_per_class > 0
};

// Materializes the dataset block. Relative MNIST paths resolve against the
// VMNF_DATA_DIR environment variable when it is set.
ExperimentData build_dataset(const DatasetConfig& cfg);

// K flow stacks plus posterior net drawn from one rng stream in a fixed
// order: components first, posterior last.
MixtureModel build_model(const ModelConfig& cfg, std::size_t dim, Rng& rng);

}  // namespace vmnf
