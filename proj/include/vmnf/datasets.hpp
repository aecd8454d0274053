#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vmnf/rng.hpp"
#include "vmnf/tensor.hpp"

namespace vmnf {

struct LabeledDataset {
    Tensor points;                    // [N, D]
    std::vector<std::size_t> labels;  // empty when unlabeled, else one per row
    std::string name;
    std::size_t num_classes = 0;

    std::size_t size() const { return points.rows(); }
    std::size_t dim() const { return points.cols(); }
    bool labeled() const { return !labels.empty(); }
};

// Five (by default) curved wings: per class, radial gaussians rotated by an
// angle proportional to the radius plus the class offset 2 pi k / classes.
LabeledDataset gen_pinwheel(std::size_t n_per_class, std::size_t classes, unsigned long seed,
                            double radial_std = 0.3, double tangential_std = 0.05,
                            double rate = 0.25);

// Two concentric circles, uniform angles, gaussian radial noise.
LabeledDataset gen_two_circles(std::size_t n_per_class, unsigned long seed,
                               std::pair<double, double> radii = {1.0, 0.5},
                               double noise_std = 0.03);

// IDX ingestion: pixels scaled to [0,1], dequantization noise U(0, 1/256)
// added, then y = ln(p / (1-p)) with p = 0.05 + 0.9 x. Rows are filtered to
// the digit set and labels remapped to 0..|filter|-1 in ascending digit
// order. raw skips the noise and logit and keeps plain [0,1] pixels.
LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              const std::set<int>& digit_filter, unsigned long seed = 0,
                              bool raw = false);

struct Minibatch {
    Tensor points;
    std::vector<std::size_t> labels;   // empty for unlabeled datasets
    std::vector<std::size_t> indices;  // source rows in the dataset
};

// One epoch of batches: full shuffle, final partial batch included, every
// point appears exactly once.
std::vector<Minibatch> minibatches(const LabeledDataset& data, std::size_t batch_size, Rng& rng);

// Header row x0..x{D-1}[,label], one row per point.
void save_dataset_csv(const LabeledDataset& data, const std::string& path);

}  // namespace vmnf
