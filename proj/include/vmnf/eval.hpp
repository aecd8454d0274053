#pragma once

#include <string>
#include <vector>

#include "vmnf/vmonf.hpp"

namespace vmnf {

struct ContingencyTable {
    std::size_t k_true = 0;
    std::size_t k_pred = 0;
    std::vector<std::vector<std::size_t>> counts;  // k_true x k_pred
    std::vector<std::vector<double>> freq;         // rows normalized by row totals
    std::vector<bool> empty_row;                   // true where a truth class never occurs
};

ContingencyTable contingency(const std::vector<std::size_t>& truth,
                             const std::vector<std::size_t>& pred);

struct ClusterMatch {
    double accuracy = 0.0;
    std::vector<std::size_t> permutation;  // cluster index -> matched truth label
};

// Best label matching by exhaustive permutation search; K <= 8 by design.
ClusterMatch cluster_accuracy(const std::vector<std::size_t>& truth,
                              const std::vector<std::size_t>& pred);

struct Grid2D {
    std::size_t resolution = 0;
    double lo0 = 0.0, hi0 = 0.0;  // dim 0, columns
    double lo1 = 0.0, hi1 = 0.0;  // dim 1, rows
    std::vector<double> values;   // row-major, row = dim-1 index from lo1 up

    double cell_area() const;
    double center0(std::size_t col) const;
    double center1(std::size_t row) const;
};

using Bounds2D = std::pair<std::pair<double, double>, std::pair<double, double>>;

// Log density at cell centers, evaluated in row chunks. 2D models only.
Grid2D density_grid(FlowStack& stack, const Bounds2D& bounds, std::size_t resolution);
// Mixture version: exact log evidence at the centers.
Grid2D density_grid(MixtureModel& model, const Bounds2D& bounds, std::size_t resolution);

// assign_cluster at every cell center; layout as Grid2D. 2D models only.
std::vector<std::size_t> partition_grid(MixtureModel& model, const Bounds2D& bounds,
                                        std::size_t resolution);

// CSV with header x0,x1,value (or x0,x1,cluster), one row per cell.
void save_grid_csv(const Grid2D& grid, const std::string& path);
void save_partition_csv(const std::vector<std::size_t>& cells, const Bounds2D& bounds,
                        std::size_t resolution, const std::string& path);

// n samples from every component, CSV columns x0..x{D-1},component.
void sample_dump(MixtureModel& model, std::size_t n_per_component, unsigned long seed,
                 const std::string& path);

// Binary P5 raster of the grid, min-max scaled to 0..255, top row = hi1.
void write_pgm(const Grid2D& grid, const std::string& path);
// Binary P6 raster of a partition, fixed palette per cluster index.
void write_ppm_partition(const std::vector<std::size_t>& cells, std::size_t resolution,
                         const std::string& path);

}  // namespace vmnf
