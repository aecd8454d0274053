#include "vmnf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "vmnf/error.hpp"

namespace vmnf {

namespace {

void write_double(std::ofstream& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

void check_bounds(const Bounds2D& bounds, std::size_t resolution) {
    if (resolution < 1) throw ContractError("grid: resolution must be at least 1");
    if (!(bounds.first.first < bounds.first.second) ||
        !(bounds.second.first < bounds.second.second))
        throw DomainError("grid: bounds must satisfy lo < hi per dim");
}

Tensor grid_row_points(const Bounds2D& bounds, std::size_t resolution, std::size_t row) {
    const double step0 = (bounds.first.second - bounds.first.first) / resolution;
    const double step1 = (bounds.second.second - bounds.second.first) / resolution;
    const double y = bounds.second.first + (row + 0.5) * step1;
    Tensor pts(Shape{resolution, 2});
    for (std::size_t c = 0; c < resolution; ++c) {
        pts.at(c, 0) = bounds.first.first + (c + 0.5) * step0;
        pts.at(c, 1) = y;
    }
    return pts;
}

template <typename RowFn>
Grid2D fill_grid(const Bounds2D& bounds, std::size_t resolution, RowFn&& fn) {
    Grid2D g;
    g.resolution = resolution;
    g.lo0 = bounds.first.first;
    g.hi0 = bounds.first.second;
    g.lo1 = bounds.second.first;
    g.hi1 = bounds.second.second;
    g.values.resize(resolution * resolution);
    for (std::size_t r = 0; r < resolution; ++r) {
        Tensor vals = fn(grid_row_points(bounds, resolution, r));
        for (std::size_t c = 0; c < resolution; ++c) g.values[r * resolution + c] = vals[c];
    }
    return g;
}

}  // namespace

double Grid2D::cell_area() const {
    const double r = static_cast<double>(resolution);
    return ((hi0 - lo0) / r) * ((hi1 - lo1) / r);
}

double Grid2D::center0(std::size_t col) const {
    return lo0 + (static_cast<double>(col) + 0.5) * (hi0 - lo0) / static_cast<double>(resolution);
}

double Grid2D::center1(std::size_t row) const {
    return lo1 + (static_cast<double>(row) + 0.5) * (hi1 - lo1) / static_cast<double>(resolution);
}

ContingencyTable contingency(const std::vector<std::size_t>& truth,
                             const std::vector<std::size_t>& pred) {
    if (truth.empty()) throw ContractError("contingency: empty input");
    if (truth.size() != pred.size()) throw ShapeError("contingency: length mismatch");

    ContingencyTable t;
    t.k_true = *std::max_element(truth.begin(), truth.end()) + 1;
    t.k_pred = *std::max_element(pred.begin(), pred.end()) + 1;
    t.counts.assign(t.k_true, std::vector<std::size_t>(t.k_pred, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) ++t.counts[truth[i]][pred[i]];

    t.freq.assign(t.k_true, std::vector<double>(t.k_pred, 0.0));
    t.empty_row.assign(t.k_true, false);
    for (std::size_t i = 0; i < t.k_true; ++i) {
        std::size_t total = std::accumulate(t.counts[i].begin(), t.counts[i].end(),
                                            std::size_t{0});
        if (total == 0) {
            t.empty_row[i] = true;
            continue;
        }
        for (std::size_t j = 0; j < t.k_pred; ++j)
            t.freq[i][j] = static_cast<double>(t.counts[i][j]) / static_cast<double>(total);
    }
    return t;
}

ClusterMatch cluster_accuracy(const std::vector<std::size_t>& truth,
                              const std::vector<std::size_t>& pred) {
    if (truth.empty()) throw ContractError("cluster_accuracy: empty input");
    if (truth.size() != pred.size()) throw ShapeError("cluster_accuracy: length mismatch");
    const std::size_t k_true = *std::max_element(truth.begin(), truth.end()) + 1;
    const std::size_t k_pred = *std::max_element(pred.begin(), pred.end()) + 1;
    const std::size_t k = std::max(k_true, k_pred);
    if (k > 8) throw ContractError("cluster_accuracy: more than 8 clusters is unsupported");

    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    ClusterMatch best;
    best.accuracy = -1.0;
    do {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < truth.size(); ++i)
            if (perm[pred[i]] == truth[i]) ++hits;
        const double acc = static_cast<double>(hits) / static_cast<double>(truth.size());
        if (acc > best.accuracy) {
            best.accuracy = acc;
            best.permutation = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

Grid2D density_grid(FlowStack& stack, const Bounds2D& bounds, std::size_t resolution) {
    if (stack.dim() != 2) throw ContractError("density_grid: 2D models only");
    check_bounds(bounds, resolution);
    return fill_grid(bounds, resolution,
                     [&](const Tensor& pts) { return stack.log_prob(constant(pts))->value; });
}

Grid2D density_grid(MixtureModel& model, const Bounds2D& bounds, std::size_t resolution) {
    if (model.dim() != 2) throw ContractError("density_grid: 2D models only");
    check_bounds(bounds, resolution);
    return fill_grid(bounds, resolution,
                     [&](const Tensor& pts) { return model.exact_log_evidence(constant(pts)); });
}

std::vector<std::size_t> partition_grid(MixtureModel& model, const Bounds2D& bounds,
                                        std::size_t resolution) {
    if (model.dim() != 2) throw ContractError("partition_grid: 2D models only");
    check_bounds(bounds, resolution);
    std::vector<std::size_t> cells(resolution * resolution);
    for (std::size_t r = 0; r < resolution; ++r) {
        std::vector<std::size_t> row =
            model.assign_cluster(grid_row_points(bounds, resolution, r));
        for (std::size_t c = 0; c < resolution; ++c) cells[r * resolution + c] = row[c];
    }
    return cells;
}

void save_grid_csv(const Grid2D& grid, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "x0,x1,value\n";
    for (std::size_t r = 0; r < grid.resolution; ++r)
        for (std::size_t c = 0; c < grid.resolution; ++c) {
            write_double(out, grid.center0(c));
            out << ",";
            write_double(out, grid.center1(r));
            out << ",";
            write_double(out, grid.values[r * grid.resolution + c]);
            out << "\n";
        }
    if (!out) throw IoError("write failed for " + path);
}

void save_partition_csv(const std::vector<std::size_t>& cells, const Bounds2D& bounds,
                        std::size_t resolution, const std::string& path) {
    if (cells.size() != resolution * resolution)
        throw ShapeError("partition csv: cell count does not match resolution");
    Grid2D g;
    g.resolution = resolution;
    g.lo0 = bounds.first.first;
    g.hi0 = bounds.first.second;
    g.lo1 = bounds.second.first;
    g.hi1 = bounds.second.second;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "x0,x1,cluster\n";
    for (std::size_t r = 0; r < resolution; ++r)
        for (std::size_t c = 0; c < resolution; ++c) {
            write_double(out, g.center0(c));
            out << ",";
            write_double(out, g.center1(r));
            out << "," << cells[r * resolution + c] << "\n";
        }
    if (!out) throw IoError("write failed for " + path);
}

void sample_dump(MixtureModel& model, std::size_t n_per_component, unsigned long seed,
                 const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    const std::size_t d = model.dim();
    for (std::size_t j = 0; j < d; ++j) out << (j ? ",x" : "x") << j;
    out << ",component\n";
    for (std::size_t k = 0; k < model.num_components() && n_per_component > 0; ++k) {
        Tensor s = model.sample_component(k, n_per_component, seed + k);
        for (std::size_t i = 0; i < n_per_component; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                if (j) out << ",";
                write_double(out, s.at(i, j));
            }
            out << "," << k << "\n";
        }
    }
    if (!out) throw IoError("write failed for " + path);
}

void write_pgm(const Grid2D& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const std::size_t res = grid.resolution;
    out << "P5\n" << res << " " << res << "\n255\n";
    const auto [mn_it, mx_it] = std::minmax_element(grid.values.begin(), grid.values.end());
    const double mn = *mn_it, mx = *mx_it;
    const double span = mx - mn;
    std::vector<unsigned char> rowbuf(res);
    for (std::size_t r = res; r-- > 0;) {  // top row = hi1
        for (std::size_t c = 0; c < res; ++c) {
            const double v = grid.values[r * res + c];
            rowbuf[c] = span > 0.0
                            ? static_cast<unsigned char>(std::lround((v - mn) / span * 255.0))
                            : 0;
        }
        out.write(reinterpret_cast<const char*>(rowbuf.data()),
                  static_cast<std::streamsize>(res));
    }
    if (!out) throw IoError("write failed for " + path);
}

void write_ppm_partition(const std::vector<std::size_t>& cells, std::size_t resolution,
                         const std::string& path) {
    if (cells.size() != resolution * resolution)
        throw ShapeError("ppm: cell count does not match resolution");
    static const unsigned char palette[8][3] = {
        {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
        {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << resolution << " " << resolution << "\n255\n";
    std::vector<unsigned char> rowbuf(resolution * 3);
    for (std::size_t r = resolution; r-- > 0;) {
        for (std::size_t c = 0; c < resolution; ++c) {
            const unsigned char* rgb = palette[cells[r * resolution + c] % 8];
            rowbuf[c * 3] = rgb[0];
            rowbuf[c * 3 + 1] = rgb[1];
            rowbuf[c * 3 + 2] = rgb[2];
        }
        out.write(reinterpret_cast<const char*>(rowbuf.data()),
                  static_cast<std::streamsize>(rowbuf.size()));
    }
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace vmnf
