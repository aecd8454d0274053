#include "vmnf/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "vmnf/error.hpp"

namespace vmnf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("idx: truncated header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_double(std::ofstream& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

}  // namespace

LabeledDataset gen_pinwheel(std::size_t n_per_class, std::size_t classes, unsigned long seed,
                            double radial_std, double tangential_std, double rate) {
    if (n_per_class < 1) throw ContractError("pinwheel: n_per_class must be at least 1");
    if (classes < 1) throw ContractError("pinwheel: needs at least one class");

    Rng rng(seed);
    const std::size_t n = n_per_class * classes;
    LabeledDataset ds;
    ds.points = Tensor(Shape{n, 2});
    ds.labels.reserve(n);
    ds.name = "pinwheel";
    ds.num_classes = classes;

    std::size_t row = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        const double class_angle = kTwoPi * static_cast<double>(k) / static_cast<double>(classes);
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            const double r = 1.0 + radial_std * rng.normal();
            const double t = tangential_std * rng.normal();
            const double theta = class_angle + rate * r;
            const double c = std::cos(theta), s = std::sin(theta);
            ds.points.at(row, 0) = r * c - t * s;
            ds.points.at(row, 1) = r * s + t * c;
            ds.labels.push_back(k);
        }
    }
    return ds;
}

LabeledDataset gen_two_circles(std::size_t n_per_class, unsigned long seed,
                               std::pair<double, double> radii, double noise_std) {
    if (n_per_class < 1) throw ContractError("two_circles: n_per_class must be at least 1");
    if (!(radii.first > 0.0) || !(radii.second > 0.0) || radii.first == radii.second)
        throw DomainError("two_circles: radii must be distinct and positive");

    Rng rng(seed);
    const double rs[2] = {radii.first, radii.second};
    LabeledDataset ds;
    ds.points = Tensor(Shape{2 * n_per_class, 2});
    ds.labels.reserve(2 * n_per_class);
    ds.name = "two_circles";
    ds.num_classes = 2;

    std::size_t row = 0;
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            const double phi = rng.uniform(0.0, kTwoPi);
            const double rad = rs[k] + noise_std * rng.normal();
            ds.points.at(row, 0) = rad * std::cos(phi);
            ds.points.at(row, 1) = rad * std::sin(phi);
            ds.labels.push_back(k);
        }
    }
    return ds;
}

LabeledDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              const std::set<int>& digit_filter, unsigned long seed, bool raw) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open " + labels_path);

    const std::uint32_t img_magic = read_be32(img, images_path);
    if (img_magic != 2051)
        throw FormatError("idx: bad image magic in " + images_path);
    const std::uint32_t n_img = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);
    if (rows != 28 || cols != 28)
        throw FormatError("idx: expected 28x28 images in " + images_path);

    const std::uint32_t lab_magic = read_be32(lab, labels_path);
    if (lab_magic != 2049)
        throw FormatError("idx: bad label magic in " + labels_path);
    const std::uint32_t n_lab = read_be32(lab, labels_path);
    if (n_img != n_lab)
        throw FormatError("idx: image/label count mismatch between " + images_path + " and " +
                          labels_path);

    std::vector<unsigned char> pixels(static_cast<std::size_t>(n_img) * 784);
    if (!img.read(reinterpret_cast<char*>(pixels.data()),
                  static_cast<std::streamsize>(pixels.size())))
        throw FormatError("idx: truncated image payload in " + images_path);
    std::vector<unsigned char> digits(n_lab);
    if (!lab.read(reinterpret_cast<char*>(digits.data()),
                  static_cast<std::streamsize>(digits.size())))
        throw FormatError("idx: truncated label payload in " + labels_path);

    std::map<int, std::size_t> remap;
    for (int d : digit_filter) remap[d] = 0;
    std::size_t next = 0;
    for (auto& [d, v] : remap) v = next++;

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < digits.size(); ++i)
        if (remap.count(digits[i])) keep.push_back(i);

    Rng rng(seed);
    LabeledDataset ds;
    ds.points = Tensor(Shape{keep.size(), 784});
    ds.labels.reserve(keep.size());
    ds.name = "mnist";
    ds.num_classes = remap.size();

    for (std::size_t r = 0; r < keep.size(); ++r) {
        const unsigned char* px = pixels.data() + keep[r] * 784;
        for (std::size_t j = 0; j < 784; ++j) {
            double x = static_cast<double>(px[j]) / 255.0;
            if (raw) {
                ds.points.at(r, j) = x;
            } else {
                x += rng.uniform() / 256.0;
                const double p = 0.05 + 0.9 * x;
                ds.points.at(r, j) = std::log(p / (1.0 - p));
            }
        }
        ds.labels.push_back(remap.at(digits[keep[r]]));
    }
    return ds;
}

std::vector<Minibatch> minibatches(const LabeledDataset& data, std::size_t batch_size, Rng& rng) {
    if (batch_size < 1) throw ContractError("minibatches: batch size must be at least 1");
    const std::size_t n = data.size();
    const std::size_t d = data.dim();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::vector<Minibatch> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t b = std::min(batch_size, n - start);
        Minibatch mb;
        mb.points = Tensor(Shape{b, d});
        mb.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                          order.begin() + static_cast<std::ptrdiff_t>(start + b));
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < d; ++j)
                mb.points.at(i, j) = data.points.at(mb.indices[i], j);
            if (data.labeled()) mb.labels.push_back(data.labels[mb.indices[i]]);
        }
        out.push_back(std::move(mb));
    }
    return out;
}

void save_dataset_csv(const LabeledDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    const std::size_t d = data.dim();
    for (std::size_t j = 0; j < d; ++j) out << (j ? ",x" : "x") << j;
    if (data.labeled()) out << ",label";
    out << "\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (j) out << ",";
            write_double(out, data.points.at(i, j));
        }
        if (data.labeled()) out << "," << data.labels[i];
        out << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace vmnf
