#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>

namespace vmnf {

// Command bodies for the CLI. Each returns a process exit code:
// 0 on success, 2 for configuration, file, or format problems, 3 when the
// numerics blow up. Diagnostics go to err, normal output to out.

struct TrainOptions {
    std::string config_path;
    std::optional<unsigned long> seed_override;
};

struct EvalOptions {
    std::string checkpoint;
    std::string dataset_config;
};

struct SampleOptions {
    std::string checkpoint;
    std::string component = "all";
    std::size_t n = 256;
    std::optional<unsigned long> seed;
    std::string out_path;
};

struct GridOptions {
    std::string checkpoint;
    std::string kind = "density";
    std::array<double, 4> bounds{-4.0, 4.0, -4.0, 4.0};
    std::size_t resolution = 300;
    std::string out_stem;
};

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);
int cmd_sample(const SampleOptions& opt, std::ostream& out, std::ostream& err);
int cmd_grid(const GridOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace vmnf
