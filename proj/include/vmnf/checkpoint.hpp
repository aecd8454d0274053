#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vmnf/rng.hpp"
#include "vmnf/tensor.hpp"
#include "vmnf/vmonf.hpp"

namespace vmnf {

// On-disk snapshot of a mixture: the config that built it, the epoch counter,
// the trainer RNG state, and every named tensor (parameters plus batch norm
// running statistics). Optimizer state is not persisted.
struct Checkpoint {
    std::string config_text;
    std::uint64_t epoch = 0;
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

// Binary layout, all integers and doubles little-endian:
//   "VMNF" | u32 version | u64 config_len + bytes | u64 epoch
//   | u64 rng_len + bytes | u64 n_tensors
//   | per tensor: u64 name_len + bytes, u32 ndim, u64 dims[], f64 data[]
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot_model(MixtureModel& model, const std::string& config_text,
                          std::uint64_t epoch, const Rng& rng);

// Fills parameters and running statistics by name. Any mismatch between the
// checkpoint's tensor set and the model's is an error.
void restore_model(MixtureModel& model, const Checkpoint& ckpt);

}  // namespace vmnf
