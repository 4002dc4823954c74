#pragma once

#include <cstdint>
#include <string>

#include "grpolab/model.hpp"

namespace grpolab::model {

// Binary checkpoint, byte layout (all integers and doubles little-endian):
//   magic "GLCK" | u32 version | u32 vocab_size | u32 context_window
//   | u32 d_model | u32 n_head | u32 n_layer | u64 rng_seed
//   | u32 n_blocks | n_blocks x { u32 name_len, name bytes, u64 offset,
//                                 u64 rows, u64 cols }
//   | u64 n_values | n_values x f64
// The block table is validated against the layout derived from the header
// dimensions on load.
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Policy policy;
  uint64_t rng_seed = 0;
};

void save_checkpoint(const std::string& path, const Policy& policy, uint64_t rng_seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace grpolab::model
