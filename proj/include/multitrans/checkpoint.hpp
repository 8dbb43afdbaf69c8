#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "multitrans/parameters.hpp"

namespace multitrans {

// Layout (all integers little-endian):
//   "MTCKPT" | u32 version | u64 len + config text | u64 epoch | f64 metric
//   | u64 tensor count | per tensor: u64 len + name, u64 rank, rank x u64 dims,
//   numel x f32 values
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t epoch = 0;
  double metric = 0.0;
  std::vector<NamedTensor> tensors;
};

template <typename T>
Checkpoint make_checkpoint(const ParameterStore<T>& store, std::string config_text,
                           std::uint64_t epoch, double metric);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the stored values into `store`. Names, order and shapes must match.
template <typename T>
void apply_checkpoint(const Checkpoint& checkpoint, ParameterStore<T>& store);

}  // namespace multitrans
