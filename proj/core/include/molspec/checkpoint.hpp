#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "molspec/tensor.hpp"

namespace molspec::pipeline {

// Versioned parameter container. Binary layout: magic "MSPC1", an 8-byte
// little-endian manifest length, the UTF-8 JSON manifest, then raw 64-bit
// little-endian floating-point blobs in manifest order.
struct Checkpoint {
  std::uint32_t version = 1;
  int stage = 1;
  std::uint64_t step = 0;         // steps completed within the current stage
  std::uint64_t global_step = 0;  // across stages; drives the RNG counters
  std::uint64_t seed = 0;         // master seed of the run
  std::string config_json;        // serialized run configuration snapshot
  std::vector<std::pair<std::string, numerics::Tensor>> tensors;

  const numerics::Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace molspec::pipeline
