#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "twins/core/tensor.hpp"

namespace twins {

// Single-file versioned checkpoint: named float32 arrays plus an integer
// metadata map. Array names carry their section as a prefix (student/,
// teacher/, optim/m/, optim/v/).
struct CheckpointData {
  std::map<std::string, int64_t> meta;
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>>
      arrays;

  void put(const std::string& name, const Shape& shape,
           const std::vector<float>& data);
  const std::pair<Shape, std::vector<float>>* get(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Low-level little-endian helpers shared with the dataset format.
void write_u32_le(std::vector<uint8_t>& out, uint32_t v);
uint32_t read_u32_le(const uint8_t* p);

}  // namespace twins
