#include "twins/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace twins {
namespace {

constexpr char kMagic[4] = {'T', 'W', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& os, uint32_t v) {
  uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16),
                  uint8_t(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_i64(std::ofstream& os, int64_t v) {
  const uint64_t u = uint64_t(v);
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = uint8_t(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_string(std::ofstream& os, const std::string& s) {
  put_u32(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

void put_floats(std::ofstream& os, const std::vector<float>& v) {
  for (float f : v) {
    const uint32_t u = std::bit_cast<uint32_t>(f);
    uint8_t b[4] = {uint8_t(u), uint8_t(u >> 8), uint8_t(u >> 16),
                    uint8_t(u >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
}

uint32_t take_u32(std::ifstream& is, const std::string& path) {
  uint8_t b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("truncated checkpoint: " + path);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

int64_t take_i64(std::ifstream& is, const std::string& path) {
  uint8_t b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("truncated checkpoint: " + path);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= uint64_t(b[i]) << (8 * i);
  return int64_t(u);
}

std::string take_string(std::ifstream& is, const std::string& path) {
  const uint32_t n = take_u32(is, path);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n))
    throw FormatError("truncated checkpoint: " + path);
  return s;
}

}  // namespace

void CheckpointData::put(const std::string& name, const Shape& shape,
                         const std::vector<float>& data) {
  arrays.emplace_back(name, std::make_pair(shape, data));
}

const std::pair<Shape, std::vector<float>>* CheckpointData::get(
    const std::string& name) const {
  for (const auto& [n, payload] : arrays)
    if (n == name) return &payload;
  return nullptr;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, uint32_t(data.meta.size()));
  for (const auto& [k, v] : data.meta) {
    put_string(os, k);
    put_i64(os, v);
  }
  put_u32(os, uint32_t(data.arrays.size()));
  for (const auto& [name, payload] : data.arrays) {
    put_string(os, name);
    put_u32(os, uint32_t(payload.first.size()));
    for (int d : payload.first) put_u32(os, uint32_t(d));
    put_floats(os, payload.second);
  }
  if (!os) throw IoError("write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad checkpoint magic: " + path);
  const uint32_t version = take_u32(is, path);
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + ": " + path);
  CheckpointData data;
  const uint32_t nmeta = take_u32(is, path);
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = take_string(is, path);
    data.meta[k] = take_i64(is, path);
  }
  const uint32_t narr = take_u32(is, path);
  for (uint32_t i = 0; i < narr; ++i) {
    std::string name = take_string(is, path);
    const uint32_t rank = take_u32(is, path);
    Shape shape(rank);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = int(take_u32(is, path));
      n *= shape[d];
    }
    std::vector<float> v(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
      uint8_t b[4];
      if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated checkpoint payload: " + path);
      const uint32_t u = uint32_t(b[0]) | uint32_t(b[1]) << 8 |
                         uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
      v[size_t(j)] = std::bit_cast<float>(u);
    }
    data.arrays.emplace_back(std::move(name), std::make_pair(shape, std::move(v)));
  }
  return data;
}

void write_u32_le(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 24));
}

uint32_t read_u32_le(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

}  // namespace twins
