#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxalign/common.hpp"

namespace voxalign {

// Raw little-endian float32 blobs. The static_assert in common.hpp pins the
// host byte order, so plain memory dumps are portable across our targets.
inline void write_f32(const std::filesystem::path& path,
                      const std::vector<float>& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) throw IoError("write_f32: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  f.flush();
  if (!f.good()) throw IoError("write_f32: short write to " + path.string());
}

inline std::vector<float> read_f32(const std::filesystem::path& path,
                                   int64_t expected_count) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw IoError("read_f32: cannot open " + path.string());
  f.seekg(0, std::ios::end);
  const auto bytes = static_cast<int64_t>(f.tellg());
  if (bytes != expected_count * static_cast<int64_t>(sizeof(float)))
    throw IoError("read_f32: " + path.string() + " holds " +
                  std::to_string(bytes) + " bytes, expected " +
                  std::to_string(expected_count * sizeof(float)));
  f.seekg(0);
  std::vector<float> data(static_cast<size_t>(expected_count));
  f.read(reinterpret_cast<char*>(data.data()), bytes);
  if (!f.good()) throw IoError("read_f32: short read from " + path.string());
  return data;
}

inline void write_text(const std::filesystem::path& path,
                       const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) throw IoError("write_text: cannot open " + path.string());
  f << text;
  f.flush();
  if (!f.good()) throw IoError("write_text: short write to " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw IoError("read_text: cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(f)),
                std::istreambuf_iterator<char>());
  return s;
}

}  // namespace voxalign
