#pragma once
// Single-file tensor container: an 8-byte little-endian header length, a JSON
// index, then raw little-endian float32 payloads at the offsets in the index.

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "hsrgan/core/tensor.hpp"

namespace hsrgan::io {

inline constexpr int kTensorFileVersion = 1;

struct TensorFile {
  std::map<std::string, Tensor<float>> tensors;
  nlohmann::json meta = nlohmann::json::object();

  void save(const std::filesystem::path& path) const;
  static TensorFile load(const std::filesystem::path& path);

  const Tensor<float>& at(const std::string& name) const;
};

// FNV-1a 64 fingerprint of a file, as 16 hex digits.
std::string file_fingerprint(const std::filesystem::path& path);
std::string fingerprint(const std::string& bytes);

// Writes `bytes` to a temporary sibling then renames it over `path`.
void write_atomically(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace hsrgan::io
