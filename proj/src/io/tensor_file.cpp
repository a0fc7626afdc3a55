#include "hsrgan/io/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hsrgan/core/error.hpp"

namespace hsrgan::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

void TensorFile::save(const fs::path& path) const {
  json index;
  index["format_version"] = kTensorFileVersion;
  index["meta"] = meta;
  json entries = json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
    entries[name] = {{"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}};
    offset += bytes;
  }
  index["tensors"] = entries;
  const std::string header = index.dump();
  std::string out;
  out.reserve(8 + header.size() + offset);
  const uint64_t len = header.size();
  out.append(reinterpret_cast<const char*>(&len), 8);
  out += header;
  for (const auto& [name, t] : tensors)
    out.append(reinterpret_cast<const char*>(t.ptr()), static_cast<size_t>(t.numel()) * sizeof(float));
  write_atomically(path, out);
}

TensorFile TensorFile::load(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("tensor file not found: " + path.string());
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw SchemaError("tensor file truncated: " + path.string());
  uint64_t len = 0;
  std::memcpy(&len, bytes.data(), 8);
  if (8 + len > bytes.size()) throw SchemaError("tensor file header exceeds file size: " + path.string());
  json index;
  try {
    index = json::parse(bytes.substr(8, len));
  } catch (const json::exception& e) {
    throw SchemaError("tensor file index is not valid JSON: " + std::string(e.what()));
  }
  if (index.value("format_version", -1) != kTensorFileVersion)
    throw SchemaError("unsupported tensor file version in " + path.string());
  TensorFile file;
  file.meta = index.value("meta", json::object());
  const size_t base = 8 + len;
  for (const auto& [name, entry] : index.at("tensors").items()) {
    if (entry.at("dtype") != "f32") throw SchemaError("unsupported dtype for tensor " + name);
    Shape shape = entry.at("shape").get<Shape>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    Tensor<float> t(shape);
    const size_t n = static_cast<size_t>(t.numel()) * sizeof(float);
    if (base + offset + n > bytes.size()) throw SchemaError("tensor " + name + " runs past end of file");
    std::memcpy(t.ptr(), bytes.data() + base + offset, n);
    file.tensors.emplace(name, std::move(t));
  }
  return file;
}

const Tensor<float>& TensorFile::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw SchemaError("tensor '" + name + "' missing from file");
  return it->second;
}

std::string file_fingerprint(const fs::path& path) { return fingerprint(read_file(path)); }

std::string fingerprint(const std::string& bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

void write_atomically(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace hsrgan::io
