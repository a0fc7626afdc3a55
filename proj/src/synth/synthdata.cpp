#include "hsrgan/synth/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hsrgan/core/error.hpp"
#include "hsrgan/core/parallel.hpp"
#include "hsrgan/io/png.hpp"
#include "hsrgan/io/tensor_file.hpp"

namespace hsrgan::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kSaturation = 0.8;
// Hue stops short of a full turn so that f = -1 and f = +1 stay distinct colors.
constexpr double kHueSpan = 5.0 * std::numbers::pi / 3.0;

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double hp = h / (std::numbers::pi / 3.0);
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(std::floor(hp)) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  return {r + m, g + m, b + m};
}

std::string shape_kind_name(ShapeKind k) { return k == ShapeKind::ellipse ? "ellipse" : "rectangle"; }

ShapeKind parse_shape_kind(const std::string& s) {
  if (s == "ellipse") return ShapeKind::ellipse;
  if (s == "rectangle") return ShapeKind::rectangle;
  throw SchemaError("shape_kind must be 'ellipse' or 'rectangle', got '" + s + "'");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void FactorVector::validate() const {
  for (int i = 0; i < kFactorCount; ++i)
    if (!(values[i] >= -1.0 && values[i] <= 1.0))
      throw RangeError("factor '" + std::string(kFactorNames[i]) + "' = " + format_double(values[i]) +
                       " is outside [-1, 1]");
}

void DatasetSpec::validate() const {
  if (resolution < 8 || (resolution & (resolution - 1)) != 0)
    throw ConfigError("resolution must be a power of two >= 8");
  if (sample_count < 0) throw ConfigError("sample_count must be >= 0");
  if (supersampling < 1) throw ConfigError("supersampling must be >= 1");
}

json DatasetSpec::to_json() const {
  return {{"resolution", resolution},
          {"sample_count", sample_count},
          {"seed", seed},
          {"shape_kind", shape_kind_name(shape_kind)},
          {"supersampling", supersampling}};
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  DatasetSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "resolution") s.resolution = value.get<int>();
    else if (key == "sample_count") s.sample_count = value.get<int64_t>();
    else if (key == "seed") s.seed = value.get<uint64_t>();
    else if (key == "shape_kind") s.shape_kind = parse_shape_kind(value.get<std::string>());
    else if (key == "supersampling") s.supersampling = value.get<int>();
    else throw SchemaError("unknown dataset key '" + key + "'");
  }
  return s;
}

Geometry geometry(const FactorVector& f, int resolution) {
  f.validate();
  const double w = resolution;
  Geometry g{};
  g.radius = (0.275 + 0.125 * f[0]) * w;
  g.center_x = 0.5 * w + 0.2 * w * f[1];
  g.center_y = 0.5 * w + 0.2 * w * f[2];
  g.hue = 0.5 * (f[3] + 1.0) * kHueSpan;
  g.axis_ratio = std::exp2(f[4]);
  g.semi_x = g.radius * std::sqrt(g.axis_ratio);
  g.semi_y = g.radius / std::sqrt(g.axis_ratio);
  g.background = 0.35 + 0.25 * f[5];
  g.foreground = hsv_to_rgb(g.hue, kSaturation, 1.0);
  return g;
}

std::vector<double> coverage(const FactorVector& f, const DatasetSpec& spec) {
  spec.validate();
  const Geometry g = geometry(f, spec.resolution);
  const int n = spec.resolution, s = spec.supersampling;
  std::vector<double> cov(static_cast<size_t>(n * n));
  const double inv = 1.0 / (static_cast<double>(s) * s);
  for (int py = 0; py < n; ++py)
    for (int px = 0; px < n; ++px) {
      int inside = 0;
      for (int sy = 0; sy < s; ++sy)
        for (int sx = 0; sx < s; ++sx) {
          const double dx = (px + (sx + 0.5) / s - g.center_x) / g.semi_x;
          const double dy = (py + (sy + 0.5) / s - g.center_y) / g.semi_y;
          const bool in = spec.shape_kind == ShapeKind::ellipse ? dx * dx + dy * dy <= 1.0
                                                                 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
          inside += in;
        }
      cov[static_cast<size_t>(py * n + px)] = inside * inv;
    }
  return cov;
}

Tensor<float> render_shape(const FactorVector& f, const DatasetSpec& spec) {
  const Geometry g = geometry(f, spec.resolution);
  const std::vector<double> cov = coverage(f, spec);
  const int64_t n = spec.resolution;
  Tensor<float> image({n, n, 3});
  for (int64_t p = 0; p < n * n; ++p)
    for (int c = 0; c < 3; ++c) {
      const double v = cov[p] * g.foreground[c] + (1.0 - cov[p]) * g.background;
      image[p * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return image;
}

Tensor<float> quantize(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  for (int64_t i = 0; i < image.numel(); ++i)
    out[i] = static_cast<float>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

FactorVector sample_factors(Rng& rng) {
  FactorVector f;
  for (auto& v : f.values) v = rng.uniform(-1.0, 1.0);
  return f;
}

ShapeSample make_sample(const DatasetSpec& spec, int64_t index) {
  Rng rng = Rng::substream(spec.seed, static_cast<uint64_t>(index));
  ShapeSample s;
  s.factors = sample_factors(rng);
  s.image = render_shape(s.factors, spec);
  return s;
}

Dataset::Dataset(DatasetSpec spec, std::vector<FactorVector> factors, std::vector<uint8_t> pixels)
    : spec_(std::move(spec)), factors_(std::move(factors)), pixels_(std::move(pixels)) {
  const int64_t per = static_cast<int64_t>(spec_.resolution) * spec_.resolution * 3;
  if (static_cast<int64_t>(pixels_.size()) != per * size()) throw ShapeError("dataset pixel buffer size mismatch");
}

ShapeSample Dataset::sample(int64_t index) const {
  if (index < 0 || index >= size()) throw RangeError("dataset index out of range");
  const int64_t n = spec_.resolution, per = n * n * 3;
  ShapeSample s;
  s.factors = factors_[static_cast<size_t>(index)];
  s.image = Tensor<float>({n, n, 3});
  for (int64_t i = 0; i < per; ++i) s.image[i] = pixels_[static_cast<size_t>(index * per + i)] / 255.0f;
  return s;
}

Tensor<float> Dataset::batch(std::span<const int64_t> indices, std::span<const bool> flip) const {
  const int64_t b = static_cast<int64_t>(indices.size()), n = spec_.resolution;
  Tensor<float> out({b, 3, n, n});
  for (int64_t bi = 0; bi < b; ++bi) {
    const int64_t idx = indices[bi];
    if (idx < 0 || idx >= size()) throw RangeError("dataset index out of range");
    const bool mirror = !flip.empty() && flip[bi];
    const uint8_t* src = pixels_.data() + idx * n * n * 3;
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x) {
        const int64_t sx = mirror ? n - 1 - x : x;
        for (int64_t c = 0; c < 3; ++c)
          out[((bi * 3 + c) * n + y) * n + x] = src[(y * n + sx) * 3 + c] * (2.0f / 255.0f) - 1.0f;
      }
  }
  return out;
}

Tensor<float> Dataset::factor_batch(std::span<const int64_t> indices) const {
  Tensor<float> out({static_cast<int64_t>(indices.size()), kFactorCount});
  for (size_t i = 0; i < indices.size(); ++i)
    for (int k = 0; k < kFactorCount; ++k)
      out[static_cast<int64_t>(i) * kFactorCount + k] = static_cast<float>(factors_[static_cast<size_t>(indices[i])][k]);
  return out;
}

Dataset build_dataset(const DatasetSpec& spec) {
  spec.validate();
  const int64_t n = spec.resolution, per = n * n * 3;
  std::vector<FactorVector> factors(static_cast<size_t>(spec.sample_count));
  std::vector<uint8_t> pixels(static_cast<size_t>(spec.sample_count * per));
  parallel_for(spec.sample_count, [&](int64_t i) {
    ShapeSample s = make_sample(spec, i);
    factors[static_cast<size_t>(i)] = s.factors;
    for (int64_t k = 0; k < per; ++k)
      pixels[static_cast<size_t>(i * per + k)] = static_cast<uint8_t>(std::lround(s.image[k] * 255.0f));
  });
  return Dataset(spec, std::move(factors), std::move(pixels));
}

void write_archive(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  const DatasetSpec& spec = dataset.spec();
  std::ostringstream csv;
  for (int k = 0; k < kFactorCount; ++k) csv << (k ? "," : "") << kFactorNames[k];
  csv << "\n";
  for (const auto& f : dataset.factors()) {
    for (int k = 0; k < kFactorCount; ++k) csv << (k ? "," : "") << format_double(f[k]);
    csv << "\n";
  }
  io::write_atomically(dir / "factors.csv", csv.str());
  const int64_t n = spec.resolution, per = n * n * 3;
  parallel_for(dataset.size(), [&](int64_t i) {
    io::Rgb8Image img{n, n, std::vector<uint8_t>(dataset.pixels().begin() + i * per,
                                                 dataset.pixels().begin() + (i + 1) * per)};
    char name[32];
    std::snprintf(name, sizeof name, "%06lld.png", static_cast<long long>(i));
    io::write_png(dir / "images" / name, img);
  });
  json meta = {{"format_version", kArchiveVersion}, {"spec", spec.to_json()}, {"factor_order", kFactorNames}};
  meta["spec"]["sample_count"] = dataset.size();
  io::write_atomically(dir / "spec.json", meta.dump(2) + "\n");
}

Dataset load_archive(const fs::path& dir) {
  if (!fs::exists(dir / "spec.json")) throw MissingArtifactError("no dataset archive at " + dir.string());
  json meta;
  try {
    meta = json::parse(io::read_file(dir / "spec.json"));
  } catch (const json::exception& e) {
    throw SchemaError("dataset spec.json is invalid: " + std::string(e.what()));
  }
  if (meta.value("format_version", -1) != kArchiveVersion) throw SchemaError("unsupported dataset archive version");
  DatasetSpec spec = DatasetSpec::from_json(meta.at("spec"));
  spec.validate();

  std::istringstream csv(io::read_file(dir / "factors.csv"));
  std::string line;
  std::getline(csv, line);
  std::vector<FactorVector> factors;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    FactorVector f;
    std::istringstream row(line);
    std::string cell;
    for (int k = 0; k < kFactorCount; ++k) {
      if (!std::getline(row, cell, ',')) throw SchemaError("factors.csv row has too few columns");
      f[k] = std::stod(cell);
    }
    factors.push_back(f);
  }
  if (static_cast<int64_t>(factors.size()) != spec.sample_count)
    throw SchemaError("factors.csv row count does not match spec.json");

  const int64_t n = spec.resolution, per = n * n * 3;
  std::vector<uint8_t> pixels(static_cast<size_t>(spec.sample_count * per));
  parallel_for(spec.sample_count, [&](int64_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06lld.png", static_cast<long long>(i));
    io::Rgb8Image img = io::read_png(dir / "images" / name);
    if (img.width != n || img.height != n) throw SchemaError(std::string("image ") + name + " has wrong size");
    std::copy(img.pixels.begin(), img.pixels.end(), pixels.begin() + i * per);
  });
  return Dataset(spec, std::move(factors), std::move(pixels));
}

Dataset generate_dataset(const DatasetSpec& spec, const fs::path& dir) {
  Dataset d = build_dataset(spec);
  write_archive(d, dir);
  return d;
}

Tensor<float> to_network(const Tensor<float>& hwc) {
  const int64_t h = hwc.dim(0), w = hwc.dim(1);
  Tensor<float> out({1, 3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = hwc[(y * w + x) * 3 + c] * 2.0f - 1.0f;
  return out;
}

Tensor<float> from_network(const Tensor<float>& chw, int64_t index) {
  const int64_t h = chw.dim(2), w = chw.dim(3);
  Tensor<float> out({h, w, 3});
  const float* src = chw.ptr() + index * 3 * h * w;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        out[(y * w + x) * 3 + c] = std::clamp((src[(c * h + y) * w + x] + 1.0f) * 0.5f, 0.0f, 1.0f);
  return out;
}

}  // namespace hsrgan::synth
