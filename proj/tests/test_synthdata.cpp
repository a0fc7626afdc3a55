#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "hsrgan/core/error.hpp"
#include "hsrgan/io/tensor_file.hpp"
#include "hsrgan/synth/synthdata.hpp"

using namespace hsrgan;
using namespace hsrgan::synth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("hsrgan_test_" + name);
  fs::remove_all(p);
  return p;
}

// Counts pixel centers inside the ellipse, independent of the renderer.
int64_t brute_force_count(double size, int res) {
  const double r = (0.15 + (size + 1.0) / 2.0 * 0.25) * res;
  int64_t n = 0;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double dx = x + 0.5 - res / 2.0, dy = y + 0.5 - res / 2.0;
      n += dx * dx + dy * dy <= r * r;
    }
  return n;
}

std::string dir_bytes(const fs::path& dir) {
  std::string all;
  std::set<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.insert(e.path());
  for (const auto& f : files) all += f.filename().string() + io::read_file(f);
  return all;
}

}  // namespace

TEST_CASE("midpoint factors give the midpoint geometry") {
  FactorVector f;
  const Geometry g = geometry(f, 32);
  CHECK(g.radius == doctest::Approx(0.275 * 32));
  CHECK(g.axis_ratio == 1.0);
  CHECK(g.background == doctest::Approx(0.35));
  CHECK(g.center_x == 16.0);
  CHECK(g.center_y == 16.0);
  DatasetSpec spec;
  Tensor<float> img = render_shape(f, spec);
  // Corner pixel is pure background, center pixel is pure foreground.
  CHECK(img[0] == doctest::Approx(0.35f));
  const int64_t c = (16 * 32 + 16) * 3;
  CHECK(img[c] == doctest::Approx(g.foreground[0]));
}

TEST_CASE("geometry ranges at the extremes") {
  FactorVector lo, hi;
  lo.values.fill(-1.0);
  hi.values.fill(1.0);
  const Geometry a = geometry(lo, 32), b = geometry(hi, 32);
  CHECK(a.radius == doctest::Approx(0.15 * 32));
  CHECK(b.radius == doctest::Approx(0.40 * 32));
  CHECK(a.axis_ratio == doctest::Approx(0.5));
  CHECK(b.axis_ratio == doctest::Approx(2.0));
  CHECK(a.background == doctest::Approx(0.1));
  CHECK(b.background == doctest::Approx(0.6));
  CHECK(b.center_x - a.center_x == doctest::Approx(0.4 * 32));
  CHECK(a.hue == 0.0);
  CHECK(b.hue < 2 * M_PI);
}

TEST_CASE("rendering is deterministic") {
  Rng rng(3);
  FactorVector f = sample_factors(rng);
  DatasetSpec spec;
  CHECK(render_shape(f, spec) == render_shape(f, spec));
}

TEST_CASE("out-of-range factors are rejected") {
  FactorVector f;
  f[3] = 1.01;
  CHECK_THROWS_AS(render_shape(f, DatasetSpec{}), RangeError);
  f[3] = std::nan("");
  CHECK_THROWS_AS(render_shape(f, DatasetSpec{}), RangeError);
}

TEST_CASE("foreground area ratio between size extremes") {
  DatasetSpec spec;
  spec.supersampling = 4;
  FactorVector big, small;
  big[0] = 1.0;
  small[0] = -1.0;
  auto count = [&](const FactorVector& f) {
    int64_t n = 0;
    for (double c : coverage(f, spec)) n += c >= 0.5;
    return n;
  };
  const double ratio = double(count(big)) / double(count(small));
  const double expected = std::pow(0.40 / 0.15, 2);
  CHECK(std::abs(ratio - expected) / expected < 0.10);
  const double oracle = double(brute_force_count(1.0, 32)) / double(brute_force_count(-1.0, 32));
  CHECK(std::abs(oracle - expected) / expected < 0.10);
  CHECK(std::abs(count(big) - brute_force_count(1.0, 32)) <= 8);
  CHECK(std::abs(count(small) - brute_force_count(-1.0, 32)) <= 8);
}

TEST_CASE("sample_factors statistics") {
  Rng rng(11);
  std::array<double, kFactorCount> mean{}, lo{}, hi{};
  lo.fill(1.0);
  hi.fill(-1.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    FactorVector f = sample_factors(rng);
    for (int k = 0; k < kFactorCount; ++k) {
      mean[k] += f[k] / n;
      lo[k] = std::min(lo[k], f[k]);
      hi[k] = std::max(hi[k], f[k]);
    }
  }
  for (int k = 0; k < kFactorCount; ++k) {
    CHECK(std::abs(mean[k]) < 0.05);
    CHECK(lo[k] < -0.95);
    CHECK(hi[k] > 0.95);
  }
  Rng a(5), b(5);
  CHECK(sample_factors(a) == sample_factors(b));
}

TEST_CASE("every factor changes the image") {
  Rng rng(21);
  DatasetSpec spec;
  for (int trial = 0; trial < 20; ++trial) {
    FactorVector f = sample_factors(rng);
    for (int k = 0; k < kFactorCount; ++k) {
      FactorVector g = f;
      if (std::abs(g[k]) < 0.5) g[k] = g[k] < 0 ? -0.5 - 0.5 * rng.uniform() : 0.5 + 0.5 * rng.uniform();
      FactorVector h = g;
      h[k] = -g[k];
      CHECK_FALSE(quantize(render_shape(g, spec)) == quantize(render_shape(h, spec)));
    }
  }
}

TEST_CASE("archive is byte-identical across runs and round-trips exactly") {
  DatasetSpec spec;
  spec.sample_count = 100;
  spec.seed = 7;
  const fs::path a = scratch("archive_a"), b = scratch("archive_b");
  Dataset d = generate_dataset(spec, a);
  generate_dataset(spec, b);
  CHECK(dir_bytes(a) == dir_bytes(b));

  Dataset loaded = load_archive(a);
  CHECK(loaded.pixels() == d.pixels());
  CHECK(loaded.factors() == d.factors());
  for (int64_t i : {0, 37, 99}) {
    ShapeSample s = make_sample(spec, i);
    CHECK(s.factors == loaded.factors()[i]);
    CHECK(quantize(s.image) == loaded.sample(i).image);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("parallel generation equals serial generation") {
  DatasetSpec spec;
  spec.sample_count = 24;
  spec.seed = 9;
  setenv("HSRGAN_THREADS", "1", 1);
  Dataset serial = build_dataset(spec);
  setenv("HSRGAN_THREADS", "4", 1);
  Dataset parallel = build_dataset(spec);
  unsetenv("HSRGAN_THREADS");
  CHECK(serial.pixels() == parallel.pixels());
  CHECK(serial.factors() == parallel.factors());
}

TEST_CASE("empty archive has a valid header") {
  DatasetSpec spec;
  spec.sample_count = 0;
  const fs::path dir = scratch("archive_empty");
  generate_dataset(spec, dir);
  Dataset d = load_archive(dir);
  CHECK(d.size() == 0);
  CHECK(fs::exists(dir / "spec.json"));
  CHECK(io::read_file(dir / "factors.csv") == "size,pos_x,pos_y,hue,elongation,brightness\n");
  fs::remove_all(dir);
}

TEST_CASE("unwritable archive location surfaces an I/O error") {
  DatasetSpec spec;
  spec.sample_count = 2;
  const fs::path file = scratch("not_a_dir");
  io::write_atomically(file, "x");
  CHECK_THROWS_AS(generate_dataset(spec, file / "sub"), std::exception);
  try {
    generate_dataset(spec, file / "sub");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
  } catch (const fs::filesystem_error&) {
    FAIL("filesystem_error escaped without conversion");
  }
  fs::remove(file);
}

TEST_CASE("batches are scaled to [-1, 1] and flip mirrors columns") {
  DatasetSpec spec;
  spec.sample_count = 3;
  Dataset d = build_dataset(spec);
  const int64_t idx[] = {2};
  const bool flip[] = {true};
  Tensor<float> a = d.batch(idx), b = d.batch(idx, flip);
  for (float v : a.data()) CHECK((v >= -1.0f && v <= 1.0f));
  CHECK(a[5] == b[31 - 5]);
}
