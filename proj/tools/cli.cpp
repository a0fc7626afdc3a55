#include "cli.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsrgan/core/log.hpp"
#include "hsrgan/edit/edit.hpp"
#include "hsrgan/hsr/hsr.hpp"
#include "hsrgan/io/png.hpp"
#include "hsrgan/io/tensor_file.hpp"
#include "hsrgan/metrics/metrics.hpp"
#include "hsrgan/model/factor_net.hpp"
#include "hsrgan/train/trainloop.hpp"
#include "report.hpp"
#include "run_config.hpp"

namespace hsrgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using metrics::Matrix;

int exit_code(ErrorKind kind) { return static_cast<int>(kind) + 1; }

namespace {

// Single-writer guard on a run directory. A lock left by a dead process is
// taken over.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        const ssize_t written = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        if (written != static_cast<ssize_t>(pid.size())) throw IoError("cannot write " + path_.string());
        return;
      }
      if (errno != EEXIST) throw IoError("cannot create " + path_.string() + ": " + std::strerror(errno));
      long owner = 0;
      std::ifstream(path_) >> owner;
      if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno != ESRCH))
        throw LockedError(path_.parent_path().string() + " is in use by process " + std::to_string(owner));
      std::error_code ec;
      fs::remove(path_, ec);
    }
    throw LockedError("cannot acquire " + path_.string());
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

struct Context {
  RunConfig cfg;
  fs::path out;
  bool overwrite = false;
  std::ostream* out_stream = nullptr;
  std::ostream* err_stream = nullptr;

  void progress(const std::string& msg) const { *err_stream << msg << '\n' << std::flush; }
  void result(const json& j) const { *out_stream << j.dump() << '\n' << std::flush; }
};

struct Options {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  bool overwrite = false;
  // command specific
  std::string checkpoint;
  std::optional<std::string> metric_list;
  std::optional<std::string> attribute;
  std::optional<double> alpha;
  std::string image;
  std::string image2;
  std::string direction;
  bool allow_hash_mismatch = false;
  std::optional<std::string> mode;
  std::optional<int> steps;
  std::string eval_dir;
  std::optional<std::string> variant;
  std::optional<double> kimg;
  bool resume = false;
};

void refuse_existing(const Context& ctx, const fs::path& primary) {
  if (fs::exists(primary) && !ctx.overwrite)
    throw ExistsError(primary.string() + " already exists; pass --overwrite to replace it");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_resolved(const Context& ctx, const std::string& command) {
  io::write_atomically(ctx.out / ("resolved_config." + command + ".json"), ctx.cfg.to_json().dump(2) + "\n");
}

std::string config_hash(const RunConfig& cfg) { return io::fingerprint(cfg.to_json().dump()); }

io::TensorFile load_tensor_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw MissingArtifactError("no " + what + " at " + path.string());
  return io::TensorFile::load(path);
}

std::shared_ptr<model::FactorNet<float>> load_net(const fs::path& path, const std::string& role) {
  return model::load_factor_net(load_tensor_file(path, role), role);
}

fs::path resolve_checkpoint(const Context& ctx, const std::string& given) {
  if (!given.empty()) {
    if (!fs::exists(given)) throw MissingArtifactError("no checkpoint at " + given);
    return given;
  }
  const fs::path pointer = ctx.out / "latest_checkpoint.txt";
  if (!fs::exists(pointer)) throw MissingArtifactError("no --checkpoint given and no " + pointer.string());
  std::string name = io::read_file(pointer);
  name.erase(name.find_last_not_of(" \n\r\t") + 1);
  const fs::path p = ctx.out / "checkpoints" / name;
  if (!fs::exists(p)) throw MissingArtifactError("latest checkpoint " + p.string() + " is missing");
  return p;
}

std::string variant_name(const train::TrainConfig& c) {
  if (c.enable_plr && c.enable_hsr) return "plr+hsr";
  if (c.enable_plr) return "plr";
  if (c.enable_hsr) return "hsr";
  return "baseline";
}

Tensor<float> read_image(const fs::path& path, int resolution) {
  if (!fs::exists(path)) throw MissingArtifactError("no image at " + path.string());
  const io::Rgb8Image img = io::read_png(path);
  if (img.width != resolution || img.height != resolution)
    throw ShapeError("image " + path.string() + " is " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + ", expected " + std::to_string(resolution) + "x" +
                     std::to_string(resolution));
  Tensor<float> hwc({resolution, resolution, 3});
  for (size_t i = 0; i < img.pixels.size(); ++i) hwc[static_cast<int64_t>(i)] = img.pixels[i] / 255.0f;
  return synth::to_network(hwc);
}

// Images [B, 3, R, R] tiled row-major, `cols` per row.
io::Rgb8Image tile(const Tensor<float>& images, int64_t cols) {
  const int64_t n = images.dim(0), r = images.dim(2);
  cols = std::max<int64_t>(1, std::min(cols, n));
  const int64_t rows = (n + cols - 1) / cols;
  io::Rgb8Image out{cols * r, rows * r, std::vector<uint8_t>(static_cast<size_t>(cols * r * rows * r * 3), 255)};
  for (int64_t k = 0; k < n; ++k) {
    const io::Rgb8Image one = edit::to_rgb8(images, k);
    const int64_t ox = (k % cols) * r, oy = (k / cols) * r;
    for (int64_t y = 0; y < r; ++y)
      std::copy_n(one.pixels.begin() + y * r * 3, r * 3, out.pixels.begin() + ((oy + y) * cols * r + ox) * 3);
  }
  return out;
}

Tensor<float> rows_to_images(const metrics::LatentModel& lm, const Matrix& w) {
  return lm.synthesize(w).cast<float>();
}

Matrix normal_matrix(int64_t rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

Tensor<float> matrix_tensor(const Matrix& m) {
  Tensor<float> t({m.rows(), m.cols()});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[i * m.cols() + j] = static_cast<float>(m(i, j));
  return t;
}

Matrix tensor_matrix(const Tensor<float>& t) {
  const int64_t rows = t.dim(0), cols = t.numel() / std::max<int64_t>(rows, 1);
  Matrix m(rows, cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) m(i, j) = t[i * cols + j];
  return m;
}

Tensor<float> w_mean_of(const model::Generator<float>& g, uint64_t seed) {
  Rng rng(seed);
  return g.compute_w_mean(g.config().truncation_samples, rng);
}

// ---------------------------------------------------------------------------

void cmd_gen_data(const Context& ctx) {
  refuse_existing(ctx, ctx.out / "spec.json");
  write_resolved(ctx, "gen-data");
  const synth::Dataset d = synth::generate_dataset(ctx.cfg.dataset, ctx.out);
  ctx.result({{"command", "gen-data"}, {"samples", d.size()}, {"dir", ctx.out.string()}});
}

void cmd_train_regressor(const Context& ctx, const std::string& role) {
  const RegressorSection& section = role == "scorer" ? ctx.cfg.scorer : ctx.cfg.extractor;
  const fs::path target = ctx.out / (role + ".bin");
  refuse_existing(ctx, target);
  write_resolved(ctx, "train-" + role);
  const synth::Dataset data = synth::load_archive(ctx.cfg.data_dir);
  if (section.net.resolution != data.resolution())
    throw ConfigError(role + " resolution " + std::to_string(section.net.resolution) +
                      " does not match the dataset resolution " + std::to_string(data.resolution()));
  model::FactorNet<float> net(section.net, section.init_seed);
  const model::RegressorReport report =
      model::train_regressor(net, data, section.training, [&](const std::string& m) { ctx.progress(m); });
  json manifest = report.to_json();
  manifest["role"] = role;
  manifest["config"] = section.net.to_json();
  manifest["dataset_hash"] = io::file_fingerprint(fs::path(ctx.cfg.data_dir) / "spec.json");
  manifest["init_seed"] = section.init_seed;
  if (role == "scorer")
    manifest["attributes"] = std::vector<std::string>(synth::kFactorNames.begin(), synth::kFactorNames.end());
  model::save_factor_net(net, role, manifest).save(target);
  io::write_atomically(ctx.out / (role + "_manifest.json"), manifest.dump(2) + "\n");
  ctx.result({{"command", "train-" + role}, {"path", target.string()}, {"manifest", manifest}});
}

void cmd_train(const Context& ctx, bool resume) {
  const RunConfig& cfg = ctx.cfg;
  const fs::path pointer = ctx.out / "latest_checkpoint.txt";
  if (!resume) {
    refuse_existing(ctx, pointer);
    std::error_code ec;
    fs::remove_all(ctx.out / "checkpoints", ec);
    fs::remove(pointer, ec);
  }
  write_resolved(ctx, "train");
  const synth::Dataset data = synth::load_archive(cfg.data_dir);
  if (cfg.train.generator.resolution != data.resolution())
    throw ConfigError("generator resolution does not match the dataset resolution " +
                      std::to_string(data.resolution()));

  std::shared_ptr<model::FactorNet<float>> extractor_net;
  if (fs::exists(cfg.extractor_path)) extractor_net = load_net(cfg.extractor_path, "extractor");
  std::unique_ptr<hsr::Extractor<float>> extractor;
  if (cfg.train.enable_hsr) {
    switch (cfg.train.hsr.extractor) {
      case hsr::ExtractorKind::trained:
        if (!extractor_net) throw MissingArtifactError("HSR needs a trained extractor at " + cfg.extractor_path);
        extractor = std::make_unique<hsr::Extractor<float>>(hsr::ExtractorKind::trained, extractor_net);
        break;
      case hsr::ExtractorKind::random_init:
        extractor = std::make_unique<hsr::Extractor<float>>(
            hsr::ExtractorKind::random_init,
            std::make_shared<model::FactorNet<float>>(cfg.extractor.net, cfg.extractor.init_seed));
        break;
      case hsr::ExtractorKind::external_plugin:
        throw ConfigError("external plugin extractors are only available through the library API");
    }
  }

  train::RunOptions options;
  options.out_dir = ctx.out;
  if (resume) options.resume = resolve_checkpoint(ctx, "");
  options.progress = [&](const std::string& m) { ctx.progress(m); };
  metrics::Moments real;
  if (extractor_net) {
    const metrics::ImageFn embed = metrics::embedder(extractor_net);
    const int64_t n = std::min<int64_t>(cfg.metrics.quick_fid_samples, data.size());
    real = metrics::moments(metrics::embed_dataset(embed, data, 0, n));
    options.eval = [&cfg, embed, real](const model::Generator<float>& g, double) {
      return metrics::quick_eval(g, embed, real, cfg.metrics.quick_fid_samples, cfg.metrics.quick_ppl_pairs,
                                 cfg.metrics.seed);
    };
  }
  const train::RunResult r = train::run_training(cfg.train, data, extractor.get(), options);
  ctx.result({{"command", "train"},
              {"checkpoint", r.final_checkpoint.string()},
              {"log", r.log.string()},
              {"kimg", r.kimg},
              {"variant", variant_name(cfg.train)}});
}

// ---------------------------------------------------------------------------

struct EvalInputs {
  fs::path checkpoint;
  std::string checkpoint_hash;
  io::TensorFile file;
  std::unique_ptr<model::Generator<float>> g;
  metrics::LatentModel lm;
};

EvalInputs load_eval_inputs(const Context& ctx, const std::string& checkpoint) {
  EvalInputs in;
  in.checkpoint = resolve_checkpoint(ctx, checkpoint);
  in.checkpoint_hash = io::file_fingerprint(in.checkpoint);
  in.file = io::TensorFile::load(in.checkpoint);
  in.g = train::load_generator(in.file, true);
  in.lm = metrics::latent_model(*in.g);
  return in;
}

void write_gallery(const fs::path& path, const metrics::LatentModel& lm, const metrics::PPLResult& r,
                   const std::vector<int64_t>& picks, metrics::PPLSpace space, int64_t max_images) {
  const int64_t n = std::min<int64_t>(max_images, static_cast<int64_t>(picks.size()));
  if (n == 0) return;
  Matrix z0(n, r.z0.cols()), z1(n, r.z1.cols());
  std::vector<double> t;
  for (int64_t i = 0; i < n; ++i) {
    z0.row(i) = r.z0.row(picks[static_cast<size_t>(i)]);
    z1.row(i) = r.z1.row(picks[static_cast<size_t>(i)]);
    t.push_back(r.t[static_cast<size_t>(picks[static_cast<size_t>(i)])]);
  }
  const Matrix w = space == metrics::PPLSpace::w ? metrics::lerp(lm.map(z0), lm.map(z1), t)
                                                 : lm.map(metrics::slerp(z0, z1, t));
  io::write_png(path, tile(rows_to_images(lm, w), 8));
}

void cmd_eval(const Context& ctx, const Options& opt) {
  const RunConfig& cfg = ctx.cfg;
  const fs::path dir = ctx.out / "eval";
  refuse_existing(ctx, dir / "metrics.json");
  make_dir(dir);
  write_resolved(ctx, "eval");
  const auto& m = cfg.metrics;
  EvalInputs in = load_eval_inputs(ctx, opt.checkpoint);
  const train::TrainConfig run_cfg = train::checkpoint_config(in.file);
  const std::string variant = variant_name(run_cfg);
  auto wants = [&](const std::string& name) { return std::find(m.list.begin(), m.list.end(), name) != m.list.end(); };

  auto embed_net = load_net(cfg.extractor_path, "extractor");
  const metrics::ImageFn embed = metrics::embedder(embed_net);
  std::shared_ptr<model::FactorNet<float>> scorer_net;
  if (wants("als") || wants("dci")) scorer_net = load_net(cfg.scorer_path, "scorer");
  std::optional<synth::Dataset> data;
  if (wants("fid") || wants("pr") || wants("mahalanobis")) data = synth::load_archive(cfg.data_dir);

  json manifests = {{"embedder", metrics::embedder_manifest(embed_net->config().to_json())}};
  if (scorer_net) manifests["scorer"] = scorer_net->config().to_json();
  const std::string hash = config_hash(cfg);
  json summary = json::object();
  json reports = json::array();
  auto report = [&](const std::string& name, json values, json counts, json seeds) {
    metrics::MetricReport r;
    r.metric = name;
    r.values = std::move(values);
    r.sample_counts = std::move(counts);
    r.seeds = std::move(seeds);
    r.config_hash = hash;
    r.manifests = manifests;
    r.disclosures = metrics::standard_disclosures();
    reports.push_back(r.to_json());
  };

  if (wants("ppl")) {
    ctx.progress("eval: ppl");
    metrics::PPLOptions o;
    o.n_pairs = m.ppl_pairs;
    o.epsilon = m.ppl_epsilon;
    o.space = metrics::parse_ppl_space(m.ppl_space);
    o.seed = m.seed;
    o.batch = m.batch;
    const metrics::PPLResult r = metrics::ppl(in.lm, embed, o);
    const metrics::PercentileReport pr = metrics::ppl_percentiles(r.values, m.histogram_bins);
    metrics::write_histogram_csv(dir / "ppl_histogram.csv", pr);
    {
      std::ofstream csv(dir / "ppl_values.csv");
      csv.precision(17);
      csv << "pair,t,value\n";
      for (size_t i = 0; i < r.values.size(); ++i) csv << i << ',' << r.t[i] << ',' << r.values[i] << '\n';
    }
    io::TensorFile pairs;
    pairs.tensors["z0"] = matrix_tensor(r.z0);
    pairs.tensors["z1"] = matrix_tensor(r.z1);
    pairs.meta = {{"kind", "ppl_pairs"}, {"space", m.ppl_space}, {"t", r.t}, {"top", pr.top}, {"bottom", pr.bottom},
                  {"checkpoint_hash", in.checkpoint_hash}};
    pairs.save(dir / "ppl_pairs.bin");
    write_gallery(dir / "ppl_top.png", in.lm, r, pr.top, o.space, m.gallery_max);
    write_gallery(dir / "ppl_bottom.png", in.lm, r, pr.bottom, o.space, m.gallery_max);
    auto decile_mean = [&](const std::vector<int64_t>& idx) {
      double s = 0.0;
      for (int64_t i : idx) s += r.values[static_cast<size_t>(i)];
      return idx.empty() ? 0.0 : s / static_cast<double>(idx.size());
    };
    summary["ppl"] = r.mean;
    summary["ppl_standard_error"] = r.standard_error;
    summary["ppl_top_decile_mean"] = decile_mean(pr.top);
    summary["ppl_bottom_decile_mean"] = decile_mean(pr.bottom);
    report("ppl",
           {{"mean", r.mean},
            {"standard_error", r.standard_error},
            {"top_decile_mean", decile_mean(pr.top)},
            {"bottom_decile_mean", decile_mean(pr.bottom)},
            {"space", m.ppl_space},
            {"epsilon", m.ppl_epsilon},
            {"histogram_edges", pr.edges}},
           {{"pairs", m.ppl_pairs}}, {{"seed", m.seed}});
  }

  if (wants("als")) {
    ctx.progress("eval: als");
    metrics::ALSOptions o;
    o.n_pairs = m.als_pairs;
    o.steps = m.als_steps;
    o.truncation = m.als_truncation;
    o.seed = m.seed + 1;
    const metrics::ALSResult r = metrics::als(in.lm, metrics::scorer(scorer_net), synth::kFactorCount, o);
    metrics::write_als_table(dir / "als_table.csv", {variant}, {r.per_attribute});
    metrics::write_per_t_csv(dir / "als_per_t.csv", r);
    summary["als_mean"] = r.mean;
    summary["als_per_attribute"] = r.per_attribute;
    summary["als_per_t"] = r.per_t;
    report("als", {{"mean", r.mean}, {"per_attribute", r.per_attribute}, {"per_t", r.per_t}, {"steps", r.steps},
                   {"truncation", m.als_truncation}},
           {{"pairs", m.als_pairs}}, {{"seed", o.seed}});
  }

  if (wants("fid") || wants("pr")) {
    ctx.progress("eval: embeddings");
    const int64_t n_real = std::min<int64_t>(std::max(m.fid_samples, m.pr_samples), data->size());
    const Matrix real = metrics::embed_dataset(embed, *data, 0, n_real);
    const Matrix fake = metrics::embed_samples(embed, in.lm, std::max(m.fid_samples, m.pr_samples), m.seed + 2,
                                               m.batch);
    if (wants("fid")) {
      const int64_t nr = std::min<int64_t>(m.fid_samples, real.rows());
      const double fid = metrics::frechet_distance(real.topRows(nr), fake.topRows(m.fid_samples));
      summary["fid_proxy"] = fid;
      report("fid_proxy", {{"value", fid}}, {{"real", nr}, {"fake", m.fid_samples}}, {{"seed", m.seed + 2}});
    }
    if (wants("pr")) {
      const int64_t nr = std::min<int64_t>(m.pr_samples, real.rows());
      const metrics::PrecisionRecall pr = metrics::precision_recall(real.topRows(nr), fake.topRows(m.pr_samples), m.pr_k);
      summary["precision"] = pr.precision;
      summary["recall"] = pr.recall;
      report("precision_recall", {{"precision", pr.precision}, {"recall", pr.recall}, {"k", m.pr_k}},
             {{"real", nr}, {"fake", m.pr_samples}}, {{"seed", m.seed + 2}});
    }
  }

  if (wants("dci")) {
    ctx.progress("eval: dci");
    Rng rng(m.seed + 3);
    Matrix w(m.dci_samples, in.lm.w_dim), factors;
    const metrics::ImageFn score = metrics::scorer(scorer_net);
    for (int64_t s = 0; s < m.dci_samples; s += m.batch) {
      const int64_t b = std::min(m.batch, m.dci_samples - s);
      const Matrix wb = in.lm.map(normal_matrix(b, in.lm.z_dim, rng));
      const Matrix fb = score(in.lm.synthesize(wb));
      if (factors.size() == 0) factors.resize(m.dci_samples, fb.cols());
      w.middleRows(s, b) = wb;
      factors.middleRows(s, b) = fb;
    }
    metrics::DCIOptions o;
    o.alpha = m.dci_alpha;
    const metrics::DCIResult r = metrics::dci(w, factors, o);
    summary["dci"] = {{"disentanglement", r.disentanglement},
                      {"completeness", r.completeness},
                      {"informativeness", r.informativeness}};
    report("dci", summary["dci"], {{"samples", m.dci_samples}}, {{"seed", m.seed + 3}});
  }

  if (wants("mahalanobis")) {
    ctx.progress("eval: mahalanobis");
    const int64_t n_real = std::min<int64_t>(m.fid_samples, data->size());
    const metrics::Moments real = metrics::moments(metrics::embed_dataset(embed, *data, 0, n_real));
    Rng rng(m.seed + 4);
    const Matrix w = in.lm.map(normal_matrix(m.mahalanobis_samples, in.lm.z_dim, rng));
    Matrix e(m.mahalanobis_samples, 0);
    for (int64_t s = 0; s < m.mahalanobis_samples; s += m.batch) {
      const int64_t b = std::min(m.batch, m.mahalanobis_samples - s);
      const Matrix eb = embed(in.lm.synthesize(w.middleRows(s, b)));
      if (e.cols() == 0) e.resize(m.mahalanobis_samples, eb.cols());
      e.middleRows(s, b) = eb;
    }
    const auto ranked = metrics::mahalanobis_rank(e, real, m.mahalanobis_worst);
    std::ofstream csv(dir / "mahalanobis_worst.csv");
    csv.precision(17);
    csv << "rank,sample,distance\n";
    Matrix worst(static_cast<Eigen::Index>(ranked.size()), w.cols());
    for (size_t i = 0; i < ranked.size(); ++i) {
      csv << i << ',' << ranked[i].index << ',' << ranked[i].distance << '\n';
      worst.row(static_cast<Eigen::Index>(i)) = w.row(ranked[i].index);
    }
    if (!ranked.empty()) io::write_png(dir / "mahalanobis_worst.png", tile(rows_to_images(in.lm, worst), 10));
    report("mahalanobis", {{"worst_distance", ranked.empty() ? 0.0 : ranked.front().distance}},
           {{"generated", m.mahalanobis_samples}, {"real", n_real}, {"returned", ranked.size()}},
           {{"seed", m.seed + 4}});
  }

  const json doc = {{"checkpoint", in.checkpoint.string()},
                    {"checkpoint_hash", in.checkpoint_hash},
                    {"kimg", in.file.meta.value("kimg", 0.0)},
                    {"total_kimg", run_cfg.total_kimg},
                    {"resolution", run_cfg.generator.resolution},
                    {"variant", variant},
                    {"train_seed", run_cfg.seed},
                    {"config_hash", hash},
                    {"summary", summary},
                    {"reports", reports}};
  io::write_atomically(dir / "metrics.json", doc.dump(2) + "\n");
  ctx.result({{"command", "eval"}, {"variant", variant}, {"summary", summary}, {"dir", dir.string()}});
}

// ---------------------------------------------------------------------------

void cmd_edit(const Context& ctx, const Options& opt) {
  const RunConfig& cfg = ctx.cfg;
  const auto& e = cfg.edit;
  const fs::path dir = ctx.out / "edit";
  refuse_existing(ctx, dir / "edit_report.json");
  make_dir(dir);
  write_resolved(ctx, "edit");
  EvalInputs in = load_eval_inputs(ctx, opt.checkpoint);
  auto scorer_net = load_net(cfg.scorer_path, "scorer");
  auto embed_net = load_net(cfg.extractor_path, "extractor");
  const metrics::ImageFn score = metrics::scorer(scorer_net);
  const int attribute = parse_attribute(opt.attribute.value_or(e.attribute));
  const std::string attr_name(synth::kFactorNames[static_cast<size_t>(attribute)]);

  edit::EditDirection direction;
  if (!opt.direction.empty()) {
    direction = edit::load_direction(opt.direction, in.checkpoint_hash, opt.allow_hash_mismatch || e.allow_hash_mismatch);
    if (direction.attribute != attribute)
      throw ConfigError("direction file is for attribute " + std::to_string(direction.attribute));
  } else {
    ctx.progress("edit: fitting direction for " + attr_name);
    edit::DirectionOptions o;
    o.n_samples = e.direction_samples;
    o.quantile = e.quantile;
    o.seed = e.seed;
    direction = edit::find_direction(in.lm, score, attribute, o);
    direction.checkpoint_hash = in.checkpoint_hash;
  }
  edit::save_direction(dir / ("direction_" + attr_name + ".json"), direction);
  if (static_cast<int>(direction.direction.size()) != in.lm.w_dim)
    throw ShapeError("direction dimension does not match the generator's w");

  const double sigma = edit::sigma_w(in.lm, e.sigma_samples, e.seed + 1);
  const double alpha = opt.alpha.value_or(e.alpha) * sigma;
  const edit::MonotonicityAudit audit =
      edit::audit_monotonicity(in.lm, score, attribute, direction.direction, sigma, e.audit_probes, e.seed + 2);

  // Edit strip: rows are samples, columns alpha in {-1, -1/2, 0, 1/2, 1} * alpha.
  Rng rng(e.seed + 3);
  const Matrix w = in.lm.map(normal_matrix(e.samples, in.lm.z_dim, rng));
  Matrix strip(e.samples * 5, w.cols());
  for (int64_t i = 0; i < e.samples; ++i)
    for (int k = 0; k < 5; ++k)
      strip.row(i * 5 + k) = edit::apply_edit(w.row(i), direction.direction, alpha * (k - 2) / 2.0);
  io::write_png(dir / "edits.png", tile(rows_to_images(in.lm, strip), 5));

  Tensor<float> target;
  if (!opt.image.empty()) {
    target = read_image(opt.image, in.g->config().resolution);
  } else {
    Tensor<float> first = rows_to_images(in.lm, w.topRows(1));
    target = std::move(first);
  }
  edit::ProjectionOptions po;
  po.steps = e.projection_steps;
  po.lr = e.projection_lr;
  po.embed_weight = e.embed_weight;
  po.seed = e.seed;
  ctx.progress("edit: projecting");
  const edit::LinearityEval lin = edit::edit_linearity_eval(*in.g, *embed_net, score, target, direction.direction,
                                                            alpha, e.steps, w_mean_of(*in.g, e.seed + 4), po);
  edit::write_linearity_csv(dir / "linearity.csv", lin);
  io::write_png(dir / "source.png", edit::to_rgb8(target));
  io::write_png(dir / "reconstruction.png", edit::to_rgb8(edit::render(*in.g, {lin.source.w_plus})));
  io::write_png(dir / "edited.png",
                edit::to_rgb8(edit::render(*in.g, {edit::apply_edit(lin.source.w_plus, direction.direction, alpha)})));
  io::write_png(dir / "linearity_path.png", edit::interpolate_grid(*in.g, lin.source.w_plus, lin.edited.w_plus, e.steps));

  const json doc = {{"checkpoint", in.checkpoint.string()},
                    {"checkpoint_hash", in.checkpoint_hash},
                    {"attribute", attr_name},
                    {"direction", direction.to_json()},
                    {"sigma_w", sigma},
                    {"alpha_sigma", opt.alpha.value_or(e.alpha)},
                    {"alpha", alpha},
                    {"monotonicity", {{"probes", audit.probes}, {"monotone", audit.monotone},
                                      {"fraction", audit.fraction}, {"alphas", audit.alphas}}},
                    {"projection_source", lin.source.to_json()},
                    {"projection_edited", lin.edited.to_json()},
                    {"linearity", {{"mean", lin.mean}, {"per_attribute", lin.per_attribute}}},
                    {"config_hash", config_hash(cfg)}};
  io::write_atomically(dir / "edit_report.json", doc.dump(2) + "\n");
  ctx.result({{"command", "edit"}, {"attribute", attr_name}, {"linearity_mean", lin.mean},
              {"monotone_fraction", audit.fraction}, {"dir", dir.string()}});
}

void cmd_interpolate(const Context& ctx, const Options& opt) {
  const RunConfig& cfg = ctx.cfg;
  const std::string mode = opt.mode.value_or(cfg.interpolate.mode);
  const int steps = opt.steps.value_or(cfg.interpolate.steps);
  if (steps < 1) throw SchemaError("--steps must be positive");
  const fs::path dir = ctx.out / "interpolate";
  refuse_existing(ctx, dir / (mode + "_00.png"));
  EvalInputs in = load_eval_inputs(ctx, opt.checkpoint);
  const int blocks = in.g->block_count();
  std::vector<std::pair<Matrix, Matrix>> pairs;

  if (mode == "random") {
    Rng rng(cfg.interpolate.seed);
    for (int64_t i = 0; i < cfg.interpolate.pairs; ++i) {
      const Matrix w0 = in.lm.map(normal_matrix(1, in.lm.z_dim, rng)), w1 = in.lm.map(normal_matrix(1, in.lm.z_dim, rng));
      pairs.emplace_back(w0.replicate(blocks, 1), w1.replicate(blocks, 1));
    }
  } else if (mode == "percentile-top" || mode == "percentile-bottom") {
    const fs::path eval_dir = opt.eval_dir.empty() ? ctx.out / "eval" : fs::path(opt.eval_dir);
    const io::TensorFile f = load_tensor_file(eval_dir / "ppl_pairs.bin", "PPL pair file (run eval with ppl first)");
    if (f.meta.value("checkpoint_hash", std::string()) != in.checkpoint_hash)
      throw HashMismatchError("PPL pairs were computed on a different checkpoint");
    const Matrix z0 = tensor_matrix(f.at("z0")), z1 = tensor_matrix(f.at("z1"));
    const auto picks = f.meta.at(mode == "percentile-top" ? "top" : "bottom").get<std::vector<int64_t>>();
    for (size_t i = 0; i < picks.size() && static_cast<int64_t>(i) < cfg.interpolate.pairs; ++i) {
      const Matrix a = z0.row(picks[i]), b = z1.row(picks[i]);
      pairs.emplace_back(in.lm.map(a).replicate(blocks, 1), in.lm.map(b).replicate(blocks, 1));
    }
  } else if (mode == "projected") {
    if (opt.image.empty() || opt.image2.empty()) throw SchemaError("projected mode needs --image and --image2");
    auto embed_net = load_net(cfg.extractor_path, "extractor");
    edit::ProjectionOptions po;
    po.steps = cfg.edit.projection_steps;
    po.lr = cfg.edit.projection_lr;
    po.embed_weight = cfg.edit.embed_weight;
    const Tensor<float> w_mean = w_mean_of(*in.g, cfg.interpolate.seed);
    const auto a = edit::project_image(*in.g, *embed_net, read_image(opt.image, in.g->config().resolution), w_mean, po);
    const auto b = edit::project_image(*in.g, *embed_net, read_image(opt.image2, in.g->config().resolution), w_mean, po);
    pairs.emplace_back(a.w_plus, b.w_plus);
  } else {
    throw SchemaError("unknown interpolation mode '" + mode + "'");
  }
  make_dir(dir);
  write_resolved(ctx, "interpolate");
  std::vector<std::string> files;
  for (size_t i = 0; i < pairs.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%02zu.png", mode.c_str(), i);
    io::write_png(dir / name, edit::interpolate_grid(*in.g, pairs[i].first, pairs[i].second, steps));
    files.push_back((dir / name).string());
  }
  ctx.result({{"command", "interpolate"}, {"mode", mode}, {"steps", steps}, {"files", files}});
}

void cmd_report(const Context& ctx) {
  const fs::path dir = ctx.out / "report";
  refuse_existing(ctx, dir / "summary.csv");
  make_dir(dir);
  const json summary = write_report(ctx.out, dir);
  ctx.result({{"command", "report"}, {"dir", dir.string()}, {"summary", summary}});
}

void emit_error(std::ostream& err, ErrorKind kind, const std::string& message) {
  err << json{{"error", error_kind_name(kind)}, {"message", message}, {"exit_code", exit_code(kind)}}.dump() << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic-shape GAN training and latent-space evaluation"};
  app.require_subcommand(1);
  Options opt;
  std::optional<uint64_t> seed;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "run config JSON");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", opt.out, "output directory")->required();
    sub->add_flag("--overwrite", opt.overwrite, "replace existing outputs");
  };
  auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset archive");
  auto* scorer = app.add_subcommand("train-scorer", "train the attribute scorer");
  auto* extractor = app.add_subcommand("train-extractor", "train the frozen feature extractor");
  auto* trn = app.add_subcommand("train", "train the GAN");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* ed = app.add_subcommand("edit", "fit an attribute direction and edit");
  auto* ip = app.add_subcommand("interpolate", "render latent interpolation grids");
  auto* rep = app.add_subcommand("report", "plots and summary tables for a run or grid directory");
  for (auto* sub : {gen, scorer, extractor, trn, ev, ed, ip, rep}) common(sub);
  trn->add_flag("--resume", opt.resume, "continue from the latest checkpoint in --out");
  trn->add_option("--kimg", opt.kimg, "overrides train.total_kimg");
  trn->add_option("--variant", opt.variant, "baseline | plr | hsr | plr+hsr; sets the two regularizer flags");
  for (auto* sub : {ev, ed, ip}) sub->add_option("--checkpoint", opt.checkpoint, "checkpoint file");
  ev->add_option("--metrics", opt.metric_list, "comma-separated metric list");
  ed->add_option("--attribute", opt.attribute, "attribute name or index");
  ed->add_option("--alpha", opt.alpha, "edit strength in units of sigma_w");
  ed->add_option("--image", opt.image, "PNG to project and edit");
  ed->add_option("--direction", opt.direction, "saved direction JSON");
  ed->add_flag("--allow-hash-mismatch", opt.allow_hash_mismatch, "apply a direction fitted on another checkpoint");
  ip->add_option("--mode", opt.mode, "random | percentile-top | percentile-bottom | projected");
  ip->add_option("--steps", opt.steps, "interpolation steps N");
  ip->add_option("--image", opt.image, "first PNG for projected mode");
  ip->add_option("--image2", opt.image2, "second PNG for projected mode");
  ip->add_option("--eval-dir", opt.eval_dir, "eval directory holding ppl_pairs.bin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << json{{"error", "usage"}, {"message", e.what()}, {"exit_code", kUsageExit}}.dump() << '\n';
    return kUsageExit;
  }
  opt.seed = seed;

  try {
    Context ctx;
    ctx.cfg = opt.config.empty() ? RunConfig{} : RunConfig::load(opt.config);
    if (opt.seed) ctx.cfg.seed = opt.seed;
    if (opt.kimg) ctx.cfg.train.total_kimg = *opt.kimg;
    if (opt.variant) {
      const auto& v = *opt.variant;
      if (v != "baseline" && v != "plr" && v != "hsr" && v != "plr+hsr")
        throw SchemaError("unknown variant '" + v + "'");
      ctx.cfg.train.enable_plr = v == "plr" || v == "plr+hsr";
      ctx.cfg.train.enable_hsr = v == "hsr" || v == "plr+hsr";
    }
    if (opt.metric_list) {
      std::vector<std::string> list;
      std::stringstream ss(*opt.metric_list);
      for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) list.push_back(item);
      ctx.cfg.metrics.list = list;
    }
    ctx.cfg.resolve();
    ctx.out = opt.out;
    ctx.overwrite = opt.overwrite;
    ctx.out_stream = &out;
    ctx.err_stream = &err;
    make_dir(ctx.out);
    RunLock lock(ctx.out);
    LogSink previous = set_warning_sink([&](const std::string& m) { err << "warning: " << m << '\n'; });
    struct Restore {
      LogSink sink;
      ~Restore() { set_warning_sink(sink); }
    } restore{previous};

    if (*gen) cmd_gen_data(ctx);
    else if (*scorer) cmd_train_regressor(ctx, "scorer");
    else if (*extractor) cmd_train_regressor(ctx, "extractor");
    else if (*trn) cmd_train(ctx, opt.resume);
    else if (*ev) cmd_eval(ctx, opt);
    else if (*ed) cmd_edit(ctx, opt);
    else if (*ip) cmd_interpolate(ctx, opt);
    else if (*rep) cmd_report(ctx);
    return 0;
  } catch (const Error& e) {
    emit_error(err, e.kind(), e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    emit_error(err, ErrorKind::schema, e.what());
    return exit_code(ErrorKind::schema);
  } catch (const std::exception& e) {
    emit_error(err, ErrorKind::runtime, e.what());
    return exit_code(ErrorKind::runtime);
  }
}

}  // namespace hsrgan::cli
