#pragma once
// Adversarial training: one discriminator update then one generator update
// per step, with hierarchical feature alignment, lazy path-length and R1
// regularization, a weight-averaged generator, checkpoints and a JSON-lines log.

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsrgan/core/rng.hpp"
#include "hsrgan/hsr/hsr.hpp"
#include "hsrgan/io/tensor_file.hpp"
#include "hsrgan/model/discriminator.hpp"
#include "hsrgan/model/generator.hpp"
#include "hsrgan/nn/adam.hpp"
#include "hsrgan/regularize/regularize.hpp"
#include "hsrgan/synth/synthdata.hpp"

namespace hsrgan::train {

enum class LossForm { non_saturating, minimax };
std::string to_string(LossForm form);
LossForm parse_loss_form(const std::string& s);

struct TrainConfig {
  double total_kimg = 500.0;
  int batch = 16;
  nn::AdamOptions g_optimizer;
  nn::AdamOptions d_optimizer;
  LossForm loss = LossForm::non_saturating;
  bool enable_hsr = true;
  bool enable_plr = true;
  bool enable_r1 = true;
  bool enable_augment = true;
  hsr::HSRConfig hsr;
  reg::PLRState plr;  // a is ignored here; training always starts from 0
  reg::R1Config r1;
  model::AugmentConfig augment;
  double ema_halflife_kimg = 10.0;
  double flip_probability = 0.5;
  uint64_t seed = 0;        // parameter initialization
  uint64_t data_seed = 1;   // real batch order and flips
  uint64_t noise_seed = 2;  // latents, augmentation, path-length probes
  double eval_every_kimg = 50.0;
  double checkpoint_every_kimg = 50.0;
  model::GeneratorConfig generator;
  model::DiscriminatorConfig discriminator;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Keys whose values differ between two config documents, as dotted paths.
std::vector<std::string> config_differences(const nlohmann::json& a, const nlohmann::json& b);

// Evaluation run on the averaged generator; returns fields merged into the log.
using EvalHook = std::function<nlohmann::json(const model::Generator<float>& g_ema, double kimg)>;

struct StepStats {
  double loss_g = 0.0;  // adversarial part
  double loss_d = 0.0;  // adversarial part
  double loss_hsr = 0.0;
  double plr_penalty = 0.0;
  double r1_penalty = 0.0;
  bool hsr_active = false;
  bool plr_applied = false;
  bool r1_applied = false;
};

class Trainer {
 public:
  // The extractor must outlive the trainer; it is only needed with HSR on.
  Trainer(TrainConfig config, const synth::Dataset* dataset, const hsr::Extractor<float>* extractor);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return config_; }
  StepStats step();
  int64_t images_seen() const { return images_seen_; }
  double kimg() const { return static_cast<double>(images_seen_) / 1000.0; }
  int64_t g_steps() const { return g_steps_; }
  int64_t d_steps() const { return d_steps_; }
  const reg::PLRState& plr_state() const { return plr_; }

  const model::Generator<float>& generator() const { return *g_; }
  const model::Generator<float>& generator_ema() const { return *g_ema_; }
  const model::Discriminator<float>& discriminator() const { return *d_; }
  const hsr::HSR<float>* hsr() const { return hsr_.get(); }

  io::TensorFile checkpoint() const;
  // Restores every piece of state; throws ConfigError naming differing keys
  // when the stored config differs from this trainer's (total_kimg excepted).
  void restore(const io::TensorFile& file);

  // Discriminator loss on a fixed batch without updating anything.
  double discriminator_loss(const Tensor<float>& real, const Tensor<float>& z) const;
  double generator_loss(const Tensor<float>& z) const;

 private:
  Tensor<float> real_batch();
  Tensor<float> latents(int64_t batch);
  void update_ema();
  static double ema_beta(int batch, double halflife_kimg);

  TrainConfig config_;
  const synth::Dataset* dataset_;
  const hsr::Extractor<float>* extractor_;
  std::unique_ptr<model::Generator<float>> g_;
  std::unique_ptr<model::Generator<float>> g_ema_;
  std::unique_ptr<model::Discriminator<float>> d_;
  std::unique_ptr<hsr::HSR<float>> hsr_;
  nn::ParamList<float> g_params_;  // generator then predictor heads
  nn::Adam<float> g_opt_;
  nn::Adam<float> d_opt_;
  reg::PLRState plr_;
  Rng data_rng_;
  Rng noise_rng_;
  Rng augment_rng_;
  Rng plr_rng_;
  int64_t images_seen_ = 0;
  int64_t g_steps_ = 0;
  int64_t d_steps_ = 0;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  EvalHook eval;
  std::function<void(const std::string&)> progress;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log;
  double kimg = 0.0;
};

// Trains to config.total_kimg, checkpointing and evaluating on schedule.
// A non-finite loss aborts with NonFiniteError naming the last good checkpoint.
RunResult run_training(const TrainConfig& config, const synth::Dataset& dataset,
                       const hsr::Extractor<float>* extractor, const RunOptions& options);

// Generator (averaged by default) rebuilt from a checkpoint's config echo.
std::unique_ptr<model::Generator<float>> load_generator(const io::TensorFile& file, bool ema = true);
TrainConfig checkpoint_config(const io::TensorFile& file);

// Four configs differing only in enable_plr / enable_hsr, in the order
// (neither, plr, hsr, plr+hsr), each tagged with its run name.
std::vector<std::pair<std::string, TrainConfig>> table_grid(const TrainConfig& base);

}  // namespace hsrgan::train
