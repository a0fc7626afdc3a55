#include "hsrgan/train/trainloop.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "hsrgan/autograd/ops.hpp"
#include "hsrgan/core/error.hpp"

namespace hsrgan::train {

using ag::Var;
using nlohmann::json;

std::string to_string(LossForm form) { return form == LossForm::minimax ? "minimax" : "non-saturating"; }

LossForm parse_loss_form(const std::string& s) {
  if (s == "non-saturating") return LossForm::non_saturating;
  if (s == "minimax") return LossForm::minimax;
  throw SchemaError("unknown loss form '" + s + "'");
}

namespace {

json adam_to_json(const nn::AdamOptions& o) {
  return {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}

nn::AdamOptions adam_from_json(const json& j) {
  nn::AdamOptions o;
  for (const auto& [key, v] : j.items()) {
    if (key == "lr") o.lr = v.get<double>();
    else if (key == "beta1") o.beta1 = v.get<double>();
    else if (key == "beta2") o.beta2 = v.get<double>();
    else if (key == "eps") o.eps = v.get<double>();
    else throw SchemaError("unknown optimizer key '" + key + "'");
  }
  return o;
}

void check_adam(const nn::AdamOptions& o, const char* which) {
  const std::string w(which);
  if (!(o.lr > 0.0)) throw RangeError(w + " learning rate must be > 0");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0))
    throw RangeError(w + " betas must lie in [0, 1)");
  if (!(o.eps > 0.0)) throw RangeError(w + " eps must be > 0");
}

void diff_into(const json& a, const json& b, const std::string& prefix, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    for (const auto& [k, v] : a.items()) {
      const std::string key = prefix.empty() ? k : prefix + "." + k;
      if (!b.contains(k)) out.push_back(key);
      else diff_into(v, b.at(k), key, out);
    }
    for (const auto& [k, v] : b.items())
      if (!a.contains(k)) out.push_back(prefix.empty() ? k : prefix + "." + k);
    return;
  }
  if (a != b) out.push_back(prefix);
}

template <typename T>
void load_into(const nn::ParamList<T>& params, const io::TensorFile& file, const std::string& prefix) {
  for (const auto& p : params) {
    const Tensor<float>& t = file.at(prefix + p.name);
    if (t.shape() != p.var.shape())
      throw SchemaError("checkpoint tensor " + prefix + p.name + " has shape " + hsrgan::to_string(t.shape()) +
                        ", expected " + hsrgan::to_string(p.var.shape()));
    Var<T> v = p.var;
    v.mutable_value() = t.template cast<T>();
  }
}

void save_params(const nn::ParamList<float>& params, io::TensorFile& file, const std::string& prefix) {
  for (const auto& p : params) file.tensors[prefix + p.name] = p.var.value();
}

// Adversarial terms. D: softplus(D(fake)) + softplus(-D(real)) for both forms.
// G: softplus(-D(fake)) (non-saturating) or -softplus(D(fake)) (minimax).
Var<float> g_adversarial(const Var<float>& fake_logits, LossForm form) {
  if (form == LossForm::minimax) return ag::neg(ag::mean(ag::softplus(fake_logits)));
  return ag::mean(ag::softplus(ag::neg(fake_logits)));
}

Var<float> d_adversarial(const Var<float>& real_logits, const Var<float>& fake_logits) {
  return ag::mean(ag::softplus(fake_logits)) + ag::mean(ag::softplus(ag::neg(real_logits)));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(total_kimg >= 0.0)) throw RangeError("total_kimg must be >= 0");
  if (batch < 2) throw RangeError("batch must be >= 2 for the minibatch standard deviation layer");
  check_adam(g_optimizer, "generator");
  check_adam(d_optimizer, "discriminator");
  hsr.validate();
  reg::PLRState p = plr;
  p.a = 0.0;
  p.validate();
  r1.validate();
  augment.validate();
  if (!(ema_halflife_kimg >= 0.0)) throw RangeError("ema_halflife_kimg must be >= 0");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw RangeError("flip_probability must lie in [0, 1]");
  if (!(eval_every_kimg > 0.0) || !(checkpoint_every_kimg > 0.0))
    throw RangeError("eval and checkpoint intervals must be > 0");
  generator.validate();
  discriminator.validate();
  if (generator.resolution != discriminator.resolution)
    throw ConfigError("generator and discriminator resolutions differ");
}

json TrainConfig::to_json() const {
  json plr_json = plr.to_json();
  plr_json.erase("a");
  return {{"total_kimg", total_kimg},
          {"batch", batch},
          {"g_optimizer", adam_to_json(g_optimizer)},
          {"d_optimizer", adam_to_json(d_optimizer)},
          {"loss", to_string(loss)},
          {"enable_hsr", enable_hsr},
          {"enable_plr", enable_plr},
          {"enable_r1", enable_r1},
          {"enable_augment", enable_augment},
          {"hsr", hsr.to_json()},
          {"plr", plr_json},
          {"r1", r1.to_json()},
          {"augment", augment.to_json()},
          {"ema_halflife_kimg", ema_halflife_kimg},
          {"flip_probability", flip_probability},
          {"seed", seed},
          {"data_seed", data_seed},
          {"noise_seed", noise_seed},
          {"eval_every_kimg", eval_every_kimg},
          {"checkpoint_every_kimg", checkpoint_every_kimg},
          {"generator", generator.to_json()},
          {"discriminator", discriminator.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("train config must be an object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "total_kimg") c.total_kimg = v.get<double>();
    else if (key == "batch") c.batch = v.get<int>();
    else if (key == "g_optimizer") c.g_optimizer = adam_from_json(v);
    else if (key == "d_optimizer") c.d_optimizer = adam_from_json(v);
    else if (key == "loss") c.loss = parse_loss_form(v.get<std::string>());
    else if (key == "enable_hsr") c.enable_hsr = v.get<bool>();
    else if (key == "enable_plr") c.enable_plr = v.get<bool>();
    else if (key == "enable_r1") c.enable_r1 = v.get<bool>();
    else if (key == "enable_augment") c.enable_augment = v.get<bool>();
    else if (key == "hsr") c.hsr = hsr::HSRConfig::from_json(v);
    else if (key == "plr") c.plr = reg::PLRState::from_json(v);
    else if (key == "r1") c.r1 = reg::R1Config::from_json(v);
    else if (key == "augment") c.augment = model::AugmentConfig::from_json(v);
    else if (key == "ema_halflife_kimg") c.ema_halflife_kimg = v.get<double>();
    else if (key == "flip_probability") c.flip_probability = v.get<double>();
    else if (key == "seed") c.seed = v.get<uint64_t>();
    else if (key == "data_seed") c.data_seed = v.get<uint64_t>();
    else if (key == "noise_seed") c.noise_seed = v.get<uint64_t>();
    else if (key == "eval_every_kimg") c.eval_every_kimg = v.get<double>();
    else if (key == "checkpoint_every_kimg") c.checkpoint_every_kimg = v.get<double>();
    else if (key == "generator") c.generator = model::GeneratorConfig::from_json(v);
    else if (key == "discriminator") c.discriminator = model::DiscriminatorConfig::from_json(v);
    else throw SchemaError("unknown train key '" + key + "'");
  }
  c.plr.a = 0.0;
  c.validate();
  return c;
}

std::vector<std::string> config_differences(const json& a, const json& b) {
  std::vector<std::string> out;
  diff_into(a, b, "", out);
  return out;
}

Trainer::Trainer(TrainConfig config, const synth::Dataset* dataset, const hsr::Extractor<float>* extractor)
    : config_(std::move(config)),
      dataset_(dataset),
      extractor_(extractor),
      data_rng_(splitmix64(config_.data_seed)),
      noise_rng_(splitmix64(config_.noise_seed)),
      augment_rng_(splitmix64(config_.noise_seed ^ 0xa5a5a5a5a5a5a5a5ULL)),
      plr_rng_(splitmix64(config_.noise_seed ^ 0x5a5a5a5a5a5a5a5aULL)) {
  config_.validate();
  config_.plr.a = 0.0;
  plr_ = config_.plr;
  if (dataset_ == nullptr || dataset_->size() == 0) throw ConfigError("training needs a non-empty dataset");
  if (dataset_->resolution() != config_.generator.resolution)
    throw ConfigError("dataset resolution " + std::to_string(dataset_->resolution()) +
                      " differs from the generator resolution " + std::to_string(config_.generator.resolution));
  g_ = std::make_unique<model::Generator<float>>(config_.generator, splitmix64(config_.seed));
  g_ema_ = std::make_unique<model::Generator<float>>(config_.generator, splitmix64(config_.seed));
  d_ = std::make_unique<model::Discriminator<float>>(config_.discriminator, splitmix64(config_.seed + 1));
  g_params_ = g_->parameters();
  if (config_.enable_hsr) {
    std::map<int, int64_t> taps;
    for (int r : config_.generator.taps()) taps[r] = config_.generator.channels_at(r);
    hsr_ = std::make_unique<hsr::HSR<float>>(config_.hsr, taps, extractor_, config_.generator.resolution,
                                             splitmix64(config_.seed + 2));
    for (const auto& p : hsr_->parameters()) g_params_.push_back(p);
  }
  g_opt_ = nn::Adam<float>(g_params_, config_.g_optimizer);
  d_opt_ = nn::Adam<float>(d_->parameters(), config_.d_optimizer);
}

double Trainer::ema_beta(int batch, double halflife_kimg) {
  if (halflife_kimg <= 0.0) return 0.0;
  return std::pow(0.5, static_cast<double>(batch) / (halflife_kimg * 1000.0));
}

Tensor<float> Trainer::real_batch() {
  const auto b = static_cast<size_t>(config_.batch);
  std::vector<int64_t> idx(b);
  std::unique_ptr<bool[]> flip(new bool[b]);
  for (size_t i = 0; i < b; ++i) {
    idx[i] = data_rng_.below(dataset_->size());
    flip[i] = data_rng_.bernoulli(config_.flip_probability);
  }
  return dataset_->batch(idx, std::span<const bool>(flip.get(), b));
}

Tensor<float> Trainer::latents(int64_t batch) { return model::sample_z<float>(batch, config_.generator.z_dim, noise_rng_); }

void Trainer::update_ema() {
  const float beta = static_cast<float>(ema_beta(config_.batch, config_.ema_halflife_kimg));
  auto ema = g_ema_->parameters();
  auto live = g_->parameters();
  for (size_t i = 0; i < ema.size(); ++i) {
    Tensor<float>& e = ema[i].var.mutable_value();
    const Tensor<float>& g = live[i].var.value();
    for (int64_t k = 0; k < e.numel(); ++k) e[k] = g[k] + (e[k] - g[k]) * beta;
  }
}

StepStats Trainer::step() {
  StepStats stats;
  const int64_t b = config_.batch;
  Rng* noise = config_.generator.noise ? &noise_rng_ : nullptr;

  // Discriminator update.
  {
    Tensor<float> real = real_batch();
    Tensor<float> fake;
    {
      ag::NoGradGuard off;
      fake = g_->synthesize(g_->map(Var<float>::constant(latents(b))), false, noise).image.value();
    }
    Var<float> real_in = Var<float>::constant(real);
    Var<float> fake_in = Var<float>::constant(fake);
    model::AugmentDraw real_draw;
    if (config_.enable_augment) {
      real_draw = model::draw_augment(b, config_.generator.resolution, config_.augment, augment_rng_);
      real_in = model::apply_augment(real_in, real_draw);
      fake_in = model::augment(fake_in, config_.augment, augment_rng_);
    }
    Var<float> loss = d_adversarial((*d_)(real_in), (*d_)(fake_in));
    stats.loss_d = loss.item();
    if (config_.enable_r1 && reg::due(d_steps_, config_.r1.interval)) {
      auto disc = [&](const Var<float>& x) {
        return (*d_)(config_.enable_augment ? model::apply_augment(x, real_draw) : x);
      };
      auto r1 = reg::r1_penalty<float>(real, disc, config_.r1.gamma);
      if (!r1.skipped) {
        stats.r1_applied = true;
        stats.r1_penalty = r1.penalty.item();
        loss = loss + ag::scale(r1.penalty, static_cast<double>(config_.r1.interval));
      }
    }
    d_opt_.step(ag::grad(loss, nn::vars(d_opt_.params())));
    ++d_steps_;
  }

  // Generator update.
  {
    Var<float> w = g_->map(Var<float>::constant(latents(b)));
    const bool want_taps = hsr_ && hsr_->any_active();
    auto out = g_->synthesize(w, want_taps, noise);
    Var<float> fake = out.image;
    if (config_.enable_augment) fake = model::augment(fake, config_.augment, augment_rng_);
    Var<float> loss = g_adversarial((*d_)(fake), config_.loss);
    stats.loss_g = loss.item();
    if (hsr_) {
      auto h = hsr_->loss(out.taps, out.image, images_seen_);
      stats.hsr_active = h.active;
      stats.loss_hsr = h.loss.item();
      if (h.active) loss = loss + ag::scale(h.loss, config_.hsr.lambda);
    }
    if (config_.enable_plr && reg::due(g_steps_, plr_.interval)) {
      const int64_t pb = std::max<int64_t>(1, b / 2);
      Var<float> pw = g_->map(Var<float>::constant(model::sample_z<float>(pb, config_.generator.z_dim, plr_rng_)));
      auto gen = [&](const Var<float>& x) { return g_->synthesize(x, false, noise).image; };
      auto r = reg::path_length_penalty<float>(pw, gen, plr_, plr_rng_);
      if (!r.skipped) {
        stats.plr_applied = true;
        stats.plr_penalty = r.penalty.item();
        plr_ = r.state;
        loss = loss + ag::scale(r.penalty, plr_.weight * plr_.interval);
      }
    }
    g_opt_.step(ag::grad(loss, nn::vars(g_params_)));
    ++g_steps_;
  }

  update_ema();
  images_seen_ += b;
  return stats;
}

double Trainer::discriminator_loss(const Tensor<float>& real, const Tensor<float>& z) const {
  ag::NoGradGuard off;
  Var<float> fake = g_->synthesize(g_->map(Var<float>::constant(z))).image;
  return d_adversarial((*d_)(Var<float>::constant(real)), (*d_)(fake)).item();
}

double Trainer::generator_loss(const Tensor<float>& z) const {
  ag::NoGradGuard off;
  Var<float> fake = g_->synthesize(g_->map(Var<float>::constant(z))).image;
  return g_adversarial((*d_)(fake), config_.loss).item();
}

io::TensorFile Trainer::checkpoint() const {
  io::TensorFile f;
  save_params(g_->parameters(), f, "G/");
  save_params(g_ema_->parameters(), f, "G_ema/");
  save_params(d_->parameters(), f, "D/");
  if (hsr_) save_params(hsr_->parameters(), f, "heads/");
  auto save_moments = [&](const nn::Adam<float>& opt, const std::string& prefix) {
    for (size_t i = 0; i < opt.params().size(); ++i) {
      f.tensors[prefix + "m/" + opt.params()[i].name] = opt.first_moments()[i];
      f.tensors[prefix + "v/" + opt.params()[i].name] = opt.second_moments()[i];
    }
  };
  save_moments(g_opt_, "opt_g/");
  save_moments(d_opt_, "opt_d/");
  f.meta = {{"kind", "checkpoint"},
            {"images_seen", images_seen_},
            {"kimg", kimg()},
            {"g_steps", g_steps_},
            {"d_steps", d_steps_},
            {"optimizer_steps", {{"g", g_opt_.steps()}, {"d", d_opt_.steps()}}},
            {"plr.a", plr_.a},
            {"rng",
             {{"data", data_rng_.state()},
              {"noise", noise_rng_.state()},
              {"augment", augment_rng_.state()},
              {"plr", plr_rng_.state()}}},
            {"config", config_.to_json()}};
  return f;
}

void Trainer::restore(const io::TensorFile& file) {
  const json& m = file.meta;
  if (m.value("kind", "") != "checkpoint") throw SchemaError("file is not a training checkpoint");
  json stored = m.at("config");
  json current = config_.to_json();
  stored.erase("total_kimg");
  current.erase("total_kimg");
  auto diff = config_differences(stored, current);
  if (!diff.empty()) {
    std::string keys;
    for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
    throw ConfigError("checkpoint config differs in: " + keys);
  }
  load_into(g_->parameters(), file, "G/");
  load_into(g_ema_->parameters(), file, "G_ema/");
  load_into(d_->parameters(), file, "D/");
  if (hsr_) load_into(hsr_->parameters(), file, "heads/");
  auto load_moments = [&](nn::Adam<float>& opt, const std::string& prefix) {
    for (size_t i = 0; i < opt.params().size(); ++i) {
      opt.first_moments()[i] = file.at(prefix + "m/" + opt.params()[i].name);
      opt.second_moments()[i] = file.at(prefix + "v/" + opt.params()[i].name);
    }
  };
  load_moments(g_opt_, "opt_g/");
  load_moments(d_opt_, "opt_d/");
  g_opt_.set_steps(m.at("optimizer_steps").at("g").get<int64_t>());
  d_opt_.set_steps(m.at("optimizer_steps").at("d").get<int64_t>());
  images_seen_ = m.at("images_seen").get<int64_t>();
  g_steps_ = m.at("g_steps").get<int64_t>();
  d_steps_ = m.at("d_steps").get<int64_t>();
  plr_.a = m.at("plr.a").get<double>();
  const json& rng = m.at("rng");
  data_rng_.set_state(rng.at("data").get<std::string>());
  noise_rng_.set_state(rng.at("noise").get<std::string>());
  augment_rng_.set_state(rng.at("augment").get<std::string>());
  plr_rng_.set_state(rng.at("plr").get<std::string>());
}

TrainConfig checkpoint_config(const io::TensorFile& file) {
  if (file.meta.value("kind", "") != "checkpoint") throw SchemaError("file is not a training checkpoint");
  return TrainConfig::from_json(file.meta.at("config"));
}

std::unique_ptr<model::Generator<float>> load_generator(const io::TensorFile& file, bool ema) {
  TrainConfig c = checkpoint_config(file);
  auto g = std::make_unique<model::Generator<float>>(c.generator, splitmix64(c.seed));
  load_into(g->parameters(), file, ema ? "G_ema/" : "G/");
  return g;
}

std::vector<std::pair<std::string, TrainConfig>> table_grid(const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> out;
  for (auto [name, plr, h] : {std::tuple{"baseline", false, false}, std::tuple{"plr", true, false},
                              std::tuple{"hsr", false, true}, std::tuple{"plr+hsr", true, true}}) {
    TrainConfig c = base;
    c.enable_plr = plr;
    c.enable_hsr = h;
    out.emplace_back(name, c);
  }
  return out;
}

RunResult run_training(const TrainConfig& config, const synth::Dataset& dataset, const hsr::Extractor<float>* extractor,
                       const RunOptions& options) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(options.out_dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create " + (options.out_dir / "checkpoints").string() + ": " + ec.message());

  Trainer trainer(config, &dataset, extractor);
  if (options.resume) trainer.restore(io::TensorFile::load(*options.resume));

  RunResult result;
  result.log = options.out_dir / "log.jsonl";
  std::ofstream log(result.log, options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open " + result.log.string());

  const auto start = std::chrono::steady_clock::now();
  const auto total_images = static_cast<int64_t>(std::llround(config.total_kimg * 1000.0));
  auto tick = [](int64_t images, double every_kimg) {
    return static_cast<int64_t>(std::floor(static_cast<double>(images) / (every_kimg * 1000.0)));
  };
  std::string last_good = options.resume ? options.resume->string() : std::string("none");
  auto save = [&]() {
    char name[64];
    std::snprintf(name, sizeof name, "ckpt-%09lld.bin", static_cast<long long>(trainer.images_seen()));
    fs::path p = options.out_dir / "checkpoints" / name;
    trainer.checkpoint().save(p);
    io::write_atomically(options.out_dir / "latest_checkpoint.txt", p.filename().string() + "\n");
    last_good = p.string();
    return p;
  };

  while (trainer.images_seen() < total_images) {
    const int64_t before = trainer.images_seen();
    StepStats s = trainer.step();
    const int64_t after = trainer.images_seen();
    if (!std::isfinite(s.loss_g) || !std::isfinite(s.loss_d) || !std::isfinite(s.loss_hsr))
      throw NonFiniteError("non-finite loss at kimg " + std::to_string(trainer.kimg()) +
                           "; last good checkpoint: " + last_good);
    json line = {{"kimg", trainer.kimg()},
                 {"loss_G", s.loss_g},
                 {"loss_D", s.loss_d},
                 {"loss_HSR", s.loss_hsr},
                 {"plr_a", trainer.plr_state().a},
                 {"fid_proxy", nullptr},
                 {"ppl_quick", nullptr},
                 {"wallclock_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    const bool finished = after >= total_images;
    if (options.eval && (tick(after, config.eval_every_kimg) > tick(before, config.eval_every_kimg) || finished)) {
      json metrics = options.eval(trainer.generator_ema(), trainer.kimg());
      for (const auto& [k, v] : metrics.items()) line[k] = v;
    }
    log << line.dump() << '\n';
    log.flush();
    if (tick(after, config.checkpoint_every_kimg) > tick(before, config.checkpoint_every_kimg) || finished)
      result.final_checkpoint = save();
    if (options.progress && (finished || after / 1000 > before / 1000))
      options.progress("kimg " + std::to_string(trainer.kimg()) + " loss_G " + std::to_string(s.loss_g) +
                       " loss_D " + std::to_string(s.loss_d) + " loss_HSR " + std::to_string(s.loss_hsr));
  }
  if (result.final_checkpoint.empty()) result.final_checkpoint = save();
  result.kimg = trainer.kimg();
  return result;
}

}  // namespace hsrgan::train
