// Configuration types shared across the pipeline. One struct is the single
// source of truth for architecture, DSP and schedule hyperparameters; it is
// serialized into checkpoints and config files as JSON.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace vox {

using json = nlohmann::json;

struct ModelConfig {
  // architecture (desk-scale defaults; full-scale values go in config files)
  int hidden_dim = 64;
  int n_heads = 2;
  int n_text_blocks = 6;
  int speaker_inject_block = 6;  // 1-based block index receiving the speaker embedding
  int n_flow_steps = 4;
  int spk_emb_dim = 256;
  int lang_emb_dim = 4;
  int latent_dim = 64;
  int posterior_layers = 4;
  int duration_channels = 32;
  int duration_flow_steps = 2;

  // DSP
  int sample_rate = 16000;
  int fft_size = 1024;
  int hop = 256;
  int win = 1024;
  int mel_bands = 80;
  float volume_peak = 0.95f;

  // vocoder
  std::vector<int> upsample_factors = {8, 8, 4};
  int vocoder_channels = 64;

  // MAS noise schedule
  float mas_noise_initial = 0.01f;
  float mas_noise_decay = 2e-6f;

  int upsample_product() const {
    int p = 1;
    for (int f : upsample_factors) p *= f;
    return p;
  }

  void validate() const {
    if (speaker_inject_block < 1 || speaker_inject_block > n_text_blocks)
      throw std::invalid_argument("speaker_inject_block must be in [1, n_text_blocks]");
    if (upsample_product() != hop)
      throw std::invalid_argument("product of upsample_factors must equal hop");
    if (latent_dim % 2 != 0)
      throw std::invalid_argument("latent_dim must be even");
    if (hidden_dim <= lang_emb_dim)
      throw std::invalid_argument("hidden_dim must exceed lang_emb_dim");
    if (hop > win || win > fft_size)
      throw std::invalid_argument("need hop <= win <= fft_size");
  }
};

struct ScheduleConfig {
  float initial_lr = 2e-4f;
  float gamma = 0.999875f;
  enum class DecayUnit { Epoch, Step };
  DecayUnit decay_unit = DecayUnit::Epoch;
};

// initial_lr * gamma^index
inline float lr_at(std::int64_t index, const ScheduleConfig& sched) {
  if (index < 0) throw std::invalid_argument("schedule index must be >= 0");
  return sched.initial_lr * std::pow(sched.gamma, static_cast<float>(index));
}

struct SamplerConfig {
  enum class Strategy { Balanced, Uniform };
  Strategy strategy = Strategy::Balanced;
  std::uint64_t seed = 0;
  int batch_size = 2;
};

struct LossWeights {
  float mel = 45.0f;
  float kl = 1.0f;
  float feature_match = 2.0f;
  float adversarial = 1.0f;
  float duration = 1.0f;
};

struct TrainConfig {
  ModelConfig model;
  ScheduleConfig schedule;
  SamplerConfig sampler;
  LossWeights weights;
  std::int64_t steps = 1000;
  std::int64_t checkpoint_every = 500;
  std::int64_t log_every = 1;
  int slice_frames = 32;  // windowed-slice length fed to the vocoder/discriminators
  float adam_beta1 = 0.8f;
  float adam_beta2 = 0.99f;
  float adam_eps = 1e-9f;
  std::uint64_t seed = 1234;
};

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"hidden_dim", c.hidden_dim},
           {"n_heads", c.n_heads},
           {"n_text_blocks", c.n_text_blocks},
           {"speaker_inject_block", c.speaker_inject_block},
           {"n_flow_steps", c.n_flow_steps},
           {"spk_emb_dim", c.spk_emb_dim},
           {"lang_emb_dim", c.lang_emb_dim},
           {"latent_dim", c.latent_dim},
           {"posterior_layers", c.posterior_layers},
           {"duration_channels", c.duration_channels},
           {"duration_flow_steps", c.duration_flow_steps},
           {"sample_rate", c.sample_rate},
           {"fft_size", c.fft_size},
           {"hop", c.hop},
           {"win", c.win},
           {"mel_bands", c.mel_bands},
           {"volume_peak", c.volume_peak},
           {"upsample_factors", c.upsample_factors},
           {"vocoder_channels", c.vocoder_channels},
           {"mas_noise_initial", c.mas_noise_initial},
           {"mas_noise_decay", c.mas_noise_decay}};
}

inline void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.n_text_blocks = j.value("n_text_blocks", d.n_text_blocks);
  c.speaker_inject_block = j.value("speaker_inject_block", d.speaker_inject_block);
  c.n_flow_steps = j.value("n_flow_steps", d.n_flow_steps);
  c.spk_emb_dim = j.value("spk_emb_dim", d.spk_emb_dim);
  c.lang_emb_dim = j.value("lang_emb_dim", d.lang_emb_dim);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.posterior_layers = j.value("posterior_layers", d.posterior_layers);
  c.duration_channels = j.value("duration_channels", d.duration_channels);
  c.duration_flow_steps = j.value("duration_flow_steps", d.duration_flow_steps);
  c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.fft_size = j.value("fft_size", d.fft_size);
  c.hop = j.value("hop", d.hop);
  c.win = j.value("win", d.win);
  c.mel_bands = j.value("mel_bands", d.mel_bands);
  c.volume_peak = j.value("volume_peak", d.volume_peak);
  c.upsample_factors = j.value("upsample_factors", d.upsample_factors);
  c.vocoder_channels = j.value("vocoder_channels", d.vocoder_channels);
  c.mas_noise_initial = j.value("mas_noise_initial", d.mas_noise_initial);
  c.mas_noise_decay = j.value("mas_noise_decay", d.mas_noise_decay);
}

inline void to_json(json& j, const ScheduleConfig& c) {
  j = json{{"initial_lr", c.initial_lr},
           {"gamma", c.gamma},
           {"decay_unit", c.decay_unit == ScheduleConfig::DecayUnit::Epoch ? "epoch" : "step"}};
}

inline void from_json(const json& j, ScheduleConfig& c) {
  ScheduleConfig d;
  c.initial_lr = j.value("initial_lr", d.initial_lr);
  c.gamma = j.value("gamma", d.gamma);
  std::string unit = j.value("decay_unit", std::string("epoch"));
  if (unit == "epoch")
    c.decay_unit = ScheduleConfig::DecayUnit::Epoch;
  else if (unit == "step")
    c.decay_unit = ScheduleConfig::DecayUnit::Step;
  else
    throw std::invalid_argument("decay_unit must be 'epoch' or 'step'");
}

inline void to_json(json& j, const SamplerConfig& c) {
  j = json{{"strategy", c.strategy == SamplerConfig::Strategy::Balanced ? "balanced" : "uniform"},
           {"seed", c.seed},
           {"batch_size", c.batch_size}};
}

inline void from_json(const json& j, SamplerConfig& c) {
  SamplerConfig d;
  std::string s = j.value("strategy", std::string("balanced"));
  if (s == "balanced")
    c.strategy = SamplerConfig::Strategy::Balanced;
  else if (s == "uniform")
    c.strategy = SamplerConfig::Strategy::Uniform;
  else
    throw std::invalid_argument("strategy must be 'balanced' or 'uniform'");
  c.seed = j.value("seed", d.seed);
  c.batch_size = j.value("batch_size", d.batch_size);
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

inline void to_json(json& j, const LossWeights& c) {
  j = json{{"mel", c.mel},
           {"kl", c.kl},
           {"feature_match", c.feature_match},
           {"adversarial", c.adversarial},
           {"duration", c.duration}};
}

inline void from_json(const json& j, LossWeights& c) {
  LossWeights d;
  c.mel = j.value("mel", d.mel);
  c.kl = j.value("kl", d.kl);
  c.feature_match = j.value("feature_match", d.feature_match);
  c.adversarial = j.value("adversarial", d.adversarial);
  c.duration = j.value("duration", d.duration);
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"model", c.model},
           {"schedule", c.schedule},
           {"sampler", c.sampler},
           {"weights", c.weights},
           {"steps", c.steps},
           {"checkpoint_every", c.checkpoint_every},
           {"log_every", c.log_every},
           {"slice_frames", c.slice_frames},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"seed", c.seed}};
}

inline void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("schedule")) j.at("schedule").get_to(c.schedule);
  if (j.contains("sampler")) j.at("sampler").get_to(c.sampler);
  if (j.contains("weights")) j.at("weights").get_to(c.weights);
  c.steps = j.value("steps", d.steps);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.log_every = j.value("log_every", d.log_every);
  c.slice_frames = j.value("slice_frames", d.slice_frames);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seed = j.value("seed", d.seed);
}

// FNV-1a over the canonical JSON encoding; ties checkpoints to the config
// that built them.
inline std::uint64_t config_hash(const ModelConfig& c) {
  const std::string s = json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace vox
