// Loss assembly and the training loop: uniform/speaker-balanced sampling,
// VAE/GAN objective over windowed waveform slices, exponential lr decay,
// checkpointing with bit-exact resume.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vox/align.hpp"
#include "vox/audio.hpp"
#include "vox/config.hpp"
#include "vox/corpus.hpp"
#include "vox/model.hpp"

namespace vox {

struct LossBreakdown {
  float mel_recon = 0;
  float kl = 0;
  float adversarial_g = 0;
  float feature_match = 0;
  float duration = 0;
  float total = 0;
  float discriminator = 0;
};

inline void to_json(json& j, const LossBreakdown& l) {
  j = json{{"mel_recon", l.mel_recon},       {"kl", l.kl},
           {"adversarial_g", l.adversarial_g}, {"feature_match", l.feature_match},
           {"duration", l.duration},         {"total", l.total},
           {"discriminator", l.discriminator}};
}

// ---------------------------------------------------------------------------
// speaker-balanced sampling

// Draws utterances from the union of the given manifests. Balanced strategy:
// pick a speaker uniformly, then one of that speaker's utterances uniformly.
class UtteranceSampler {
 public:
  UtteranceSampler(const std::vector<Manifest>& datasets, const SamplerConfig& cfg)
      : strategy_(cfg.strategy), rng_(cfg.seed) {
    for (const auto& m : datasets)
      for (const auto& u : m.utterances) {
        by_speaker_[u.speaker_id].push_back(all_.size());
        all_.push_back(u);
      }
    if (all_.empty() || by_speaker_.empty())
      throw std::runtime_error("sampler requires at least one utterance and speaker");
    for (const auto& [spk, idx] : by_speaker_) speakers_.push_back(spk);
  }

  const Utterance& next() { return next(rng_); }

  // external-rng variant keeps the trainer's single seed authoritative
  const Utterance& next(std::mt19937_64& rng) {
    if (strategy_ == SamplerConfig::Strategy::Balanced) {
      std::uniform_int_distribution<size_t> ds(0, speakers_.size() - 1);
      const auto& idx = by_speaker_.at(speakers_[ds(rng)]);
      std::uniform_int_distribution<size_t> du(0, idx.size() - 1);
      return all_[idx[du(rng)]];
    }
    std::uniform_int_distribution<size_t> du(0, all_.size() - 1);
    return all_[du(rng)];
  }

  size_t utterance_count() const { return all_.size(); }
  size_t speaker_count() const { return speakers_.size(); }

 private:
  SamplerConfig::Strategy strategy_;
  std::mt19937_64 rng_;
  std::vector<Utterance> all_;
  std::map<std::string, std::vector<size_t>> by_speaker_;
  std::vector<std::string> speakers_;
};

// ---------------------------------------------------------------------------
// differentiable log-mel loss

class MelLoss {
 public:
  MelLoss(const ModelConfig& cfg)
      : win_(cfg.win), hop_(cfg.hop) {
    const int bins = cfg.fft_size / 2 + 1;
    cos_basis_.resize(win_, bins);
    sin_basis_.resize(win_, bins);
    for (int n = 0; n < win_; ++n)
      for (int k = 0; k < bins; ++k) {
        const double ang = 2.0 * std::numbers::pi * k * n / cfg.fft_size;
        cos_basis_(n, k) = static_cast<float>(std::cos(ang));
        sin_basis_(n, k) = static_cast<float>(-std::sin(ang));
      }
    auto h = hann_periodic(win_);
    window_.resize(1, win_);
    for (int i = 0; i < win_; ++i) window_(0, i) = h[i];
    mel_t_ = mel_filterbank(cfg.mel_bands, cfg.fft_size, cfg.sample_rate).transpose();
  }

  // x: [N,1] waveform samples
  Var log_mel(Tape& t, Var x) const {
    Var frames = ad::mul_rowvec(ad::frame_rows(x, win_, hop_), t.constant(window_));
    Var re = ad::matmul(frames, t.constant(cos_basis_));
    Var im = ad::matmul(frames, t.constant(sin_basis_));
    Var mag = ad::sqrt_(ad::add_const(ad::add(ad::square(re), ad::square(im)), 1e-9f));
    Var mel = ad::matmul(mag, t.constant(mel_t_));
    return ad::log_(ad::clamp_min(mel, 1e-5f));
  }

  // L1 between log-mels; `real` enters as a constant
  Var operator()(Tape& t, Var fake, const ad::Mat& real) const {
    Var mf = log_mel(t, fake);
    Var mr = log_mel(t, t.constant(real));
    return ad::mean(ad::abs_(ad::sub(mf, mr)));
  }

 private:
  int win_, hop_;
  ad::Mat cos_basis_, sin_basis_, window_, mel_t_;
};

// ---------------------------------------------------------------------------
// per-utterance training item (preprocessed, cached)

struct TrainItem {
  std::vector<int> symbols;
  int language_index = 0;
  SpeakerEmbedding spk;
  Eigen::MatrixXf spec;        // [F, T_spec]
  Eigen::VectorXf wav;         // full waveform samples
  std::string speaker_id;
};

struct TrainLogEntry {
  std::int64_t step = 0;
  float lr = 0;
  LossBreakdown losses;
};

// ---------------------------------------------------------------------------
// trainer

class Trainer {
 public:
  Trainer(Synthesizer& model, DiscriminatorSet& disc, const TrainConfig& cfg)
      : model_(model),
        disc_(disc),
        cfg_(cfg),
        mel_loss_(model.cfg),
        adam_g_(ad::AdamConfig{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps}),
        adam_d_(ad::AdamConfig{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps}),
        noise_schedule_{model.cfg.mas_noise_initial, model.cfg.mas_noise_decay},
        rng_(cfg.seed) {}

  std::int64_t global_step() const { return global_step_; }
  void set_global_step(std::int64_t s) { global_step_ = s; }
  std::mt19937_64& rng() { return rng_; }
  ad::Adam& adam_gen() { return adam_g_; }
  ad::Adam& adam_disc() { return adam_d_; }

  std::string rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
  }
  void set_rng_state(const std::string& s) {
    std::istringstream is(s);
    is >> rng_;
  }

  // Generator-side losses for one utterance. When `update` is false nothing
  // is written to gradients and no slice is retained for the discriminator.
  LossBreakdown compute_losses(const TrainItem& item) {
    auto saved = rng_;  // evaluation must not advance the training stream
    auto r = forward_generator(item, /*want_backward=*/false);
    rng_ = saved;
    return r.losses;
  }

  // One optimization step over a batch of items. Generator and discriminator
  // are updated alternately from the same slices.
  LossBreakdown train_step(const std::vector<TrainItem>& batch, float lr) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    model_.params.zero_grads();
    disc_.params.zero_grads();

    LossBreakdown avg;
    std::vector<ad::Mat> fakes, reals;
    for (const auto& item : batch) {
      auto r = forward_generator(item, /*want_backward=*/true,
                                 1.0f / static_cast<float>(batch.size()));
      accumulate(avg, r.losses);
      fakes.push_back(std::move(r.fake_slice));
      reals.push_back(std::move(r.real_slice));
    }
    adam_g_.step(model_.params, lr);

    disc_.params.zero_grads();
    float d_total = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
      Tape t;
      Var loss = t.constant(ad::Mat::Zero(1, 1));
      Var fake = t.constant(fakes[i]);
      Var real = t.constant(reals[i]);
      for (const auto& d : disc_.discs) {
        Var sr = d(t, real);
        Var sf = d(t, fake);
        loss = ad::add(loss, ad::mean(ad::square(ad::add_const(sr, -1.0f))));
        loss = ad::add(loss, ad::mean(ad::square(sf)));
      }
      d_total += t.val(loss)(0, 0);
      t.backward(ad::scale(loss, 1.0f / static_cast<float>(batch.size())));
    }
    adam_d_.step(disc_.params, lr);

    scale_breakdown(avg, 1.0f / static_cast<float>(batch.size()));
    avg.discriminator = d_total / static_cast<float>(batch.size());
    check_finite(avg);
    ++global_step_;
    return avg;
  }

  const NoiseSchedule& noise_schedule() const { return noise_schedule_; }

  // Gaussian KL of the posterior against the duration-expanded prior,
  // evaluated at the flowed sample, with the flow log-determinant folded in.
  // Zero when posterior equals prior, the flow is the identity and the
  // posterior sample is its mean.
  static Var kl_term(Var fz, Var mu_p, Var ls_p, Var ls_q, Var logdet) {
    Tape& t = *fz.tape;
    Var diff2 = ad::square(ad::sub(fz, mu_p));
    Var var_q = ad::exp_(ad::scale(ls_q, 2.0f));
    Var inv_var_p = ad::exp_(ad::scale(ls_p, -2.0f));
    Var kl_mat = ad::add(ad::sub(ls_p, ls_q),
                         ad::scale(ad::mul(ad::add(var_q, diff2), inv_var_p), 0.5f));
    kl_mat = ad::add_const(kl_mat, -0.5f);
    const float n_el = static_cast<float>(t.val(fz).size());
    return ad::sub(ad::mean(kl_mat), ad::scale(logdet, 1.0f / n_el));
  }

 private:
  struct ForwardResult {
    LossBreakdown losses;
    ad::Mat fake_slice;  // [L*hop, 1]
    ad::Mat real_slice;
  };

  ForwardResult forward_generator(const TrainItem& item, bool want_backward,
                                  float grad_scale = 1.0f) {
    const ModelConfig& mc = model_.cfg;
    const int T_spec = static_cast<int>(item.spec.cols());
    const int T_text = static_cast<int>(item.symbols.size());
    if (T_spec < T_text)
      throw std::runtime_error("utterance has fewer frames than text symbols");

    Tape t;
    Var spkv = model_.speaker_var(t, item.spk);
    TextEncoding enc = model_.text_encoder(t, item.symbols, item.language_index, spkv);

    ad::Mat eps(T_spec, mc.latent_dim);
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int r = 0; r < T_spec; ++r)
      for (int c = 0; c < mc.latent_dim; ++c) eps(r, c) = g(rng_);
    LatentSequence lat = model_.posterior_encoder(t, item.spec, spkv, eps);
    auto [fz, logdet] = model_.flow.forward(t, lat.z, spkv);

    // MAS over detached values; the path is a constant for the loss
    Eigen::MatrixXf ll = gaussian_ll_matrix(t.val(fz), t.val(enc.prior_mean),
                                            t.val(enc.prior_logstd));
    AlignmentPath path =
        noisy_mas(ll, noise_schedule_, global_step_, rng_());
    std::vector<int> durations = path_to_durations(path);

    Var mu_p = ad::repeat_rows(enc.prior_mean, durations);
    Var ls_p = ad::repeat_rows(enc.prior_logstd, durations);
    Var kl = kl_term(fz, mu_p, ls_p, lat.posterior_logstd, logdet);

    Var dur_loss = model_.duration_predictor.nll(t, enc.hidden, spkv, durations, rng_);

    // windowed slice through the vocoder and discriminators
    const int wav_frames = static_cast<int>(item.wav.size()) / mc.hop;
    const int L = std::min(cfg_.slice_frames, std::min(T_spec, wav_frames));
    if (L < 1) throw std::runtime_error("utterance too short for a vocoder slice");
    const int max_start = std::min(T_spec - L, wav_frames - L);
    std::uniform_int_distribution<int> ds(0, std::max(0, max_start));
    const int start = ds(rng_);

    Var z_slice = ad::slice_rows(lat.z, start, L);
    Var fake = model_.vocoder(t, z_slice, spkv);
    ad::Mat real(L * mc.hop, 1);
    for (int i = 0; i < L * mc.hop; ++i) real(i, 0) = item.wav(start * mc.hop + i);

    Var mel = mel_loss_(t, fake, real);

    Var adv = t.constant(ad::Mat::Zero(1, 1));
    Var fm = t.constant(ad::Mat::Zero(1, 1));
    Var real_c = t.constant(real);
    for (const auto& d : disc_.discs) {
      std::vector<Var> feats_r, feats_f;
      d(t, real_c, &feats_r);
      Var sf = d(t, fake, &feats_f);
      adv = ad::add(adv, ad::mean(ad::square(ad::add_const(sf, -1.0f))));
      for (size_t i = 0; i < feats_r.size(); ++i)
        fm = ad::add(fm, ad::mean(ad::abs_(ad::sub(feats_f[i], ad::stopgrad(feats_r[i])))));
    }

    const LossWeights& w = cfg_.weights;
    Var total = ad::add(
        ad::add(ad::scale(mel, w.mel), ad::scale(kl, w.kl)),
        ad::add(ad::add(ad::scale(dur_loss, w.duration), ad::scale(adv, w.adversarial)),
                ad::scale(fm, w.feature_match)));

    ForwardResult out;
    out.losses.mel_recon = t.val(mel)(0, 0);
    out.losses.kl = t.val(kl)(0, 0);
    out.losses.adversarial_g = t.val(adv)(0, 0);
    out.losses.feature_match = t.val(fm)(0, 0);
    out.losses.duration = t.val(dur_loss)(0, 0);
    out.losses.total = t.val(total)(0, 0);
    if (want_backward) {
      t.backward(ad::scale(total, grad_scale));
      out.fake_slice = t.val(fake);
      out.real_slice = real;
    }
    return out;
  }

  static Eigen::MatrixXf gaussian_ll_matrix(const ad::Mat& z, const ad::Mat& mu,
                                            const ad::Mat& logstd) {
    const int T = static_cast<int>(z.rows());
    const int S = static_cast<int>(mu.rows());
    const int D = static_cast<int>(z.cols());
    Eigen::MatrixXf inv_var = (-2.0f * logstd.array()).exp();
    Eigen::VectorXf base(S);
    for (int s = 0; s < S; ++s)
      base(s) = -0.5f * D * kLog2Pi - logstd.row(s).sum() -
                0.5f * (mu.row(s).array().square() * inv_var.row(s).array()).sum();
    Eigen::MatrixXf ll(S, T);
    for (int s = 0; s < S; ++s)
      for (int tt = 0; tt < T; ++tt) {
        float q = 0;
        for (int d = 0; d < D; ++d) {
          const float zm = z(tt, d);
          q += inv_var(s, d) * (0.5f * zm * zm - mu(s, d) * zm);
        }
        ll(s, tt) = base(s) - q;
      }
    return ll;
  }

  static void accumulate(LossBreakdown& a, const LossBreakdown& b) {
    a.mel_recon += b.mel_recon;
    a.kl += b.kl;
    a.adversarial_g += b.adversarial_g;
    a.feature_match += b.feature_match;
    a.duration += b.duration;
    a.total += b.total;
  }

  static void scale_breakdown(LossBreakdown& a, float s) {
    a.mel_recon *= s;
    a.kl *= s;
    a.adversarial_g *= s;
    a.feature_match *= s;
    a.duration *= s;
    a.total *= s;
  }

  static void check_finite(const LossBreakdown& l) {
    auto bad = [](float v) { return !std::isfinite(v); };
    if (bad(l.mel_recon)) throw std::runtime_error("non-finite loss term: mel_recon");
    if (bad(l.kl)) throw std::runtime_error("non-finite loss term: kl");
    if (bad(l.adversarial_g)) throw std::runtime_error("non-finite loss term: adversarial_g");
    if (bad(l.feature_match)) throw std::runtime_error("non-finite loss term: feature_match");
    if (bad(l.duration)) throw std::runtime_error("non-finite loss term: duration");
    if (bad(l.discriminator)) throw std::runtime_error("non-finite loss term: discriminator");
  }

  Synthesizer& model_;
  DiscriminatorSet& disc_;
  TrainConfig cfg_;
  MelLoss mel_loss_;
  ad::Adam adam_g_, adam_d_;
  NoiseSchedule noise_schedule_;
  std::mt19937_64 rng_;
  std::int64_t global_step_ = 0;
};

// ---------------------------------------------------------------------------
// item preparation with caching

class ItemCache {
 public:
  ItemCache(const ModelConfig& cfg, const CharacterVocabulary& vocab,
            const Synthesizer& model, SpeakerEncoderFn spk_encoder)
      : cfg_(cfg), vocab_(vocab), model_(model), spk_encoder_(std::move(spk_encoder)) {}

  const TrainItem& get(const Utterance& u) {
    auto it = cache_.find(u.audio_path);
    if (it != cache_.end()) return it->second;
    TrainItem item;
    item.symbols = encode_text(u.text, vocab_);
    item.language_index = model_.language_index(u.language_id);
    item.speaker_id = u.speaker_id;
    Waveform w = load_wav(u.audio_path);
    if (w.sample_rate != cfg_.sample_rate) w = resample(w, cfg_.sample_rate);
    item.wav = Eigen::Map<const Eigen::VectorXf>(w.samples.data(), w.samples.size());
    item.spec = linear_spectrogram(w, cfg_.fft_size, cfg_.hop, cfg_.win).magnitudes;
    item.spk = extract_speaker_embedding(w, spk_encoder_);
    return cache_.emplace(u.audio_path, std::move(item)).first->second;
  }

 private:
  const ModelConfig& cfg_;
  const CharacterVocabulary& vocab_;
  const Synthesizer& model_;
  SpeakerEncoderFn spk_encoder_;
  std::map<std::string, TrainItem> cache_;
};

// ---------------------------------------------------------------------------
// full loops

struct TrainRunResult {
  std::vector<TrainLogEntry> log;
  std::string checkpoint_path;
  std::map<std::string, std::int64_t> speaker_draws;  // batch composition audit
};

// Shared loop for pre-training and fine-tuning; callers choose the manifests,
// sampler strategy and schedule.
inline TrainRunResult run_training_loop(Synthesizer& model, DiscriminatorSet& disc,
                                        const std::vector<Manifest>& datasets,
                                        const CharacterVocabulary& vocab,
                                        const TrainConfig& cfg, const std::string& out_dir,
                                        const std::string& tag,
                                        std::int64_t resume_global_step = 0,
                                        std::int64_t resume_adam_gen = 0,
                                        std::int64_t resume_adam_disc = 0,
                                        const std::string& resume_rng = "") {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  UtteranceSampler sampler(datasets, cfg.sampler);
  Trainer trainer(model, disc, cfg);
  trainer.set_global_step(resume_global_step);
  trainer.adam_gen().set_steps_taken(resume_adam_gen);
  trainer.adam_disc().set_steps_taken(resume_adam_disc);
  if (!resume_rng.empty()) trainer.set_rng_state(resume_rng);

  ItemCache cache(model.cfg, vocab, model, stub_speaker_encoder(model.cfg.spk_emb_dim));
  const std::int64_t steps_per_epoch =
      std::max<std::int64_t>(1, (sampler.utterance_count() + cfg.sampler.batch_size - 1) /
                                    cfg.sampler.batch_size);

  std::ofstream log_file(fs::path(out_dir) / (tag + "_log.jsonl"), std::ios::app);
  TrainRunResult result;
  const std::int64_t start_step = trainer.global_step();

  auto save = [&](const std::string& name) {
    CheckpointMeta meta;
    meta.model = model.cfg;
    meta.vocab_size = model.vocab_size;
    meta.languages = model.languages;
    meta.global_step = trainer.global_step();
    meta.adam_gen_steps = trainer.adam_gen().steps_taken();
    meta.adam_disc_steps = trainer.adam_disc().steps_taken();
    meta.rng_state = trainer.rng_state();
    const std::string path = (fs::path(out_dir) / name).string();
    save_checkpoint(path, meta, model.params, &disc.params);
    return path;
  };

  for (std::int64_t i = 0; i < cfg.steps; ++i) {
    const std::int64_t decay_index =
        cfg.schedule.decay_unit == ScheduleConfig::DecayUnit::Epoch
            ? trainer.global_step() / steps_per_epoch
            : trainer.global_step();
    const float lr = lr_at(decay_index, cfg.schedule);

    std::vector<TrainItem> batch;
    for (int b = 0; b < cfg.sampler.batch_size; ++b) {
      const Utterance& u = sampler.next(trainer.rng());
      ++result.speaker_draws[u.speaker_id];
      batch.push_back(cache.get(u));
    }

    LossBreakdown losses = trainer.train_step(batch, lr);
    if (cfg.log_every > 0 && (i % cfg.log_every) == 0) {
      TrainLogEntry e{trainer.global_step(), lr, losses};
      result.log.push_back(e);
      json j{{"step", e.step}, {"lr", e.lr}};
      json lj;
      to_json(lj, e.losses);
      j.update(lj);
      log_file << j.dump() << "\n";
    }
    if (cfg.checkpoint_every > 0 && trainer.global_step() % cfg.checkpoint_every == 0)
      save(tag + "_step" + std::to_string(trainer.global_step()) + ".ckpt");
  }
  (void)start_step;
  result.checkpoint_path = save(tag + "_final.ckpt");
  return result;
}

inline TrainRunResult pretrain(Synthesizer& model, DiscriminatorSet& disc,
                               const Manifest& manifest, const CharacterVocabulary& vocab,
                               TrainConfig cfg, const std::string& out_dir) {
  cfg.sampler.strategy = SamplerConfig::Strategy::Uniform;
  return run_training_loop(model, disc, {manifest}, vocab, cfg, out_dir, "pretrain");
}

// Fine-tunes all parameters on the mixed-up data with balanced sampling; the
// MAS noise schedule and both optimizers continue from the checkpoint.
inline TrainRunResult finetune(Synthesizer& model, DiscriminatorSet& disc,
                               const CheckpointMeta& pretrained_meta,
                               const Manifest& pretrain_manifest, const Manifest& fewshot,
                               const CharacterVocabulary& vocab, TrainConfig cfg,
                               const std::string& out_dir) {
  Manifest mixed = mixup_datasets(pretrain_manifest, fewshot);
  cfg.sampler.strategy = SamplerConfig::Strategy::Balanced;
  return run_training_loop(model, disc, {mixed}, vocab, cfg, out_dir, "finetune",
                           pretrained_meta.global_step, pretrained_meta.adam_gen_steps,
                           pretrained_meta.adam_disc_steps, pretrained_meta.rng_state);
}

}  // namespace vox
