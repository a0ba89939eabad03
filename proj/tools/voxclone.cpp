// voxclone: operator entry points for the few-shot voice cloning pipeline.
// Subcommands: preprocess, pretrain, finetune, synthesize, inspect-checkpoint.
// Exit codes: 0 ok, 2 usage/config error, 3 runtime failure.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "vox/audio.hpp"
#include "vox/config.hpp"
#include "vox/corpus.hpp"
#include "vox/infer.hpp"
#include "vox/model.hpp"
#include "vox/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string stem_for(const std::string& audio_path, int index) {
  std::string s = fs::path(audio_path).stem().string();
  if (s.empty()) s = "utt";
  return s + "_" + std::to_string(index);
}

vox::TrainConfig load_train_config(const std::string& path) {
  vox::TrainConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  vox::json j;
  try {
    j = vox::json::parse(f);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  try {
    j.get_to(cfg);
    cfg.model.validate();
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config validation error: ") + e.what());
  }
  return cfg;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir,
                   double min_dur, double max_dur, const std::string& enhance_mode,
                   bool allow_drops, int workers) {
  vox::ModelConfig mc;
  vox::Manifest raw = vox::load_manifest(manifest_path);
  vox::Manifest kept = vox::filter_by_duration(raw, min_dur, max_dur);
  const size_t dropped = raw.utterances.size() - kept.utterances.size();

  const char* cache_env = std::getenv("VOX_CACHE_DIR");
  const fs::path wav_dir = fs::path(out_dir) / "wavs";
  const fs::path spec_dir = cache_env ? fs::path(cache_env) : fs::path(out_dir) / "spec";
  fs::create_directories(wav_dir);
  fs::create_directories(spec_dir);

  vox::EnhancementHook hook;
  if (enhance_mode == "identity") hook = vox::identity_enhancement();
  else if (enhance_mode != "none")
    throw std::invalid_argument("unknown --enhance mode: " + enhance_mode);

  vox::Manifest processed;
  processed.utterances.resize(kept.utterances.size());
  std::vector<std::string> errors;
  std::mutex err_mu;
  std::atomic<size_t> cursor{0};

  auto work = [&]() {
    for (size_t i = cursor.fetch_add(1); i < kept.utterances.size();
         i = cursor.fetch_add(1)) {
      const vox::Utterance& u = kept.utterances[i];
      try {
        vox::Waveform w = vox::load_wav(u.audio_path);
        if (w.sample_rate != mc.sample_rate) w = vox::resample(w, mc.sample_rate);
        w = vox::normalize_volume(w, mc.volume_peak);
        if (hook) w = vox::enhance(w, hook, mc.hop);
        const std::string stem = stem_for(u.audio_path, static_cast<int>(i));
        const std::string wav_out = (wav_dir / (stem + ".wav")).string();
        vox::save_wav(w, wav_out);
        auto spec = vox::linear_spectrogram(w, mc.fft_size, mc.hop, mc.win);
        vox::save_spectrogram(spec, (spec_dir / (stem + ".lspc")).string());
        vox::Utterance out = u;
        out.audio_path = wav_out;
        out.duration_s = w.duration_s();
        processed.utterances[i] = out;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(err_mu);
        errors.push_back(u.audio_path + ": " + e.what());
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  vox::Manifest final_manifest;
  for (const auto& u : processed.utterances)
    if (!u.audio_path.empty()) final_manifest.add(u);
  vox::save_manifest(final_manifest, (fs::path(out_dir) / "manifest.jsonl").string());

  if (!final_manifest.utterances.empty()) {
    auto vocab = vox::build_vocabulary({final_manifest});
    vocab.save((fs::path(out_dir) / "vocab.txt").string());
    std::cout << "vocabulary size: " << vocab.size() << "\n";
  }

  std::cout << "kept " << final_manifest.utterances.size() << ", dropped by duration "
            << dropped << ", file errors " << errors.size() << "\n";
  for (const auto& e : errors) std::cerr << "error: " << e << "\n";
  if (!errors.empty()) return kExitRuntime;
  if (dropped > 0 && !allow_drops) {
    std::cerr << "utterances were dropped by the duration filter; pass --allow-drops to "
                 "accept\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& manifest_path,
                 const std::string& vocab_path, const std::string& out_dir,
                 std::int64_t steps, std::uint64_t seed, const std::string& resume) {
  vox::TrainConfig cfg = load_train_config(config_path);
  if (steps > 0) cfg.steps = steps;
  if (seed != 0) {
    cfg.seed = seed;
    cfg.sampler.seed = seed;
  }
  vox::Manifest manifest = vox::load_manifest(manifest_path);
  vox::CharacterVocabulary vocab = vocab_path.empty()
                                       ? vox::build_vocabulary({manifest})
                                       : vox::CharacterVocabulary::load(vocab_path);

  vox::Synthesizer model;
  vox::DiscriminatorSet disc;
  std::int64_t resume_step = 0, resume_ag = 0, resume_ad = 0;
  std::string resume_rng;
  if (!resume.empty()) {
    vox::CheckpointMeta meta = vox::load_checkpoint(resume, model, &disc);
    resume_step = meta.global_step;
    resume_ag = meta.adam_gen_steps;
    resume_ad = meta.adam_disc_steps;
    resume_rng = meta.rng_state;
  } else {
    std::vector<std::string> languages(manifest.languages.begin(), manifest.languages.end());
    model = vox::Synthesizer::create(cfg.model, vocab.size(), languages, cfg.seed);
    disc = vox::DiscriminatorSet::create(cfg.seed + 1);
  }
  cfg.sampler.strategy = vox::SamplerConfig::Strategy::Uniform;
  auto result = vox::run_training_loop(model, disc, {manifest}, vocab, cfg, out_dir,
                                       "pretrain", resume_step, resume_ag, resume_ad,
                                       resume_rng);
  std::cout << "final checkpoint: " << result.checkpoint_path << "\n";
  return kExitOk;
}

int cmd_finetune(const std::string& config_path, const std::string& pretrained,
                 const std::string& manifest_path, const std::string& fewshot_path,
                 const std::string& vocab_path, const std::string& out_dir,
                 std::int64_t steps, float lr) {
  vox::TrainConfig cfg = load_train_config(config_path);
  if (steps > 0) cfg.steps = steps;
  cfg.schedule.initial_lr = lr;

  vox::Manifest pre_manifest = vox::load_manifest(manifest_path);
  vox::Manifest fewshot = vox::load_manifest(fewshot_path);
  vox::CharacterVocabulary vocab = vox::CharacterVocabulary::load(vocab_path);

  vox::Synthesizer model;
  vox::DiscriminatorSet disc;
  vox::CheckpointMeta meta = vox::load_checkpoint(pretrained, model, &disc);
  if (vocab.size() != model.vocab_size)
    throw std::invalid_argument("vocabulary size does not match the checkpoint");

  auto result = vox::finetune(model, disc, meta, pre_manifest, fewshot, vocab, cfg, out_dir);
  std::cout << "final checkpoint: " << result.checkpoint_path << "\n";
  return kExitOk;
}

int cmd_synthesize(const std::string& checkpoint, const std::string& requests,
                   const std::string& manifest_path, const std::string& vocab_path,
                   const std::string& out_dir, std::uint64_t seed,
                   const std::string& config_path) {
  vox::Synthesizer model;
  vox::CheckpointMeta meta = vox::load_checkpoint(checkpoint, model);
  if (!config_path.empty()) {
    vox::TrainConfig cfg = load_train_config(config_path);
    if (vox::config_hash(cfg.model) != vox::config_hash(meta.model))
      throw std::invalid_argument("config hash does not match the checkpoint");
  }
  vox::Manifest manifest = vox::load_manifest(manifest_path);
  vox::CharacterVocabulary vocab = vox::CharacterVocabulary::load(vocab_path);

  // root seed folds into every request for one-flag reproducibility
  std::string effective_requests = requests;
  fs::path tmp;
  if (seed != 0) {
    tmp = fs::path(out_dir) / "_requests_seeded.jsonl";
    fs::create_directories(out_dir);
    std::ifstream in(requests);
    if (!in) throw std::runtime_error("cannot open requests file: " + requests);
    std::ofstream out(tmp);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        vox::json j = vox::json::parse(line);
        j["seed"] = j.value("seed", (std::uint64_t)0) ^ seed;
        out << j.dump() << "\n";
      } catch (...) {
        out << line << "\n";  // leave malformed lines for per-request error reporting
      }
    }
    effective_requests = tmp.string();
  }

  auto report = vox::batch_synthesize(effective_requests, out_dir, model, vocab, manifest,
                                      vox::stub_speaker_encoder(model.cfg.spk_emb_dim));
  if (!tmp.empty()) fs::remove(tmp);
  std::cout << "synthesized " << report.succeeded << ", failed " << report.failed << "\n";
  for (const auto& e : report.errors) std::cerr << "error: " << e << "\n";
  return report.failed == 0 ? kExitOk : kExitRuntime;
}

int cmd_inspect(const std::string& checkpoint) {
  vox::CheckpointMeta meta = vox::peek_checkpoint(checkpoint);
  vox::json j{{"model", meta.model},
              {"vocab_size", meta.vocab_size},
              {"languages", meta.languages},
              {"global_step", meta.global_step},
              {"config_hash", vox::config_hash(meta.model)}};
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot multi-speaker multi-lingual voice cloning"};
  app.require_subcommand(1);

  // preprocess
  auto* pp = app.add_subcommand("preprocess", "filter, resample, normalize, cache spectrograms");
  std::string pp_manifest, pp_out, pp_enhance = "none";
  double pp_min = 2.0, pp_max = 15.0;
  bool pp_allow_drops = false;
  int pp_workers = 1;
  pp->add_option("--manifest", pp_manifest)->required();
  pp->add_option("--out", pp_out)->required();
  pp->add_option("--min-dur", pp_min);
  pp->add_option("--max-dur", pp_max);
  pp->add_option("--enhance", pp_enhance, "none|identity");
  pp->add_flag("--allow-drops", pp_allow_drops);
  pp->add_option("--workers", pp_workers);

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "train the base model");
  std::string pt_config, pt_manifest, pt_vocab, pt_out, pt_resume;
  std::int64_t pt_steps = 0;
  std::uint64_t pt_seed = 0;
  pt->add_option("--config", pt_config);
  pt->add_option("--manifest", pt_manifest)->required();
  pt->add_option("--vocab", pt_vocab);
  pt->add_option("--out", pt_out)->required();
  pt->add_option("--steps", pt_steps);
  pt->add_option("--seed", pt_seed);
  pt->add_option("--resume", pt_resume);

  // finetune
  auto* ft = app.add_subcommand("finetune", "few-shot fine-tuning with data mix-up");
  std::string ft_config, ft_pretrained, ft_manifest, ft_fewshot, ft_vocab, ft_out;
  std::int64_t ft_steps = 0;
  float ft_lr = 1e-4f;
  ft->add_option("--config", ft_config);
  ft->add_option("--pretrained", ft_pretrained)->required();
  ft->add_option("--manifest", ft_manifest)->required();
  ft->add_option("--fewshot", ft_fewshot)->required();
  ft->add_option("--vocab", ft_vocab)->required();
  ft->add_option("--out", ft_out)->required();
  ft->add_option("--steps", ft_steps);
  ft->add_option("--lr", ft_lr);

  // synthesize
  auto* sy = app.add_subcommand("synthesize", "batch synthesis from a requests file");
  std::string sy_ckpt, sy_requests, sy_manifest, sy_vocab, sy_out, sy_config;
  std::uint64_t sy_seed = 0;
  sy->add_option("--checkpoint", sy_ckpt)->required();
  sy->add_option("--requests", sy_requests)->required();
  sy->add_option("--manifest", sy_manifest)->required();
  sy->add_option("--vocab", sy_vocab)->required();
  sy->add_option("--out", sy_out)->required();
  sy->add_option("--seed", sy_seed);
  sy->add_option("--config", sy_config, "verify config hash against the checkpoint");

  // inspect-checkpoint
  auto* ic = app.add_subcommand("inspect-checkpoint", "print checkpoint metadata");
  std::string ic_ckpt;
  ic->add_option("checkpoint", ic_ckpt)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (pp->parsed())
      return cmd_preprocess(pp_manifest, pp_out, pp_min, pp_max, pp_enhance, pp_allow_drops,
                            pp_workers);
    if (pt->parsed())
      return cmd_pretrain(pt_config, pt_manifest, pt_vocab, pt_out, pt_steps, pt_seed,
                          pt_resume);
    if (ft->parsed())
      return cmd_finetune(ft_config, ft_pretrained, ft_manifest, ft_fewshot, ft_vocab, ft_out,
                          ft_steps, ft_lr);
    if (sy->parsed())
      return cmd_synthesize(sy_ckpt, sy_requests, sy_manifest, sy_vocab, sy_out, sy_seed,
                            sy_config);
    if (ic->parsed()) return cmd_inspect(ic_ckpt);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
