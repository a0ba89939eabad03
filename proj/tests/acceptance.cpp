// Acceptance suite: one pass/fail line per criterion, exit 0 only if all pass.
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "synth_corpus.hpp"
#include "vox/align.hpp"
#include "vox/infer.hpp"
#include "vox/train.hpp"

using namespace vox;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", ok ? "PASS" : "FAIL", criterion, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Eigen::MatrixXf random_ll(int S, int T, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 2.0f);
  Eigen::MatrixXf ll(S, T);
  for (int s = 0; s < S; ++s)
    for (int t = 0; t < T; ++t) ll(s, t) = g(rng);
  return ll;
}

SpeakerEmbedding random_speaker(int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  Eigen::VectorXf v(dim);
  for (int i = 0; i < dim; ++i) v(i) = g(rng);
  return SpeakerEmbedding{v / v.norm()};
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// ---------------------------------------------------------------------------

void c1_mas_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(42);
  bool ok = true;
  for (int trial = 0; trial < 100 && ok; ++trial) {
    const int S = std::uniform_int_distribution<int>(1, 8)(rng);
    const int T = std::uniform_int_distribution<int>(S, 20)(rng);
    auto ll = random_ll(S, T, rng);
    const double fast = mas(ll).score(ll);
    const double slow = mas_bruteforce(ll).score(ll);
    ok = std::abs(fast - slow) < 1e-4;
  }
  const double dt = seconds_since(t0);
  ok = ok && dt < 10.0;
  char buf[96];
  std::snprintf(buf, sizeof buf, "100 matrices, %.2f s", dt);
  report(1, "MAS matches brute-force oracle", ok, buf);
}

void c2_noise_decay() {
  NoiseSchedule sched{ModelConfig{}.mas_noise_initial, ModelConfig{}.mas_noise_decay};
  bool ok = true;
  float prev = sched.scale(0);
  for (int step = 0; step <= 10000; step += 50) {
    ok = ok && sched.scale(step) <= prev + 1e-12f;
    prev = sched.scale(step);
  }
  const std::int64_t exhausted =
      static_cast<std::int64_t>(sched.initial_scale / sched.decay_per_step);
  ok = ok && exhausted == 5000 && sched.scale(exhausted) == 0.0f;

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20 && ok; ++trial) {
    const int S = std::uniform_int_distribution<int>(1, 8)(rng);
    const int T = std::uniform_int_distribution<int>(S, 20)(rng);
    auto ll = random_ll(S, T, rng);
    const std::int64_t step = exhausted + trial * 997;
    ok = noisy_mas(ll, sched, step, rng()).path == mas(ll).path;
  }
  report(2, "MAS noise schedule decays to exact equivalence", ok,
         "non-increasing, exhausted at step 5000, 20 matrices");
}

void c3_flow_invertibility() {
  auto model = Synthesizer::create(ModelConfig{}, 20, {"l1"}, 19);
  {
    std::mt19937_64 prng(23);
    std::normal_distribution<float> g(0.0f, 0.05f);
    for (auto& p : model.params.all())
      if (p.name.find("flow.") != std::string::npos &&
          p.name.find(".post") != std::string::npos)
        for (int r = 0; r < p.value.rows(); ++r)
          for (int c = 0; c < p.value.cols(); ++c) p.value(r, c) = g(prng);
  }
  auto spk = random_speaker(model.cfg.spk_emb_dim, 8);
  std::mt19937_64 rng(9);
  std::normal_distribution<float> g(0.0f, 1.0f);
  float worst_rt = 0, worst_ld = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int T = std::uniform_int_distribution<int>(1, 128)(rng);
    ad::Mat z(T, model.cfg.latent_dim);
    for (int r = 0; r < T; ++r)
      for (int c = 0; c < z.cols(); ++c) z(r, c) = g(rng);
    Tape t;
    Var spkv = model.speaker_var(t, spk);
    auto [fz, ld_f] = model.flow.forward(t, t.constant(z), spkv);
    auto [back, ld_i] = model.flow.inverse(t, fz, spkv);
    worst_rt = std::max(worst_rt, (t.val(back) - z).cwiseAbs().maxCoeff());
    worst_ld = std::max(worst_ld, std::abs(t.val(ld_f)(0, 0) + t.val(ld_i)(0, 0)));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "max round-trip %.2e, max logdet sum %.2e", worst_rt,
                worst_ld);
  report(3, "flow invertibility on 50 sequences", worst_rt < 1e-4f && worst_ld < 1e-4f, buf);
}

void c4_speaker_liveness() {
  auto model = Synthesizer::create(ModelConfig{}, 20, {"l1"}, 11);
  auto spk = random_speaker(model.cfg.spk_emb_dim, 3);
  const std::vector<int> symbols{2, 3, 4, 5, 6};

  auto loss_value = [&](const SpeakerEmbedding& s) {
    Tape t;
    Var spkv = model.speaker_var(t, s);
    TextEncoding enc = model.text_encoder(t, symbols, 0, spkv);
    return t.val(ad::sum(ad::square(enc.hidden)))(0, 0);
  };

  Tape t;
  Var spkv = model.speaker_var(t, spk, /*track_grad=*/true);
  TextEncoding enc = model.text_encoder(t, symbols, 0, spkv);
  t.backward(ad::sum(ad::square(enc.hidden)));
  const ad::Mat& g = t.grad(spkv);
  bool ok = g.norm() > 0.0f;

  float worst_rel = 0;
  const float h = 1e-2f;
  for (int coord : {0, 17, 200}) {
    SpeakerEmbedding up = spk, dn = spk;
    up.vector(coord) += h;
    dn.vector(coord) -= h;
    const float fd = (loss_value(up) - loss_value(dn)) / (2 * h);
    const float ag = g(0, coord);
    worst_rel = std::max(worst_rel,
                         std::abs(ag - fd) / std::max(1.0f, std::abs(ag) + std::abs(fd)));
  }
  ok = ok && worst_rel < 1e-2f;
  char buf[96];
  std::snprintf(buf, sizeof buf, "grad norm %.3f, worst FD rel err %.2e", g.norm(), worst_rel);
  report(4, "speaker-injection gradient is live", ok, buf);
}

void c5_balanced_sampler() {
  Manifest m;
  int idx = 0;
  auto add_speaker = [&](const std::string& spk, int utts) {
    for (int u = 0; u < utts; ++u) {
      Utterance utt{"u" + std::to_string(idx++) + ".wav", "t", spk, "l1", 3.0};
      m.add(utt);
    }
  };
  for (int i = 0; i < 14; ++i) add_speaker("pre_" + std::to_string(i), 20 + i);
  for (int i = 0; i < 9; ++i) add_speaker("few_" + std::to_string(i), 4);

  SamplerConfig cfg;
  cfg.seed = 4;
  UtteranceSampler sampler({m}, cfg);
  std::map<std::string, int> counts;
  const int draws = 23000;
  for (int i = 0; i < draws; ++i) ++counts[sampler.next().speaker_id];
  const double expected = static_cast<double>(draws) / 23;
  double chi2 = 0;
  for (const auto& spk : m.speakers) {
    const double diff = counts[spk] - expected;
    chi2 += diff * diff / expected;
  }

  Manifest skew;
  idx = 0;
  for (int u = 0; u < 100; ++u) {
    Utterance utt{"a" + std::to_string(idx++) + ".wav", "t", "A", "l1", 3.0};
    skew.add(utt);
  }
  for (int u = 0; u < 5; ++u) {
    Utterance utt{"b" + std::to_string(idx++) + ".wav", "t", "B", "l1", 3.0};
    skew.add(utt);
  }
  SamplerConfig cfg2;
  cfg2.seed = 5;
  UtteranceSampler sampler2({skew}, cfg2);
  int a = 0;
  for (int i = 0; i < 10000; ++i) a += sampler2.next().speaker_id == "A";
  const double freq = a / 10000.0;

  const bool ok = chi2 < 48.268 && freq >= 0.47 && freq <= 0.53;
  char buf[96];
  std::snprintf(buf, sizeof buf, "chi-square %.2f < 48.268, skew freq %.3f", chi2, freq);
  report(5, "speaker-balanced sampling", ok, buf);
}

void c6_schedule() {
  ScheduleConfig pre;
  ScheduleConfig ft;
  ft.initial_lr = 1e-4f;
  const bool ok = lr_at(0, pre) == 2e-4f && lr_at(1, pre) == 2e-4f * 0.999875f &&
                  std::abs(lr_at(1, pre) - 1.99975e-4f) < 1e-10f && lr_at(0, ft) == 1e-4f;
  char buf[96];
  std::snprintf(buf, sizeof buf, "lr_at(0)=%.6e, lr_at(1)=%.6e, finetune %.6e", lr_at(0, pre),
                lr_at(1, pre), lr_at(0, ft));
  report(6, "learning-rate schedule constants", ok, buf);
}

// shared state between criteria 7-9
struct PipelineState {
  synth::Corpus pre, few;
  CharacterVocabulary vocab;
  std::string pretrain_ckpt, finetune_ckpt;
  std::map<std::string, std::int64_t> finetune_draws;
  fs::path root;
};

float mean_total_loss(Synthesizer& model, DiscriminatorSet& disc, const TrainConfig& cfg,
                      const Manifest& manifest, const CharacterVocabulary& vocab,
                      std::int64_t at_step) {
  Trainer trainer(model, disc, cfg);
  trainer.set_global_step(at_step);
  ItemCache cache(model.cfg, vocab, model, stub_speaker_encoder(model.cfg.spk_emb_dim));
  float sum = 0;
  for (const auto& u : manifest.utterances) sum += trainer.compute_losses(cache.get(u)).total;
  return sum / static_cast<float>(manifest.utterances.size());
}

void c7_overfit(PipelineState& st) {
  const auto t0 = Clock::now();
  st.root = fs::temp_directory_path() / "vox_acceptance";
  fs::remove_all(st.root);
  // 20 utterances, 3 speakers, 2 languages
  st.pre = synth::build_corpus((st.root / "pre").string(),
                               {{"spk_low", "l1", 120.0f, 7, 0.8},
                                {"spk_mid", "l1", 200.0f, 7, 0.8},
                                {"spk_high", "l2", 320.0f, 6, 0.8}},
                               1001);
  st.few = synth::build_corpus((st.root / "few").string(), synth::fewshot_specs(4, 0.8), 1002);
  st.vocab = build_vocabulary({st.pre.manifest, st.few.manifest});

  TrainConfig cfg;
  cfg.steps = 500;
  cfg.checkpoint_every = 0;
  cfg.log_every = 50;
  cfg.seed = 7;
  cfg.sampler.seed = 7;
  cfg.sampler.batch_size = 8;

  auto model = Synthesizer::create(cfg.model, st.vocab.size(), {"l1", "l2"}, 70);
  auto disc = DiscriminatorSet::create(71);
  const float before = mean_total_loss(model, disc, cfg, st.pre.manifest, st.vocab, 0);

  auto run = pretrain(model, disc, st.pre.manifest, st.vocab, cfg, (st.root / "pt").string());
  st.pretrain_ckpt = run.checkpoint_path;

  const float after = mean_total_loss(model, disc, cfg, st.pre.manifest, st.vocab, 500);
  const double dt = seconds_since(t0);
  const bool ok = after <= 0.5f * before && dt < 900.0;
  char buf[128];
  std::snprintf(buf, sizeof buf, "mean total %.3f -> %.3f (%.1f%% drop), %.0f s", before,
                after, 100.0 * (1.0 - after / before), dt);
  report(7, "500-step overfit on the synthetic corpus", ok, buf);
}

// Mean cosine between the synthesized voice and each few-shot reference.
float clone_similarity(const std::string& ckpt_path, const PipelineState& st) {
  Synthesizer model;
  load_checkpoint(ckpt_path, model);
  auto encoder = stub_speaker_encoder(model.cfg.spk_emb_dim);

  float sum = 0;
  for (const auto& u : st.few.manifest.utterances) {
    SynthesisRequest req;
    req.text = "abcdefg abcdefg abcdefg abcd";
    req.language_id = "l1";
    req.reference = u.audio_path;
    req.noise_scale = 0.0f;
    req.duration_noise_scale = 0.0f;
    req.length_scale = 3.0f;
    auto res = synthesize(req, model, st.vocab, st.few.manifest, encoder);

    auto ref_emb = extract_speaker_embedding(load_wav(u.audio_path), encoder);
    auto out_emb = extract_speaker_embedding(res.waveform, encoder);
    sum += ref_emb.vector.dot(out_emb.vector);
  }
  return sum / static_cast<float>(st.few.manifest.utterances.size());
}

void c8_finetune(PipelineState& st) {
  Synthesizer model;
  DiscriminatorSet disc;
  CheckpointMeta meta = load_checkpoint(st.pretrain_ckpt, model, &disc);

  const float sim_before = clone_similarity(st.pretrain_ckpt, st);

  TrainConfig cfg;
  cfg.steps = 200;
  cfg.checkpoint_every = 0;
  cfg.log_every = 50;
  cfg.seed = 8;
  cfg.sampler.seed = 8;
  cfg.sampler.batch_size = 8;
  cfg.schedule.initial_lr = 1e-4f;
  auto run = finetune(model, disc, meta, st.pre.manifest, st.few.manifest, st.vocab, cfg,
                      (st.root / "ft").string());
  st.finetune_ckpt = run.checkpoint_path;
  st.finetune_draws = run.speaker_draws;

  bool covered = st.finetune_draws.size() == 4;
  for (const char* spk : {"spk_low", "spk_mid", "spk_high", "spk_new"})
    covered = covered && st.finetune_draws.count(spk) && st.finetune_draws.at(spk) > 0;

  const float sim_after = clone_similarity(st.finetune_ckpt, st);
  const bool ok = covered && sim_after > sim_before;
  char buf[128];
  std::snprintf(buf, sizeof buf, "4/4 speakers drawn, clone cosine %.4f -> %.4f", sim_before,
                sim_after);
  report(8, "few-shot fine-tune with mix-up improves cloning", ok, buf);
}

void c9_inference(PipelineState& st) {
  Synthesizer model;
  load_checkpoint(st.finetune_ckpt, model);
  auto encoder = stub_speaker_encoder(model.cfg.spk_emb_dim);
  Manifest mixed = mixup_datasets(st.pre.manifest, st.few.manifest);

  // zero-noise determinism, byte-identical files
  SynthesisRequest req;
  req.text = "abc defg ab";
  req.language_id = "l1";
  req.target_speaker_id = "spk_mid";
  req.reference = "random";
  req.seed = 3;
  req.noise_scale = 0.0f;
  req.duration_noise_scale = 0.0f;
  auto r1 = synthesize(req, model, st.vocab, mixed, encoder);
  auto r2 = synthesize(req, model, st.vocab, mixed, encoder);
  const std::string w1 = (st.root / "det1.wav").string(), w2 = (st.root / "det2.wav").string();
  save_wav(r1.waveform, w1);
  save_wav(r2.waveform, w2);
  bool ok = read_bytes(w1) == read_bytes(w2) && !r1.waveform.samples.empty();

  // length contract on 20 random requests
  std::mt19937_64 rng(17);
  const std::vector<std::string> speakers{"spk_low", "spk_mid", "spk_high", "spk_new"};
  for (int i = 0; i < 20 && ok; ++i) {
    SynthesisRequest rr;
    const bool l2 = rng() % 2 == 0;
    rr.language_id = l2 ? "l2" : "l1";
    const std::string chars = l2 ? "mnopqrs" : "abcdefg";
    const int len = 4 + static_cast<int>(rng() % 12);
    for (int c = 0; c < len; ++c) rr.text += chars[rng() % chars.size()];
    rr.target_speaker_id = speakers[rng() % speakers.size()];
    rr.reference = "random";
    rr.seed = rng();
    auto r = synthesize(rr, model, st.vocab, mixed, encoder);
    int total = 0;
    for (int d : r.durations) total += d;
    ok = r.waveform.samples.size() ==
         static_cast<size_t>(total) * static_cast<size_t>(model.cfg.hop);
  }

  // cross-lingual: few-shot speaker (adapted on l1 only) speaking l2
  SynthesisRequest xl;
  xl.text = "mno pqrs mn";
  xl.language_id = "l2";
  xl.target_speaker_id = "spk_new";
  xl.reference = "random";
  xl.seed = 5;
  auto xr = synthesize(xl, model, st.vocab, mixed, encoder);
  ok = ok && !xr.waveform.samples.empty();

  report(9, "inference contracts", ok,
         "byte-identical zero-noise output, 20 length checks, cross-lingual clone");
}

void c10_preprocessing() {
  // duration filter boundary set
  Manifest m;
  int i = 0;
  for (double d : {1.999, 2.0, 2.001, 14.999, 15.0, 15.001}) {
    Utterance u{"u" + std::to_string(i++) + ".wav", "t", "A", "l1", d};
    m.add(u);
  }
  Manifest kept = filter_by_duration(m, 2.0, 15.0);
  bool ok = kept.utterances.size() == 4 && kept.utterances.front().duration_s == 2.0 &&
            kept.utterances.back().duration_s == 15.0;

  // 440 Hz resample peak
  Waveform w;
  w.sample_rate = 22050;
  w.samples.resize(22050);
  for (size_t n = 0; n < w.samples.size(); ++n)
    w.samples[n] = 0.5f * std::sin(2.0 * std::numbers::pi * 440.0 * n / 22050);
  Waveform r = resample(w, 16000);
  Eigen::FFT<float> fft;
  std::vector<std::complex<float>> spec;
  std::vector<float> x(r.samples.begin(), r.samples.end());
  fft.fwd(spec, x);
  int best = 0;
  float best_mag = 0;
  for (size_t k = 0; k < spec.size() / 2; ++k)
    if (std::abs(spec[k]) > best_mag) {
      best_mag = std::abs(spec[k]);
      best = static_cast<int>(k);
    }
  const double peak_hz = static_cast<double>(best) * 16000 / x.size();
  ok = ok && std::abs(peak_hz - 440.0) <= 1.0;

  // spectrogram shape for 50 random lengths
  std::mt19937_64 rng(29);
  bool shapes = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1024 + static_cast<int>(rng() % (16 * 1024));
    Waveform s;
    s.sample_rate = 16000;
    s.samples.resize(n);
    std::uniform_real_distribution<float> d(-0.5f, 0.5f);
    for (auto& v : s.samples) v = d(rng);
    auto sp = linear_spectrogram(s, 1024, 256, 1024);
    shapes = shapes && sp.magnitudes.rows() == 513 && sp.magnitudes.cols() == n / 256 + 1;
  }
  ok = ok && shapes;
  char buf[96];
  std::snprintf(buf, sizeof buf, "filter [2,15] exact, 440 Hz peak %.2f Hz, 50 shapes",
                peak_hz);
  report(10, "preprocessing contracts", ok, buf);
}

}  // namespace

int main() {
  c1_mas_oracle();
  c2_noise_decay();
  c3_flow_invertibility();
  c4_speaker_liveness();
  c5_balanced_sampler();
  c6_schedule();
  PipelineState st;
  c7_overfit(st);
  c8_finetune(st);
  c9_inference(st);
  c10_preprocessing();
  if (!st.root.empty()) fs::remove_all(st.root);
  std::printf("%s\n", g_failures == 0 ? "acceptance: ALL PASS" : "acceptance: FAILURES");
  return g_failures == 0 ? 0 : 1;
}
