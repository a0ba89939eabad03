// Synthesis path: reference selection, speaker embedding extraction, duration
// prediction, prior expansion, inverse flow, vocoding. MAS and the posterior
// encoder are not used here.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vox/audio.hpp"
#include "vox/config.hpp"
#include "vox/corpus.hpp"
#include "vox/model.hpp"

namespace vox {

struct SynthesisRequest {
  std::string text;
  std::string language_id;
  std::string target_speaker_id;
  std::string reference;  // "random" or an explicit audio path
  std::uint64_t seed = 0;
  float noise_scale = 0.667f;
  float duration_noise_scale = 0.8f;
  float length_scale = 1.0f;

  void validate() const {
    if (text.empty()) throw std::invalid_argument("request text must be nonempty");
    if (!(length_scale > 0)) throw std::invalid_argument("length_scale must be > 0");
    if (noise_scale < 0 || duration_noise_scale < 0)
      throw std::invalid_argument("noise scales must be >= 0");
  }
};

inline void from_json(const json& j, SynthesisRequest& r) {
  r.text = j.at("text").get<std::string>();
  r.language_id = j.at("language").get<std::string>();
  r.target_speaker_id = j.value("speaker", std::string());
  r.reference = j.value("reference", std::string("random"));
  r.seed = j.value("seed", (std::uint64_t)0);
  r.noise_scale = j.value("noise_scale", 0.667f);
  r.duration_noise_scale = j.value("duration_noise_scale", 0.8f);
  r.length_scale = j.value("length_scale", 1.0f);
}

struct SynthesisResult {
  Waveform waveform;
  std::vector<int> durations;
  std::string reference_used;
};

// Seeded-uniform pick among the speaker's utterances.
inline std::string select_reference(const std::string& speaker_id, const Manifest& manifest,
                                    std::uint64_t seed) {
  std::vector<const Utterance*> own;
  for (const auto& u : manifest.utterances)
    if (u.speaker_id == speaker_id) own.push_back(&u);
  if (own.empty()) {
    std::string known;
    for (const auto& s : manifest.speakers) known += (known.empty() ? "" : ", ") + s;
    throw std::runtime_error("unknown speaker '" + speaker_id + "' (known: " + known + ")");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> d(0, own.size() - 1);
  return own[d(rng)]->audio_path;
}

inline SpeakerEmbedding reference_embedding(const std::string& audio_path,
                                            const ModelConfig& cfg,
                                            const SpeakerEncoderFn& encoder) {
  Waveform w = load_wav(audio_path);
  if (w.sample_rate != cfg.sample_rate) w = resample(w, cfg.sample_rate);
  w = normalize_volume(w, cfg.volume_peak);
  return extract_speaker_embedding(w, encoder);
}

inline SynthesisResult synthesize(const SynthesisRequest& req, const Synthesizer& model,
                                  const CharacterVocabulary& vocab, const Manifest& manifest,
                                  const SpeakerEncoderFn& spk_encoder) {
  req.validate();
  const ModelConfig& cfg = model.cfg;
  const int lang = model.language_index(req.language_id);
  std::vector<int> symbols = encode_text(req.text, vocab);
  if (symbols.empty()) throw std::runtime_error("text encoded to an empty symbol sequence");

  const std::string ref = req.reference == "random"
                              ? select_reference(req.target_speaker_id, manifest, req.seed)
                              : req.reference;
  SpeakerEmbedding spk = reference_embedding(ref, cfg, spk_encoder);

  Tape t;
  Var spkv = model.speaker_var(t, spk);
  TextEncoding enc = model.text_encoder(t, symbols, lang, spkv);

  std::mt19937_64 rng(req.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<int> durations = model.duration_predictor.sample(
      t, enc.hidden, spkv, req.duration_noise_scale, req.length_scale, rng);

  Var mu = ad::repeat_rows(enc.prior_mean, durations);
  Var logstd = ad::repeat_rows(enc.prior_logstd, durations);
  const int T = static_cast<int>(t.val(mu).rows());
  ad::Mat eps(T, cfg.latent_dim);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (int r = 0; r < T; ++r)
    for (int c = 0; c < cfg.latent_dim; ++c) eps(r, c) = req.noise_scale * g(rng);
  Var prior_z = ad::add(mu, ad::mul(ad::exp_(logstd), t.constant(eps)));

  auto [z, logdet] = model.flow.inverse(t, prior_z, spkv);
  (void)logdet;
  Var wav = model.vocoder(t, z, spkv);

  SynthesisResult out;
  out.reference_used = ref;
  out.durations = durations;
  out.waveform.sample_rate = cfg.sample_rate;
  const ad::Mat& wv = t.val(wav);
  out.waveform.samples.resize(wv.rows());
  for (int i = 0; i < wv.rows(); ++i) out.waveform.samples[i] = wv(i, 0);
  return out;
}

struct BatchSynthesisReport {
  int succeeded = 0;
  int failed = 0;
  std::vector<std::string> outputs;
  std::vector<std::string> errors;  // one human-readable line per failed request
};

// One WAV + one JSON sidecar per request; failures are isolated per request.
inline BatchSynthesisReport batch_synthesize(const std::string& requests_path,
                                             const std::string& out_dir,
                                             const Synthesizer& model,
                                             const CharacterVocabulary& vocab,
                                             const Manifest& manifest,
                                             const SpeakerEncoderFn& spk_encoder) {
  namespace fs = std::filesystem;
  std::ifstream f(requests_path);
  if (!f) throw std::runtime_error("cannot open requests file: " + requests_path);
  fs::create_directories(out_dir);

  BatchSynthesisReport report;
  std::ofstream err_file;
  std::string line;
  int idx = 0, lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string stem = "request_" + std::to_string(idx++);
    try {
      SynthesisRequest req = json::parse(line).get<SynthesisRequest>();
      SynthesisResult res = synthesize(req, model, vocab, manifest, spk_encoder);
      const std::string wav_path = (fs::path(out_dir) / (stem + ".wav")).string();
      save_wav(res.waveform, wav_path);
      json meta{{"durations", res.durations},
                {"reference_used", res.reference_used},
                {"config_hash", config_hash(model.cfg)},
                {"samples", res.waveform.samples.size()},
                {"sample_rate", res.waveform.sample_rate}};
      std::ofstream mf(fs::path(out_dir) / (stem + ".json"));
      mf << meta.dump(2) << "\n";
      report.outputs.push_back(wav_path);
      ++report.succeeded;
    } catch (const std::exception& e) {
      if (!err_file.is_open()) err_file.open(fs::path(out_dir) / "errors.jsonl");
      json err{{"line", lineno}, {"error", e.what()}};
      err_file << err.dump() << "\n";
      report.errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
      ++report.failed;
    }
  }
  return report;
}

}  // namespace vox
