// Neural components: speaker-aware text encoder, posterior encoder, flow
// decoder with transformer blocks, stochastic duration predictor, vocoder
// generator, discriminators, the speaker-encoder seam and checkpoint I/O.
#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vox/audio.hpp"
#include "vox/config.hpp"
#include "vox/layers.hpp"

namespace vox {

using ad::Mat;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

constexpr float kLog2Pi = 1.8378770664093453f;

// ---------------------------------------------------------------------------
// mel filterbank (triangular, HTK-style mel scale) -> [bands, fft/2+1]

inline Eigen::MatrixXf mel_filterbank(int bands, int fft_size, int sample_rate,
                                      float fmin = 0.0f, float fmax = -1.0f) {
  if (fmax <= 0) fmax = sample_rate / 2.0f;
  auto hz_to_mel = [](float hz) { return 2595.0f * std::log10(1.0f + hz / 700.0f); };
  auto mel_to_hz = [](float mel) { return 700.0f * (std::pow(10.0f, mel / 2595.0f) - 1.0f); };
  const int bins = fft_size / 2 + 1;
  const float mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
  std::vector<float> centers(bands + 2);
  for (int i = 0; i < bands + 2; ++i)
    centers[i] = mel_to_hz(mlo + (mhi - mlo) * i / (bands + 1));
  Eigen::MatrixXf fb = Eigen::MatrixXf::Zero(bands, bins);
  for (int b = 0; b < bands; ++b) {
    const float lo = centers[b], mid = centers[b + 1], hi = centers[b + 2];
    for (int k = 0; k < bins; ++k) {
      const float hz = static_cast<float>(k) * sample_rate / fft_size;
      if (hz > lo && hz < mid)
        fb(b, k) = (hz - lo) / (mid - lo);
      else if (hz >= mid && hz < hi)
        fb(b, k) = (hi - hz) / (hi - mid);
    }
  }
  return fb;
}

// ---------------------------------------------------------------------------
// speaker encoder seam

struct SpeakerEmbedding {
  Eigen::VectorXf vector;  // unit L2 norm
};

using SpeakerEncoderFn = std::function<Eigen::VectorXf(const Waveform&)>;

// Deterministic reference stub: log-mel band means and standard deviations
// projected to spk_emb_dim by a fixed seeded random matrix.
inline SpeakerEncoderFn stub_speaker_encoder(int spk_emb_dim = 256) {
  return [spk_emb_dim](const Waveform& w) {
    constexpr int kBands = 40;
    constexpr int kFft = 1024, kHop = 256, kWin = 1024;
    auto spec = linear_spectrogram(w, kFft, kHop, kWin);
    static const Eigen::MatrixXf fb = mel_filterbank(kBands, kFft, 16000);
    Eigen::MatrixXf mel = (fb * spec.magnitudes).array().max(1e-5f).log();
    Eigen::VectorXf stats(2 * kBands);
    for (int b = 0; b < kBands; ++b) {
      const float mu = mel.row(b).mean();
      const float sd = std::sqrt((mel.row(b).array() - mu).square().mean());
      stats(b) = mu;
      stats(kBands + b) = sd;
    }
    std::mt19937_64 rng(0x5eedbeef);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Eigen::MatrixXf proj(spk_emb_dim, 2 * kBands);
    for (int r = 0; r < proj.rows(); ++r)
      for (int c = 0; c < proj.cols(); ++c) proj(r, c) = g(rng);
    proj /= std::sqrt(static_cast<float>(2 * kBands));
    return Eigen::VectorXf(proj * stats);
  };
}

inline SpeakerEmbedding extract_speaker_embedding(const Waveform& w,
                                                  const SpeakerEncoderFn& encoder) {
  if (w.sample_rate != 16000)
    throw std::invalid_argument("speaker encoder expects 16 kHz audio");
  if (w.duration_s() < 0.5)
    throw std::invalid_argument("reference audio must be at least 0.5 s");
  Eigen::VectorXf v = encoder(w);
  const float n = v.norm();
  if (!(n > 0)) throw std::runtime_error("speaker encoder returned a zero vector");
  return SpeakerEmbedding{v / n};
}

// ---------------------------------------------------------------------------
// text encoder (speaker-aware, language-concatenated character embeddings)

struct TextEncoding {
  Var hidden;        // [T_text, hidden_dim]
  Var prior_mean;    // [T_text, latent_dim]
  Var prior_logstd;  // [T_text, latent_dim]
};

struct TextEncoder {
  nn::Embedding char_emb;
  nn::Embedding lang_emb;
  std::vector<nn::TransformerBlock> blocks;
  nn::Linear spk_proj;
  nn::Linear head;
  int vocab_size = 0;
  int inject_block = 6;  // 1-based
  int latent_dim = 0;

  static TextEncoder create(ParamStore& ps, const ModelConfig& cfg, int vocab_size,
                            int n_languages, std::mt19937_64& rng) {
    TextEncoder e;
    e.vocab_size = vocab_size;
    e.inject_block = cfg.speaker_inject_block;
    e.latent_dim = cfg.latent_dim;
    e.char_emb = nn::Embedding::create(ps, "text.char_emb", vocab_size,
                                       cfg.hidden_dim - cfg.lang_emb_dim, rng);
    e.lang_emb = nn::Embedding::create(ps, "text.lang_emb", n_languages, cfg.lang_emb_dim, rng);
    for (int b = 0; b < cfg.n_text_blocks; ++b)
      e.blocks.push_back(nn::TransformerBlock::create(ps, "text.block" + std::to_string(b),
                                                      cfg.hidden_dim, cfg.n_heads, rng));
    e.spk_proj = nn::Linear::create(ps, "text.spk_proj", cfg.spk_emb_dim, cfg.hidden_dim, rng);
    e.head = nn::Linear::create(ps, "text.head", cfg.hidden_dim, 2 * cfg.latent_dim, rng);
    return e;
  }

  // spk: [1, spk_emb_dim]
  TextEncoding operator()(Tape& t, const std::vector<int>& symbols, int language_index,
                          Var spk) const {
    if (symbols.empty()) throw std::invalid_argument("empty symbol sequence");
    for (int s : symbols)
      if (s < 0 || s >= vocab_size)
        throw std::out_of_range("symbol id out of vocabulary range");
    const int T = static_cast<int>(symbols.size());

    Var ce = char_emb(t, symbols);
    Var le = lang_emb(t, std::vector<int>(1, language_index));
    Var x = ad::concat_cols(ce, ad::broadcast_row(le, T));
    for (size_t b = 0; b < blocks.size(); ++b) {
      if (static_cast<int>(b) + 1 == inject_block)
        x = ad::add(x, ad::broadcast_row(spk_proj(t, spk), T));
      x = blocks[b](t, x);
    }
    Var stats = head(t, x);
    return TextEncoding{x, ad::slice_cols(stats, 0, latent_dim),
                        ad::slice_cols(stats, latent_dim, latent_dim)};
  }
};

// ---------------------------------------------------------------------------
// posterior encoder

struct LatentSequence {
  Var z;                // [T_spec, latent_dim]
  Var posterior_mean;   // same shape
  Var posterior_logstd;
};

inline Var clamp_range(Var x, float lo, float hi) {
  return ad::neg(ad::clamp_min(ad::neg(ad::clamp_min(x, lo)), -hi));
}

struct PosteriorEncoder {
  nn::Linear pre;
  nn::GatedConvStack stack;
  nn::Linear proj;
  int spec_bins = 0;
  int latent_dim = 0;

  static PosteriorEncoder create(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
    PosteriorEncoder e;
    e.spec_bins = cfg.fft_size / 2 + 1;
    e.latent_dim = cfg.latent_dim;
    e.pre = nn::Linear::create(ps, "post.pre", e.spec_bins, cfg.hidden_dim, rng);
    e.stack = nn::GatedConvStack::create(ps, "post.stack", cfg.hidden_dim,
                                         cfg.posterior_layers, cfg.spk_emb_dim, rng);
    e.proj = nn::Linear::create(ps, "post.proj", cfg.hidden_dim, 2 * cfg.latent_dim, rng);
    return e;
  }

  // spec: [F, T]; eps: [T, latent] caller-supplied noise (zeros give the mean)
  LatentSequence operator()(Tape& t, const Eigen::MatrixXf& spec, Var spk,
                            const Mat& eps) const {
    if (spec.rows() != spec_bins)
      throw std::invalid_argument("spectrogram bin count does not match the model config");
    Mat xin = spec.transpose();
    // compress the wide dynamic range of linear magnitudes
    xin = (xin.array() + 1e-5f).log().matrix();
    Var x = pre(t, t.constant(xin));
    x = stack(t, x, spk);
    Var stats = proj(t, x);
    Var mean = ad::slice_cols(stats, 0, latent_dim);
    Var logstd = clamp_range(ad::slice_cols(stats, latent_dim, latent_dim), -10.0f, 10.0f);
    Var z = ad::add(mean, ad::mul(ad::exp_(logstd), t.constant(eps)));
    return LatentSequence{z, mean, logstd};
  }
};

// ---------------------------------------------------------------------------
// flow decoder: affine coupling steps whose transform net is a transformer
// block (residual) followed by a gated convolution block, speaker-conditioned

struct FlowStep {
  nn::Linear pre;
  nn::TransformerBlock tf;
  nn::GatedConvStack conv;
  nn::Linear post;  // zero-initialized: the flow starts as the identity
  int half = 0;

  static FlowStep create(ParamStore& ps, const std::string& name, const ModelConfig& cfg,
                         std::mt19937_64& rng) {
    FlowStep s;
    s.half = cfg.latent_dim / 2;
    s.pre = nn::Linear::create(ps, name + ".pre", s.half, cfg.hidden_dim, rng);
    s.tf = nn::TransformerBlock::create(ps, name + ".tf", cfg.hidden_dim, cfg.n_heads, rng);
    s.conv = nn::GatedConvStack::create(ps, name + ".conv", cfg.hidden_dim, 2,
                                        cfg.spk_emb_dim, rng);
    s.post = nn::Linear::create(ps, name + ".post", cfg.hidden_dim, cfg.latent_dim, rng,
                                /*zero_init=*/true);
    return s;
  }

  // affine parameters from the untransformed half
  std::pair<Var, Var> transform_params(Tape& t, Var xa, Var spk) const {
    Var h = pre(t, xa);
    h = tf(t, h);
    h = conv(t, h, spk);
    Var ms = post(t, h);
    Var m = ad::slice_cols(ms, 0, half);
    Var s = ad::tanh_(ad::slice_cols(ms, half, half));  // bounded log-scale
    return {m, s};
  }
};

struct Flow {
  std::vector<FlowStep> steps;
  int latent_dim = 0;

  static Flow create(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
    Flow f;
    f.latent_dim = cfg.latent_dim;
    for (int i = 0; i < cfg.n_flow_steps; ++i)
      f.steps.push_back(FlowStep::create(ps, "flow.step" + std::to_string(i), cfg, rng));
    return f;
  }

  // returns (f_z, logdet) with logdet a 1x1 Var
  std::pair<Var, Var> forward(Tape& t, Var z, Var spk) const {
    const int half = latent_dim / 2;
    Var logdet = t.constant(Mat::Zero(1, 1));
    Var x = z;
    for (const auto& s : steps) {
      Var xa = ad::slice_cols(x, 0, half);
      Var xb = ad::slice_cols(x, half, half);
      auto [m, sc] = s.transform_params(t, xa, spk);
      Var xb2 = ad::add(ad::mul(xb, ad::exp_(sc)), m);
      logdet = ad::add(logdet, ad::sum(sc));
      x = ad::concat_cols(xb2, xa);  // channel flip
    }
    return {x, logdet};
  }

  std::pair<Var, Var> inverse(Tape& t, Var fz, Var spk) const {
    const int half = latent_dim / 2;
    Var logdet = t.constant(Mat::Zero(1, 1));
    Var x = fz;
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
      // undo the flip, then the coupling
      Var xb2 = ad::slice_cols(x, 0, half);
      Var xa = ad::slice_cols(x, half, half);
      auto [m, sc] = it->transform_params(t, xa, spk);
      Var xb = ad::mul(ad::sub(xb2, m), ad::exp_(ad::neg(sc)));
      logdet = ad::sub(logdet, ad::sum(sc));
      x = ad::concat_cols(xa, xb);
    }
    return {x, logdet};
  }
};

// ---------------------------------------------------------------------------
// stochastic duration predictor: a small conditional normalizing flow over
// (log-duration, auxiliary) pairs with variational dequantization

struct DurationFlowStep {
  nn::Linear l1;
  nn::Linear l2;  // zero-initialized

  static DurationFlowStep create(ParamStore& ps, const std::string& name, int dch,
                                 std::mt19937_64& rng) {
    DurationFlowStep s;
    s.l1 = nn::Linear::create(ps, name + ".l1", dch + 1, dch, rng);
    s.l2 = nn::Linear::create(ps, name + ".l2", dch, 2, rng, /*zero_init=*/true);
    return s;
  }

  std::pair<Var, Var> transform_params(Tape& t, Var cond, Var p) const {
    Var h = ad::leaky_relu(l1(t, ad::concat_cols(cond, p)));
    Var ms = l2(t, h);
    return {ad::slice_cols(ms, 0, 1), ad::tanh_(ad::slice_cols(ms, 1, 1))};
  }
};

struct DurationPredictor {
  nn::Linear cond_proj;
  nn::Linear spk_proj;
  nn::Conv1d cond_conv;
  nn::Linear post1;
  nn::Linear post2;
  std::vector<DurationFlowStep> flow;
  int dch = 32;

  static DurationPredictor create(ParamStore& ps, const ModelConfig& cfg,
                                  std::mt19937_64& rng) {
    DurationPredictor d;
    d.dch = cfg.duration_channels;
    d.cond_proj = nn::Linear::create(ps, "dur.cond", cfg.hidden_dim, d.dch, rng);
    d.spk_proj = nn::Linear::create(ps, "dur.spk", cfg.spk_emb_dim, d.dch, rng);
    d.cond_conv = nn::Conv1d::create(ps, "dur.conv", 3, d.dch, d.dch, rng);
    d.post1 = nn::Linear::create(ps, "dur.post1", d.dch + 1, d.dch, rng);
    d.post2 = nn::Linear::create(ps, "dur.post2", d.dch, 4, rng);
    for (int i = 0; i < cfg.duration_flow_steps; ++i)
      d.flow.push_back(
          DurationFlowStep::create(ps, "dur.flow" + std::to_string(i), d.dch, rng));
    return d;
  }

  Var condition(Tape& t, Var hidden, Var spk) const {
    const int T = static_cast<int>(t.val(hidden).rows());
    Var c = ad::add(cond_proj(t, hidden), ad::broadcast_row(spk_proj(t, spk), T));
    return ad::leaky_relu(cond_conv(t, c));
  }

  // flow over [y, aux] channel pairs; per-position logdet column returned
  std::pair<Var, Var> flow_forward(Tape& t, Var pair, Var cond) const {
    Var logdet = t.constant(Mat::Zero(t.val(pair).rows(), 1));
    Var x = pair;
    for (const auto& s : flow) {
      Var p = ad::slice_cols(x, 0, 1);
      Var q = ad::slice_cols(x, 1, 1);
      auto [m, sc] = s.transform_params(t, cond, p);
      Var q2 = ad::add(ad::mul(q, ad::exp_(sc)), m);
      logdet = ad::add(logdet, sc);
      x = ad::concat_cols(q2, p);
    }
    return {x, logdet};
  }

  Var flow_inverse(Tape& t, Var z, Var cond) const {
    Var x = z;
    for (auto it = flow.rbegin(); it != flow.rend(); ++it) {
      Var q2 = ad::slice_cols(x, 0, 1);
      Var p = ad::slice_cols(x, 1, 1);
      auto [m, sc] = it->transform_params(t, cond, p);
      Var q = ad::mul(ad::sub(q2, m), ad::exp_(ad::neg(sc)));
      x = ad::concat_cols(p, q);
    }
    return x;
  }

  // Negative variational bound on log p(durations | text, speaker).
  Var nll(Tape& t, Var hidden, Var spk, const std::vector<int>& durations,
          std::mt19937_64& rng) const {
    const int T = static_cast<int>(t.val(hidden).rows());
    if (static_cast<int>(durations.size()) != T)
      throw std::invalid_argument("duration count must equal T_text");
    for (int d : durations)
      if (d < 1) throw std::invalid_argument("durations must be >= 1");

    Var cond = condition(t, hidden, spk);
    Mat dmat(T, 1), eps(T, 2);
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int i = 0; i < T; ++i) {
      dmat(i, 0) = static_cast<float>(durations[i]);
      eps(i, 0) = g(rng);
      eps(i, 1) = g(rng);
    }
    Var d = t.constant(dmat);
    Var log_d = t.constant(dmat.array().log().matrix());

    // variational posterior over the dequantization u and the auxiliary
    Var h = ad::leaky_relu(post1(t, ad::concat_cols(cond, log_d)));
    Var stats = post2(t, h);
    Var mu1 = ad::slice_cols(stats, 0, 1);
    Var ls1 = clamp_range(ad::slice_cols(stats, 1, 1), -7.0f, 7.0f);
    Var mu2 = ad::slice_cols(stats, 2, 1);
    Var ls2 = clamp_range(ad::slice_cols(stats, 3, 1), -7.0f, 7.0f);

    Var e1 = t.constant(eps.col(0));
    Var e2 = t.constant(eps.col(1));
    Var v1 = clamp_range(ad::add(mu1, ad::mul(ad::exp_(ls1), e1)), -12.0f, 12.0f);
    Var u = ad::sigmoid(v1);  // dequantization offset in (0,1)
    Var aux = ad::add(mu2, ad::mul(ad::exp_(ls2), e2));

    // log q(u, aux): Gaussian reparameterization densities plus the sigmoid
    // change of variables
    Var logq = ad::sub(ad::scale(ad::add(ad::square(e1), ad::square(e2)), -0.5f),
                       ad::add(ls1, ls2));
    logq = ad::add_const(logq, -kLog2Pi);
    // sigmoid Jacobian: dv/du = 1/(u(1-u)); log u + log(1-u) computed stably
    // as -(softplus(v) + softplus(-v))
    logq = ad::add(logq, ad::add(ad::softplus(v1), ad::softplus(ad::neg(v1))));

    Var w = ad::sub(d, u);      // in (d-1, d)
    Var y = ad::log_(w);
    auto [z, logdet] = flow_forward(t, ad::concat_cols(y, aux), cond);
    Var logp = ad::scale(ad::add_const(ad::sum_cols(ad::square(z)), 2.0f * kLog2Pi), -0.5f);
    logp = ad::add(logp, logdet);
    logp = ad::sub(logp, y);  // d/dw of log w

    return ad::mean(ad::sub(logq, logp));
  }

  std::vector<int> sample(Tape& t, Var hidden, Var spk, float noise_scale, float length_scale,
                          std::mt19937_64& rng) const {
    if (noise_scale < 0) throw std::invalid_argument("noise_scale must be >= 0");
    if (!(length_scale > 0)) throw std::invalid_argument("length_scale must be > 0");
    const int T = static_cast<int>(t.val(hidden).rows());
    Var cond = condition(t, hidden, spk);
    Mat zm(T, 2);
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int i = 0; i < T; ++i) {
      zm(i, 0) = noise_scale * g(rng);
      zm(i, 1) = noise_scale * g(rng);
    }
    Var pair = flow_inverse(t, t.constant(zm), cond);
    std::vector<int> out(T);
    for (int i = 0; i < T; ++i) {
      const float w = std::exp(t.val(pair)(i, 0)) * length_scale;
      int d = static_cast<int>(std::ceil(w));
      out[i] = std::clamp(d, 1, 1000);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// vocoder generator: transposed-convolution upsampling with multi-receptive-
// field residual blocks, bounded output

struct VocoderStage {
  nn::ConvT1d up;
  std::vector<nn::Conv1d> res;  // dilations 1, 3
};

struct Vocoder {
  nn::Conv1d pre;
  nn::Linear spk_proj;
  std::vector<VocoderStage> stages;
  nn::Conv1d post;
  int hop = 256;

  static Vocoder create(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
    Vocoder v;
    v.hop = cfg.hop;
    int ch = cfg.vocoder_channels;
    v.pre = nn::Conv1d::create(ps, "voc.pre", 7, cfg.latent_dim, ch, rng);
    v.spk_proj = nn::Linear::create(ps, "voc.spk", cfg.spk_emb_dim, ch, rng);
    for (size_t i = 0; i < cfg.upsample_factors.size(); ++i) {
      const int out_ch = std::max(4, ch / 2);
      VocoderStage st;
      st.up = nn::ConvT1d::create(ps, "voc.up" + std::to_string(i), cfg.upsample_factors[i],
                                  ch, out_ch, rng);
      for (int d : {1, 3})
        st.res.push_back(nn::Conv1d::create(
            ps, "voc.res" + std::to_string(i) + "d" + std::to_string(d), 3, out_ch, out_ch,
            rng, d));
      v.stages.push_back(st);
      ch = out_ch;
    }
    v.post = nn::Conv1d::create(ps, "voc.post", 7, ch, 1, rng);
    return v;
  }

  // z_slice [T_chunk, latent] -> waveform samples [T_chunk * hop, 1] in (-1,1)
  Var operator()(Tape& t, Var z_slice, Var spk) const {
    const int T = static_cast<int>(t.val(z_slice).rows());
    if (T < 1) throw std::invalid_argument("empty vocoder input");
    Var x = pre(t, z_slice);
    x = ad::add(x, ad::broadcast_row(spk_proj(t, spk), T));
    for (const auto& st : stages) {
      x = st.up(t, ad::leaky_relu(x));
      for (const auto& rc : st.res) x = ad::add(x, rc(t, ad::leaky_relu(x)));
    }
    return ad::tanh_(post(t, ad::leaky_relu(x)));
  }
};

// ---------------------------------------------------------------------------
// discriminators (multi-period + multi-scale), LSGAN-style score maps

struct ConvDiscriminator {
  std::vector<nn::Conv1d> convs;
  nn::Conv1d post;
  int period = 1;  // 1 = scale discriminator
  int pool = 1;

  static ConvDiscriminator create(ParamStore& ps, const std::string& name, int period,
                                  int pool, std::mt19937_64& rng) {
    ConvDiscriminator d;
    d.period = period;
    d.pool = pool;
    const int in_ch = period;
    d.convs.push_back(nn::Conv1d::create(ps, name + ".c0", 5, in_ch, 16, rng));
    d.convs.push_back(nn::Conv1d::create(ps, name + ".c1", 5, 16, 32, rng, 2));
    d.post = nn::Conv1d::create(ps, name + ".post", 3, 32, 1, rng);
    return d;
  }

  // wav [N,1]; appends intermediate feature maps to feats when non-null
  Var operator()(Tape& t, Var wav, std::vector<Var>* feats = nullptr) const {
    Var x = wav;
    if (pool > 1) x = ad::avg_pool_rows(x, pool);
    if (period > 1) {
      const int n = static_cast<int>(t.val(x).rows());
      const int keep = (n / period) * period;
      if (keep < n) x = ad::slice_rows(x, 0, keep);
      x = ad::fold_rows(x, period);
    }
    for (const auto& c : convs) {
      x = ad::leaky_relu(c(t, x));
      if (feats) feats->push_back(x);
    }
    return post(t, x);
  }
};

struct DiscriminatorSet {
  ParamStore params;
  std::vector<ConvDiscriminator> discs;

  DiscriminatorSet() = default;
  DiscriminatorSet(const DiscriminatorSet&) = delete;
  DiscriminatorSet& operator=(const DiscriminatorSet&) = delete;
  DiscriminatorSet(DiscriminatorSet&&) = default;
  DiscriminatorSet& operator=(DiscriminatorSet&&) = default;

  static DiscriminatorSet create(std::uint64_t seed) {
    DiscriminatorSet s;
    std::mt19937_64 rng(seed);
    s.discs.push_back(ConvDiscriminator::create(s.params, "disc.p2", 2, 1, rng));
    s.discs.push_back(ConvDiscriminator::create(s.params, "disc.p3", 3, 1, rng));
    s.discs.push_back(ConvDiscriminator::create(s.params, "disc.s1", 1, 1, rng));
    s.discs.push_back(ConvDiscriminator::create(s.params, "disc.s2", 1, 2, rng));
    return s;
  }
};

// ---------------------------------------------------------------------------
// assembled generator-side model

struct Synthesizer {
  ModelConfig cfg;
  int vocab_size = 0;
  std::vector<std::string> languages;
  ParamStore params;
  TextEncoder text_encoder;
  PosteriorEncoder posterior_encoder;
  Flow flow;
  DurationPredictor duration_predictor;
  Vocoder vocoder;

  Synthesizer() = default;
  Synthesizer(const Synthesizer&) = delete;
  Synthesizer& operator=(const Synthesizer&) = delete;
  Synthesizer(Synthesizer&&) = default;
  Synthesizer& operator=(Synthesizer&&) = default;

  static Synthesizer create(const ModelConfig& cfg, int vocab_size,
                            std::vector<std::string> languages, std::uint64_t seed) {
    cfg.validate();
    Synthesizer s;
    s.cfg = cfg;
    s.vocab_size = vocab_size;
    s.languages = std::move(languages);
    std::mt19937_64 rng(seed);
    s.text_encoder = TextEncoder::create(s.params, cfg, vocab_size,
                                         static_cast<int>(s.languages.size()), rng);
    s.posterior_encoder = PosteriorEncoder::create(s.params, cfg, rng);
    s.flow = Flow::create(s.params, cfg, rng);
    s.duration_predictor = DurationPredictor::create(s.params, cfg, rng);
    s.vocoder = Vocoder::create(s.params, cfg, rng);
    return s;
  }

  int language_index(const std::string& id) const {
    for (size_t i = 0; i < languages.size(); ++i)
      if (languages[i] == id) return static_cast<int>(i);
    std::string known;
    for (const auto& l : languages) known += (known.empty() ? "" : ", ") + l;
    throw std::runtime_error("unknown language '" + id + "' (known: " + known + ")");
  }

  Var speaker_var(Tape& t, const SpeakerEmbedding& spk, bool track_grad = false) const {
    Mat m(1, spk.vector.size());
    m.row(0) = spk.vector.transpose();
    return track_grad ? t.input(m, true) : t.constant(m);
  }
};

// ---------------------------------------------------------------------------
// checkpoint archive: named f32 arrays (+ Adam state) with embedded JSON meta

struct CheckpointMeta {
  ModelConfig model;
  int vocab_size = 0;
  std::vector<std::string> languages;
  std::int64_t global_step = 0;
  std::int64_t adam_gen_steps = 0;
  std::int64_t adam_disc_steps = 0;
  std::string rng_state;  // serialized trainer RNG, empty if not training
};

namespace detail {

inline void write_mat(std::ofstream& f, const Mat& m) {
  for (int c = 0; c < m.cols(); ++c)
    for (int r = 0; r < m.rows(); ++r) {
      const float v = m(r, c);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
}

inline void read_mat(std::ifstream& f, Mat& m) {
  for (int c = 0; c < m.cols(); ++c)
    for (int r = 0; r < m.rows(); ++r) {
      float v;
      f.read(reinterpret_cast<char*>(&v), 4);
      m(r, c) = v;
    }
}

inline void write_store(std::ofstream& f, const ParamStore& ps) {
  const std::uint32_t count = static_cast<std::uint32_t>(ps.all().size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& p : ps.all()) {
    const std::uint32_t nl = static_cast<std::uint32_t>(p.name.size());
    const std::uint32_t rows = static_cast<std::uint32_t>(p.value.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(p.value.cols());
    f.write(reinterpret_cast<const char*>(&nl), 4);
    f.write(p.name.data(), nl);
    f.write(reinterpret_cast<const char*>(&rows), 4);
    f.write(reinterpret_cast<const char*>(&cols), 4);
    write_mat(f, p.value);
    write_mat(f, p.adam_m);
    write_mat(f, p.adam_v);
  }
}

inline void read_store(std::ifstream& f, ParamStore& ps, const std::string& path) {
  std::uint32_t count;
  f.read(reinterpret_cast<char*>(&count), 4);
  if (count != ps.all().size())
    throw std::runtime_error("checkpoint parameter count mismatch: " + path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t nl, rows, cols;
    f.read(reinterpret_cast<char*>(&nl), 4);
    std::string name(nl, '\0');
    f.read(name.data(), nl);
    f.read(reinterpret_cast<char*>(&rows), 4);
    f.read(reinterpret_cast<char*>(&cols), 4);
    ad::Param* p = ps.find(name);
    if (!p) throw std::runtime_error("checkpoint has unknown parameter '" + name + "'");
    if (p->value.rows() != static_cast<int>(rows) || p->value.cols() != static_cast<int>(cols))
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
    read_mat(f, p->value);
    read_mat(f, p->adam_m);
    read_mat(f, p->adam_v);
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                            const ParamStore& gen, const ParamStore* disc = nullptr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  json j{{"model", meta.model},
         {"vocab_size", meta.vocab_size},
         {"languages", meta.languages},
         {"global_step", meta.global_step},
         {"adam_gen_steps", meta.adam_gen_steps},
         {"adam_disc_steps", meta.adam_disc_steps},
         {"rng_state", meta.rng_state},
         {"config_hash", config_hash(meta.model)},
         {"has_discriminator", disc != nullptr}};
  const std::string js = j.dump();
  f.write("VOXC", 4);
  const std::uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t jl = js.size();
  f.write(reinterpret_cast<const char*>(&jl), 8);
  f.write(js.data(), js.size());
  detail::write_store(f, gen);
  if (disc) detail::write_store(f, *disc);
  if (!f) throw std::runtime_error("short write: " + path);
}

inline CheckpointMeta read_checkpoint_meta(std::ifstream& f, const std::string& path,
                                           bool* has_disc = nullptr) {
  char magic[4];
  f.read(magic, 4);
  if (std::strncmp(magic, "VOXC", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t version;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  std::uint64_t jl;
  f.read(reinterpret_cast<char*>(&jl), 8);
  std::string js(jl, '\0');
  f.read(js.data(), jl);
  json j = json::parse(js);
  CheckpointMeta meta;
  j.at("model").get_to(meta.model);
  meta.vocab_size = j.at("vocab_size").get<int>();
  meta.languages = j.at("languages").get<std::vector<std::string>>();
  meta.global_step = j.value("global_step", (std::int64_t)0);
  meta.adam_gen_steps = j.value("adam_gen_steps", (std::int64_t)0);
  meta.adam_disc_steps = j.value("adam_disc_steps", (std::int64_t)0);
  meta.rng_state = j.value("rng_state", std::string());
  if (has_disc) *has_disc = j.value("has_discriminator", false);
  return meta;
}

inline CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_checkpoint_meta(f, path);
}

// Rebuilds a Synthesizer (and optionally discriminators) from an archive.
inline CheckpointMeta load_checkpoint(const std::string& path, Synthesizer& model,
                                      DiscriminatorSet* disc = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  bool has_disc = false;
  CheckpointMeta meta = read_checkpoint_meta(f, path, &has_disc);
  model = Synthesizer::create(meta.model, meta.vocab_size, meta.languages, /*seed=*/0);
  detail::read_store(f, model.params, path);
  if (disc) {
    *disc = DiscriminatorSet::create(0);
    if (has_disc) detail::read_store(f, disc->params, path);
  }
  if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  return meta;
}

}  // namespace vox
