// Waveform I/O and DSP: mono PCM16 WAV files, band-limited resampling, peak
// volume normalization, linear (magnitude STFT) spectrograms, and the
// pluggable speech-enhancement hook.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

namespace vox {

struct Waveform {
  std::vector<float> samples;  // values in [-1, 1]
  int sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct LinearSpectrogram {
  // magnitudes(f, t): F x T_spec, F = fft_size/2 + 1
  Eigen::MatrixXf magnitudes;
  double frame_hop_s = 0.0;
};

using EnhancementHook = std::function<Waveform(const Waveform&)>;

inline EnhancementHook identity_enhancement() {
  return [](const Waveform& w) { return w; };
}

// ---------------------------------------------------------------------------
// WAV I/O (mono PCM16, little-endian)

inline void save_wav(const Waveform& w, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write wav: " + path);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(static_cast<std::uint32_t>(w.sample_rate));
  u32(static_cast<std::uint32_t>(w.sample_rate * 2));
  u16(2);
  u16(16);
  f.write("data", 4);
  u32(data_bytes);
  for (float s : w.samples) {
    float c = std::clamp(s, -1.0f, 1.0f);
    std::int16_t q = static_cast<std::int16_t>(std::lrintf(c * 32767.0f));
    f.write(reinterpret_cast<const char*>(&q), 2);
  }
  if (!f) throw std::runtime_error("short write: " + path);
}

inline Waveform load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open wav: " + path);
  char tag[5] = {0};
  auto u32 = [&]() {
    std::uint32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto u16 = [&]() {
    std::uint16_t v;
    f.read(reinterpret_cast<char*>(&v), 2);
    return v;
  };
  f.read(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0) throw std::runtime_error("not a RIFF file: " + path);
  u32();
  f.read(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0) throw std::runtime_error("not a WAVE file: " + path);

  Waveform w;
  int channels = 1, bits = 16;
  bool got_fmt = false;
  while (f.read(tag, 4)) {
    std::uint32_t size = u32();
    std::string chunk(tag, 4);
    if (chunk == "fmt ") {
      std::uint16_t format = u16();
      channels = u16();
      w.sample_rate = static_cast<int>(u32());
      u32();
      u16();
      bits = u16();
      if (size > 16) f.seekg(size - 16, std::ios::cur);
      if (format != 1 || bits != 16)
        throw std::runtime_error("only PCM16 wav supported: " + path);
      got_fmt = true;
    } else if (chunk == "data") {
      if (!got_fmt) throw std::runtime_error("data chunk before fmt: " + path);
      size_t n = size / 2;
      std::vector<std::int16_t> raw(n);
      f.read(reinterpret_cast<char*>(raw.data()), size);
      size_t frames = n / channels;
      w.samples.resize(frames);
      for (size_t i = 0; i < frames; ++i) {
        // downmix to mono
        int acc = 0;
        for (int c = 0; c < channels; ++c) acc += raw[i * channels + c];
        w.samples[i] = static_cast<float>(acc) / (channels * 32768.0f);
      }
      return w;
    } else {
      f.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw std::runtime_error("no data chunk in wav: " + path);
}

// ---------------------------------------------------------------------------
// Transforms

// Windowed-sinc resampler. Output length = round(N * target / input).
inline Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate < 1000) throw std::invalid_argument("target_rate must be >= 1000 Hz");
  if (w.samples.empty()) throw std::invalid_argument("empty waveform");
  if (target_rate == w.sample_rate) return w;

  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const size_t out_n = static_cast<size_t>(std::llround(w.samples.size() * ratio));
  const int taps = 32;
  // cutoff relative to the input Nyquist; lowered when downsampling
  const double fc = std::min(1.0, ratio) * 0.95;

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_n);
  const auto& x = w.samples;
  const long n = static_cast<long>(x.size());
  for (size_t j = 0; j < out_n; ++j) {
    const double p = j / ratio;
    const long k0 = static_cast<long>(std::floor(p)) - taps + 1;
    const long k1 = static_cast<long>(std::floor(p)) + taps;
    double acc = 0.0;
    for (long k = std::max(0L, k0); k <= std::min(n - 1, k1); ++k) {
      const double d = p - k;
      double h;
      if (std::abs(d) < 1e-12) {
        h = fc;
      } else {
        h = fc * std::sin(std::numbers::pi * fc * d) / (std::numbers::pi * fc * d);
      }
      // Hann-windowed
      h *= 0.5 * (1.0 + std::cos(std::numbers::pi * d / taps));
      acc += x[k] * h;
    }
    out.samples[j] = static_cast<float>(acc);
  }
  return out;
}

// Scales by a single positive scalar so the peak equals target_peak.
inline Waveform normalize_volume(const Waveform& w, float target_peak = 0.95f) {
  if (!(target_peak > 0.0f && target_peak <= 1.0f))
    throw std::invalid_argument("target_peak must be in (0, 1]");
  float peak = 0.0f;
  for (float s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak <= 0.0f) throw std::runtime_error("cannot normalize an all-zero waveform");
  Waveform out = w;
  const float g = target_peak / peak;
  for (float& s : out.samples) s *= g;
  return out;
}

inline std::vector<float> hann_periodic(int win) {
  std::vector<float> h(win);
  for (int i = 0; i < win; ++i)
    h[i] = 0.5f - 0.5f * std::cos(2.0 * std::numbers::pi * i / win);
  return h;
}

// Magnitude STFT. Reflection-padded by fft_size/2 on both sides so
// T_spec = floor(N / hop) + 1.
inline LinearSpectrogram linear_spectrogram(const Waveform& w, int fft_size, int hop, int win) {
  if (!(hop <= win && win <= fft_size))
    throw std::invalid_argument("need hop <= win <= fft_size");
  const long n = static_cast<long>(w.samples.size());
  if (n < win) throw std::runtime_error("waveform shorter than the analysis window");

  const int pad = fft_size / 2;
  std::vector<float> padded(n + 2 * pad);
  auto reflect = [&](long i) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * (n - 1) - i;
    }
    return w.samples[i];
  };
  for (long i = 0; i < (long)padded.size(); ++i) padded[i] = reflect(i - pad);

  const int frames = static_cast<int>(n / hop) + 1;
  const int bins = fft_size / 2 + 1;
  const auto window = hann_periodic(win);
  const int woff = (fft_size - win) / 2;  // center the window in the FFT frame

  Eigen::MatrixXf mags(bins, frames);
  Eigen::FFT<float> fft;
  std::vector<float> frame(fft_size);
  std::vector<std::complex<float>> spec(fft_size);
  for (int t = 0; t < frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0f);
    const long start = static_cast<long>(t) * hop + pad - fft_size / 2;
    for (int i = 0; i < win; ++i) {
      const long src = start + woff + i;
      if (src >= 0 && src < (long)padded.size()) frame[woff + i] = padded[src] * window[i];
    }
    fft.fwd(spec, frame);
    for (int b = 0; b < bins; ++b) mags(b, t) = std::abs(spec[b]);
  }
  LinearSpectrogram out;
  out.magnitudes = std::move(mags);
  out.frame_hop_s = static_cast<double>(hop) / w.sample_rate;
  return out;
}

// Applies the enhancement hook and re-asserts the Waveform contract:
// same rate, length within one frame hop, samples in [-1, 1].
inline Waveform enhance(const Waveform& w, const EnhancementHook& hook, int hop = 256) {
  Waveform out = hook(w);
  if (out.sample_rate != w.sample_rate)
    throw std::runtime_error("enhancement hook changed the sample rate");
  const long dlen = std::labs(static_cast<long>(out.samples.size()) -
                              static_cast<long>(w.samples.size()));
  if (dlen > hop)
    throw std::runtime_error("enhancement hook changed the length by more than one hop");
  for (float s : out.samples)
    if (!(s >= -1.0f && s <= 1.0f))
      throw std::runtime_error("enhancement hook produced samples outside [-1, 1]");
  return out;
}

// ---------------------------------------------------------------------------
// Spectrogram cache: {magic "LSPC", F: u32, T: u32, hop_s: f64} + row-major f32

inline void save_spectrogram(const LinearSpectrogram& s, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write spectrogram cache: " + path);
  f.write("LSPC", 4);
  const std::uint32_t F = static_cast<std::uint32_t>(s.magnitudes.rows());
  const std::uint32_t T = static_cast<std::uint32_t>(s.magnitudes.cols());
  f.write(reinterpret_cast<const char*>(&F), 4);
  f.write(reinterpret_cast<const char*>(&T), 4);
  f.write(reinterpret_cast<const char*>(&s.frame_hop_s), 8);
  for (std::uint32_t r = 0; r < F; ++r)
    for (std::uint32_t c = 0; c < T; ++c) {
      const float v = s.magnitudes(r, c);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
}

inline LinearSpectrogram load_spectrogram(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open spectrogram cache: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::strncmp(magic, "LSPC", 4) != 0)
    throw std::runtime_error("bad spectrogram cache magic: " + path);
  std::uint32_t F, T;
  double hop_s;
  f.read(reinterpret_cast<char*>(&F), 4);
  f.read(reinterpret_cast<char*>(&T), 4);
  f.read(reinterpret_cast<char*>(&hop_s), 8);
  LinearSpectrogram s;
  s.frame_hop_s = hop_s;
  s.magnitudes.resize(F, T);
  for (std::uint32_t r = 0; r < F; ++r)
    for (std::uint32_t c = 0; c < T; ++c) {
      float v;
      f.read(reinterpret_cast<char*>(&v), 4);
      s.magnitudes(r, c) = v;
    }
  if (!f) throw std::runtime_error("truncated spectrogram cache: " + path);
  return s;
}

}  // namespace vox
