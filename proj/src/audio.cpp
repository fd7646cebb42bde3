#include "avobj/audio.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace avobj::audio {

namespace {

std::vector<double> hann_window(Index n) {
  // Periodic form, the usual choice for analysis/synthesis pairs.
  std::vector<double> w(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                             static_cast<double>(n));
  return w;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Wav read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open wav: " + path);
  char riff[4], wave[4];
  is.read(riff, 4);
  const std::uint32_t riff_size = read_pod<std::uint32_t>(is);
  (void)riff_size;
  is.read(wave, 4);
  if (!is || std::memcmp(riff, "RIFF", 4) != 0 ||
      std::memcmp(wave, "WAVE", 4) != 0)
    throw data_error("not a RIFF/WAVE file: " + path);

  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  Wav out;
  while (is) {
    char id[4];
    is.read(id, 4);
    if (!is) break;
    const std::uint32_t size = read_pod<std::uint32_t>(is);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      const std::uint16_t format = read_pod<std::uint16_t>(is);
      channels = read_pod<std::uint16_t>(is);
      rate = read_pod<std::uint32_t>(is);
      read_pod<std::uint32_t>(is);  // byte rate
      read_pod<std::uint16_t>(is);  // block align
      bits = read_pod<std::uint16_t>(is);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      if (format != 1 || bits != 16)
        throw data_error(path + ": only PCM16 wav is supported");
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw data_error(path + ": data chunk before fmt");
      const Index n = static_cast<Index>(size) / 2;
      std::vector<std::int16_t> raw(static_cast<std::size_t>(n));
      is.read(reinterpret_cast<char*>(raw.data()), size);
      if (!is) throw data_error(path + ": truncated data chunk");
      const Index frames = n / channels;
      out.samples.resize(static_cast<std::size_t>(frames));
      for (Index i = 0; i < frames; ++i) {
        double acc = 0;
        for (Index c = 0; c < channels; ++c)
          acc += raw[static_cast<std::size_t>(i * channels + c)];
        out.samples[static_cast<std::size_t>(i)] =
            static_cast<float>(acc / channels / 32768.0);
      }
      out.sample_rate = static_cast<Index>(rate);
      return out;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw data_error(path + ": no data chunk");
}

void write_wav(const std::string& path, const Wav& wav) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open " + path + " for writing");
  const std::uint32_t data_size =
      static_cast<std::uint32_t>(wav.samples.size() * 2);
  os.write("RIFF", 4);
  write_pod<std::uint32_t>(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_pod<std::uint32_t>(os, 16);
  write_pod<std::uint16_t>(os, 1);  // PCM
  write_pod<std::uint16_t>(os, 1);  // mono
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(wav.sample_rate));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(wav.sample_rate * 2));
  write_pod<std::uint16_t>(os, 2);
  write_pod<std::uint16_t>(os, 16);
  os.write("data", 4);
  write_pod<std::uint32_t>(os, data_size);
  for (const float s : wav.samples) {
    // Scale matches the reader's /32768; clamp keeps full scale symmetric.
    const long q = std::lround(static_cast<double>(s) * 32768.0);
    write_pod<std::int16_t>(
        os, static_cast<std::int16_t>(std::clamp(q, -32767L, 32767L)));
  }
  if (!os) throw data_error("short write to " + path);
}

Spectrogram stft(const std::vector<float>& x, const StftConfig& cfg) {
  if (static_cast<Index>(x.size()) < cfg.window)
    throw data_error("signal shorter than one analysis window");
  Spectrogram spec;
  spec.cfg = cfg;
  spec.frames = 1 + (static_cast<Index>(x.size()) - cfg.window) / cfg.hop;
  spec.bins = cfg.n_fft / 2 + 1;
  spec.data.resize(static_cast<std::size_t>(spec.frames * spec.bins));

  const std::vector<double> win = hann_window(cfg.window);
  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft), 0.0);
  std::vector<std::complex<double>> spectrum;
  for (Index t = 0; t < spec.frames; ++t) {
    const Index start = t * cfg.hop;
    for (Index i = 0; i < cfg.window; ++i)
      frame[static_cast<std::size_t>(i)] =
          static_cast<double>(x[static_cast<std::size_t>(start + i)]) *
          win[static_cast<std::size_t>(i)];
    std::fill(frame.begin() + cfg.window, frame.end(), 0.0);
    fft.fwd(spectrum, frame);
    for (Index k = 0; k < spec.bins; ++k)
      spec.at(t, k) = std::complex<float>(
          static_cast<float>(spectrum[static_cast<std::size_t>(k)].real()),
          static_cast<float>(spectrum[static_cast<std::size_t>(k)].imag()));
  }
  return spec;
}

Spectrogram stft_frames(const std::vector<float>& x, Index frames,
                        const StftConfig& cfg) {
  if (frames < 1) throw config_error("stft_frames needs at least one frame");
  const Index len = static_cast<Index>(x.size());
  if ((len + cfg.hop - 1) / cfg.hop > frames)
    throw data_error("span of " + std::to_string(len) +
                     " samples overflows " + std::to_string(frames) +
                     " frames at hop " + std::to_string(cfg.hop));
  std::vector<float> padded = x;
  padded.resize(static_cast<std::size_t>((frames - 1) * cfg.hop + cfg.window),
                0.0f);
  Spectrogram spec = stft(padded, cfg);
  if (spec.frames != frames)
    throw numeric_error("stft_frames framing produced " +
                        std::to_string(spec.frames) + " frames, wanted " +
                        std::to_string(frames));
  return spec;
}

std::vector<float> istft(const Spectrogram& spec) {
  const StftConfig& cfg = spec.cfg;
  // WOLA reconstruction divides by the summed squared window; a Hann window
  // has zero endpoints, so hops above window/2 leave uncovered samples.
  if (cfg.hop > cfg.window / 2)
    throw config_error("istft needs hop <= window/2 for reconstruction, got " +
                       std::to_string(cfg.hop) + "/" +
                       std::to_string(cfg.window));
  const Index out_len = (spec.frames - 1) * cfg.hop + cfg.window;
  std::vector<double> acc(static_cast<std::size_t>(out_len), 0.0);
  std::vector<double> norm(static_cast<std::size_t>(out_len), 0.0);
  const std::vector<double> win = hann_window(cfg.window);

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum(
      static_cast<std::size_t>(cfg.n_fft));
  std::vector<double> frame;
  for (Index t = 0; t < spec.frames; ++t) {
    // Rebuild the full conjugate-symmetric spectrum.
    for (Index k = 0; k < spec.bins; ++k) {
      const std::complex<float>& v = spec.at(t, k);
      spectrum[static_cast<std::size_t>(k)] =
          std::complex<double>(v.real(), v.imag());
    }
    for (Index k = spec.bins; k < cfg.n_fft; ++k)
      spectrum[static_cast<std::size_t>(k)] =
          std::conj(spectrum[static_cast<std::size_t>(cfg.n_fft - k)]);
    fft.inv(frame, spectrum);
    const Index start = t * cfg.hop;
    for (Index i = 0; i < cfg.window; ++i) {
      acc[static_cast<std::size_t>(start + i)] +=
          frame[static_cast<std::size_t>(i)] * win[static_cast<std::size_t>(i)];
      norm[static_cast<std::size_t>(start + i)] +=
          win[static_cast<std::size_t>(i)] * win[static_cast<std::size_t>(i)];
    }
  }
  std::vector<float> out(static_cast<std::size_t>(out_len));
  for (Index i = 0; i < out_len; ++i) {
    const double d = norm[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] =
        d > 1e-8 ? static_cast<float>(acc[static_cast<std::size_t>(i)] / d)
                 : 0.0f;
  }
  return out;
}

Tensor<float> magnitude(const Spectrogram& spec) {
  Tensor<float> out({spec.frames, spec.bins});
  for (Index i = 0; i < out.size(); ++i)
    out[i] = std::abs(spec.data[static_cast<std::size_t>(i)]);
  return out;
}

Tensor<float> mel_filterbank(const MelConfig& cfg) {
  const Index bins = cfg.stft.n_fft / 2 + 1;
  Tensor<float> fb({cfg.n_mels, bins});
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> pts(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < pts.size(); ++i)
    pts[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(cfg.n_mels + 1));
  for (Index m = 0; m < cfg.n_mels; ++m) {
    const double l = pts[static_cast<std::size_t>(m)];
    const double c = pts[static_cast<std::size_t>(m) + 1];
    const double r = pts[static_cast<std::size_t>(m) + 2];
    for (Index k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) *
                       static_cast<double>(cfg.sample_rate) /
                       static_cast<double>(cfg.stft.n_fft);
      double w = 0.0;
      if (f >= l && f <= c && c > l)
        w = (f - l) / (c - l);
      else if (f > c && f <= r && r > c)
        w = (r - f) / (r - c);
      fb(m, k) = static_cast<float>(w);
    }
  }
  return fb;
}

Tensor<float> log_mel(const std::vector<float>& x, const MelConfig& cfg) {
  const StftConfig& st = cfg.stft;
  const Index frames =
      (static_cast<Index>(x.size()) + st.hop - 1) / st.hop;
  const Index need = (frames - 1) * st.hop + st.window;
  std::vector<float> padded = x;
  padded.resize(static_cast<std::size_t>(need), 0.0f);

  Spectrogram spec = stft(padded, st);
  // Tail padding can still leave one short: guard the count.
  if (spec.frames < frames)
    throw numeric_error("log_mel framing produced too few frames");

  const Tensor<float> fb = mel_filterbank(cfg);
  const Index bins = spec.bins;
  Tensor<float> out({frames, cfg.n_mels});
  for (Index t = 0; t < frames; ++t)
    for (Index m = 0; m < cfg.n_mels; ++m) {
      double acc = 0;
      for (Index k = 0; k < bins; ++k) {
        const std::complex<float>& v = spec.at(t, k);
        const double p = static_cast<double>(v.real()) * v.real() +
                         static_cast<double>(v.imag()) * v.imag();
        acc += static_cast<double>(fb(m, k)) * p;
      }
      out(t, m) = static_cast<float>(std::log(acc + 1e-10));
    }
  return out;
}

Tensor<float> log_mel_clip(const Wav& wav, Index video_frames, Index fps,
                           const MelConfig& cfg) {
  if (video_frames < 1) throw config_error("clip needs at least one frame");
  if (wav.sample_rate != cfg.sample_rate)
    throw config_error("wav sample rate " + std::to_string(wav.sample_rate) +
                       " does not match front end " +
                       std::to_string(cfg.sample_rate));
  if (cfg.sample_rate % (4 * fps) != 0)
    throw config_error("sample rate must be divisible by 4*fps");
  const Index hop = cfg.sample_rate / (4 * fps);
  if (cfg.stft.hop != hop)
    throw config_error("hop " + std::to_string(cfg.stft.hop) +
                       " breaks the 4-frames-per-video-frame alignment, want " +
                       std::to_string(hop));
  const Index need = 4 * video_frames * hop;
  const Index have = static_cast<Index>(wav.samples.size());
  if (have < need)
    throw data_error("audio too short for a " + std::to_string(video_frames) +
                     "-frame clip: need " + std::to_string(need) +
                     " samples, have " + std::to_string(have));
  std::vector<float> span(wav.samples.begin(), wav.samples.begin() + need);
  return log_mel(span, cfg);
}

double snr_db(const std::vector<float>& ref, const std::vector<float>& est) {
  double sig = 0, err = 0;
  const std::size_t n = std::min(ref.size(), est.size());
  for (std::size_t i = 0; i < n; ++i) {
    sig += static_cast<double>(ref[i]) * ref[i];
    const double d = static_cast<double>(ref[i]) - est[i];
    err += d * d;
  }
  if (err == 0) return 120.0;
  return 10.0 * std::log10(sig / err);
}

}  // namespace avobj::audio
