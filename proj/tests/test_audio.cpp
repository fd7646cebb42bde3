// Waveform I/O and time-frequency transforms against closed-form and
// energy-conservation oracles.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <vector>

#include "avobj/audio.hpp"
#include "avobj/rng.hpp"

using namespace avobj;
using namespace avobj::audio;

namespace {

std::string tmp_path(const char* name) {
  return std::string("/tmp/avobj_audio_") + name;
}

std::vector<float> sine(double hz, Index sample_rate, Index n,
                        double amp = 0.5) {
  std::vector<float> x(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    x[static_cast<std::size_t>(i)] = static_cast<float>(
        amp * std::sin(2.0 * std::numbers::pi * hz * i / sample_rate));
  return x;
}

}  // namespace

TEST_CASE("wav roundtrip is exact to 16-bit quantization") {
  Rng rng(7);
  Wav wav;
  wav.sample_rate = 16000;
  wav.samples.resize(4321);
  for (auto& s : wav.samples)
    s = static_cast<float>(rng.uniform(-1.0, 1.0));
  const std::string path = tmp_path("roundtrip.wav");
  write_wav(path, wav);
  const Wav back = read_wav(path);
  REQUIRE(back.sample_rate == wav.sample_rate);
  REQUIRE(back.samples.size() == wav.samples.size());
  float worst = 0;
  for (std::size_t i = 0; i < wav.samples.size(); ++i)
    worst = std::max(worst, std::abs(wav.samples[i] - back.samples[i]));
  CHECK(worst <= 1.0f / 32768.0f);
  std::remove(path.c_str());
}

TEST_CASE("wav of silence and of a full-scale square wave") {
  Wav wav;
  wav.sample_rate = 16000;
  wav.samples.assign(16000, 0.0f);
  const std::string path = tmp_path("silence.wav");
  write_wav(path, wav);
  Wav back = read_wav(path);
  REQUIRE(back.samples.size() == 16000);
  for (float s : back.samples) CHECK(s == 0.0f);

  for (std::size_t i = 0; i < wav.samples.size(); ++i)
    wav.samples[i] = (i / 50) % 2 ? 1.0f : -1.0f;
  write_wav(path, wav);
  back = read_wav(path);
  const float full = 32767.0f / 32768.0f;
  for (std::size_t i = 0; i < back.samples.size(); ++i)
    CHECK(std::abs(back.samples[i]) == doctest::Approx(full).epsilon(1e-6));
  std::remove(path.c_str());
}

TEST_CASE("malformed wav headers are rejected") {
  const std::string path = tmp_path("garbage.wav");
  {
    std::ofstream os(path, std::ios::binary);
    os << "RIFFxxxxNOPE";
  }
  CHECK_THROWS_AS(read_wav(path), data_error);
  CHECK_THROWS_AS(read_wav("/nonexistent/nowhere.wav"), data_error);
  std::remove(path.c_str());
}

TEST_CASE("stft frame count and degenerate inputs") {
  StftConfig cfg;
  std::vector<float> x(16000, 0.0f);
  const Spectrogram spec = stft(x, cfg);
  CHECK(spec.frames == 1 + (16000 - cfg.window) / cfg.hop);
  CHECK(spec.bins == cfg.n_fft / 2 + 1);
  for (const auto& v : spec.data) {
    CHECK(v.real() == 0.0f);
    CHECK(v.imag() == 0.0f);
  }
  std::vector<float> tiny(cfg.window - 1, 0.0f);
  CHECK_THROWS_AS(stft(tiny, cfg), data_error);
}

TEST_CASE("1 kHz sine at 16 kHz peaks in bin 32") {
  StftConfig cfg;
  const auto x = sine(1000.0, 16000, 8000);
  const Spectrogram spec = stft(x, cfg);
  const Tensor<float> mag = magnitude(spec);
  for (Index t = 0; t < spec.frames; ++t) {
    Index best = 0;
    for (Index k = 1; k < spec.bins; ++k)
      if (mag(t, k) > mag(t, best)) best = k;
    CHECK(best == 32);
  }
}

TEST_CASE("stft energy matches windowed time-domain energy within 1%") {
  StftConfig cfg;
  Rng rng(11);
  std::vector<float> x(6400);
  for (auto& s : x) s = static_cast<float>(rng.uniform(-0.8, 0.8));
  const Spectrogram spec = stft(x, cfg);

  // Parseval per frame: sum|X_k|^2 over the full n_fft bins equals
  // n_fft * sum_n (x_n w_n)^2. One-sided bins double all but DC/Nyquist.
  std::vector<double> win(static_cast<std::size_t>(cfg.window));
  for (Index i = 0; i < cfg.window; ++i)
    win[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi *
                                                            i / cfg.window);
  double spectral = 0, temporal = 0;
  for (Index t = 0; t < spec.frames; ++t) {
    for (Index k = 0; k < spec.bins; ++k) {
      const std::complex<float>& v = spec.at(t, k);
      const double p = static_cast<double>(v.real()) * v.real() +
                       static_cast<double>(v.imag()) * v.imag();
      spectral += (k == 0 || k == cfg.n_fft / 2) ? p : 2.0 * p;
    }
    for (Index i = 0; i < cfg.window; ++i) {
      const double s = x[static_cast<std::size_t>(t * cfg.hop + i)] *
                       win[static_cast<std::size_t>(i)];
      temporal += s * s;
    }
  }
  spectral /= static_cast<double>(cfg.n_fft);
  CHECK(std::abs(spectral - temporal) <= 0.01 * temporal);
}

TEST_CASE("istft reconstructs the interior at >= 40 dB") {
  StftConfig cfg;
  Rng rng(3);
  std::vector<float> x(9600);
  // Speech-like: filtered noise with a slow envelope.
  double state = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    state = 0.9 * state + 0.1 * rng.uniform(-1.0, 1.0);
    x[i] = static_cast<float>(
        state * (0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * i / 3000.0)));
  }
  const std::vector<float> y = istft(stft(x, cfg));
  std::vector<float> ref(x.begin() + cfg.window,
                         x.begin() + static_cast<long>(y.size()) - cfg.window);
  std::vector<float> est(y.begin() + cfg.window,
                         y.begin() + static_cast<long>(y.size()) - cfg.window);
  CHECK(snr_db(ref, est) >= 40.0);
}

TEST_CASE("istft rejects window/hop pairs that cannot reconstruct") {
  Spectrogram spec;
  spec.cfg = StftConfig{512, 400, 240};
  spec.frames = 4;
  spec.bins = 257;
  spec.data.assign(static_cast<std::size_t>(spec.frames * spec.bins), {});
  CHECK_THROWS_AS(istft(spec), config_error);
}

TEST_CASE("mel filterbank covers the band with non-negative triangles") {
  MelConfig cfg;
  const Tensor<float> fb = mel_filterbank(cfg);
  REQUIRE(fb.dim(0) == 80);
  REQUIRE(fb.dim(1) == 257);
  for (Index i = 0; i < fb.size(); ++i) CHECK(fb[i] >= 0.0f);
  for (Index m = 0; m < fb.dim(0); ++m) {
    float row_max = 0;
    for (Index k = 0; k < fb.dim(1); ++k) row_max = std::max(row_max, fb(m, k));
    CHECK(row_max > 0.0f);
  }
  // Every interior bin is seen by at least one filter.
  for (Index k = 1; k + 1 < fb.dim(1); ++k) {
    float col = 0;
    for (Index m = 0; m < fb.dim(0); ++m) col += fb(m, k);
    CHECK(col > 0.0f);
  }
}

TEST_CASE("log_mel gives exactly 4 frames per video frame") {
  MelConfig cfg;
  for (Index T : {1, 2, 5, 29}) {
    Wav wav;
    wav.sample_rate = 16000;
    wav.samples.assign(static_cast<std::size_t>(T) * 640, 0.1f);
    const Tensor<float> mel = log_mel_clip(wav, T, 25, cfg);
    CHECK(mel.dim(0) == 4 * T);
    CHECK(mel.dim(1) == 80);
  }
}

TEST_CASE("audio shorter than the clip span names the required count") {
  Wav wav;
  wav.sample_rate = 16000;
  wav.samples.assign(29 * 640 - 1, 0.0f);
  try {
    log_mel_clip(wav, 29, 25, {});
    FAIL("expected data_error");
  } catch (const data_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("18560") != std::string::npos);
  }
}

TEST_CASE("silence maps to a constant log floor") {
  std::vector<float> x(3200, 0.0f);
  const Tensor<float> mel = log_mel(x, {});
  const float floor_val = static_cast<float>(std::log(1e-10));
  for (Index i = 0; i < mel.size(); ++i) CHECK(mel[i] == floor_val);
}

TEST_CASE("a pure tone lands in the mel band that owns its frequency") {
  MelConfig cfg;
  const auto x = sine(2000.0, 16000, 6400);
  const Tensor<float> mel = log_mel(x, cfg);
  const Tensor<float> fb = mel_filterbank(cfg);
  // 2 kHz sits exactly in FFT bin 64; the owning band maximizes fb(m, 64).
  Index want = 0;
  for (Index m = 1; m < fb.dim(0); ++m)
    if (fb(m, 64) > fb(want, 64)) want = m;
  const Index t = mel.dim(0) / 2;
  Index got = 0;
  for (Index m = 1; m < mel.dim(1); ++m)
    if (mel(t, m) > mel(t, got)) got = m;
  CHECK(got == want);
}

TEST_CASE("snr_db measures power ratios") {
  std::vector<float> ref(100, 1.0f);
  CHECK(snr_db(ref, ref) == 120.0);
  std::vector<float> est(100, 0.9f);  // error power 0.01 -> 20 dB
  CHECK(snr_db(ref, est) == doctest::Approx(20.0).epsilon(1e-6));
}
