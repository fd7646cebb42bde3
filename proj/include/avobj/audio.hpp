#pragma once

#include <complex>
#include <string>
#include <vector>

#include "avobj/tensor.hpp"

namespace avobj::audio {

// Defaults target 16 kHz audio against 25 fps video: hop 160 samples puts
// exactly 4 spectrogram frames under each video frame (640 samples).
struct StftConfig {
  Index n_fft = 512;
  Index window = 400;
  Index hop = 160;
};

struct MelConfig {
  Index sample_rate = 16000;
  StftConfig stft;
  Index n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
};

struct Wav {
  Index sample_rate = 16000;
  std::vector<float> samples;  // mono, [-1, 1]
};

Wav read_wav(const std::string& path);
void write_wav(const std::string& path, const Wav& wav);

// Complex spectrogram, row-major frames x bins with bins = n_fft/2 + 1.
struct Spectrogram {
  StftConfig cfg;
  Index frames = 0;
  Index bins = 0;
  std::vector<std::complex<float>> data;

  std::complex<float>& at(Index t, Index k) { return data[t * bins + k]; }
  const std::complex<float>& at(Index t, Index k) const {
    return data[t * bins + k];
  }
};

// Left-aligned frames: count = 1 + floor((len - window)/hop). Hann window.
Spectrogram stft(const std::vector<float>& x, const StftConfig& cfg);

// Complex spectrogram with exactly `frames` rows: the signal is tail-padded
// with zeros to fill the final analysis windows, the same framing log_mel
// uses. A span of frames*hop samples maps 1:1 onto the rows; a longer span
// is an error (content would be dropped).
Spectrogram stft_frames(const std::vector<float>& x, Index frames,
                        const StftConfig& cfg);

// Weighted overlap-add inverse. Output covers (frames-1)*hop + window
// samples; the caller trims or pads as needed.
std::vector<float> istft(const Spectrogram& spec);

Tensor<float> magnitude(const Spectrogram& spec);  // (frames, bins)

// Triangular mel filterbank, (n_mels, n_fft/2+1). HTK mel scale.
Tensor<float> mel_filterbank(const MelConfig& cfg);

// Log mel energies, (frames, n_mels). Framing here is tail-padded so that a
// signal of T*hop samples yields exactly T frames; a 640-sample video frame
// always maps to 4 rows.
Tensor<float> log_mel(const std::vector<float>& x, const MelConfig& cfg);

// Clip-aligned front end: exactly 4 mel frames per video frame, hop locked
// to sample_rate/(4*fps). The wav must cover the full clip span.
Tensor<float> log_mel_clip(const Wav& wav, Index video_frames, Index fps,
                           const MelConfig& cfg = {});

// Power ratio in dB between a reference and the error to an estimate.
double snr_db(const std::vector<float>& ref, const std::vector<float>& est);

}  // namespace avobj::audio
