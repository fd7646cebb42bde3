#pragma once

#include <string>
#include <vector>

#include "avobj/audio.hpp"
#include "avobj/layers.hpp"
#include "avobj/objects.hpp"
#include "avobj/sync.hpp"
#include "avobj/tensor.hpp"

namespace avobj::sep {

// ---------------------------------------------------------------------------
// Mix-and-separate data synthesis: sum the waveforms, stack the videos.

struct AvClip {
  Tensor<float> video;        // (T, H, W, 3) in [0,1]
  std::vector<float> audio;   // mono, [-1,1]
};

struct MixedExample {
  Tensor<float> video;                       // (T_min, sum H, W, 3)
  std::vector<std::vector<float>> sources;   // originals, cropped to length
  std::vector<float> mixture;                // samplewise sum, times gain
  double gain = 1.0;                         // 1 unless the sum clipped
};

// Crops every clip to the shortest video/audio length, sums the waveforms
// (peak-normalizing only when |sum| exceeds 1, with the factor recorded),
// and stacks the frames vertically in input order. Source waveforms are
// returned unscaled; multiply by `gain` to match the mixture's scale.
MixedExample mix_clips(const std::vector<AvClip>& clips);

// Draws n_sources distinct clips from the pool and mixes them.
MixedExample mix_and_separate_batch(const std::vector<AvClip>& pool,
                                    Index n_sources, Rng& rng);

// ---------------------------------------------------------------------------
// Mixture time-frequency representation. The magnitude drives the mask;
// the complex frames keep the mixture phase for reconstruction.

struct MixtureSpec {
  Tensor<float> mag;        // (frames, bins), >= 0
  audio::Spectrogram spec;  // same frames/bins
  Index n_sources = 2;
};

// Clip-locked mixture spectrogram: exactly 4 rows per covered video frame
// (the span must be feature_frames * 4 * hop samples or shorter).
MixtureSpec mixture_spec(const std::vector<float>& samples,
                         Index feature_frames,
                         const audio::StftConfig& cfg = {});

// Masked reconstruction: scales each complex bin by mask(t,k) and inverts.
// With a mask of ones this is exactly istft(mix.spec).
std::vector<float> apply_mask(const MixtureSpec& mix,
                              const Tensor<float>& mask);

// Oracle ideal ratio mask for source k: |S_k| / sum_j |S_j| per bin, with
// the magnitude-sum denominator so the masks partition the mixture exactly.
Tensor<float> ideal_ratio_mask(const std::vector<Tensor<float>>& source_mags,
                               std::size_t k);

// ---------------------------------------------------------------------------
// The separator: a 1D ResNet over the object's visual descriptors that
// upsamples T' -> 4T' in two fractional-stride stages, a 1D ResNet over the
// mixture magnitude, and a BLSTM fusion emitting a sigmoid mask per frame.
// Stride-1 convolutions are depthwise separable; each is followed by batch
// norm, ReLU, and an identity shortcut. The two upsampling stages double
// the length, so they carry no shortcut.

struct SeparatorConfig {
  Index embed_dim = 64;    // visual descriptor width D
  Index bins = 257;        // mask width F (n_fft/2 + 1)
  Index width = 96;        // trunk channels
  Index branch_out = 96;   // per-branch output channels
  Index lstm_hidden = 48;  // per direction
  Index fc_width = 128;    // fusion dense width
  Index kernel = 5;
  Index video_pre = 1;     // residual blocks before the first upsampling
  Index video_mid = 1;     // between the upsamplings
  Index video_post = 1;    // after the second
  Index audio_blocks = 2;
};

Json separator_config_to_json(const SeparatorConfig& cfg);
SeparatorConfig separator_config_from_json(const Json& j);

// Parameters under the "sep." prefix, so a separator store can share a
// ParamStore with the sync encoder without collisions.
ParamStore<float> init_separator(const SeparatorConfig& cfg, Rng& rng);

// Everything needed to separate: separator weights (prefix "sep."), the
// encoder weights they were trained against, and both architectures.
struct SeparatorModel {
  ParamStore<float> params;
  SeparatorConfig arch;
  enc::EncoderConfig encoder;
};

// Mask head. emb is (T', D) descriptor rows (unit norm), mag is (4T', F).
// Taking emb as a tape variable lets the fine-tuning mode backpropagate
// into the encoder; frozen mode passes a constant.
Var<float> separator_mask(Bound<float>& b, const SeparatorConfig& cfg,
                          Var<float> emb, const Tensor<float>& mag);

// Eval-mode forward on a private tape.
Tensor<float> predict_mask(const SeparatorModel& model,
                           const Tensor<float>& emb,
                           const Tensor<float>& mag);

struct Separated {
  std::vector<float> samples;
  Tensor<float> mask;  // (4T', F)
};

// Predicts the object's mask and reconstructs its waveform with the
// mixture phase. The mixture must cover exactly the object's feature span:
// mag frames == 4 * embedding frames.
Separated separate(const MixtureSpec& mix,
                   const objects::AudioVisualObject& obj,
                   const SeparatorModel& model);

// ---------------------------------------------------------------------------
// Signal-to-distortion ratio in dB, capped at +60. Scale-invariant mode
// projects the estimate onto the reference first, so positive rescaling of
// the estimate cannot change the result.
double sdr(const std::vector<float>& reference,
           const std::vector<float>& estimate, bool scale_invariant);

// ---------------------------------------------------------------------------
// Training. Scenes are directories as written by the dataset generator;
// each contributes its top extracted object as the conditioning stream.

struct SepTrainConfig {
  SeparatorConfig arch;
  objects::ExtractConfig extract;  // how the conditioning object is pulled
  Index n_sources = 2;
  Index steps = 500;
  Index batch = 1;          // mixtures per step
  double lr = 1e-3;
  double grad_clip = 5.0;
  bool finetune_encoder = false;  // false: encoder bit-frozen
  Index eval_every = 100;         // validation loss cadence, 0 disables
  Index fps = 25;
  std::uint64_t seed = 0;
};

Json sep_train_config_to_json(const SepTrainConfig& cfg);

struct SepLogRow {
  Index step = 0;
  double loss = 0;
  double val_loss = -1;  // negative when not evaluated at this step
};

struct SepTrainResult {
  SeparatorModel model;
  std::vector<SepLogRow> log;
  double initial_val_loss = -1;  // before any update; -1 without val scenes
  double final_loss = 0;
  std::string checkpoint_path;
};

// Minimizes the L1 distance between masked mixture magnitudes and the
// per-source target magnitudes over random mixtures of the training scenes.
// The sync encoder is copied into the result's store either bit-frozen or
// fine-tuned through the descriptor gather, per cfg.finetune_encoder.
SepTrainResult train_separator(const std::vector<std::string>& train_dirs,
                               const std::vector<std::string>& val_dirs,
                               const sync::SyncModel& sync_model,
                               const SepTrainConfig& cfg,
                               const std::string& out_dir);

SeparatorModel load_separator(const std::string& checkpoint_path);

}  // namespace avobj::sep
