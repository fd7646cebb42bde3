#pragma once

#include <string>
#include <vector>

#include "avobj/encoders.hpp"
#include "avobj/rng.hpp"

namespace avobj::sync {

enum class Pool { max, mean };

// ---------------------------------------------------------------------------
// Attention volume: cosine between each video cell and the frame's audio
// embedding. fv is (T, h, w, D), fa is (T, D); the result is (T, h, w) with
// every value in [-1, 1].

Tensor<float> attention_map(const Tensor<float>& fv, const Tensor<float>& fa);

template <typename S>
Var<S> attention_map(Var<S> fv, Var<S> fa) {
  const Shape& vs = fv.shape();
  const Shape& as = fa.shape();
  if (vs.size() != 4 || as.size() != 2 || vs[0] != as[0] || vs[3] != as[1])
    throw config_error("attention inputs must be (T,h,w,D) and (T,D)");
  const Index T = vs[0], h = vs[1], w = vs[2], D = vs[3];
  Var<S> fvn = l2_normalize(fv, 3);
  Var<S> fan = reshape(l2_normalize(fa, 1), {T, Index(1), Index(1), D});
  return sum(mul(fvn, fan), {3}, false);  // (T, h, w)
}

// Per-frame spatial pooling of an attention volume (T, h, w) -> (T).
Tensor<float> frame_score(const Tensor<float>& S, Pool mode);

template <typename S>
Var<S> frame_score(Var<S> att, Pool mode) {
  if (att.shape().size() != 3)
    throw config_error("frame_score expects a (T,h,w) volume");
  return mode == Pool::max ? max(att, {1, 2}, false)
                           : mean(att, {1, 2}, false);
}

// ---------------------------------------------------------------------------
// Contrastive objective: -log softmax of the positive against N negatives,
// evaluated through a stabilized log-sum-exp.

double contrastive_loss(double pos, const std::vector<double>& negs);

template <typename S>
Var<S> contrastive_loss(Var<S> pos, Var<S> negs) {
  if (negs.shape().size() != 1 || negs.shape()[0] < 1)
    throw config_error("negatives must be a nonempty vector");
  Var<S> all = concat<S>({reshape(pos, {Index(1)}), negs}, 0);
  return sub(logsumexp(all, {0}, false), reshape(pos, Shape{}));
}

// ---------------------------------------------------------------------------
// Negative sampling. Negatives are identified by (clip, frame) so the choice
// is inspectable and reproducible.

enum class NegMode { shifted, random_clip };

struct FrameRef {
  Index clip = 0;
  Index frame = 0;
};

// clip_frames[i] is clip i's embedding count. Shifted mode returns every
// in-clip offset within +-radius of the anchor except 0; random-clip mode
// returns n_random draws from the other clips using rng. Throws data_error
// naming the clip when no negatives exist.
std::vector<FrameRef> sample_negatives(const std::vector<Index>& clip_frames,
                                       FrameRef anchor, NegMode mode,
                                       Index radius, Index n_random,
                                       Rng* rng = nullptr);

// ---------------------------------------------------------------------------
// Offset search: slide the audio against the video and score each shift.

struct OffsetTable {
  Index radius = 0;
  std::vector<double> scores;  // index i holds shift i - radius
  Index best = 0;              // the argmax shift

  double score_at(Index shift) const {
    return scores[static_cast<std::size_t>(shift + radius)];
  }
};

// scores[dt] = mean over the overlap of pooled frame scores after shifting
// the audio forward by dt frames (audio feature t aligns with video frame
// t + dt). A clip whose audio lags by k frames therefore peaks at -k. Every
// shift keeps at least one overlapping frame or the call throws data_error.
OffsetTable score_offsets(const Tensor<float>& fv, const Tensor<float>& fa,
                          Index radius, Pool mode = Pool::max);

// Per-frame version used by the context-length protocol: out(dt + radius, c)
// is the pooled score of video frame t = radius + c against audio frame
// t - dt. Columns cover the anchors t in [radius, T - radius), the frames
// for which every shift in the window exists, so out is (2R+1, T - 2R).
Tensor<float> offset_frame_scores(const Tensor<float>& fv,
                                  const Tensor<float>& fa, Index radius,
                                  Pool mode = Pool::max);

Json offset_table_to_json(const OffsetTable& table);

// ---------------------------------------------------------------------------
// Training.

struct SyncTrainConfig {
  enc::EncoderConfig encoder;  // normalization constants are overwritten
                               // with corpus statistics before training
  Index steps = 400;
  Index batch = 4;
  double lr = 1e-3;
  double grad_clip = 5.0;
  Index radius = 8;        // shifted-negative window during training
  Index n_random = 16;     // random-clip negatives per anchor
  double neg_switch = 0.25;   // fraction of steps before shifted negatives
  double pool_switch = 0.25;  // further fraction before max pooling
  Index max_anchors = 6;   // anchor frames per clip per step
  Index eval_every = 50;   // validation EER cadence, 0 disables
  Index fps = 25;
  std::uint64_t seed = 0;
};

Json sync_train_config_to_json(const SyncTrainConfig& cfg);

struct TrainLogRow {
  Index step = 0;
  int phase = 0;  // 1 random+mean, 2 shifted+mean, 3 shifted+max
  double loss = 0;
  double val_eer = -1;  // negative when not evaluated at this step
};

struct SyncTrainResult {
  ParamStore<float> params;
  enc::EncoderConfig encoder;  // with measured normalization constants
  std::vector<TrainLogRow> log;
  double final_loss = 0;
  std::string checkpoint_path;
};

// Trains the two-stream encoder on scene directories (as written by the
// synthetic world) under the phase curriculum. Writes checkpoint.bin and
// log.csv into out_dir. A non-finite loss aborts with numeric_error after
// saving the last finite-loss parameters.
SyncTrainResult train_sync(const std::vector<std::string>& train_dirs,
                           const std::vector<std::string>& val_dirs,
                           const SyncTrainConfig& cfg,
                           const std::string& out_dir);

// Checkpoint as written by train_sync: parameters plus the encoder config
// (including normalization constants) in the manifest.
struct SyncModel {
  ParamStore<float> params;
  enc::EncoderConfig encoder;
};

SyncModel load_sync_model(const std::string& checkpoint_path);

// Clip loading shared by training and the downstream pipelines: frames as
// (T, H, W, 3) in [0,1] plus the clip-locked log-mel of the mixture.
struct ClipData {
  Tensor<float> clip;
  Tensor<float> mel;
};

ClipData load_clip_data(const std::string& scene_dir, Index fps = 25);

}  // namespace avobj::sync
