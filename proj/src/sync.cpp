#include "avobj/sync.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "avobj/audio.hpp"
#include "avobj/checkpoint.hpp"
#include "avobj/eval.hpp"
#include "avobj/image.hpp"
#include "avobj/optim.hpp"

namespace avobj::sync {

namespace fs = std::filesystem;

Tensor<float> attention_map(const Tensor<float>& fv, const Tensor<float>& fa) {
  if (fv.rank() != 4 || fa.rank() != 2 || fv.dim(0) != fa.dim(0) ||
      fv.dim(3) != fa.dim(1))
    throw config_error("attention inputs must be (T,h,w,D) and (T,D)");
  const Index T = fv.dim(0), h = fv.dim(1), w = fv.dim(2), D = fv.dim(3);
  Tensor<float> out({T, h, w});
  for (Index t = 0; t < T; ++t) {
    const float* a = fa.data() + t * D;
    double na = 0;
    for (Index d = 0; d < D; ++d) na += static_cast<double>(a[d]) * a[d];
    na = std::max(std::sqrt(na), 1e-8);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        const float* v = fv.data() + ((t * h + i) * w + j) * D;
        double nv = 0, dot = 0;
        for (Index d = 0; d < D; ++d) {
          nv += static_cast<double>(v[d]) * v[d];
          dot += static_cast<double>(v[d]) * a[d];
        }
        nv = std::max(std::sqrt(nv), 1e-8);
        out(t, i, j) = static_cast<float>(dot / (nv * na));
      }
  }
  return out;
}

Tensor<float> frame_score(const Tensor<float>& S, Pool mode) {
  if (S.rank() != 3) throw config_error("frame_score expects (T,h,w)");
  const Index T = S.dim(0), hw = S.dim(1) * S.dim(2);
  Tensor<float> out({T});
  for (Index t = 0; t < T; ++t) {
    const float* p = S.data() + t * hw;
    if (mode == Pool::max) {
      float best = p[0];
      for (Index i = 1; i < hw; ++i) best = std::max(best, p[i]);
      out[t] = best;
    } else {
      double acc = 0;
      for (Index i = 0; i < hw; ++i) acc += p[i];
      out[t] = static_cast<float>(acc / static_cast<double>(hw));
    }
  }
  return out;
}

double contrastive_loss(double pos, const std::vector<double>& negs) {
  if (negs.empty()) throw config_error("negatives must be nonempty");
  double m = pos;
  for (const double n : negs) m = std::max(m, n);
  double acc = std::exp(pos - m);
  for (const double n : negs) acc += std::exp(n - m);
  return m + std::log(acc) - pos;
}

std::vector<FrameRef> sample_negatives(const std::vector<Index>& clip_frames,
                                       FrameRef anchor, NegMode mode,
                                       Index radius, Index n_random,
                                       Rng* rng) {
  const Index n_clips = static_cast<Index>(clip_frames.size());
  if (anchor.clip < 0 || anchor.clip >= n_clips)
    throw config_error("anchor clip index out of range");
  const Index T = clip_frames[static_cast<std::size_t>(anchor.clip)];
  if (anchor.frame < 0 || anchor.frame >= T)
    throw config_error("anchor frame index out of range");

  std::vector<FrameRef> out;
  if (mode == NegMode::shifted) {
    for (Index dt = -radius; dt <= radius; ++dt) {
      if (dt == 0) continue;
      const Index t = anchor.frame + dt;
      if (t >= 0 && t < T) out.push_back({anchor.clip, t});
    }
    if (out.empty())
      throw data_error("clip " + std::to_string(anchor.clip) +
                       " is too short for shifted negatives");
    return out;
  }

  if (rng == nullptr)
    throw config_error("random-clip negatives need an rng");
  std::vector<Index> others;
  for (Index c = 0; c < n_clips; ++c)
    if (c != anchor.clip && clip_frames[static_cast<std::size_t>(c)] > 0)
      others.push_back(c);
  if (others.empty())
    throw data_error("clip " + std::to_string(anchor.clip) +
                     " has no other clips to draw negatives from");
  for (Index i = 0; i < n_random; ++i) {
    const Index c = others[static_cast<std::size_t>(
        rng->uniform_int(0, static_cast<Index>(others.size()) - 1))];
    const Index t =
        rng->uniform_int(0, clip_frames[static_cast<std::size_t>(c)] - 1);
    out.push_back({c, t});
  }
  return out;
}

namespace {

// In-place row normalization of both streams, shared by the offset scorers.
void detail_normalize_features(Tensor<float>& fvn, Tensor<float>& fan) {
  const Index T = fvn.dim(0), hw = fvn.dim(1) * fvn.dim(2), D = fvn.dim(3);
  for (Index t = 0; t < T; ++t) {
    float* a = fan.data() + t * D;
    double na = 0;
    for (Index d = 0; d < D; ++d) na += static_cast<double>(a[d]) * a[d];
    const float inv_a = static_cast<float>(1.0 / std::max(std::sqrt(na), 1e-8));
    for (Index d = 0; d < D; ++d) a[d] *= inv_a;
    for (Index i = 0; i < hw; ++i) {
      float* v = fvn.data() + (t * hw + i) * D;
      double nv = 0;
      for (Index d = 0; d < D; ++d) nv += static_cast<double>(v[d]) * v[d];
      const float inv_v =
          static_cast<float>(1.0 / std::max(std::sqrt(nv), 1e-8));
      for (Index d = 0; d < D; ++d) v[d] *= inv_v;
    }
  }
}

// Pooled cosine of one (video frame, audio frame) pair, post-normalization.
double detail_pooled_frame(const float* v_frame, const float* a, Index hw,
                           Index D, Pool mode) {
  double frame = mode == Pool::max ? -1e300 : 0.0;
  for (Index i = 0; i < hw; ++i) {
    const float* v = v_frame + i * D;
    double dot = 0;
    for (Index d = 0; d < D; ++d) dot += static_cast<double>(v[d]) * a[d];
    if (mode == Pool::max)
      frame = std::max(frame, dot);
    else
      frame += dot / static_cast<double>(hw);
  }
  return frame;
}

}  // namespace

OffsetTable score_offsets(const Tensor<float>& fv, const Tensor<float>& fa,
                          Index radius, Pool mode) {
  if (radius < 0) throw config_error("offset radius must be nonnegative");
  const Index T = fv.dim(0);
  if (T <= radius)
    throw data_error("clip has " + std::to_string(T) +
                     " frames; shifts of " + std::to_string(radius) +
                     " leave no overlap");
  const Tensor<float> att_all = attention_map(fv, fa);  // validates shapes
  const Index h = att_all.dim(1), w = att_all.dim(2);

  // Normalize once, then dot the overlapping frame pairs per shift.
  Tensor<float> fvn = fv, fan = fa;
  detail_normalize_features(fvn, fan);

  const Index hw = h * w, D = fv.dim(3);
  OffsetTable table;
  table.radius = radius;
  table.scores.resize(static_cast<std::size_t>(2 * radius + 1));
  double best_score = -1e300;
  for (Index dt = -radius; dt <= radius; ++dt) {
    // Audio shifted forward by dt: audio frame t - dt plays at video t.
    const Index t0 = std::max<Index>(0, dt);
    const Index t1 = std::min<Index>(T, T + dt);
    double acc = 0;
    for (Index t = t0; t < t1; ++t)
      acc += detail_pooled_frame(fvn.data() + t * hw * D,
                                 fan.data() + (t - dt) * D, hw, D, mode);
    const double score = acc / static_cast<double>(t1 - t0);
    table.scores[static_cast<std::size_t>(dt + radius)] = score;
    if (score > best_score) {
      best_score = score;
      table.best = dt;
    }
  }
  return table;
}

Tensor<float> offset_frame_scores(const Tensor<float>& fv,
                                  const Tensor<float>& fa, Index radius,
                                  Pool mode) {
  if (radius < 0) throw config_error("offset radius must be nonnegative");
  const Index T = fv.dim(0);
  if (T < 2 * radius + 1)
    throw data_error("clip has " + std::to_string(T) +
                     " frames; the full shift window needs at least " +
                     std::to_string(2 * radius + 1));
  const Tensor<float> att_all = attention_map(fv, fa);  // validates shapes
  const Index hw = att_all.dim(1) * att_all.dim(2), D = fv.dim(3);

  Tensor<float> fvn = fv, fan = fa;
  detail_normalize_features(fvn, fan);

  const Index cols = T - 2 * radius;
  Tensor<float> out({2 * radius + 1, cols});
  for (Index dt = -radius; dt <= radius; ++dt)
    for (Index c = 0; c < cols; ++c) {
      const Index t = radius + c;
      out(dt + radius, c) = static_cast<float>(detail_pooled_frame(
          fvn.data() + t * hw * D, fan.data() + (t - dt) * D, hw, D, mode));
    }
  return out;
}

Json offset_table_to_json(const OffsetTable& table) {
  Json j{{"radius", table.radius}, {"best", table.best}};
  j["offsets"] = Json::array();
  j["scores"] = Json::array();
  for (Index dt = -table.radius; dt <= table.radius; ++dt) {
    j["offsets"].push_back(dt);
    j["scores"].push_back(table.score_at(dt));
  }
  return j;
}

Json sync_train_config_to_json(const SyncTrainConfig& cfg) {
  return Json{{"encoder", enc::encoder_config_to_json(cfg.encoder)},
              {"steps", cfg.steps},
              {"batch", cfg.batch},
              {"lr", cfg.lr},
              {"grad_clip", cfg.grad_clip},
              {"radius", cfg.radius},
              {"n_random", cfg.n_random},
              {"neg_switch", cfg.neg_switch},
              {"pool_switch", cfg.pool_switch},
              {"max_anchors", cfg.max_anchors},
              {"eval_every", cfg.eval_every},
              {"fps", cfg.fps},
              {"seed", cfg.seed}};
}

ClipData load_clip_data(const std::string& scene_dir, Index fps) {
  const Json spec = load_json_file((fs::path(scene_dir) / "scene.json").string());
  const Index T = spec.at("frames");
  const Index H = spec.at("height");
  const Index W = spec.at("width");
  ClipData out;
  out.clip = Tensor<float>({T, H, W, Index(3)});
  char name[32];
  for (Index t = 0; t < T; ++t) {
    std::snprintf(name, sizeof name, "frame_%04lld.png",
                  static_cast<long long>(t));
    const Tensor<float> img =
        img::read_png((fs::path(scene_dir) / "frames" / name).string());
    if (img.dim(1) != H || img.dim(2) != W)
      throw data_error(std::string("frame size mismatch in ") + scene_dir);
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) out.clip(t, i, j, c) = img(c, i, j);
  }
  const audio::Wav wav =
      audio::read_wav((fs::path(scene_dir) / "mixture.wav").string());
  audio::MelConfig mel_cfg;
  mel_cfg.sample_rate = wav.sample_rate;
  mel_cfg.stft.hop = wav.sample_rate / (4 * fps);
  out.mel = audio::log_mel_clip(wav, T, fps, mel_cfg);
  return out;
}

namespace {

struct Corpus {
  std::vector<ClipData> clips;
  std::vector<Index> feat_frames;  // T' per clip
};

Corpus load_corpus(const std::vector<std::string>& dirs,
                   const enc::EncoderConfig& enc_cfg, Index fps) {
  Corpus corpus;
  for (const std::string& dir : dirs) {
    ClipData cd = load_clip_data(dir, fps);
    const auto shape = enc::declared_video_shape(enc_cfg, cd.clip.dim(0),
                                                 cd.clip.dim(1), cd.clip.dim(2));
    corpus.feat_frames.push_back(shape[0]);
    corpus.clips.push_back(std::move(cd));
  }
  return corpus;
}

// Per-channel video statistics and global mel statistics over the corpus.
void measure_normalization(const Corpus& corpus, enc::EncoderConfig& cfg) {
  double vsum[3] = {0, 0, 0}, vsq[3] = {0, 0, 0};
  long long vn = 0;
  double asum = 0, asq = 0;
  long long an = 0;
  for (const ClipData& cd : corpus.clips) {
    const Index n = cd.clip.size() / 3;
    for (Index i = 0; i < cd.clip.size(); ++i) {
      const int c = static_cast<int>(i % 3);  // layout (T,H,W,3)
      vsum[c] += cd.clip[i];
      vsq[c] += static_cast<double>(cd.clip[i]) * cd.clip[i];
    }
    vn += n;
    for (Index i = 0; i < cd.mel.size(); ++i) {
      asum += cd.mel[i];
      asq += static_cast<double>(cd.mel[i]) * cd.mel[i];
    }
    an += cd.mel.size();
  }
  for (int c = 0; c < 3; ++c) {
    const double mean = vsum[c] / static_cast<double>(vn);
    const double var = vsq[c] / static_cast<double>(vn) - mean * mean;
    cfg.video_mean[static_cast<std::size_t>(c)] = mean;
    cfg.video_std[static_cast<std::size_t>(c)] =
        std::max(std::sqrt(std::max(var, 0.0)), 1e-3);
  }
  const double amean = asum / static_cast<double>(an);
  const double avar = asq / static_cast<double>(an) - amean * amean;
  cfg.audio_mean = amean;
  cfg.audio_std = std::max(std::sqrt(std::max(avar, 0.0)), 1e-3);
}

int phase_at(const SyncTrainConfig& cfg, Index step) {
  const Index s1 = static_cast<Index>(
      std::llround(cfg.neg_switch * static_cast<double>(cfg.steps)));
  const Index s2 = s1 + static_cast<Index>(std::llround(
                            cfg.pool_switch * static_cast<double>(cfg.steps)));
  if (step < s1) return 1;
  if (step < s2) return 2;
  return 3;
}

// Validation EER of aligned-vs-shifted discrimination, max pooling.
double validation_eer(const Corpus& val, const enc::EncoderConfig& enc_cfg,
                      ParamStore<float>& params, Index radius, Rng& rng) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const ClipData& cd : val.clips) {
    Tape<float> tape;
    Bound<float> b(tape, params, false);
    const Tensor<float> fv = enc::encode_video(b, enc_cfg, cd.clip).val();
    const Tensor<float> fa = enc::encode_audio(b, enc_cfg, cd.mel).val();
    const Tensor<float> att = attention_map(fv, fa);
    const Tensor<float> pos = frame_score(att, Pool::max);
    double pos_mean = 0;
    for (Index t = 0; t < pos.size(); ++t) pos_mean += pos[t];
    scores.push_back(pos_mean / static_cast<double>(pos.size()));
    labels.push_back(1);

    // Misaligned pairing: roll the audio by a random nonzero shift.
    const Index T = fa.dim(0), D = fa.dim(1);
    Index shift = rng.uniform_int(1, std::max<Index>(1, radius));
    if (rng.uniform() < 0.5) shift = -shift;
    Tensor<float> fa_rolled({T, D});
    for (Index t = 0; t < T; ++t) {
      const Index src = ((t + shift) % T + T) % T;
      for (Index d = 0; d < D; ++d) fa_rolled(t, d) = fa(src, d);
    }
    const Tensor<float> att_n = attention_map(fv, fa_rolled);
    const Tensor<float> neg = frame_score(att_n, Pool::max);
    double neg_mean = 0;
    for (Index t = 0; t < neg.size(); ++t) neg_mean += neg[t];
    scores.push_back(neg_mean / static_cast<double>(neg.size()));
    labels.push_back(0);
  }
  return eval::calibrate_eer_threshold(scores, labels).eer;
}

void write_log_csv(const std::string& path,
                   const std::vector<TrainLogRow>& rows) {
  std::ofstream os(path);
  os << "step,phase,loss,val_eer\n";
  for (const TrainLogRow& r : rows) {
    os << r.step << "," << r.phase << "," << r.loss << ",";
    if (r.val_eer >= 0) os << r.val_eer;
    os << "\n";
  }
}

std::string checkpoint_manifest(const SyncTrainConfig& cfg,
                                const enc::EncoderConfig& enc_cfg,
                                Index steps_done) {
  Json j{{"kind", "sync-encoder"},
         {"encoder", enc::encoder_config_to_json(enc_cfg)},
         {"train", sync_train_config_to_json(cfg)},
         {"steps_completed", steps_done}};
  j["train"]["encoder"] = nullptr;  // the top-level copy is authoritative
  return j.dump();
}

}  // namespace

SyncTrainResult train_sync(const std::vector<std::string>& train_dirs,
                           const std::vector<std::string>& val_dirs,
                           const SyncTrainConfig& cfg,
                           const std::string& out_dir) {
  if (train_dirs.empty()) throw data_error("no training scenes given");
  if (cfg.batch < 2)
    throw config_error("batch must be at least 2 so random-clip negatives "
                       "have another clip to draw from");
  if (cfg.steps < 1) throw config_error("steps must be positive");
  fs::create_directories(out_dir);

  enc::EncoderConfig enc_cfg = cfg.encoder;
  Corpus train = load_corpus(train_dirs, enc_cfg, cfg.fps);
  Corpus val = load_corpus(val_dirs, enc_cfg, cfg.fps);
  measure_normalization(train, enc_cfg);

  Rng root(cfg.seed);
  Rng init_rng = root.fork(0);
  Rng data_rng = root.fork(1);
  Rng eval_rng = root.fork(2);
  ParamStore<float> params = enc::init_encoder<float>(enc_cfg, init_rng);

  Adam<float> opt(static_cast<float>(cfg.lr));
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
  const Index n_clips = static_cast<Index>(train.clips.size());

  SyncTrainResult result;
  ParamStore<float> last_good = params;
  Index last_good_step = 0;
  double loss_value = 0;

  for (Index step = 0; step < cfg.steps; ++step) {
    const int phase = phase_at(cfg, step);
    const NegMode neg_mode =
        phase == 1 ? NegMode::random_clip : NegMode::shifted;
    const Pool pool = phase == 3 ? Pool::max : Pool::mean;

    // Assemble the batch.
    std::vector<Index> batch_clips;
    for (Index i = 0; i < cfg.batch; ++i)
      batch_clips.push_back(data_rng.uniform_int(0, n_clips - 1));

    Tape<float> tape;
    Bound<float> b(tape, params, true);
    std::vector<Var<float>> fvn, fan;
    std::vector<Index> batch_frames;
    for (const Index ci : batch_clips) {
      const ClipData& cd = train.clips[static_cast<std::size_t>(ci)];
      Var<float> fv = enc::encode_video(b, enc_cfg, cd.clip);
      Var<float> fa = enc::encode_audio(b, enc_cfg, cd.mel);
      fvn.push_back(l2_normalize(fv, 3));
      fan.push_back(l2_normalize(fa, 1));
      batch_frames.push_back(fv.shape()[0]);
    }

    std::vector<Var<float>> anchor_losses;
    for (Index bi = 0; bi < cfg.batch; ++bi) {
      const Index T = batch_frames[static_cast<std::size_t>(bi)];
      const Index lo = cfg.radius, hi = T - cfg.radius;  // full windows only
      if (hi <= lo)
        throw data_error("clip " + train_dirs[static_cast<std::size_t>(
                             batch_clips[static_cast<std::size_t>(bi)])] +
                         " is too short for the negative window");
      std::vector<Index> anchors;
      for (Index t = lo; t < hi; ++t) anchors.push_back(t);
      while (static_cast<Index>(anchors.size()) > cfg.max_anchors) {
        const Index drop =
            data_rng.uniform_int(0, static_cast<Index>(anchors.size()) - 1);
        anchors.erase(anchors.begin() + drop);
      }

      const Shape vs = fvn[static_cast<std::size_t>(bi)].shape();
      const Index h = vs[1], w = vs[2], D = vs[3];
      for (const Index t : anchors) {
        const std::vector<FrameRef> negs = sample_negatives(
            batch_frames, {bi, t}, neg_mode, cfg.radius, cfg.n_random,
            &data_rng);
        // Candidate audio rows: positive first, negatives after.
        std::vector<Var<float>> rows;
        rows.push_back(reshape(
            slice(fan[static_cast<std::size_t>(bi)], 0, t, 1), {Index(1), D}));
        for (const FrameRef& ref : negs)
          rows.push_back(
              reshape(slice(fan[static_cast<std::size_t>(ref.clip)], 0,
                            ref.frame, 1),
                      {Index(1), D}));
        Var<float> cand = concat(rows, 0);  // (1+N, D)
        Var<float> cell = reshape(
            slice(fvn[static_cast<std::size_t>(bi)], 0, t, 1), {h * w, D});
        Var<float> scores = matmul(cell, permute(cand, {1, 0}));  // (hw, 1+N)
        Var<float> pooled = pool == Pool::max ? max(scores, {0}, false)
                                              : mean(scores, {0}, false);
        Var<float> pos = reshape(slice(pooled, 0, 0, 1), Shape{});
        Var<float> neg =
            slice(pooled, 0, 1, static_cast<Index>(negs.size()));
        anchor_losses.push_back(contrastive_loss(pos, neg));
      }
    }

    std::vector<Var<float>> stacked;
    for (Var<float>& l : anchor_losses)
      stacked.push_back(reshape(l, {Index(1)}));
    Var<float> loss = mean(concat(stacked, 0));
    loss_value = loss.val()[0];

    if (!std::isfinite(loss_value)) {
      save_checkpoint(ckpt_path,
                      checkpoint_manifest(cfg, enc_cfg, last_good_step),
                      last_good);
      throw numeric_error("non-finite loss at step " + std::to_string(step) +
                          "; last good checkpoint written to " + ckpt_path);
    }
    last_good = params;
    last_good_step = step;

    tape.backward(loss);
    auto grads = b.grads();
    clip_grad_norm(grads, static_cast<float>(cfg.grad_clip));
    opt.step(params, grads);

    TrainLogRow row;
    row.step = step;
    row.phase = phase;
    row.loss = loss_value;
    const bool eval_now =
        cfg.eval_every > 0 &&
        (step % cfg.eval_every == cfg.eval_every - 1 || step == cfg.steps - 1);
    if (eval_now && !val.clips.empty())
      row.val_eer = validation_eer(val, enc_cfg, params, cfg.radius, eval_rng);
    result.log.push_back(row);
  }

  save_checkpoint(ckpt_path, checkpoint_manifest(cfg, enc_cfg, cfg.steps),
                  params);
  write_log_csv((fs::path(out_dir) / "log.csv").string(), result.log);
  result.params = std::move(params);
  result.encoder = enc_cfg;
  result.final_loss = loss_value;
  result.checkpoint_path = ckpt_path;
  return result;
}

SyncModel load_sync_model(const std::string& checkpoint_path) {
  SyncModel model;
  const std::string manifest = load_checkpoint(checkpoint_path, model.params);
  const Json j = Json::parse(manifest);
  if (j.at("kind") != "sync-encoder")
    throw data_error(checkpoint_path + " is not a sync encoder checkpoint");
  model.encoder = enc::encoder_config_from_json(j.at("encoder"));
  return model;
}

}  // namespace avobj::sync
