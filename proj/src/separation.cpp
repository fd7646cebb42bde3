#include "avobj/separation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <utility>

#include "avobj/checkpoint.hpp"
#include "avobj/optim.hpp"

namespace fs = std::filesystem;

namespace avobj::sep {

// ---------------------------------------------------------------------------
// Mix-and-separate.

MixedExample mix_clips(const std::vector<AvClip>& clips) {
  if (clips.size() < 2)
    throw config_error("mixing needs at least two clips, got " +
                       std::to_string(clips.size()));
  Index t_min = clips[0].video.dim(0);
  Index l_min = static_cast<Index>(clips[0].audio.size());
  const Index W = clips[0].video.dim(2);
  Index h_sum = 0;
  for (const AvClip& c : clips) {
    if (c.video.rank() != 4 || c.video.dim(3) != 3)
      throw config_error("clip video must be (T, H, W, 3)");
    if (c.video.dim(2) != W)
      throw config_error("vertical stacking needs equal widths, got " +
                         std::to_string(c.video.dim(2)) + " and " +
                         std::to_string(W));
    t_min = std::min(t_min, c.video.dim(0));
    l_min = std::min(l_min, static_cast<Index>(c.audio.size()));
    h_sum += c.video.dim(1);
  }

  MixedExample out;
  out.video = Tensor<float>({t_min, h_sum, W, Index(3)});
  Index row0 = 0;
  for (const AvClip& c : clips) {
    const Index H = c.video.dim(1);
    for (Index t = 0; t < t_min; ++t)
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          for (Index ch = 0; ch < 3; ++ch)
            out.video(t, row0 + y, x, ch) = c.video(t, y, x, ch);
    row0 += H;
  }

  out.mixture.assign(static_cast<std::size_t>(l_min), 0.0f);
  for (const AvClip& c : clips) {
    out.sources.emplace_back(c.audio.begin(), c.audio.begin() + l_min);
    for (Index i = 0; i < l_min; ++i)
      out.mixture[static_cast<std::size_t>(i)] +=
          c.audio[static_cast<std::size_t>(i)];
  }
  float peak = 0.0f;
  for (const float v : out.mixture) peak = std::max(peak, std::abs(v));
  if (peak > 1.0f) {
    out.gain = 1.0 / static_cast<double>(peak);
    for (float& v : out.mixture) v = static_cast<float>(v * out.gain);
  }
  return out;
}

MixedExample mix_and_separate_batch(const std::vector<AvClip>& pool,
                                    Index n_sources, Rng& rng) {
  if (n_sources < 2)
    throw config_error("a mixture needs at least two sources");
  if (static_cast<Index>(pool.size()) < n_sources)
    throw config_error("pool of " + std::to_string(pool.size()) +
                       " clips cannot seed " + std::to_string(n_sources) +
                       "-source mixtures");
  std::vector<Index> picks;
  while (static_cast<Index>(picks.size()) < n_sources) {
    const Index c = rng.uniform_int(0, static_cast<Index>(pool.size()) - 1);
    if (std::find(picks.begin(), picks.end(), c) == picks.end())
      picks.push_back(c);
  }
  std::vector<AvClip> chosen;
  for (const Index c : picks) chosen.push_back(pool[static_cast<std::size_t>(c)]);
  return mix_clips(chosen);
}

// ---------------------------------------------------------------------------
// Spectrogram plumbing.

MixtureSpec mixture_spec(const std::vector<float>& samples,
                         Index feature_frames, const audio::StftConfig& cfg) {
  MixtureSpec mix;
  mix.spec = audio::stft_frames(samples, 4 * feature_frames, cfg);
  mix.mag = audio::magnitude(mix.spec);
  return mix;
}

std::vector<float> apply_mask(const MixtureSpec& mix,
                              const Tensor<float>& mask) {
  if (mask.rank() != 2 || mask.dim(0) != mix.spec.frames ||
      mask.dim(1) != mix.spec.bins)
    throw config_error("mask shape " + shape_str(mask.shape()) +
                       " does not cover a " + std::to_string(mix.spec.frames) +
                       " x " + std::to_string(mix.spec.bins) + " mixture");
  audio::Spectrogram masked = mix.spec;
  for (Index t = 0; t < masked.frames; ++t)
    for (Index k = 0; k < masked.bins; ++k)
      masked.at(t, k) *= mask(t, k);
  return audio::istft(masked);
}

Tensor<float> ideal_ratio_mask(const std::vector<Tensor<float>>& source_mags,
                               std::size_t k) {
  if (source_mags.empty() || k >= source_mags.size())
    throw config_error("ideal_ratio_mask: source index out of range");
  const Shape shape = source_mags[0].shape();
  for (const Tensor<float>& m : source_mags)
    if (m.shape() != shape)
      throw config_error("ideal_ratio_mask: source magnitudes disagree");
  Tensor<float> mask(shape);
  const Index n = mask.size();
  for (Index i = 0; i < n; ++i) {
    double denom = 0;
    for (const Tensor<float>& m : source_mags)
      denom += static_cast<double>(m[i]);
    mask[i] = denom > 0 ? static_cast<float>(
                              static_cast<double>(source_mags[k][i]) / denom)
                        : 0.0f;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// SDR.

double sdr(const std::vector<float>& reference,
           const std::vector<float>& estimate, bool scale_invariant) {
  if (reference.size() != estimate.size())
    throw config_error("sdr needs equal lengths, got " +
                       std::to_string(reference.size()) + " and " +
                       std::to_string(estimate.size()));
  double rr = 0, re = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    rr += static_cast<double>(reference[i]) * reference[i];
    re += static_cast<double>(reference[i]) * estimate[i];
  }
  if (rr == 0) throw data_error("sdr reference is silent");
  const double alpha = scale_invariant ? re / rr : 1.0;
  double sig = 0, res = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double s = alpha * static_cast<double>(reference[i]);
    const double d = static_cast<double>(estimate[i]) - s;
    sig += s * s;
    res += d * d;
  }
  if (res <= 0) return 60.0;
  return std::min(60.0, 10.0 * std::log10(sig / res));
}

// ---------------------------------------------------------------------------
// The separator network.

namespace {

// x (1, C, L). Depthwise then pointwise convolution, batch norm, ReLU, and
// an identity shortcut; the length is preserved.
Var<float> res_block(Bound<float>& b, const std::string& prefix, Var<float> x,
                     Index kernel) {
  Var<float> y = depthwise_conv1d(x, b.p(prefix + ".dw"), kernel / 2);
  y = conv1d(y, b.p(prefix + ".pw"), 1, 0);
  y = batchnorm(b, prefix + ".bn", y, 1);
  return add(x, relu(y));
}

// Fractional-stride stage doubling the length. The shape changes, so there
// is no shortcut.
Var<float> up_stage(Bound<float>& b, const std::string& prefix, Var<float> x,
                    Index kernel) {
  const Index pad = kernel / 2;
  const Index out_pad = 2 + 2 * pad - kernel;
  Var<float> y = conv_transpose1d(x, b.p(prefix + ".w"), 2, pad, out_pad);
  return relu(batchnorm(b, prefix + ".bn", y, 1));
}

void init_block(ParamStore<float>& s, Rng& rng, const std::string& prefix,
                Index channels, Index kernel) {
  s.ensure(prefix + ".dw", he_normal<float>(rng, {channels, kernel}, kernel));
  s.ensure(prefix + ".pw",
           he_normal<float>(rng, {channels, channels, Index(1)}, channels));
  init_batchnorm(s, prefix + ".bn", channels);
}

void init_up(ParamStore<float>& s, Rng& rng, const std::string& prefix,
             Index channels, Index kernel) {
  s.ensure(prefix + ".w", he_normal<float>(rng, {channels, channels, kernel},
                                           channels * kernel));
  init_batchnorm(s, prefix + ".bn", channels);
}

// |x| built from FD-checked primitives: relu(x) + relu(-x) is exact in
// value and carries the usual subgradient at zero.
Var<float> l1_distance(Var<float> a, Var<float> b) {
  Var<float> d = sub(a, b);
  return mean(add(relu(d), relu(neg(d))));
}

}  // namespace

ParamStore<float> init_separator(const SeparatorConfig& cfg, Rng& rng) {
  ParamStore<float> s;
  const Index W = cfg.width, K = cfg.kernel;
  init_linear(s, rng, "sep.video.fc0", cfg.embed_dim, W);
  for (Index i = 0; i < cfg.video_pre; ++i)
    init_block(s, rng, "sep.video.pre" + std::to_string(i), W, K);
  init_up(s, rng, "sep.video.up1", W, K);
  for (Index i = 0; i < cfg.video_mid; ++i)
    init_block(s, rng, "sep.video.mid" + std::to_string(i), W, K);
  init_up(s, rng, "sep.video.up2", W, K);
  for (Index i = 0; i < cfg.video_post; ++i)
    init_block(s, rng, "sep.video.post" + std::to_string(i), W, K);
  s.ensure("sep.video.out.w",
           he_normal<float>(rng, {cfg.branch_out, W, Index(1)}, W));

  init_linear(s, rng, "sep.audio.fc0", cfg.bins, W);
  for (Index i = 0; i < cfg.audio_blocks; ++i)
    init_block(s, rng, "sep.audio.conv" + std::to_string(i), W, K);
  s.ensure("sep.audio.out.w",
           he_normal<float>(rng, {cfg.branch_out, W, Index(1)}, W));

  init_bilstm(s, rng, "sep.fuse.blstm", 2 * cfg.branch_out, cfg.lstm_hidden);
  init_linear(s, rng, "sep.fuse.fc1", 2 * cfg.lstm_hidden, cfg.fc_width);
  init_linear(s, rng, "sep.fuse.fc2", cfg.fc_width, cfg.fc_width);
  init_linear(s, rng, "sep.fuse.mask", cfg.fc_width, cfg.bins);
  return s;
}

Var<float> separator_mask(Bound<float>& b, const SeparatorConfig& cfg,
                          Var<float> emb, const Tensor<float>& mag) {
  const Shape& es = emb.shape();
  if (es.size() != 2 || es[1] != cfg.embed_dim)
    throw config_error("descriptors must be (T', " +
                       std::to_string(cfg.embed_dim) + "), got " +
                       shape_str(es));
  const Index Tf = es[0];
  if (mag.rank() != 2 || mag.dim(1) != cfg.bins)
    throw config_error("mixture magnitude must be (4T', " +
                       std::to_string(cfg.bins) + "), got " +
                       shape_str(mag.shape()));
  if (mag.dim(0) != 4 * Tf)
    throw data_error("mixture frames " + std::to_string(mag.dim(0)) +
                     " do not cover " + std::to_string(Tf) +
                     " descriptor frames (want " + std::to_string(4 * Tf) +
                     ")");
  const Index W = cfg.width, K = cfg.kernel;

  Var<float> x = linear(b, "sep.video.fc0", emb);           // (T', W)
  x = reshape(permute(x, {1, 0}), {Index(1), W, Tf});       // (1, W, T')
  for (Index i = 0; i < cfg.video_pre; ++i)
    x = res_block(b, "sep.video.pre" + std::to_string(i), x, K);
  x = up_stage(b, "sep.video.up1", x, K);                   // (1, W, 2T')
  for (Index i = 0; i < cfg.video_mid; ++i)
    x = res_block(b, "sep.video.mid" + std::to_string(i), x, K);
  x = up_stage(b, "sep.video.up2", x, K);                   // (1, W, 4T')
  for (Index i = 0; i < cfg.video_post; ++i)
    x = res_block(b, "sep.video.post" + std::to_string(i), x, K);
  Var<float> v = conv1d(x, b.p("sep.video.out.w"), 1, 0);   // (1, BO, 4T')

  Var<float> y = linear(b, "sep.audio.fc0", constant(b.tape, mag));
  y = reshape(permute(y, {1, 0}), {Index(1), W, 4 * Tf});
  for (Index i = 0; i < cfg.audio_blocks; ++i)
    y = res_block(b, "sep.audio.conv" + std::to_string(i), y, K);
  Var<float> a = conv1d(y, b.p("sep.audio.out.w"), 1, 0);   // (1, BO, 4T')

  Var<float> f = concat<float>({v, a}, 1);                  // (1, 2BO, 4T')
  Var<float> seq = permute(f, {2, 0, 1});                   // (4T', 1, 2BO)
  Var<float> h = bilstm(b, "sep.fuse.blstm", seq, cfg.lstm_hidden);
  h = reshape(h, {4 * Tf, 2 * cfg.lstm_hidden});
  h = relu(linear(b, "sep.fuse.fc1", h));
  h = relu(linear(b, "sep.fuse.fc2", h));
  return sigmoid(linear(b, "sep.fuse.mask", h));            // (4T', F)
}

Tensor<float> predict_mask(const SeparatorModel& model,
                           const Tensor<float>& emb,
                           const Tensor<float>& mag) {
  Tape<float> tape;
  Bound<float> b(tape, const_cast<ParamStore<float>&>(model.params), false);
  Var<float> mask =
      separator_mask(b, model.arch, constant(tape, emb), mag);
  return mask.val();
}

Separated separate(const MixtureSpec& mix,
                   const objects::AudioVisualObject& obj,
                   const SeparatorModel& model) {
  const Index Tf = obj.embeddings.dim(0);
  if (mix.mag.dim(0) != 4 * Tf)
    throw data_error("mixture covers " + std::to_string(mix.mag.dim(0)) +
                     " frames but the object spans " + std::to_string(Tf) +
                     " feature frames");
  Separated out;
  out.mask = predict_mask(model, obj.embeddings, mix.mag);
  out.samples = apply_mask(mix, out.mask);
  return out;
}

// ---------------------------------------------------------------------------
// Config serialization.

Json separator_config_to_json(const SeparatorConfig& cfg) {
  return Json{{"embed_dim", cfg.embed_dim},   {"bins", cfg.bins},
              {"width", cfg.width},           {"branch_out", cfg.branch_out},
              {"lstm_hidden", cfg.lstm_hidden},
              {"fc_width", cfg.fc_width},     {"kernel", cfg.kernel},
              {"video_pre", cfg.video_pre},   {"video_mid", cfg.video_mid},
              {"video_post", cfg.video_post}, {"audio_blocks", cfg.audio_blocks}};
}

SeparatorConfig separator_config_from_json(const Json& j) {
  SeparatorConfig cfg;
  cfg.embed_dim = j.at("embed_dim").get<Index>();
  cfg.bins = j.at("bins").get<Index>();
  cfg.width = j.at("width").get<Index>();
  cfg.branch_out = j.at("branch_out").get<Index>();
  cfg.lstm_hidden = j.at("lstm_hidden").get<Index>();
  cfg.fc_width = j.at("fc_width").get<Index>();
  cfg.kernel = j.at("kernel").get<Index>();
  cfg.video_pre = j.at("video_pre").get<Index>();
  cfg.video_mid = j.at("video_mid").get<Index>();
  cfg.video_post = j.at("video_post").get<Index>();
  cfg.audio_blocks = j.at("audio_blocks").get<Index>();
  return cfg;
}

Json sep_train_config_to_json(const SepTrainConfig& cfg) {
  return Json{{"arch", separator_config_to_json(cfg.arch)},
              {"extract",
               Json{{"rho_px", cfg.extract.rho_px},
                    {"max_n", cfg.extract.max_n},
                    {"use_flow", cfg.extract.use_flow},
                    {"pre_align", cfg.extract.pre_align},
                    {"align_radius", cfg.extract.align_radius}}},
              {"n_sources", cfg.n_sources},
              {"steps", cfg.steps},
              {"batch", cfg.batch},
              {"lr", cfg.lr},
              {"grad_clip", cfg.grad_clip},
              {"finetune_encoder", cfg.finetune_encoder},
              {"eval_every", cfg.eval_every},
              {"fps", cfg.fps},
              {"seed", cfg.seed}};
}

// ---------------------------------------------------------------------------
// Training.

namespace {

// One training scene: the conditioning descriptors from its top extracted
// object, the audio span the descriptors cover, and that span's magnitude.
struct SceneEntry {
  Tensor<float> clip;        // video, kept for the fine-tuning mode
  Tensor<float> emb;         // (T', D)
  Tensor<float> onehot;      // (T', h, w, 1) descriptor gather mask
  Index feature_frames = 0;
  std::vector<float> span;
  Tensor<float> target_mag;  // (4T', F)
};

SceneEntry load_scene_entry(const std::string& dir,
                            const sync::SyncModel& sync_model,
                            const SepTrainConfig& cfg) {
  const sync::ClipData cd = sync::load_clip_data(dir, cfg.fps);
  const audio::Wav wav =
      audio::read_wav((fs::path(dir) / "mixture.wav").string());
  if (wav.sample_rate % cfg.fps != 0)
    throw config_error("sample rate must be divisible by fps");
  const Index spp = wav.sample_rate / cfg.fps;

  const auto objs =
      objects::extract_objects(cd.clip, cd.mel, sync_model, cfg.extract);
  if (objs.empty()) throw data_error("no object extracted from " + dir);
  const objects::AudioVisualObject& top = objs[0];

  SceneEntry e;
  e.clip = cd.clip;
  e.emb = top.embeddings;
  e.feature_frames = e.emb.dim(0);
  if (e.emb.dim(1) != cfg.arch.embed_dim)
    throw config_error("descriptor width " + std::to_string(e.emb.dim(1)) +
                       " does not match the separator's " +
                       std::to_string(cfg.arch.embed_dim));

  const std::array<Index, 3> grid = enc::declared_video_shape(
      sync_model.encoder, cd.clip.dim(0), cd.clip.dim(1), cd.clip.dim(2));
  if (grid[0] == e.feature_frames) {
    e.onehot = Tensor<float>({e.feature_frames, grid[1], grid[2], Index(1)});
    for (Index t = 0; t < e.feature_frames; ++t) {
      const objects::ObjectFrame& f = top.track[static_cast<std::size_t>(t)];
      e.onehot(t, f.i, f.j, Index(0)) = 1.0f;
    }
  }

  const Index first = top.track[0].frame;
  const Index need = (first + e.feature_frames) * spp;
  if (static_cast<Index>(wav.samples.size()) < need)
    throw data_error("audio in " + dir + " is shorter than the clip span");
  e.span.assign(wav.samples.begin() + first * spp,
                wav.samples.begin() + need);
  e.target_mag = audio::magnitude(
      audio::stft_frames(e.span, 4 * e.feature_frames, audio::StftConfig{}));
  if (e.target_mag.dim(1) != cfg.arch.bins)
    throw config_error("spectrogram bins " +
                       std::to_string(e.target_mag.dim(1)) +
                       " do not match the mask width " +
                       std::to_string(cfg.arch.bins));
  return e;
}

struct Mixture {
  std::vector<Index> members;
  Tensor<float> mag;   // (4T', F), after gain
  double gain = 1.0;
};

Mixture build_mixture(const std::vector<SceneEntry>& scenes,
                      std::vector<Index> members) {
  Mixture m;
  m.members = std::move(members);
  const SceneEntry& first = scenes[static_cast<std::size_t>(m.members[0])];
  std::vector<float> sum(first.span.size(), 0.0f);
  for (const Index si : m.members) {
    const SceneEntry& s = scenes[static_cast<std::size_t>(si)];
    if (s.span.size() != sum.size() ||
        s.feature_frames != first.feature_frames)
      throw data_error("mixed scenes must share the clip length");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += s.span[i];
  }
  float peak = 0.0f;
  for (const float v : sum) peak = std::max(peak, std::abs(v));
  if (peak > 1.0f) {
    m.gain = 1.0 / static_cast<double>(peak);
    for (float& v : sum) v = static_cast<float>(v * m.gain);
  }
  m.mag = audio::magnitude(audio::stft_frames(
      sum, 4 * first.feature_frames, audio::StftConfig{}));
  return m;
}

// Sum of per-source L1 mask losses for one mixture on the given tape.
Var<float> mixture_loss(Bound<float>& b, const SepTrainConfig& cfg,
                        const enc::EncoderConfig& enc_cfg,
                        const std::vector<SceneEntry>& scenes,
                        const Mixture& m, bool finetune) {
  std::vector<Var<float>> losses;
  for (const Index si : m.members) {
    const SceneEntry& s = scenes[static_cast<std::size_t>(si)];
    // Fine-tuning reads the descriptor rows off a fresh encoder forward at
    // the snapped grid cells, so gradients reach the encoder. The frozen
    // mode feeds the extracted descriptors as constants, keeping the
    // encoder off the tape entirely.
    const auto descriptors = [&]() -> Var<float> {
      if (!finetune) return constant(b.tape, s.emb);
      Var<float> fv = enc::encode_video(b, enc_cfg, s.clip);
      Var<float> rows = sum(mul(fv, constant(b.tape, s.onehot)),
                            {Index(1), Index(2)}, false);
      return l2_normalize(rows, 1);
    };
    Var<float> emb = descriptors();
    Var<float> mask = separator_mask(b, cfg.arch, emb, m.mag);
    Var<float> pred = mul(mask, constant(b.tape, m.mag));
    Tensor<float> target = s.target_mag;
    target.flat() *= static_cast<float>(m.gain);
    losses.push_back(
        reshape(l1_distance(pred, constant(b.tape, std::move(target))),
                {Index(1)}));
  }
  return mean(concat(losses, 0));
}

std::string sep_manifest(const SepTrainConfig& cfg,
                         const enc::EncoderConfig& enc_cfg,
                         Index steps_done) {
  return Json{{"kind", "separator"},
              {"arch", separator_config_to_json(cfg.arch)},
              {"encoder", enc::encoder_config_to_json(enc_cfg)},
              {"train", sep_train_config_to_json(cfg)},
              {"steps_completed", steps_done}}
      .dump();
}

void write_sep_log_csv(const std::string& path,
                       const std::vector<SepLogRow>& log) {
  std::ofstream os(path);
  os << "step,loss,val_loss\n";
  os.precision(17);
  for (const SepLogRow& r : log) {
    os << r.step << ',' << r.loss << ',';
    if (r.val_loss >= 0) os << r.val_loss;
    os << "\n";
  }
}

}  // namespace

SepTrainResult train_separator(const std::vector<std::string>& train_dirs,
                               const std::vector<std::string>& val_dirs,
                               const sync::SyncModel& sync_model,
                               const SepTrainConfig& cfg,
                               const std::string& out_dir) {
  if (cfg.n_sources < 2 || cfg.n_sources > 3)
    throw config_error("n_sources must be 2 or 3, got " +
                       std::to_string(cfg.n_sources));
  if (static_cast<Index>(train_dirs.size()) < cfg.n_sources)
    throw data_error("need at least " + std::to_string(cfg.n_sources) +
                     " training scenes");
  if (cfg.steps < 1) throw config_error("steps must be positive");
  if (cfg.finetune_encoder && cfg.extract.pre_align)
    throw config_error(
        "fine-tuning needs pre_align=false so descriptor rows line up with "
        "encoder output frames");
  fs::create_directories(out_dir);

  std::vector<SceneEntry> train, val;
  for (const std::string& d : train_dirs)
    train.push_back(load_scene_entry(d, sync_model, cfg));
  for (const std::string& d : val_dirs)
    val.push_back(load_scene_entry(d, sync_model, cfg));
  if (cfg.finetune_encoder)
    for (const SceneEntry& e : train)
      if (e.onehot.size() == 0)
        throw config_error(
            "fine-tuning needs full-clip descriptors (alignment crop "
            "detected)");

  // Fixed validation mixtures: consecutive groups of n_sources.
  std::vector<Mixture> val_mixes;
  for (std::size_t i = 0; i + static_cast<std::size_t>(cfg.n_sources) <=
                          val.size();
       i += static_cast<std::size_t>(cfg.n_sources)) {
    std::vector<Index> members;
    for (Index k = 0; k < cfg.n_sources; ++k)
      members.push_back(static_cast<Index>(i) + k);
    val_mixes.push_back(build_mixture(val, std::move(members)));
  }

  Rng root(cfg.seed);
  Rng init_rng = root.fork(0);
  Rng data_rng = root.fork(1);

  ParamStore<float> params = sync_model.params;
  {
    ParamStore<float> sep = init_separator(cfg.arch, init_rng);
    params.params.insert(sep.params.begin(), sep.params.end());
    params.state.insert(sep.state.begin(), sep.state.end());
  }

  Adam<float> opt(static_cast<float>(cfg.lr));
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
  const Index n_train = static_cast<Index>(train.size());

  const auto validation_loss = [&]() -> double {
    if (val_mixes.empty()) return -1;
    double acc = 0;
    for (const Mixture& m : val_mixes) {
      Tape<float> tape;
      Bound<float> b(tape, params, false);
      // Validation always conditions on the initially extracted
      // descriptors, so fine-tuned runs stay comparable across steps.
      acc += static_cast<double>(
          mixture_loss(b, cfg, sync_model.encoder, val, m, false).val()[0]);
    }
    return acc / static_cast<double>(val_mixes.size());
  };

  SepTrainResult result;
  result.initial_val_loss = validation_loss();
  ParamStore<float> last_good = params;
  Index last_good_step = 0;
  double loss_value = 0;

  for (Index step = 0; step < cfg.steps; ++step) {
    Tape<float> tape;
    Bound<float> b(tape, params, true);
    std::vector<Var<float>> batch_losses;
    for (Index bi = 0; bi < cfg.batch; ++bi) {
      std::vector<Index> members;
      while (static_cast<Index>(members.size()) < cfg.n_sources) {
        const Index c = data_rng.uniform_int(0, n_train - 1);
        if (std::find(members.begin(), members.end(), c) == members.end())
          members.push_back(c);
      }
      const Mixture m = build_mixture(train, std::move(members));
      batch_losses.push_back(
          reshape(mixture_loss(b, cfg, sync_model.encoder, train, m,
                               cfg.finetune_encoder),
                  {Index(1)}));
    }
    Var<float> loss = mean(concat(batch_losses, 0));
    loss_value = loss.val()[0];

    if (!std::isfinite(loss_value)) {
      save_checkpoint(ckpt_path,
                      sep_manifest(cfg, sync_model.encoder, last_good_step),
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

    SepLogRow row;
    row.step = step;
    row.loss = loss_value;
    const bool eval_now =
        cfg.eval_every > 0 &&
        (step % cfg.eval_every == cfg.eval_every - 1 || step == cfg.steps - 1);
    if (eval_now) row.val_loss = validation_loss();
    result.log.push_back(row);
  }

  save_checkpoint(ckpt_path, sep_manifest(cfg, sync_model.encoder, cfg.steps),
                  params);
  write_sep_log_csv((fs::path(out_dir) / "log.csv").string(), result.log);
  result.model.params = std::move(params);
  result.model.arch = cfg.arch;
  result.model.encoder = sync_model.encoder;
  result.final_loss = loss_value;
  result.checkpoint_path = ckpt_path;
  return result;
}

SeparatorModel load_separator(const std::string& checkpoint_path) {
  SeparatorModel model;
  const std::string manifest = load_checkpoint(checkpoint_path, model.params);
  const Json j = Json::parse(manifest);
  if (j.at("kind").get<std::string>() != "separator")
    throw data_error(checkpoint_path + " is not a separator checkpoint");
  model.arch = separator_config_from_json(j.at("arch"));
  model.encoder = enc::encoder_config_from_json(j.at("encoder"));
  return model;
}

}  // namespace avobj::sep
