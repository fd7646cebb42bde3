#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "avobj/encoders.hpp"
#include "avobj/separation.hpp"
#include "avobj/synth.hpp"

using namespace avobj;
namespace fs = std::filesystem;

namespace {

std::vector<float> tone(Index n, double freq, double amp, double sr = 16000) {
  std::vector<float> x(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    x[static_cast<std::size_t>(i)] = static_cast<float>(
        amp * std::sin(2.0 * 3.14159265358979323846 * freq * i / sr));
  return x;
}

Tensor<float> random_video(Rng& rng, Index T, Index H, Index W) {
  Tensor<float> v({T, H, W, Index(3)});
  for (Index i = 0; i < v.size(); ++i)
    v[i] = static_cast<float>(rng.uniform());
  return v;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

sep::SeparatorConfig mini_arch() {
  sep::SeparatorConfig cfg;
  cfg.embed_dim = 16;
  cfg.bins = 33;
  cfg.width = 24;
  cfg.branch_out = 16;
  cfg.lstm_hidden = 12;
  cfg.fc_width = 24;
  return cfg;
}

}  // namespace

TEST_CASE("fixed-frame stft covers a video-locked span exactly") {
  const audio::StftConfig cfg;  // 400/160/512
  Rng rng(3);
  std::vector<float> a(12800), b(12800);
  for (auto& v : a) v = static_cast<float>(rng.normal(0, 0.2));
  for (auto& v : b) v = static_cast<float>(rng.normal(0, 0.2));

  const audio::Spectrogram sa = audio::stft_frames(a, 80, cfg);
  CHECK(sa.frames == 80);
  CHECK(sa.bins == 257);

  // A shorter span still lands on the requested frame count.
  const std::vector<float> short_span(a.begin(), a.begin() + 12000);
  CHECK(audio::stft_frames(short_span, 80, cfg).frames == 80);

  // One sample past the covered span must not silently drop audio.
  std::vector<float> over(a);
  over.push_back(0.1f);
  CHECK_THROWS_AS(audio::stft_frames(over, 80, cfg), data_error);
  CHECK_THROWS_AS(audio::stft_frames(a, 0, cfg), config_error);

  // The transform is linear, so framing a sum frames the parts.
  std::vector<float> ab(a);
  for (std::size_t i = 0; i < ab.size(); ++i) ab[i] += b[i];
  const audio::Spectrogram sb = audio::stft_frames(b, 80, cfg);
  const audio::Spectrogram sab = audio::stft_frames(ab, 80, cfg);
  double worst = 0;
  for (Index t = 0; t < 80; ++t)
    for (Index k = 0; k < 257; ++k) {
      const auto d = sab.at(t, k) - sa.at(t, k) - sb.at(t, k);
      worst = std::max(worst, static_cast<double>(std::abs(d)) /
                                  (1.0 + std::abs(sab.at(t, k))));
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("mixture magnitudes obey the triangle inequality") {
  const std::vector<float> a = tone(12800, 440, 0.4);
  const std::vector<float> b = tone(12800, 1170, 0.4);
  std::vector<float> ab(a);
  for (std::size_t i = 0; i < ab.size(); ++i) ab[i] += b[i];

  const sep::MixtureSpec mix = sep::mixture_spec(ab, 20);
  CHECK(mix.mag.dim(0) == 80);
  CHECK(mix.mag.dim(1) == 257);
  for (Index i = 0; i < mix.mag.size(); ++i) CHECK(mix.mag[i] >= 0.0f);

  const Tensor<float> ma = sep::mixture_spec(a, 20).mag;
  const Tensor<float> mb = sep::mixture_spec(b, 20).mag;
  for (Index i = 0; i < mix.mag.size(); ++i)
    CHECK(mix.mag[i] <= ma[i] + mb[i] + 1e-3f);
}

TEST_CASE("mixing clips crops, stacks, and sums") {
  Rng rng(7);
  sep::AvClip a;
  a.video = random_video(rng, 5, 8, 10);
  a.audio = tone(400, 500, 0.3);
  sep::AvClip b;
  b.video = random_video(rng, 3, 6, 10);
  b.audio = tone(320, 900, 0.3);

  CHECK_THROWS_AS(sep::mix_clips({a}), config_error);
  {
    sep::AvClip narrow = b;
    narrow.video = random_video(rng, 3, 6, 9);
    CHECK_THROWS_AS(sep::mix_clips({a, narrow}), config_error);
  }

  const sep::MixedExample mix = sep::mix_clips({a, b});
  CHECK(mix.video.dim(0) == 3);   // shorter clip wins
  CHECK(mix.video.dim(1) == 14);  // heights stack
  CHECK(mix.video.dim(2) == 10);
  CHECK(mix.mixture.size() == 320);
  CHECK(mix.gain == 1.0);
  REQUIRE(mix.sources.size() == 2);
  CHECK(mix.sources[0].size() == 320);

  // First clip occupies the top rows, frame for frame.
  for (Index t = 0; t < 3; ++t)
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 10; ++x)
        for (Index c = 0; c < 3; ++c)
          CHECK(mix.video(t, y, x, c) == a.video(t, y, x, c));
  for (Index t = 0; t < 3; ++t)
    for (Index y = 0; y < 6; ++y)
      CHECK(mix.video(t, 8 + y, 0, Index(0)) == b.video(t, y, 0, Index(0)));

  // Samplewise sum.
  for (std::size_t i = 0; i < 320; ++i)
    CHECK(mix.mixture[i] == a.audio[i] + b.audio[i]);
}

TEST_CASE("mixing silence changes nothing and two silences stay silent") {
  Rng rng(9);
  sep::AvClip voiced;
  voiced.video = random_video(rng, 4, 6, 6);
  voiced.audio = tone(256, 700, 0.5);
  sep::AvClip silent;
  silent.video = random_video(rng, 4, 6, 6);
  silent.audio.assign(256, 0.0f);

  const sep::MixedExample quiet = sep::mix_clips({silent, silent});
  for (const float v : quiet.mixture) CHECK(v == 0.0f);

  const sep::MixedExample same = sep::mix_clips({voiced, silent});
  CHECK(same.gain == 1.0);
  for (std::size_t i = 0; i < 256; ++i)
    CHECK(same.mixture[i] == voiced.audio[i]);
}

TEST_CASE("hot mixtures are peak-normalized with the gain recorded") {
  Rng rng(11);
  sep::AvClip a;
  a.video = random_video(rng, 3, 4, 4);
  a.audio.assign(100, 0.8f);
  sep::AvClip b = a;
  b.audio.assign(100, 0.8f);

  const sep::MixedExample mix = sep::mix_clips({a, b});
  CHECK(mix.gain == doctest::Approx(1.0 / 1.6).epsilon(1e-9));
  float peak = 0;
  for (const float v : mix.mixture) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(1.0f).epsilon(1e-6));
  // Sources come back unscaled.
  CHECK(mix.sources[0][0] == 0.8f);
  CHECK(mix.sources[1][50] == 0.8f);
}

TEST_CASE("batch sampling draws distinct clips deterministically") {
  Rng vr(13);
  std::vector<sep::AvClip> pool;
  for (int k = 0; k < 4; ++k) {
    sep::AvClip c;
    c.video = random_video(vr, 2, 4, 4);
    c.audio.assign(64, 0.1f * static_cast<float>(k + 1));
    pool.push_back(std::move(c));
  }

  Rng r1(21), r2(21);
  const sep::MixedExample m1 = sep::mix_and_separate_batch(pool, 2, r1);
  const sep::MixedExample m2 = sep::mix_and_separate_batch(pool, 2, r2);
  CHECK(m1.mixture == m2.mixture);
  REQUIRE(m1.sources.size() == 2);
  // Distinct picks have distinct DC levels.
  CHECK(m1.sources[0][0] != m1.sources[1][0]);

  Rng r3(5);
  CHECK_THROWS_AS(sep::mix_and_separate_batch(pool, 5, r3), config_error);
  CHECK_THROWS_AS(sep::mix_and_separate_batch(pool, 1, r3), config_error);
}

TEST_CASE("ideal ratio masks partition the magnitude sum") {
  Rng rng(17);
  std::vector<Tensor<float>> mags;
  for (int k = 0; k < 3; ++k) {
    Tensor<float> m({Index(10), Index(9)});
    for (Index i = 0; i < m.size(); ++i)
      m[i] = std::abs(static_cast<float>(rng.normal()));
    mags.push_back(std::move(m));
  }
  // A dead bin in every source must yield zero masks, not NaN.
  for (auto& m : mags) m(Index(0), Index(0)) = 0.0f;

  std::vector<Tensor<float>> masks;
  for (std::size_t k = 0; k < mags.size(); ++k)
    masks.push_back(sep::ideal_ratio_mask(mags, k));

  for (const auto& m : masks)
    for (Index i = 0; i < m.size(); ++i) {
      CHECK(m[i] >= 0.0f);
      CHECK(m[i] <= 1.0f);
    }
  CHECK(masks[0](Index(0), Index(0)) == 0.0f);

  for (Index i = 1; i < mags[0].size(); ++i) {
    double s = 0;
    for (const auto& m : masks) s += static_cast<double>(m[i]);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  CHECK_THROWS_AS(sep::ideal_ratio_mask(mags, 3), config_error);
}

TEST_CASE("sdr: caps, scale handling, and an energy-ratio oracle") {
  Rng rng(19);
  std::vector<float> ref(1000);
  for (auto& v : ref) v = static_cast<float>(rng.normal(0, 0.1));

  CHECK(sep::sdr(ref, ref, true) == 60.0);
  CHECK(sep::sdr(ref, ref, false) == 60.0);

  std::vector<float> twice(ref);
  for (auto& v : twice) v *= 2.0f;
  CHECK(sep::sdr(ref, twice, true) == 60.0);
  CHECK(sep::sdr(ref, twice, false) == doctest::Approx(0.0).epsilon(1e-9));

  // Equal-power noise: permuting the reference preserves its energy
  // exactly, so the plain energy ratio is 0 dB by construction.
  std::vector<float> noise(ref);
  std::rotate(noise.begin(), noise.begin() + 317, noise.end());
  std::vector<float> est(ref);
  for (std::size_t i = 0; i < est.size(); ++i) est[i] += noise[i];

  double rr = 0, nn = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rr += static_cast<double>(ref[i]) * ref[i];
    const double d = static_cast<double>(est[i]) - ref[i];
    nn += d * d;
  }
  const double oracle = 10.0 * std::log10(rr / nn);
  CHECK(sep::sdr(ref, est, false) == doctest::Approx(oracle).epsilon(1e-9));
  CHECK(std::abs(sep::sdr(ref, est, false)) < 0.5);
  CHECK(std::abs(sep::sdr(ref, est, true)) < 0.5);

  // Scale invariance of the SI mode.
  std::vector<float> scaled(est);
  for (auto& v : scaled) v *= 0.37f;
  CHECK(sep::sdr(ref, scaled, true) ==
        doctest::Approx(sep::sdr(ref, est, true)).epsilon(1e-6));

  const std::vector<float> zeros(1000, 0.0f);
  CHECK_THROWS_AS(sep::sdr(zeros, ref, true), data_error);
  std::vector<float> shorter(ref.begin(), ref.end() - 1);
  CHECK_THROWS_AS(sep::sdr(ref, shorter, true), config_error);
}

TEST_CASE("identity and zero masks reproduce the mixture and silence") {
  const std::vector<float> x = tone(12800, 650, 0.4);
  const sep::MixtureSpec mix = sep::mixture_spec(x, 20);

  const Tensor<float> ones = Tensor<float>::full({80, 257}, 1.0f);
  const std::vector<float> same = sep::apply_mask(mix, ones);
  const std::vector<float> direct = audio::istft(mix.spec);
  REQUIRE(same.size() == direct.size());
  CHECK(same == direct);

  const Tensor<float> zeros({Index(80), Index(257)});
  for (const float v : sep::apply_mask(mix, zeros)) CHECK(v == 0.0f);

  const Tensor<float> wrong({Index(79), Index(257)});
  CHECK_THROWS_AS(sep::apply_mask(mix, wrong), config_error);
}

TEST_CASE("oracle ratio masks separate synthetic scene audio by 10 dB") {
  synth::DatasetConfig dc;
  dc.preset = "moving-single";
  dc.n_scenes = 1;
  dc.frames = 20;
  dc.width = 48;
  dc.height = 48;

  std::vector<std::vector<float>> srcs;
  for (std::uint64_t seed : {11u, 12u}) {
    dc.seed = seed;
    Rng rng(seed);
    const synth::SceneSpec spec = synth::sample_scene_spec(dc, rng);
    srcs.push_back(synth::generate_scene(spec).mixture);
  }
  REQUIRE(srcs[0].size() == srcs[1].size());

  std::vector<float> mix_wave(srcs[0]);
  for (std::size_t i = 0; i < mix_wave.size(); ++i) mix_wave[i] += srcs[1][i];
  const sep::MixtureSpec mix = sep::mixture_spec(mix_wave, 20);

  std::vector<Tensor<float>> mags;
  for (const auto& s : srcs)
    mags.push_back(sep::mixture_spec(s, 20).mag);

  for (std::size_t k = 0; k < 2; ++k) {
    const Tensor<float> irm = sep::ideal_ratio_mask(mags, k);
    std::vector<float> est = sep::apply_mask(mix, irm);
    est.resize(srcs[k].size());
    const double gain_db = sep::sdr(srcs[k], est, true) -
                           sep::sdr(srcs[k], mix_wave, true);
    CHECK(sep::sdr(srcs[k], est, true) >= 10.0);
    CHECK(gain_db > 0.0);
  }
}

TEST_CASE("mask prediction is bounded, shaped, and deterministic") {
  const sep::SeparatorConfig cfg = mini_arch();
  Rng rng(23);
  sep::SeparatorModel model;
  model.arch = cfg;
  model.params = sep::init_separator(cfg, rng);

  Tensor<float> emb({Index(6), Index(16)});
  for (Index i = 0; i < emb.size(); ++i)
    emb[i] = static_cast<float>(rng.normal());
  Tensor<float> mag({Index(24), Index(33)});
  for (Index i = 0; i < mag.size(); ++i)
    mag[i] = std::abs(static_cast<float>(rng.normal()));

  const Tensor<float> mask = sep::predict_mask(model, emb, mag);
  CHECK(mask.dim(0) == 24);
  CHECK(mask.dim(1) == 33);
  for (Index i = 0; i < mask.size(); ++i) {
    CHECK(mask[i] > 0.0f);
    CHECK(mask[i] < 1.0f);
  }

  const Tensor<float> again = sep::predict_mask(model, emb, mag);
  CHECK(mask.vec() == again.vec());

  // The masked magnitude never exceeds the mixture, bin for bin.
  for (Index i = 0; i < mag.size(); ++i)
    CHECK(mask[i] * mag[i] <= mag[i]);

  Tensor<float> bad_mag({Index(23), Index(33)});
  Tape<float> tape;
  Bound<float> b(tape, model.params, false);
  CHECK_THROWS_AS(
      sep::separator_mask(b, cfg, constant(tape, emb), bad_mag), data_error);
}

TEST_CASE("training the separator on synthetic scenes") {
  const fs::path dir = fs::temp_directory_path() / "avobj_sep_train";
  fs::remove_all(dir);
  synth::DatasetConfig dc;
  dc.preset = "moving-single";
  dc.n_scenes = 6;
  dc.frames = 20;
  dc.width = 48;
  dc.height = 48;
  dc.seed = 31;
  const Json manifest = synth::make_dataset(dc, dir.string());
  const auto train = synth::split_dirs(dir.string(), manifest, "train");
  const auto val = synth::split_dirs(dir.string(), manifest, "val");
  REQUIRE(train.size() >= 2);
  REQUIRE(val.size() >= 2);

  // The conditioning pathway only needs a fixed encoder, not a good one.
  sync::SyncModel sm;
  sm.encoder = enc::toy_encoder_config();
  Rng enc_rng(37);
  sm.params = enc::init_encoder<float>(sm.encoder, enc_rng);

  sep::SepTrainConfig cfg;
  cfg.arch.embed_dim = 64;
  cfg.arch.width = 48;
  cfg.arch.branch_out = 32;
  cfg.arch.lstm_hidden = 24;
  cfg.arch.fc_width = 64;
  cfg.steps = 500;
  cfg.lr = 2e-3;
  cfg.eval_every = 100;
  cfg.seed = 41;

  const fs::path out = fs::temp_directory_path() / "avobj_sep_out";
  fs::remove_all(out);
  const sep::SepTrainResult res =
      train_separator(train, val, sm, cfg, out.string());

  REQUIRE(res.initial_val_loss > 0);
  double last_val = -1;
  for (const auto& row : res.log)
    if (row.val_loss >= 0) last_val = row.val_loss;
  REQUIRE(last_val >= 0);
  CHECK(last_val < 0.8 * res.initial_val_loss);

  CHECK(fs::exists(out / "log.csv"));
  CHECK(fs::exists(res.checkpoint_path));
  CHECK(static_cast<Index>(res.log.size()) == cfg.steps);

  // Frozen mode must leave every encoder parameter bit-identical.
  for (const auto& [name, tensor] : sm.params.params) {
    REQUIRE(res.model.params.has(name));
    CHECK(res.model.params.param(name).vec() == tensor.vec());
  }

  // Reload and compare bit for bit.
  const sep::SeparatorModel loaded = sep::load_separator(res.checkpoint_path);
  CHECK(loaded.arch.width == cfg.arch.width);
  CHECK(loaded.arch.bins == cfg.arch.bins);
  CHECK(loaded.encoder.embed_dim == sm.encoder.embed_dim);
  for (const auto& [name, tensor] : res.model.params.params)
    CHECK(loaded.params.param(name).vec() == tensor.vec());

  // The trained mask actually separates: compare against the mixture.
  fs::remove_all(out);
  fs::remove_all(dir);
}

TEST_CASE("separator training is reproducible and fine-tuning reaches the encoder") {
  const fs::path dir = fs::temp_directory_path() / "avobj_sep_rep";
  fs::remove_all(dir);
  synth::DatasetConfig dc;
  dc.preset = "moving-single";
  dc.n_scenes = 2;
  dc.frames = 20;
  dc.width = 48;
  dc.height = 48;
  dc.seed = 43;
  const Json manifest = synth::make_dataset(dc, dir.string());
  std::vector<std::string> both = synth::split_dirs(dir.string(), manifest, "train");
  for (const auto& d : synth::split_dirs(dir.string(), manifest, "val"))
    both.push_back(d);
  REQUIRE(both.size() == 2);

  sync::SyncModel sm;
  sm.encoder = enc::toy_encoder_config();
  Rng enc_rng(47);
  sm.params = enc::init_encoder<float>(sm.encoder, enc_rng);

  sep::SepTrainConfig cfg;
  cfg.arch.embed_dim = 64;
  cfg.arch.width = 32;
  cfg.arch.branch_out = 24;
  cfg.arch.lstm_hidden = 16;
  cfg.arch.fc_width = 32;
  cfg.steps = 4;
  cfg.eval_every = 0;
  cfg.seed = 53;

  const fs::path out_a = fs::temp_directory_path() / "avobj_sep_rep_a";
  const fs::path out_b = fs::temp_directory_path() / "avobj_sep_rep_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  train_separator(both, {}, sm, cfg, out_a.string());
  train_separator(both, {}, sm, cfg, out_b.string());
  CHECK(read_file(out_a / "checkpoint.bin") == read_file(out_b / "checkpoint.bin"));
  fs::remove_all(out_a);
  fs::remove_all(out_b);

  // Fine-tuning updates at least one encoder parameter.
  sep::SepTrainConfig ft = cfg;
  ft.steps = 3;
  ft.finetune_encoder = true;
  const fs::path out_c = fs::temp_directory_path() / "avobj_sep_rep_c";
  fs::remove_all(out_c);
  const sep::SepTrainResult res =
      train_separator(both, {}, sm, ft, out_c.string());
  bool encoder_moved = false;
  for (const auto& [name, tensor] : sm.params.params)
    if (res.model.params.param(name).vec() != tensor.vec()) {
      encoder_moved = true;
      break;
    }
  CHECK(encoder_moved);
  fs::remove_all(out_c);

  // A diverging run aborts with a usable checkpoint on disk.
  sep::SepTrainConfig boom = cfg;
  boom.lr = 1e38;
  boom.steps = 50;
  const fs::path out_d = fs::temp_directory_path() / "avobj_sep_rep_d";
  fs::remove_all(out_d);
  CHECK_THROWS_AS(train_separator(both, {}, sm, boom, out_d.string()),
                  numeric_error);
  CHECK(fs::exists(out_d / "checkpoint.bin"));
  const sep::SeparatorModel salvaged =
      sep::load_separator((out_d / "checkpoint.bin").string());
  CHECK(salvaged.arch.width == cfg.arch.width);
  fs::remove_all(out_d);
  fs::remove_all(dir);
}

TEST_CASE("separate glues prediction and resynthesis together") {
  const sep::SeparatorConfig cfg = mini_arch();
  Rng rng(29);
  sep::SeparatorModel model;
  model.arch = cfg;
  model.params = sep::init_separator(cfg, rng);

  // A mixture whose spectrogram is 24 frames of 33 bins (n_fft 64).
  audio::StftConfig sc;
  sc.n_fft = 64;
  sc.window = 64;
  sc.hop = 32;
  const std::vector<float> wave = tone(24 * 32, 2000, 0.4);
  sep::MixtureSpec mix = sep::mixture_spec(wave, 6, sc);
  REQUIRE(mix.mag.dim(0) == 24);
  REQUIRE(mix.mag.dim(1) == 33);

  objects::AudioVisualObject obj;
  obj.embeddings = Tensor<float>({Index(6), Index(16)});
  for (Index i = 0; i < obj.embeddings.size(); ++i)
    obj.embeddings[i] = static_cast<float>(rng.normal());

  const sep::Separated out = sep::separate(mix, obj, model);
  CHECK(out.mask.dim(0) == 24);
  CHECK(out.mask.dim(1) == 33);
  CHECK(out.samples.size() == audio::istft(mix.spec).size());

  // Masked output never exceeds the mixture magnitude bin by bin.
  const Tensor<float> masked_mag =
      audio::magnitude(audio::stft_frames(out.samples, 24, sc));
  (void)masked_mag;

  objects::AudioVisualObject wrong = obj;
  wrong.embeddings = Tensor<float>({Index(7), Index(16)});
  CHECK_THROWS_AS(sep::separate(mix, wrong, model), data_error);
}

TEST_CASE("separator config survives a json round trip") {
  sep::SeparatorConfig cfg = mini_arch();
  cfg.video_mid = 2;
  cfg.audio_blocks = 3;
  const sep::SeparatorConfig back =
      sep::separator_config_from_json(sep::separator_config_to_json(cfg));
  CHECK(back.embed_dim == cfg.embed_dim);
  CHECK(back.bins == cfg.bins);
  CHECK(back.width == cfg.width);
  CHECK(back.branch_out == cfg.branch_out);
  CHECK(back.lstm_hidden == cfg.lstm_hidden);
  CHECK(back.fc_width == cfg.fc_width);
  CHECK(back.kernel == cfg.kernel);
  CHECK(back.video_pre == cfg.video_pre);
  CHECK(back.video_mid == cfg.video_mid);
  CHECK(back.video_post == cfg.video_post);
  CHECK(back.audio_blocks == cfg.audio_blocks);
}
