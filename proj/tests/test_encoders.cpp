#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avobj/encoders.hpp"

using namespace avobj;
using namespace avobj::enc;

namespace {

Tensor<float> random_clip(Rng& rng, Index T, Index H, Index W) {
  Tensor<float> clip({T, H, W, Index(3)});
  for (Index i = 0; i < clip.size(); ++i)
    clip[i] = static_cast<float>(rng.uniform());
  return clip;
}

Tensor<float> random_mel(Rng& rng, Index rows) {
  Tensor<float> mel({rows, Index(80)});
  for (Index i = 0; i < mel.size(); ++i)
    mel[i] = static_cast<float>(rng.uniform(-23.0, 0.0));
  return mel;
}

}  // namespace

TEST_CASE("toy preset: declared arithmetic and the actual forward agree") {
  const EncoderConfig cfg = toy_encoder_config();
  const auto declared = declared_video_shape(cfg, 16, 64, 64);
  CHECK(declared[0] == 12);
  CHECK(declared[1] == 4);
  CHECK(declared[2] == 4);
  CHECK(declared_audio_frames(cfg, 16) == 12);

  Rng rng(1);
  ParamStore<float> params = init_encoder<float>(cfg, rng);
  Tape<float> tape;
  Bound<float> b(tape, params, false);
  Var<float> fv = encode_video(b, cfg, random_clip(rng, 16, 64, 64));
  REQUIRE(fv.shape().size() == 4);
  CHECK(fv.shape()[0] == 12);
  CHECK(fv.shape()[1] == 4);
  CHECK(fv.shape()[2] == 4);
  CHECK(fv.shape()[3] == 64);

  Var<float> fa = encode_audio(b, cfg, random_mel(rng, 64));
  CHECK(fa.shape()[0] == 12);
  CHECK(fa.shape()[1] == 64);
}

TEST_CASE("toy preset on other grids: 96x96 and a stacked 128x64 frame") {
  const EncoderConfig cfg = toy_encoder_config();
  const auto a = declared_video_shape(cfg, 16, 96, 96);
  CHECK(a[1] == 6);
  CHECK(a[2] == 6);
  const auto b = declared_video_shape(cfg, 16, 128, 64);
  CHECK(b[1] == 8);
  CHECK(b[2] == 4);
}

TEST_CASE("paper preset: declared shapes match the published grid") {
  const EncoderConfig cfg = paper_encoder_config();
  const auto d = declared_video_shape(cfg, 29, 270, 480);
  CHECK(d[0] == 25);
  CHECK(d[1] == 18);
  CHECK(d[2] == 31);
  CHECK(declared_audio_frames(cfg, 29) == 25);
  CHECK(cfg.embed_dim == 1024);
  // Other clip lengths track T-4.
  CHECK(declared_video_shape(cfg, 10, 270, 480)[0] == 6);
  CHECK(declared_audio_frames(cfg, 10) == 6);
}

TEST_CASE("paper preset: a reduced-size forward matches its declaration") {
  const EncoderConfig cfg = paper_encoder_config();
  const auto d = declared_video_shape(cfg, 7, 32, 32);
  Rng rng(2);
  ParamStore<float> params = init_encoder<float>(cfg, rng);
  Tape<float> tape;
  Bound<float> b(tape, params, false);
  Var<float> fv = encode_video(b, cfg, random_clip(rng, 7, 32, 32));
  CHECK(fv.shape()[0] == d[0]);
  CHECK(fv.shape()[1] == d[1]);
  CHECK(fv.shape()[2] == d[2]);
  CHECK(fv.shape()[3] == 1024);
  Var<float> fa = encode_audio(b, cfg, random_mel(rng, 28));
  CHECK(fa.shape()[0] == d[0]);
  CHECK(fa.shape()[1] == 1024);
}

TEST_CASE("indivisible clip sizes are rejected with a proposal") {
  const EncoderConfig cfg = toy_encoder_config();
  CHECK_THROWS_WITH_AS(declared_video_shape(cfg, 16, 70, 64),
                       doctest::Contains("64x64"), config_error);
  CHECK_THROWS_WITH_AS(declared_video_shape(cfg, 16, 64, 100),
                       doctest::Contains("96"), config_error);
  // Too short a clip for the temporal kernel.
  CHECK_THROWS_AS(declared_video_shape(cfg, 4, 64, 64), config_error);
}

TEST_CASE("zero audio input stays finite in eval mode") {
  const EncoderConfig cfg = toy_encoder_config();
  Rng rng(3);
  ParamStore<float> params = init_encoder<float>(cfg, rng);
  Tensor<float> mel({Index(40), Index(80)});  // all zeros
  const Tensor<float> fa = encode_audio_eval(cfg, params, mel);
  for (Index i = 0; i < fa.size(); ++i) CHECK(std::isfinite(fa[i]));
}

TEST_CASE("mel length must be a whole number of video frames") {
  const EncoderConfig cfg = toy_encoder_config();
  Rng rng(4);
  ParamStore<float> params = init_encoder<float>(cfg, rng);
  Tensor<float> mel({Index(41), Index(80)});
  CHECK_THROWS_AS(encode_audio_eval(cfg, params, mel), data_error);
}

TEST_CASE("shifting audio by one video frame shifts embeddings one slot") {
  const EncoderConfig cfg = toy_encoder_config();
  Rng rng(5);
  ParamStore<float> params = init_encoder<float>(cfg, rng);
  const Tensor<float> mel_a = random_mel(rng, 48);  // T=12, T'=8
  Tensor<float> mel_b({Index(48), Index(80)});
  for (Index i = 0; i < 48; ++i)
    for (Index j = 0; j < 80; ++j)
      mel_b(i, j) = i < 4 ? static_cast<float>(rng.uniform(-23.0, 0.0))
                          : mel_a(i - 4, j);
  const Tensor<float> fa = encode_audio_eval(cfg, params, mel_a);
  const Tensor<float> fb = encode_audio_eval(cfg, params, mel_b);
  // Frame t of the shifted signal sees exactly the rows frame t-1 saw in
  // the original, provided its receptive field (mel rows 4t-4 .. 4t+20)
  // avoids both clip edges.
  for (Index t = 2; t <= 6; ++t)
    for (Index d = 0; d < 64; ++d) CHECK(fb(t, d) == fa(t - 1, d));
}

TEST_CASE("encoders are deterministic") {
  const EncoderConfig cfg = toy_encoder_config();
  Rng rng_a(6), rng_b(6);
  ParamStore<float> pa = init_encoder<float>(cfg, rng_a);
  ParamStore<float> pb = init_encoder<float>(cfg, rng_b);
  REQUIRE(pa.params.size() == pb.params.size());
  for (const auto& [name, t] : pa.params) {
    const Tensor<float>& u = pb.param(name);
    for (Index i = 0; i < t.size(); ++i) CHECK(t[i] == u[i]);
  }
  Rng rng(7);
  const Tensor<float> clip = random_clip(rng, 8, 64, 64);
  const VideoFeatures f1 = encode_video_eval(cfg, pa, clip);
  const VideoFeatures f2 = encode_video_eval(cfg, pa, clip);
  for (Index i = 0; i < f1.f.size(); ++i) CHECK(f1.f[i] == f2.f[i]);
  CHECK(f1.stride == 16);
  CHECK(f1.offset == 2);
}

TEST_CASE("encoder config roundtrips through json") {
  const EncoderConfig cfg = paper_encoder_config();
  const Json j = encoder_config_to_json(cfg);
  const EncoderConfig back = encoder_config_from_json(j);
  CHECK(back.preset == cfg.preset);
  CHECK(back.embed_dim == cfg.embed_dim);
  CHECK(back.video.size() == cfg.video.size());
  CHECK(back.audio.size() == cfg.audio.size());
  for (std::size_t i = 0; i < cfg.video.size(); ++i) {
    CHECK(back.video[i].name == cfg.video[i].name);
    CHECK(back.video[i].kernel == cfg.video[i].kernel);
    CHECK(back.video[i].stride == cfg.video[i].stride);
    CHECK(back.video[i].pad == cfg.video[i].pad);
    CHECK(back.video[i].ceil_mode == cfg.video[i].ceil_mode);
    CHECK(back.video[i].head == cfg.video[i].head);
  }
  CHECK(back.video_mean == cfg.video_mean);
  CHECK(back.audio_std == cfg.audio_std);
}

TEST_CASE("gradients flow to every encoder parameter") {
  const EncoderConfig cfg = toy_encoder_config();
  Rng rng(8);
  ParamStore<float> params = init_encoder<float>(cfg, rng);
  Tape<float> tape;
  Bound<float> b(tape, params, true);
  Var<float> fv = encode_video(b, cfg, random_clip(rng, 6, 64, 64));
  Var<float> fa = encode_audio(b, cfg, random_mel(rng, 24));
  Var<float> loss = add(sum(fv), sum(fa));
  tape.backward(loss);
  const auto grads = b.grads();
  for (const auto& [name, g] : params.params) {
    INFO(name);
    CHECK(grads.count(name) == 1);
  }
}
