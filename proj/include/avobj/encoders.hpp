#pragma once

#include <array>
#include <string>
#include <vector>

#include "avobj/config.hpp"
#include "avobj/layers.hpp"

namespace avobj::enc {

// One stage of an encoder stack. Kernels, strides and pads are (t, h, w);
// 2D stages ignore the leading entry. A head stage is a linear projection,
// so it carries a bias and skips the batchnorm + relu that every other
// stage gets.
struct LayerSpec {
  std::string name;
  std::string type;  // conv3d | conv2d | pool2d
  Index filters = 0;
  std::array<Index, 3> kernel{1, 1, 1};
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> pad{0, 0, 0};
  bool ceil_mode = false;  // pool2d rounding
  bool head = false;
};

// Two-stream architecture plus the input standardization constants. The
// constants are corpus statistics; training writes the measured values here
// and they travel with the checkpoint manifest.
struct EncoderConfig {
  std::string preset;  // paper | toy
  Index embed_dim = 0;
  Index spatial_stride = 0;   // input pixels per grid cell
  Index temporal_offset = 0;  // video frame index of feature frame 0
  Index temporal_crop = 0;    // T' = T - temporal_crop
  std::vector<LayerSpec> video;
  std::vector<LayerSpec> audio;
  std::array<double, 3> video_mean{0.5, 0.5, 0.5};
  std::array<double, 3> video_std{0.25, 0.25, 0.25};
  double audio_mean = -11.5;  // log-mel of near silence dominates
  double audio_std = 4.0;
};

EncoderConfig toy_encoder_config();
EncoderConfig paper_encoder_config();

Json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const Json& j);

// Output grid for a (T, H, W) clip under cfg's declared stride arithmetic,
// as {T', h, w}. Throws config_error proposing the nearest valid size when
// the dims do not divide cleanly.
std::array<Index, 3> declared_video_shape(const EncoderConfig& cfg, Index T,
                                          Index H, Index W);
// Embedding count for a mel spectrogram with 4T rows, as {T'}.
Index declared_audio_frames(const EncoderConfig& cfg, Index T);

// Fresh parameters for both streams; draws depend only on rng state.
template <typename S>
ParamStore<S> init_encoder(const EncoderConfig& cfg, Rng& rng);

// Video feature map with its grid geometry attached.
struct VideoFeatures {
  Tensor<float> f;        // (T', h, w, D)
  Index stride = 0;       // pixels per cell
  Index offset = 0;       // video frame of feature frame 0
};

// Tape-based forwards, shared by training and the finite-difference tests.
// clip is (T, H, W, 3) raw [0,1]; mel is (4T, 80) log-mel. Standardization
// happens inside. Outputs: video (T', h, w, D), audio (T', D).
template <typename S>
Var<S> encode_video(Bound<S>& b, const EncoderConfig& cfg, const Tensor<S>& clip);
template <typename S>
Var<S> encode_audio(Bound<S>& b, const EncoderConfig& cfg, const Tensor<S>& mel);

// Eval-mode conveniences running on a private tape.
VideoFeatures encode_video_eval(const EncoderConfig& cfg,
                                ParamStore<float>& params,
                                const Tensor<float>& clip);
Tensor<float> encode_audio_eval(const EncoderConfig& cfg,
                                ParamStore<float>& params,
                                const Tensor<float>& mel);

// ---------------------------------------------------------------------------
// Implementation.

namespace detail {

inline std::string param_name(const std::string& stream,
                              const LayerSpec& layer, const char* leaf) {
  return stream + "." + layer.name + "." + leaf;
}

// Conv output length; throws with a field tag when the geometry is invalid.
Index conv_out_dim(Index in, Index k, Index s, Index p);
Index pool_out_len(Index in, Index k, Index s, Index p, bool ceil_mode);

}  // namespace detail

template <typename S>
ParamStore<S> init_encoder(const EncoderConfig& cfg, Rng& rng) {
  ParamStore<S> store;
  auto build = [&](const std::string& stream,
                   const std::vector<LayerSpec>& layers, Index in_ch) {
    Index c = in_ch;
    for (const LayerSpec& l : layers) {
      if (l.type == "pool2d") continue;
      Shape wshape;
      Index fan_in = 0;
      if (l.type == "conv3d") {
        wshape = {l.filters, c, l.kernel[0], l.kernel[1], l.kernel[2]};
        fan_in = c * l.kernel[0] * l.kernel[1] * l.kernel[2];
      } else {
        wshape = {l.filters, c, l.kernel[1], l.kernel[2]};
        fan_in = c * l.kernel[1] * l.kernel[2];
      }
      store.ensure(detail::param_name(stream, l, "w"),
                   he_normal<S>(rng, std::move(wshape), fan_in));
      if (l.head)
        store.ensure(detail::param_name(stream, l, "b"),
                     Tensor<S>({l.filters}));
      else
        init_batchnorm(store, detail::param_name(stream, l, "bn"), l.filters);
      c = l.filters;
    }
  };
  build("video", cfg.video, 3);
  build("audio", cfg.audio, 1);
  return store;
}

namespace detail {

// Shared stack walker. x enters as (1, C, T, H, W) for streams with a conv3d
// front end, or (N, C, H, W) directly. After the last conv3d the tensor is
// flattened to per-frame batches.
template <typename S>
Var<S> run_stack(Bound<S>& b, const std::string& stream,
                 const std::vector<LayerSpec>& layers, Var<S> x, bool in3d) {
  for (const LayerSpec& l : layers) {
    if (l.type == "conv3d") {
      if (!in3d) throw config_error(stream + "." + l.name +
                                    ": conv3d after a 2d stage");
      x = conv3d(x, b.p(param_name(stream, l, "w")), l.stride[0], l.stride[1],
                 l.stride[2], l.pad[0], l.pad[1], l.pad[2]);
    } else {
      if (in3d) {
        // (1, C, T, H, W) -> (T, C, H, W): frames become the batch.
        const Shape& s = x.shape();
        x = reshape(permute(x, {0, 2, 1, 3, 4}), {s[2], s[1], s[3], s[4]});
        in3d = false;
      }
      if (l.type == "conv2d") {
        x = conv2d(x, b.p(param_name(stream, l, "w")), l.stride[1],
                   l.stride[2], l.pad[1], l.pad[2]);
      } else if (l.type == "pool2d") {
        x = maxpool2d(x, l.kernel[1], l.kernel[2], l.stride[1], l.stride[2],
                      l.pad[1], l.pad[2], l.ceil_mode);
        continue;
      } else {
        throw config_error(stream + "." + l.name + ": unknown layer type '" +
                           l.type + "'");
      }
    }
    if (l.head) {
      Var<S> bias = b.p(param_name(stream, l, "b"));
      Shape bshape(x.shape().size(), 1);
      bshape[1] = l.filters;
      x = add(x, reshape(bias, std::move(bshape)));
    } else {
      x = batchnorm(b, param_name(stream, l, "bn"), x, 1);
      x = relu(x);
    }
  }
  if (in3d) {
    const Shape& s = x.shape();
    x = reshape(permute(x, {0, 2, 1, 3, 4}), {s[2], s[1], s[3], s[4]});
  }
  return x;
}

}  // namespace detail

template <typename S>
Var<S> encode_video(Bound<S>& b, const EncoderConfig& cfg,
                    const Tensor<S>& clip) {
  if (clip.rank() != 4 || clip.dim(3) != 3)
    throw config_error("video clip must be (T, H, W, 3)");
  const Index T = clip.dim(0), H = clip.dim(1), W = clip.dim(2);
  declared_video_shape(cfg, T, H, W);  // validates divisibility

  // Standardize and lay out as (1, 3, T, H, W).
  Tensor<S> x({Index(1), Index(3), T, H, W});
  for (Index c = 0; c < 3; ++c) {
    const S m = static_cast<S>(cfg.video_mean[static_cast<std::size_t>(c)]);
    const S sd = static_cast<S>(cfg.video_std[static_cast<std::size_t>(c)]);
    for (Index t = 0; t < T; ++t)
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j)
          x(Index(0), c, t, i, j) = (clip(t, i, j, c) - m) / sd;
  }
  Var<S> y = detail::run_stack(b, "video", cfg.video,
                               constant(b.tape, std::move(x)), true);
  // (T', D, h, w) -> (T', h, w, D)
  return permute(y, {0, 2, 3, 1});
}

template <typename S>
Var<S> encode_audio(Bound<S>& b, const EncoderConfig& cfg,
                    const Tensor<S>& mel) {
  if (mel.rank() != 2) throw config_error("mel input must be (4T, n_mels)");
  if (mel.dim(0) % 4 != 0)
    throw data_error("mel frame count " + std::to_string(mel.dim(0)) +
                     " is not a multiple of 4");
  const Index L = mel.dim(0), M = mel.dim(1);
  Tensor<S> x({Index(1), Index(1), L, M});
  const S m = static_cast<S>(cfg.audio_mean);
  const S sd = static_cast<S>(cfg.audio_std);
  for (Index i = 0; i < L; ++i)
    for (Index j = 0; j < M; ++j) x(Index(0), Index(0), i, j) = (mel(i, j) - m) / sd;
  Var<S> y = detail::run_stack(b, "audio", cfg.audio,
                               constant(b.tape, std::move(x)), false);
  // (1, D, T', 1) -> (T', D)
  const Shape& s = y.shape();
  if (s[3] != 1)
    throw config_error("audio stack must reduce frequency to 1, got " +
                       std::to_string(s[3]));
  return reshape(permute(y, {0, 2, 1, 3}), {s[2], s[1]});
}

}  // namespace avobj::enc
