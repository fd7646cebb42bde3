#include "avobj/encoders.hpp"

#include <cmath>

namespace avobj::enc {

namespace detail {

Index conv_out_dim(Index in, Index k, Index s, Index p) {
  if (in + 2 * p < k)
    throw config_error("input extent " + std::to_string(in) +
                       " is smaller than a kernel of " + std::to_string(k));
  return (in + 2 * p - k) / s + 1;
}

Index pool_out_len(Index in, Index k, Index s, Index p, bool ceil_mode) {
  if (in + 2 * p < k)
    throw config_error("input extent " + std::to_string(in) +
                       " is smaller than a pool window of " +
                       std::to_string(k));
  const Index num = in + 2 * p - k;
  return (ceil_mode ? (num + s - 1) / s : num / s) + 1;
}

namespace {

// Walk one spatial/temporal axis through a layer list. axis: 0=t, 1=h, 2=w.
Index walk_axis(const std::vector<LayerSpec>& layers, Index extent, int axis) {
  for (const LayerSpec& l : layers) {
    if (axis == 0 && l.type != "conv3d") continue;  // 2d stages keep time
    const auto a = static_cast<std::size_t>(axis);
    if (l.type == "pool2d")
      extent = pool_out_len(extent, l.kernel[a], l.stride[a], l.pad[a],
                            l.ceil_mode);
    else
      extent = conv_out_dim(extent, l.kernel[a], l.stride[a], l.pad[a]);
  }
  return extent;
}

Index nearest_multiple(Index v, Index div) {
  const Index down = (v / div) * div;
  const Index up = down + div;
  if (down >= div && v - down <= up - v) return down;
  return up;
}

LayerSpec conv3d_layer(std::string name, Index filters,
                       std::array<Index, 3> k, std::array<Index, 3> s,
                       std::array<Index, 3> p) {
  LayerSpec l;
  l.name = std::move(name);
  l.type = "conv3d";
  l.filters = filters;
  l.kernel = k;
  l.stride = s;
  l.pad = p;
  return l;
}

LayerSpec conv2d_layer(std::string name, Index filters, Index kh, Index kw,
                       Index sh, Index sw, Index ph, Index pw,
                       bool head = false) {
  LayerSpec l;
  l.name = std::move(name);
  l.type = "conv2d";
  l.filters = filters;
  l.kernel = {1, kh, kw};
  l.stride = {1, sh, sw};
  l.pad = {0, ph, pw};
  l.head = head;
  return l;
}

LayerSpec pool2d_layer(std::string name, Index kh, Index kw, Index sh,
                       Index sw, Index ph, Index pw, bool ceil_mode) {
  LayerSpec l;
  l.name = std::move(name);
  l.type = "pool2d";
  l.kernel = {1, kh, kw};
  l.stride = {1, sh, sw};
  l.pad = {0, ph, pw};
  l.ceil_mode = ceil_mode;
  return l;
}

}  // namespace
}  // namespace detail

using detail::conv2d_layer;
using detail::conv3d_layer;
using detail::pool2d_layer;

EncoderConfig toy_encoder_config() {
  EncoderConfig cfg;
  cfg.preset = "toy";
  cfg.embed_dim = 64;
  cfg.spatial_stride = 16;
  cfg.temporal_offset = 2;
  cfg.temporal_crop = 4;
  cfg.video = {
      conv3d_layer("conv1", 16, {5, 5, 5}, {1, 4, 4}, {0, 2, 2}),
      conv2d_layer("conv2", 64, 5, 5, 4, 4, 2, 2),
      conv2d_layer("fc", 64, 1, 1, 1, 1, 0, 0, true),
  };
  cfg.audio = {
      conv2d_layer("conv1", 32, 3, 3, 1, 2, 1, 1),
      conv2d_layer("conv2", 64, 3, 3, 2, 2, 1, 1),
      conv2d_layer("conv3", 64, 3, 3, 2, 2, 1, 1),
      conv2d_layer("conv4", 64, 5, 10, 1, 1, 0, 0),
      conv2d_layer("fc", 64, 1, 1, 1, 1, 0, 0, true),
  };
  return cfg;
}

EncoderConfig paper_encoder_config() {
  EncoderConfig cfg;
  cfg.preset = "paper";
  cfg.embed_dim = 1024;
  cfg.spatial_stride = 16;
  cfg.temporal_offset = 2;
  cfg.temporal_crop = 4;
  // Video: a 3D layer first, then 2D stages. Pools round up so 270x480
  // lands on an 18x31 grid.
  cfg.video = {
      conv3d_layer("conv1", 64, {5, 7, 7}, {1, 2, 2}, {0, 3, 3}),
      conv2d_layer("conv2", 128, 5, 5, 2, 2, 2, 2),
      pool2d_layer("mp2", 3, 3, 2, 2, 1, 1, true),
      conv2d_layer("conv3", 256, 3, 3, 1, 1, 1, 1),
      conv2d_layer("conv4", 256, 3, 3, 1, 1, 1, 1),
      conv2d_layer("conv5", 256, 3, 3, 1, 1, 1, 1),
      conv2d_layer("conv6", 512, 5, 5, 1, 1, 2, 2),
      pool2d_layer("mp6", 3, 3, 2, 2, 1, 1, true),
      conv2d_layer("fc7", 512, 1, 1, 1, 1, 0, 0),
      conv2d_layer("fc8", 1024, 1, 1, 1, 1, 0, 0, true),
  };
  // Audio: time runs down the spectrogram, frequency across. The final
  // valid 5x4 kernel brings both streams to the same T-4 frames.
  cfg.audio = {
      conv2d_layer("conv1", 64, 3, 3, 1, 2, 1, 1),
      pool2d_layer("mp1", 1, 3, 1, 2, 0, 0, false),
      conv2d_layer("conv2", 192, 3, 3, 1, 1, 1, 1),
      pool2d_layer("mp2", 3, 3, 2, 2, 1, 0, false),
      conv2d_layer("conv3", 256, 3, 3, 1, 1, 1, 1),
      conv2d_layer("conv4", 256, 3, 3, 1, 1, 1, 1),
      conv2d_layer("conv5", 256, 3, 3, 1, 1, 1, 1),
      pool2d_layer("mp5", 3, 3, 2, 2, 1, 0, false),
      conv2d_layer("conv6", 512, 5, 4, 1, 1, 0, 0),
      conv2d_layer("fc7", 512, 1, 1, 1, 1, 0, 0),
      conv2d_layer("fc8", 1024, 1, 1, 1, 1, 0, 0, true),
  };
  return cfg;
}

std::array<Index, 3> declared_video_shape(const EncoderConfig& cfg, Index T,
                                          Index H, Index W) {
  const Index div = cfg.preset == "toy" ? cfg.spatial_stride : 2;
  if (H % div != 0 || W % div != 0)
    throw config_error(
        "clip size " + std::to_string(H) + "x" + std::to_string(W) +
        " does not divide by " + std::to_string(div) + "; nearest valid is " +
        std::to_string(detail::nearest_multiple(H, div)) + "x" +
        std::to_string(detail::nearest_multiple(W, div)));
  if (T <= cfg.temporal_crop)
    throw config_error("clip needs more than " +
                       std::to_string(cfg.temporal_crop) + " frames, got " +
                       std::to_string(T));
  return {detail::walk_axis(cfg.video, T, 0), detail::walk_axis(cfg.video, H, 1),
          detail::walk_axis(cfg.video, W, 2)};
}

Index declared_audio_frames(const EncoderConfig& cfg, Index T) {
  // Audio enters as an image: time is the height axis, mel bins the width.
  Index t = 4 * T;
  for (const LayerSpec& l : cfg.audio) {
    if (l.type == "pool2d")
      t = detail::pool_out_len(t, l.kernel[1], l.stride[1], l.pad[1],
                               l.ceil_mode);
    else
      t = detail::conv_out_dim(t, l.kernel[1], l.stride[1], l.pad[1]);
  }
  return t;
}

namespace {

Json layer_to_json(const LayerSpec& l) {
  return Json{{"name", l.name},
              {"type", l.type},
              {"filters", l.filters},
              {"kernel", {l.kernel[0], l.kernel[1], l.kernel[2]}},
              {"stride", {l.stride[0], l.stride[1], l.stride[2]}},
              {"pad", {l.pad[0], l.pad[1], l.pad[2]}},
              {"ceil_mode", l.ceil_mode},
              {"head", l.head}};
}

LayerSpec layer_from_json(const Json& j) {
  LayerSpec l;
  l.name = j.at("name");
  l.type = j.at("type");
  l.filters = j.at("filters");
  for (std::size_t i = 0; i < 3; ++i) {
    l.kernel[i] = j.at("kernel")[i];
    l.stride[i] = j.at("stride")[i];
    l.pad[i] = j.at("pad")[i];
  }
  l.ceil_mode = j.at("ceil_mode");
  l.head = j.at("head");
  return l;
}

}  // namespace

Json encoder_config_to_json(const EncoderConfig& cfg) {
  Json j{{"preset", cfg.preset},
         {"embed_dim", cfg.embed_dim},
         {"spatial_stride", cfg.spatial_stride},
         {"temporal_offset", cfg.temporal_offset},
         {"temporal_crop", cfg.temporal_crop},
         {"video_mean", {cfg.video_mean[0], cfg.video_mean[1], cfg.video_mean[2]}},
         {"video_std", {cfg.video_std[0], cfg.video_std[1], cfg.video_std[2]}},
         {"audio_mean", cfg.audio_mean},
         {"audio_std", cfg.audio_std}};
  j["video"] = Json::array();
  for (const LayerSpec& l : cfg.video) j["video"].push_back(layer_to_json(l));
  j["audio"] = Json::array();
  for (const LayerSpec& l : cfg.audio) j["audio"].push_back(layer_to_json(l));
  return j;
}

EncoderConfig encoder_config_from_json(const Json& j) {
  EncoderConfig cfg;
  cfg.preset = j.at("preset");
  cfg.embed_dim = j.at("embed_dim");
  cfg.spatial_stride = j.at("spatial_stride");
  cfg.temporal_offset = j.at("temporal_offset");
  cfg.temporal_crop = j.at("temporal_crop");
  for (std::size_t i = 0; i < 3; ++i) {
    cfg.video_mean[i] = j.at("video_mean")[i];
    cfg.video_std[i] = j.at("video_std")[i];
  }
  cfg.audio_mean = j.at("audio_mean");
  cfg.audio_std = j.at("audio_std");
  for (const Json& jl : j.at("video")) cfg.video.push_back(layer_from_json(jl));
  for (const Json& jl : j.at("audio")) cfg.audio.push_back(layer_from_json(jl));
  return cfg;
}

VideoFeatures encode_video_eval(const EncoderConfig& cfg,
                                ParamStore<float>& params,
                                const Tensor<float>& clip) {
  Tape<float> tape;
  Bound<float> b(tape, params, false);
  Var<float> y = encode_video(b, cfg, clip);
  return {y.val(), cfg.spatial_stride, cfg.temporal_offset};
}

Tensor<float> encode_audio_eval(const EncoderConfig& cfg,
                                ParamStore<float>& params,
                                const Tensor<float>& mel) {
  Tape<float> tape;
  Bound<float> b(tape, params, false);
  return encode_audio(b, cfg, mel).val();
}

}  // namespace avobj::enc
