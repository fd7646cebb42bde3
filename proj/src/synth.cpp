#include "avobj/synth.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "avobj/audio.hpp"
#include "avobj/image.hpp"

namespace avobj::synth {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Envelope = 0.4 + 0.18 sin + 0.12 sin, so 0.7 is its exact ceiling.
constexpr double kEnvMax = 0.7;

double path_at(const PathSpec& p, Index t, Index frames, int axis) {
  const double u = static_cast<double>(t) / static_cast<double>(frames);
  if (axis == 0)
    return p.base_x + p.amp_x * std::sin(kTwoPi * p.freq_x * u + p.phase_x);
  return p.base_y + p.amp_y * std::sin(kTwoPi * p.freq_y * u + p.phase_y);
}

void check_path(const PathSpec& p, double radius, Index w, Index h,
                const std::string& field) {
  const double x0 = p.base_x - std::abs(p.amp_x) - radius;
  const double x1 = p.base_x + std::abs(p.amp_x) + radius;
  const double y0 = p.base_y - std::abs(p.amp_y) - radius;
  const double y1 = p.base_y + std::abs(p.amp_y) + radius;
  if (x0 < 0 || y0 < 0 || x1 > w - 1 || y1 > h - 1)
    throw config_error(field + ": trajectory leaves the frame");
}

struct EnvelopeParams {
  double f1, f2, p1, p2;  // Hz and radians
};

EnvelopeParams draw_envelope_params(Rng& rng) {
  EnvelopeParams e;
  e.f1 = rng.uniform(1.2, 2.4);
  e.f2 = rng.uniform(3.0, 5.0);
  e.p1 = rng.uniform(0.0, kTwoPi);
  e.p2 = rng.uniform(0.0, kTwoPi);
  return e;
}

double envelope_value(const EnvelopeParams& e, double seconds) {
  return 0.4 + 0.18 * std::sin(kTwoPi * e.f1 * seconds + e.p1) +
         0.12 * std::sin(kTwoPi * e.f2 * seconds + e.p2);
}

bool frame_active(const SourceSpec& src, Index t) {
  for (const auto& iv : src.active)
    if (t >= iv[0] && t < iv[1]) return true;
  return false;
}

struct BlobState {
  double x, y;      // screen center
  double radius;
  std::array<float, 3> color;
  double tex_phase;
  double bright;    // 1 for distractors
  double aperture;  // mouth semi-axis in px; <= 0 disables the mouth
};

void draw_blob(Tensor<float>& frame, const BlobState& b) {
  const Index H = frame.dim(1), W = frame.dim(2);
  const double sigma = b.radius / 1.5;
  const double cut = 2.2 * b.radius;
  const Index x0 = std::max<Index>(0, static_cast<Index>(b.x - cut));
  const Index x1 = std::min<Index>(W - 1, static_cast<Index>(b.x + cut) + 1);
  const Index y0 = std::max<Index>(0, static_cast<Index>(b.y - cut));
  const Index y1 = std::min<Index>(H - 1, static_cast<Index>(b.y + cut) + 1);
  const double my = b.y + 0.35 * b.radius;
  const double mouth_ax = 0.45 * b.radius;
  for (Index y = y0; y <= y1; ++y)
    for (Index x = x0; x <= x1; ++x) {
      const double dx = x - b.x, dy = y - b.y;
      const double d2 = dx * dx + dy * dy;
      if (d2 > cut * cut) continue;
      const double d = std::sqrt(d2);
      const double g = std::exp(-d2 / (2.0 * sigma * sigma));
      const double alpha = std::min(1.0, 1.4 * g);
      const double ring =
          0.82 + 0.18 * std::cos(4.0 * d / b.radius + b.tex_phase);
      double mouth = 1.0;
      if (b.aperture > 0) {
        const double ex = dx / mouth_ax;
        const double ey = (y - my) / b.aperture;
        if (ex * ex + ey * ey <= 1.0) mouth = 0.25;
      }
      for (Index c = 0; c < 3; ++c) {
        const double col =
            std::clamp(b.color[static_cast<std::size_t>(c)] * ring * b.bright *
                           mouth,
                       0.0, 1.0);
        frame(c, y, x) = static_cast<float>((1.0 - alpha) * frame(c, y, x) +
                                            alpha * col);
      }
    }
}

struct TexSpot {
  double x, y, amp;
};

std::uint32_t crc32_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot checksum " + path);
  std::vector<char> buf(1 << 16);
  uLong crc = crc32(0L, Z_NULL, 0);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const std::streamsize got = is.gcount();
    if (got > 0)
      crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()),
                  static_cast<uInt>(got));
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

Json path_to_json(const PathSpec& p) {
  return Json{{"base_x", p.base_x},   {"base_y", p.base_y},
              {"amp_x", p.amp_x},     {"amp_y", p.amp_y},
              {"freq_x", p.freq_x},   {"freq_y", p.freq_y},
              {"phase_x", p.phase_x}, {"phase_y", p.phase_y}};
}

PathSpec path_from_json(const Json& j) {
  PathSpec p;
  p.base_x = j.at("base_x");
  p.base_y = j.at("base_y");
  p.amp_x = j.at("amp_x");
  p.amp_y = j.at("amp_y");
  p.freq_x = j.at("freq_x");
  p.freq_y = j.at("freq_y");
  p.phase_x = j.at("phase_x");
  p.phase_y = j.at("phase_y");
  return p;
}

}  // namespace

void validate(const SceneSpec& spec) {
  if (spec.frames < 2) throw config_error("frames: need at least 2");
  if (spec.fps <= 0) throw config_error("fps: must be positive");
  if (spec.width < 32) throw config_error("width: minimum is 32");
  if (spec.height < 32) throw config_error("height: minimum is 32");
  if (spec.sample_rate <= 0 || spec.sample_rate % (4 * spec.fps) != 0)
    throw config_error("sample_rate: must be a positive multiple of 4*fps");
  if (spec.sources.empty()) throw config_error("sources: need at least one");
  if (std::abs(spec.audio_delay) >= spec.frames)
    throw config_error("audio_delay: exceeds the clip length");
  for (std::size_t k = 0; k < spec.sources.size(); ++k) {
    const SourceSpec& s = spec.sources[k];
    const std::string tag = "sources[" + std::to_string(k) + "]";
    if (s.radius <= 0) throw config_error(tag + ".radius: must be positive");
    if (s.carrier_hz <= 0 || s.carrier_hz >= spec.sample_rate / 2.0)
      throw config_error(tag + ".carrier_hz: outside (0, nyquist)");
    if (s.mod_depth < 0 || s.mod_depth > 1)
      throw config_error(tag + ".mod_depth: outside [0, 1]");
    check_path(s.path, s.radius, spec.width, spec.height, tag + ".path");
    Index prev_end = -1;
    for (const auto& iv : s.active) {
      if (iv[0] < 0 || iv[1] > spec.frames || iv[0] >= iv[1] ||
          iv[0] < prev_end)
        throw config_error(tag + ".active: intervals must be disjoint, " +
                           "ascending, and inside the clip");
      prev_end = iv[1];
    }
  }
  for (std::size_t k = 0; k < spec.distractors.size(); ++k) {
    const DistractorSpec& d = spec.distractors[k];
    const std::string tag = "distractors[" + std::to_string(k) + "]";
    if (d.radius <= 0) throw config_error(tag + ".radius: must be positive");
    check_path(d.path, d.radius, spec.width, spec.height, tag + ".path");
  }
}

Scene generate_scene(const SceneSpec& spec) {
  validate(spec);
  const Index T = spec.frames, W = spec.width, H = spec.height;
  const Index n_src = static_cast<Index>(spec.sources.size());
  const Index spf = spec.sample_rate / spec.fps;  // samples per frame

  Scene scene;
  scene.spec = spec;
  scene.gt.audio_delay = spec.audio_delay;

  Rng rng(spec.seed);
  std::vector<EnvelopeParams> env_params;
  std::vector<double> audio_phase;
  for (Index k = 0; k < n_src; ++k) {
    Rng src_rng = rng.fork(static_cast<std::uint64_t>(k));
    env_params.push_back(draw_envelope_params(src_rng));
    audio_phase.push_back(src_rng.uniform(0.0, kTwoPi));
  }
  Rng tex_rng = rng.fork(1000);
  std::vector<TexSpot> spots;
  for (int i = 0; i < 4; ++i)
    spots.push_back({tex_rng.uniform(6.0, W - 6.0),
                     tex_rng.uniform(6.0, H - 6.0),
                     tex_rng.uniform(0.08, 0.14)});

  // Frame-level envelopes, zero while inactive.
  scene.gt.envelope.assign(static_cast<std::size_t>(n_src),
                           std::vector<float>(static_cast<std::size_t>(T), 0));
  for (Index k = 0; k < n_src; ++k)
    for (Index t = 0; t < T; ++t)
      if (frame_active(spec.sources[static_cast<std::size_t>(k)], t))
        scene.gt.envelope[static_cast<std::size_t>(k)]
                         [static_cast<std::size_t>(t)] =
            static_cast<float>(envelope_value(
                env_params[static_cast<std::size_t>(k)],
                static_cast<double>(t) / static_cast<double>(spec.fps)));

  // Audio: tone * piecewise-linear envelope, one waveform per source.
  const Index n_samples = T * spf;
  scene.source_wavs.assign(static_cast<std::size_t>(n_src),
                           std::vector<float>(static_cast<std::size_t>(n_samples), 0));
  for (Index k = 0; k < n_src; ++k) {
    const auto& env = scene.gt.envelope[static_cast<std::size_t>(k)];
    auto& wav = scene.source_wavs[static_cast<std::size_t>(k)];
    const double hz = spec.sources[static_cast<std::size_t>(k)].carrier_hz;
    for (Index n = 0; n < n_samples; ++n) {
      const Index t = n / spf;
      const double frac = static_cast<double>(n - t * spf) / spf;
      const double e0 = env[static_cast<std::size_t>(t)];
      const double e1 = t + 1 < T ? env[static_cast<std::size_t>(t + 1)] : e0;
      const double e = e0 + frac * (e1 - e0);
      wav[static_cast<std::size_t>(n)] = static_cast<float>(
          0.5 * e *
          std::sin(kTwoPi * hz * n / spec.sample_rate +
                   audio_phase[static_cast<std::size_t>(k)]));
    }
  }
  // Mixture = exact sample-wise sum, then the configured delay.
  std::vector<float> mix(static_cast<std::size_t>(n_samples), 0.0f);
  for (const auto& wav : scene.source_wavs)
    for (Index n = 0; n < n_samples; ++n)
      mix[static_cast<std::size_t>(n)] += wav[static_cast<std::size_t>(n)];
  const Index shift = spec.audio_delay * spf;
  scene.mixture.assign(static_cast<std::size_t>(n_samples), 0.0f);
  for (Index n = 0; n < n_samples; ++n) {
    const Index m = n - shift;
    if (m >= 0 && m < n_samples)
      scene.mixture[static_cast<std::size_t>(n)] =
          mix[static_cast<std::size_t>(m)];
  }

  // Geometry: camera displacement plus per-blob screen positions.
  scene.gt.camera.resize(static_cast<std::size_t>(T));
  scene.gt.centers.assign(static_cast<std::size_t>(n_src), {});
  scene.gt.boxes.assign(static_cast<std::size_t>(n_src), {});
  scene.gt.active.assign(static_cast<std::size_t>(n_src), {});
  scene.gt.distractor_centers.assign(spec.distractors.size(), {});
  scene.gt.distractor_boxes.assign(spec.distractors.size(), {});
  for (Index t = 0; t < T; ++t) {
    const double camx = path_at(spec.camera, t, T, 0);
    const double camy = path_at(spec.camera, t, T, 1);
    scene.gt.camera[static_cast<std::size_t>(t)] = {camx, camy};
    for (Index k = 0; k < n_src; ++k) {
      const SourceSpec& s = spec.sources[static_cast<std::size_t>(k)];
      const double cx = path_at(s.path, t, T, 0) + camx;
      const double cy = path_at(s.path, t, T, 1) + camy;
      scene.gt.centers[static_cast<std::size_t>(k)].push_back({cx, cy});
      const double e = 1.6 * s.radius;
      scene.gt.boxes[static_cast<std::size_t>(k)].push_back(
          {cx - e, cy - e, cx + e, cy + e});
      scene.gt.active[static_cast<std::size_t>(k)].push_back(
          frame_active(s, t) ? 1 : 0);
    }
    for (std::size_t k = 0; k < spec.distractors.size(); ++k) {
      const DistractorSpec& d = spec.distractors[k];
      const double cx = path_at(d.path, t, T, 0) + camx;
      const double cy = path_at(d.path, t, T, 1) + camy;
      scene.gt.distractor_centers[k].push_back({cx, cy});
      const double e = 1.6 * d.radius;
      scene.gt.distractor_boxes[k].push_back({cx - e, cy - e, cx + e, cy + e});
    }
  }

  // Render. Background lives in world coordinates so it moves with the
  // camera; blobs are drawn over it, sources topmost.
  for (Index t = 0; t < T; ++t) {
    const auto cam = scene.gt.camera[static_cast<std::size_t>(t)];
    Tensor<float> frame({3, H, W});
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double wx = x - cam[0], wy = y - cam[1];
        double base = 0.16 + 0.05 * std::sin(0.11 * wx + 1.0) +
                      0.05 * std::cos(0.09 * wy);
        for (const TexSpot& sp : spots) {
          const double dx = wx - sp.x, dy = wy - sp.y;
          base += sp.amp * std::exp(-(dx * dx + dy * dy) / 72.0);
        }
        frame(Index(0), y, x) = static_cast<float>(std::clamp(base, 0.0, 1.0));
        frame(Index(1), y, x) =
            static_cast<float>(std::clamp(base * 0.95, 0.0, 1.0));
        frame(Index(2), y, x) =
            static_cast<float>(std::clamp(base * 0.90, 0.0, 1.0));
      }
    for (std::size_t k = 0; k < spec.distractors.size(); ++k) {
      const DistractorSpec& d = spec.distractors[k];
      const auto c = scene.gt.distractor_centers[k][static_cast<std::size_t>(t)];
      draw_blob(frame, {c[0], c[1], d.radius, d.color, d.tex_phase, 1.0,
                        0.10 * d.radius});
    }
    for (Index k = 0; k < n_src; ++k) {
      const SourceSpec& s = spec.sources[static_cast<std::size_t>(k)];
      const auto c =
          scene.gt.centers[static_cast<std::size_t>(k)][static_cast<std::size_t>(t)];
      const double env_norm =
          scene.gt.envelope[static_cast<std::size_t>(k)]
                           [static_cast<std::size_t>(t)] /
          kEnvMax;
      const double bright = 1.0 - 0.5 * s.mod_depth + s.mod_depth * env_norm;
      const double aperture =
          s.radius * (0.10 + 0.30 * s.mod_depth * env_norm);
      draw_blob(frame,
                {c[0], c[1], s.radius, s.color, s.tex_phase, bright, aperture});
    }
    scene.frames.push_back(std::move(frame));
  }

  // Exact flow: blob pixels move with their blob, the rest with the camera.
  for (Index t = 0; t + 1 < T; ++t) {
    flow::Field f({2, H, W});
    const auto cam0 = scene.gt.camera[static_cast<std::size_t>(t)];
    const auto cam1 = scene.gt.camera[static_cast<std::size_t>(t + 1)];
    const double cu = cam1[0] - cam0[0], cv = cam1[1] - cam0[1];
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double u = cu, v = cv;
        // Ownership: sources first (topmost), then distractors.
        bool owned = false;
        for (Index k = 0; k < n_src && !owned; ++k) {
          const auto c = scene.gt.centers[static_cast<std::size_t>(k)]
                                         [static_cast<std::size_t>(t)];
          const double r =
              spec.sources[static_cast<std::size_t>(k)].radius;
          const double dx = x - c[0], dy = y - c[1];
          if (dx * dx + dy * dy <= (1.3 * r) * (1.3 * r)) {
            const auto cn = scene.gt.centers[static_cast<std::size_t>(k)]
                                            [static_cast<std::size_t>(t + 1)];
            u = cn[0] - c[0];
            v = cn[1] - c[1];
            owned = true;
          }
        }
        for (std::size_t k = 0; k < spec.distractors.size() && !owned; ++k) {
          const auto c = scene.gt.distractor_centers[k]
                                                    [static_cast<std::size_t>(t)];
          const double r = spec.distractors[k].radius;
          const double dx = x - c[0], dy = y - c[1];
          if (dx * dx + dy * dy <= (1.3 * r) * (1.3 * r)) {
            const auto cn = scene.gt.distractor_centers[k]
                                                       [static_cast<std::size_t>(t + 1)];
            u = cn[0] - c[0];
            v = cn[1] - c[1];
            owned = true;
          }
        }
        f(Index(0), y, x) = static_cast<float>(u);
        f(Index(1), y, x) = static_cast<float>(v);
      }
    scene.gt_flow.push_back(std::move(f));
  }
  return scene;
}

Json spec_to_json(const SceneSpec& spec) {
  Json j{{"frames", spec.frames},   {"fps", spec.fps},
         {"width", spec.width},     {"height", spec.height},
         {"sample_rate", spec.sample_rate},
         {"audio_delay", spec.audio_delay},
         {"camera", path_to_json(spec.camera)},
         {"seed", spec.seed}};
  j["sources"] = Json::array();
  for (const SourceSpec& s : spec.sources) {
    Json js{{"path", path_to_json(s.path)},
            {"radius", s.radius},
            {"carrier_hz", s.carrier_hz},
            {"mod_depth", s.mod_depth},
            {"color", {s.color[0], s.color[1], s.color[2]}},
            {"tex_phase", s.tex_phase}};
    js["active"] = Json::array();
    for (const auto& iv : s.active) js["active"].push_back({iv[0], iv[1]});
    j["sources"].push_back(std::move(js));
  }
  j["distractors"] = Json::array();
  for (const DistractorSpec& d : spec.distractors)
    j["distractors"].push_back(Json{{"path", path_to_json(d.path)},
                                    {"radius", d.radius},
                                    {"color", {d.color[0], d.color[1], d.color[2]}},
                                    {"tex_phase", d.tex_phase}});
  return j;
}

SceneSpec spec_from_json(const Json& j) {
  SceneSpec spec;
  spec.frames = j.at("frames");
  spec.fps = j.at("fps");
  spec.width = j.at("width");
  spec.height = j.at("height");
  spec.sample_rate = j.at("sample_rate");
  spec.audio_delay = j.at("audio_delay");
  spec.camera = path_from_json(j.at("camera"));
  spec.seed = j.at("seed");
  for (const Json& js : j.at("sources")) {
    SourceSpec s;
    s.path = path_from_json(js.at("path"));
    s.radius = js.at("radius");
    s.carrier_hz = js.at("carrier_hz");
    s.mod_depth = js.at("mod_depth");
    for (int c = 0; c < 3; ++c) s.color[static_cast<std::size_t>(c)] = js.at("color")[static_cast<std::size_t>(c)];
    s.tex_phase = js.at("tex_phase");
    for (const Json& iv : js.at("active"))
      s.active.push_back({iv[0].get<Index>(), iv[1].get<Index>()});
    spec.sources.push_back(std::move(s));
  }
  for (const Json& jd : j.at("distractors")) {
    DistractorSpec d;
    d.path = path_from_json(jd.at("path"));
    d.radius = jd.at("radius");
    for (int c = 0; c < 3; ++c) d.color[static_cast<std::size_t>(c)] = jd.at("color")[static_cast<std::size_t>(c)];
    d.tex_phase = jd.at("tex_phase");
    spec.distractors.push_back(std::move(d));
  }
  return spec;
}

Json gt_to_json(const SceneGT& gt, const SceneSpec& spec) {
  Json j{{"frames", spec.frames},
         {"fps", spec.fps},
         {"width", spec.width},
         {"height", spec.height},
         {"sample_rate", spec.sample_rate},
         {"audio_delay_frames", gt.audio_delay}};
  j["camera"] = Json::array();
  for (const auto& c : gt.camera) j["camera"].push_back({c[0], c[1]});
  j["sources"] = Json::array();
  for (std::size_t k = 0; k < gt.centers.size(); ++k) {
    Json js{{"id", k},
            {"carrier_hz", spec.sources[k].carrier_hz},
            {"radius", spec.sources[k].radius}};
    js["centers"] = Json::array();
    for (const auto& c : gt.centers[k]) js["centers"].push_back({c[0], c[1]});
    js["boxes"] = Json::array();
    for (const auto& b : gt.boxes[k])
      js["boxes"].push_back({b[0], b[1], b[2], b[3]});
    js["active"] = gt.active[k];
    js["envelope"] = gt.envelope[k];
    j["sources"].push_back(std::move(js));
  }
  j["distractors"] = Json::array();
  for (std::size_t k = 0; k < gt.distractor_centers.size(); ++k) {
    Json jd;
    jd["centers"] = Json::array();
    for (const auto& c : gt.distractor_centers[k])
      jd["centers"].push_back({c[0], c[1]});
    jd["boxes"] = Json::array();
    for (const auto& b : gt.distractor_boxes[k])
      jd["boxes"].push_back({b[0], b[1], b[2], b[3]});
    j["distractors"].push_back(std::move(jd));
  }
  return j;
}

SceneGT gt_from_json(const Json& j) {
  SceneGT gt;
  gt.audio_delay = j.at("audio_delay_frames");
  for (const Json& c : j.at("camera"))
    gt.camera.push_back({c[0].get<double>(), c[1].get<double>()});
  for (const Json& js : j.at("sources")) {
    std::vector<std::array<double, 2>> centers;
    for (const Json& c : js.at("centers"))
      centers.push_back({c[0].get<double>(), c[1].get<double>()});
    gt.centers.push_back(std::move(centers));
    std::vector<std::array<double, 4>> boxes;
    for (const Json& b : js.at("boxes"))
      boxes.push_back({b[0].get<double>(), b[1].get<double>(),
                       b[2].get<double>(), b[3].get<double>()});
    gt.boxes.push_back(std::move(boxes));
    gt.active.push_back(js.at("active").get<std::vector<int>>());
    gt.envelope.push_back(js.at("envelope").get<std::vector<float>>());
  }
  for (const Json& jd : j.at("distractors")) {
    std::vector<std::array<double, 2>> centers;
    for (const Json& c : jd.at("centers"))
      centers.push_back({c[0].get<double>(), c[1].get<double>()});
    gt.distractor_centers.push_back(std::move(centers));
    std::vector<std::array<double, 4>> boxes;
    for (const Json& b : jd.at("boxes"))
      boxes.push_back({b[0].get<double>(), b[1].get<double>(),
                       b[2].get<double>(), b[3].get<double>()});
    gt.distractor_boxes.push_back(std::move(boxes));
  }
  return gt;
}

void write_scene(const Scene& scene, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "frames");
  fs::create_directories(fs::path(dir) / "flow");
  save_json_file((fs::path(dir) / "scene.json").string(),
                 spec_to_json(scene.spec));
  save_json_file((fs::path(dir) / "gt.json").string(),
                 gt_to_json(scene.gt, scene.spec));
  audio::Wav mix{scene.spec.sample_rate, scene.mixture};
  audio::write_wav((fs::path(dir) / "mixture.wav").string(), mix);
  for (std::size_t k = 0; k < scene.source_wavs.size(); ++k) {
    audio::Wav w{scene.spec.sample_rate, scene.source_wavs[k]};
    audio::write_wav(
        (fs::path(dir) / ("source_" + std::to_string(k) + ".wav")).string(),
        w);
  }
  char name[32];
  for (std::size_t t = 0; t < scene.frames.size(); ++t) {
    std::snprintf(name, sizeof name, "frame_%04zu.png", t);
    img::write_png((fs::path(dir) / "frames" / name).string(),
                   scene.frames[t]);
  }
  for (std::size_t t = 0; t < scene.gt_flow.size(); ++t) {
    std::snprintf(name, sizeof name, "flow_%04zu.flo", t);
    flow::write_flo((fs::path(dir) / "flow" / name).string(),
                    scene.gt_flow[t]);
  }
}

Scene load_scene(const std::string& dir) {
  Scene scene;
  scene.spec = spec_from_json(load_json_file((fs::path(dir) / "scene.json").string()));
  scene.gt = gt_from_json(load_json_file((fs::path(dir) / "gt.json").string()));
  const audio::Wav mix =
      audio::read_wav((fs::path(dir) / "mixture.wav").string());
  scene.mixture = mix.samples;
  for (std::size_t k = 0; k < scene.spec.sources.size(); ++k)
    scene.source_wavs.push_back(
        audio::read_wav(
            (fs::path(dir) / ("source_" + std::to_string(k) + ".wav")).string())
            .samples);
  char name[32];
  for (Index t = 0; t < scene.spec.frames; ++t) {
    std::snprintf(name, sizeof name, "frame_%04lld.png",
                  static_cast<long long>(t));
    scene.frames.push_back(
        img::read_png((fs::path(dir) / "frames" / name).string()));
  }
  for (Index t = 0; t + 1 < scene.spec.frames; ++t) {
    std::snprintf(name, sizeof name, "flow_%04lld.flo",
                  static_cast<long long>(t));
    scene.gt_flow.push_back(
        flow::read_flo((fs::path(dir) / "flow" / name).string()));
  }
  return scene;
}

namespace {

std::vector<std::array<Index, 2>> full_activity(Index frames) {
  return {{Index(0), frames}};
}

std::vector<std::array<Index, 2>> gapped_activity(Index frames, Rng& rng) {
  std::vector<std::array<Index, 2>> iv;
  Index t = 0;
  bool on = true;
  while (t < frames) {
    const Index len = on ? rng.uniform_int(5, 8) : rng.uniform_int(2, 4);
    const Index end = std::min(frames, t + len);
    if (on) iv.push_back({t, end});
    t = end;
    on = !on;
  }
  return iv;
}

std::array<float, 3> source_color(Rng& rng) {
  return {static_cast<float>(rng.uniform(0.50, 0.68)),
          static_cast<float>(rng.uniform(0.40, 0.60)),
          static_cast<float>(rng.uniform(0.35, 0.55))};
}

std::array<float, 3> distractor_color(Rng& rng) {
  return {static_cast<float>(rng.uniform(0.38, 0.50)),
          static_cast<float>(rng.uniform(0.45, 0.60)),
          static_cast<float>(rng.uniform(0.50, 0.68))};
}

PathSpec moving_path(Rng& rng, double cx, double cy, double amp_lo,
                     double amp_hi) {
  PathSpec p;
  p.base_x = cx;
  p.base_y = cy;
  p.amp_x = rng.uniform(amp_lo, amp_hi);
  p.amp_y = rng.uniform(amp_lo, amp_hi);
  p.freq_x = rng.uniform(0.8, 1.6);
  p.freq_y = rng.uniform(0.8, 1.6);
  p.phase_x = rng.uniform(0.0, kTwoPi);
  p.phase_y = rng.uniform(0.0, kTwoPi);
  return p;
}

}  // namespace

SceneSpec sample_scene_spec(const DatasetConfig& cfg, Rng& rng) {
  const std::string& preset = cfg.preset;
  const bool two_source =
      preset == "two-source" || preset == "two-source+camera-motion";
  const bool camera_motion = preset == "two-source+camera-motion";
  const bool offset_aug = preset == "offset-augmented";
  if (!two_source && !offset_aug && preset != "static-single" &&
      preset != "moving-single")
    throw config_error("preset: unknown preset '" + preset + "'");

  SceneSpec spec;
  spec.width = cfg.width > 0 ? cfg.width : 64;
  spec.height = cfg.height > 0 ? cfg.height : 64;
  spec.frames = cfg.frames > 0 ? cfg.frames : (offset_aug ? 52 : 25);
  spec.seed = rng.next_u64();
  const double W = static_cast<double>(spec.width);
  const double Hh = static_cast<double>(spec.height);

  const double r0 = rng.uniform(8.0, 9.5);
  if (two_source) {
    const double r1 = rng.uniform(8.0, 9.5);
    // Opposite corners of the frame keep the pair well separated. Jitter,
    // sway, and radius together stay under the quarter-frame anchor margin.
    const bool swap = rng.uniform() < 0.5;
    const double m = 0.25;  // corner anchors at 1/4 and 3/4
    double c0x = W * m + rng.uniform(-1.5, 1.5);
    double c1x = W * (1 - m) + rng.uniform(-1.5, 1.5);
    if (swap) std::swap(c0x, c1x);
    const double c0y = Hh * m + rng.uniform(-1.5, 1.5);
    const double c1y = Hh * (1 - m) + rng.uniform(-1.5, 1.5);
    SourceSpec s0, s1;
    s0.path = moving_path(rng, c0x, c0y, 1.5, 2.5);
    s1.path = moving_path(rng, c1x, c1y, 1.5, 2.5);
    s0.radius = r0;
    s1.radius = r1;
    s0.carrier_hz = rng.uniform(380.0, 640.0);
    s1.carrier_hz = rng.uniform(760.0, 1180.0);
    s0.color = source_color(rng);
    s1.color = source_color(rng);
    s0.tex_phase = rng.uniform(0.0, kTwoPi);
    s1.tex_phase = rng.uniform(0.0, kTwoPi);
    spec.sources = {s0, s1};
  } else {
    SourceSpec s;
    const double margin = 18.0;
    const double cx = rng.uniform(margin, W - margin);
    const double cy = rng.uniform(margin, Hh - margin);
    s.path = preset == "static-single"
                 ? PathSpec{cx, cy, 0, 0, 1, 1, 0, 0}
                 : moving_path(rng, cx, cy, 2.0, 4.0);
    s.radius = r0;
    s.carrier_hz = rng.uniform(380.0, 1180.0);
    s.color = source_color(rng);
    s.tex_phase = rng.uniform(0.0, kTwoPi);
    spec.sources = {s};
  }

  // Activity.
  std::string activity = cfg.activity;
  if (activity.empty())
    activity = two_source ? "turn-taking"
                          : (preset == "moving-single" ? "gapped" : "full");
  if (activity == "turn-taking" && two_source) {
    Index t = 0;
    Index who = rng.uniform_int(0, 1);
    while (t < spec.frames) {
      const Index end = std::min(spec.frames, t + rng.uniform_int(6, 10));
      spec.sources[static_cast<std::size_t>(who)].active.push_back({t, end});
      who = 1 - who;
      t = end;
    }
  } else if (activity == "single") {
    const Index who =
        spec.sources.size() > 1
            ? rng.uniform_int(0, static_cast<Index>(spec.sources.size()) - 1)
            : 0;
    spec.sources[static_cast<std::size_t>(who)].active =
        full_activity(spec.frames);
  } else if (activity == "gapped") {
    for (SourceSpec& s : spec.sources) s.active = gapped_activity(spec.frames, rng);
  } else if (activity == "full") {
    for (SourceSpec& s : spec.sources) s.active = full_activity(spec.frames);
  } else {
    throw config_error("activity: unknown mode '" + activity + "'");
  }

  // Distractor blobs: silent, moving, source-like.
  Index n_dis = preset == "static-single" ? 0 : 1;
  if (cfg.distractors >= 0) n_dis = cfg.distractors;
  for (Index k = 0; k < n_dis; ++k) {
    DistractorSpec d;
    d.radius = rng.uniform(7.0, 9.0);
    // Keep the distractor away from both source anchors.
    double best_x = W / 2, best_y = Hh / 2, best_d = -1;
    for (int attempt = 0; attempt < 8; ++attempt) {
      const double x = rng.uniform(16.0, W - 16.0);
      const double y = rng.uniform(16.0, Hh - 16.0);
      double nearest = 1e9;
      for (const SourceSpec& s : spec.sources)
        nearest = std::min(nearest, std::hypot(x - s.path.base_x,
                                               y - s.path.base_y));
      if (nearest > best_d) {
        best_d = nearest;
        best_x = x;
        best_y = y;
      }
    }
    d.path = moving_path(rng, best_x, best_y, 1.5, 3.0);
    d.color = distractor_color(rng);
    d.tex_phase = rng.uniform(0.0, kTwoPi);
    spec.distractors.push_back(std::move(d));
  }

  if (camera_motion) {
    spec.camera.amp_x = rng.uniform(2.5, 4.5);
    spec.camera.amp_y = rng.uniform(2.5, 4.5);
    spec.camera.freq_x = rng.uniform(0.7, 1.3);
    spec.camera.freq_y = rng.uniform(0.7, 1.3);
    spec.camera.phase_x = rng.uniform(0.0, kTwoPi);
    spec.camera.phase_y = rng.uniform(0.0, kTwoPi);
  }
  if (offset_aug) spec.audio_delay = rng.uniform_int(-15, 15);
  return spec;
}

Json make_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  if (cfg.n_scenes < 1) throw config_error("n_scenes: need at least one");
  fs::create_directories(out_dir);
  Rng rng(cfg.seed);

  const Index n = cfg.n_scenes;
  const Index n_val = n >= 3 ? std::max<Index>(1, n * 15 / 100) : 0;
  const Index n_test = n >= 3 ? std::max<Index>(1, n * 15 / 100) : 0;
  const Index n_train = n - n_val - n_test;

  Json manifest{{"schema", "avobj-dataset-v1"},
                {"preset", cfg.preset},
                {"seed", cfg.seed},
                {"checksum", "crc32"}};
  manifest["scenes"] = Json::array();
  manifest["checksums"] = Json::object();
  for (Index i = 0; i < n; ++i) {
    Rng scene_rng = rng.fork(static_cast<std::uint64_t>(i));
    const SceneSpec spec = sample_scene_spec(cfg, scene_rng);
    const Scene scene = generate_scene(spec);
    char dirname[32];
    std::snprintf(dirname, sizeof dirname, "scene_%04lld",
                  static_cast<long long>(i));
    const std::string dir = (fs::path(out_dir) / dirname).string();
    write_scene(scene, dir);
    const std::string split =
        i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    manifest["scenes"].push_back(
        Json{{"dir", dirname}, {"seed", spec.seed}, {"split", split}});
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel =
          fs::relative(entry.path(), out_dir).generic_string();
      manifest["checksums"][rel] = hex32(crc32_file(entry.path().string()));
    }
  }
  save_json_file((fs::path(out_dir) / "manifest.json").string(), manifest);
  return manifest;
}

Json load_manifest(const std::string& dataset_dir) {
  return load_json_file((fs::path(dataset_dir) / "manifest.json").string());
}

std::vector<std::string> split_dirs(const std::string& dataset_dir,
                                    const Json& manifest,
                                    const std::string& split) {
  std::vector<std::string> dirs;
  for (const Json& s : manifest.at("scenes"))
    if (s.at("split") == split)
      dirs.push_back((fs::path(dataset_dir) / s.at("dir").get<std::string>()).string());
  return dirs;
}

}  // namespace avobj::synth
