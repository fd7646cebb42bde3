#pragma once

#include <array>
#include <string>
#include <vector>

#include "avobj/config.hpp"
#include "avobj/flow.hpp"
#include "avobj/rng.hpp"
#include "avobj/tensor.hpp"

namespace avobj::synth {

// Sinusoidal path around a base point: pos(t) = base + amp * sin(2*pi*freq*
// t/frames + phase), per axis. freq counts cycles per clip.
struct PathSpec {
  double base_x = 0, base_y = 0;
  double amp_x = 0, amp_y = 0;
  double freq_x = 1, freq_y = 1;
  double phase_x = 0, phase_y = 0;
};

struct SourceSpec {
  PathSpec path;
  double radius = 9.0;        // blob radius, px
  double carrier_hz = 500.0;  // tone frequency
  double mod_depth = 0.85;    // brightness/aperture swing, 0 disables
  std::array<float, 3> color{0.6f, 0.5f, 0.45f};
  double tex_phase = 0.0;  // ring texture phase, visual identity
  // Active intervals [start, end) in frames, disjoint and ascending.
  std::vector<std::array<Index, 2>> active;
};

struct DistractorSpec {
  PathSpec path;
  double radius = 8.0;
  std::array<float, 3> color{0.5f, 0.55f, 0.6f};
  double tex_phase = 0.0;
};

struct SceneSpec {
  Index frames = 25;
  Index fps = 25;
  Index width = 64;
  Index height = 64;
  Index sample_rate = 16000;
  Index audio_delay = 0;  // frames; mixture is delayed by this amount
  PathSpec camera;        // translation applied to all content
  std::vector<SourceSpec> sources;
  std::vector<DistractorSpec> distractors;
  std::uint64_t seed = 0;  // drives envelope and audio phase details
};

// Throws config_error naming the offending field.
void validate(const SceneSpec& spec);

struct SceneGT {
  Index audio_delay = 0;
  std::vector<std::array<double, 2>> camera;  // per-frame displacement
  // Indexed [source][frame].
  std::vector<std::vector<std::array<double, 2>>> centers;
  std::vector<std::vector<std::array<double, 4>>> boxes;  // x0,y0,x1,y1
  std::vector<std::vector<int>> active;
  std::vector<std::vector<float>> envelope;  // per-frame audio envelope
  std::vector<std::vector<std::array<double, 2>>> distractor_centers;
  std::vector<std::vector<std::array<double, 4>>> distractor_boxes;
};

struct Scene {
  SceneSpec spec;
  std::vector<Tensor<float>> frames;            // (3,H,W) each, [0,1]
  std::vector<flow::Field> gt_flow;             // T-1 fields, t -> t+1
  std::vector<std::vector<float>> source_wavs;  // clean, pre-delay
  std::vector<float> mixture;                   // sum of sources, delayed
  SceneGT gt;
};

Scene generate_scene(const SceneSpec& spec);

// Scene directory layout: scene.json, gt.json, mixture.wav, source_K.wav,
// frames/frame_NNNN.png, flow/flow_NNNN.flo.
void write_scene(const Scene& scene, const std::string& dir);
Scene load_scene(const std::string& dir);

Json spec_to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const Json& j);
Json gt_to_json(const SceneGT& gt, const SceneSpec& spec);
SceneGT gt_from_json(const Json& j);

struct DatasetConfig {
  std::string preset = "two-source";
  Index n_scenes = 10;
  std::uint64_t seed = 0;
  // Overrides; zero/empty keeps the preset default.
  Index frames = 0;
  Index width = 0;
  Index height = 0;
  std::string activity;  // turn-taking | single | full
  int distractors = -1;  // -1 keeps the preset default count
};

// Presets: static-single, moving-single, two-source,
// two-source+camera-motion, offset-augmented.
SceneSpec sample_scene_spec(const DatasetConfig& cfg, Rng& rng);

// Writes n_scenes scene dirs plus manifest.json (per-file crc32 checksums,
// train/val/test splits with disjoint per-scene seeds). Returns the manifest.
Json make_dataset(const DatasetConfig& cfg, const std::string& out_dir);

Json load_manifest(const std::string& dataset_dir);
// Scene directories for one split ("train"/"val"/"test"), in manifest order.
std::vector<std::string> split_dirs(const std::string& dataset_dir,
                                    const Json& manifest,
                                    const std::string& split);

}  // namespace avobj::synth
