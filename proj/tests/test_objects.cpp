#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "avobj/audio.hpp"
#include "avobj/eval.hpp"
#include "avobj/objects.hpp"
#include "avobj/synth.hpp"
#include "support/oracles.hpp"

using namespace avobj;
using namespace avobj::objects;

namespace {

namespace fs = std::filesystem;

Tensor<float> random_map(Rng& rng, Index gh, Index gw) {
  Tensor<float> m({gh, gw});
  for (Index i = 0; i < m.size(); ++i)
    m[i] = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("single peak maps return exactly that peak") {
  Tensor<float> m({5, 7});
  for (Index i = 0; i < m.size(); ++i) m[i] = 0.1f;
  m(Index(2), Index(3)) = 0.9f;
  const auto peaks = detect_peaks_nms(m, 100, 16, 5);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].i == 2);
  CHECK(peaks[0].j == 3);
  CHECK(peaks[0].score == 0.9f);
  CHECK(detect_peaks_nms(Tensor<float>({0, 0}), 100, 16, 5).empty());
}

TEST_CASE("equal peaks keep row-major order, near ones are suppressed") {
  Tensor<float> m({8, 8});
  for (Index i = 0; i < m.size(); ++i) m[i] = 0.0f;
  m(Index(1), Index(1)) = 1.0f;
  m(Index(6), Index(6)) = 1.0f;
  // rho 96 px at stride 16 suppresses within 3 cells per axis.
  auto peaks = detect_peaks_nms(m, 96, 16, 5);
  REQUIRE(peaks.size() == 2);
  CHECK(peaks[0].i == 1);  // tie resolved to the smaller row-major index
  CHECK(peaks[1].i == 6);

  m(Index(3), Index(3)) = 1.0f;  // inside the first peak's box
  peaks = detect_peaks_nms(m, 96, 16, 5);
  REQUIRE(peaks.size() == 2);
  CHECK(peaks[0].i == 1);
  CHECK(peaks[1].i == 6);
}

TEST_CASE("a dominating plateau contributes its row-major-first cell once") {
  // U-shaped plateau: (0,0), (1,0), (1,1), (1,2), (0,2) all equal. The two
  // arms are connected through the bottom row, so only (0,0) qualifies.
  Tensor<float> m({3, 4});
  for (Index i = 0; i < m.size(); ++i) m[i] = 0.0f;
  for (auto [i, j] : {std::pair<Index, Index>{0, 0}, {1, 0}, {1, 1}, {1, 2},
                      {0, 2}})
    m(i, j) = 1.0f;
  const auto peaks = detect_peaks_nms(m, 10, 16, 5);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].i == 0);
  CHECK(peaks[0].j == 0);

  // A neighbor above the plateau value disqualifies the whole region.
  m(Index(2), Index(1)) = 2.0f;
  const auto p2 = detect_peaks_nms(m, 10, 16, 5);
  REQUIRE(p2.size() == 1);
  CHECK(p2[0].i == 2);
  CHECK(p2[0].j == 1);
}

TEST_CASE("nms agrees with the quadratic oracle on random maps") {
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const Index gh = rng.uniform_int(1, 12);
    const Index gw = rng.uniform_int(1, 12);
    Tensor<float> m = random_map(rng, gh, gw);
    // Quantize a third of the maps to force ties and plateaus.
    if (rep % 3 == 0)
      for (Index i = 0; i < m.size(); ++i)
        m[i] = std::round(m[i] * 2.0f) / 2.0f;
    const double rho = rng.uniform(20.0, 400.0);
    const Index stride = rng.uniform_int(0, 1) ? 8 : 16;
    const Index max_n = rng.uniform_int(1, 6);

    const auto got = detect_peaks_nms(m, rho, stride, max_n);
    const auto want = testing::nms_naive(m, rho, stride, max_n);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      REQUIRE(got[k].i == want[k].i);
      REQUIRE(got[k].j == want[k].j);
      REQUIRE(got[k].score == want[k].score);
    }

    // Structural invariants: ordered scores, pairwise separation, cap.
    CHECK(static_cast<Index>(got.size()) <= max_n);
    const double halfw = rho / (2.0 * static_cast<double>(stride));
    for (std::size_t a = 0; a < got.size(); ++a) {
      if (a > 0) CHECK(got[a].score <= got[a - 1].score);
      for (std::size_t b = a + 1; b < got.size(); ++b)
        CHECK((std::abs(static_cast<double>(got[a].i - got[b].i)) > halfw ||
               std::abs(static_cast<double>(got[a].j - got[b].j)) > halfw));
    }
  }
}

TEST_CASE("snapping follows displaced maxima inside the window only") {
  const Index T = 3, gh = 7, gw = 7;
  Tensor<float> S({T, gh, gw});
  for (Index i = 0; i < S.size(); ++i) S[i] = 0.0f;
  Tensor<float> traj = flow::identity_trajectories(T, gh, gw);

  S(Index(0), Index(3), Index(3)) = 1.0f;  // already at the track
  S(Index(1), Index(3), Index(5)) = 1.0f;  // 2 cells right, inside rho window
  S(Index(2), Index(0), Index(0)) = 1.0f;  // far corner, outside the window
  S(Index(2), Index(4), Index(3)) = 0.5f;  // best within the window

  const auto snapped = snap_track(S, traj, 3, 3, 64, 16);  // halfwidth 2 cells
  REQUIRE(snapped.size() == 3);
  CHECK(snapped[0].i == 3);
  CHECK(snapped[0].j == 3);
  CHECK(snapped[1].i == 3);
  CHECK(snapped[1].j == 5);
  CHECK(snapped[2].i == 4);
  CHECK(snapped[2].j == 3);
}

TEST_CASE("snapping never strays beyond the window and clips at borders") {
  Rng rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    const Index T = 4, gh = 6, gw = 9;
    Tensor<float> S = random_map(rng, 1, T * gh * gw).reshaped({T, gh, gw});
    Tensor<float> traj({T, gh, gw, 2});
    for (Index t = 0; t < T; ++t)
      for (Index i = 0; i < gh; ++i)
        for (Index j = 0; j < gw; ++j) {
          traj(t, i, j, Index(0)) =
              static_cast<float>(rng.uniform(0.0, gw - 1.0));
          traj(t, i, j, Index(1)) =
              static_cast<float>(rng.uniform(0.0, gh - 1.0));
        }
    const double rho = rng.uniform(24.0, 120.0);
    const Index stride = 16;
    const double halfw = rho / (2.0 * stride);
    const auto snapped = snap_track(S, traj, 2, 3, rho, stride);
    for (Index t = 0; t < T; ++t) {
      const auto& s = snapped[static_cast<std::size_t>(t)];
      CHECK(s.i >= 0);
      CHECK(s.i < gh);
      CHECK(s.j >= 0);
      CHECK(s.j < gw);
      CHECK(std::abs(s.j - traj(t, Index(2), Index(3), Index(0))) <=
            halfw + 1e-6);
      CHECK(std::abs(s.i - traj(t, Index(2), Index(3), Index(1))) <=
            halfw + 1e-6);
    }
  }
}

TEST_CASE("snapping a ground-truth attention bump tracks the moving source") {
  synth::DatasetConfig dc;
  dc.preset = "moving-single";
  dc.width = 64;
  dc.height = 64;
  dc.frames = 20;
  Rng rng(21);
  const synth::SceneSpec spec = synth::sample_scene_spec(dc, rng);
  const synth::Scene scene = synth::generate_scene(spec);

  const Index stride = 8, gh = 8, gw = 8, T = spec.frames;
  // Attention built from GT: a bump of one-cell width at the source center.
  Tensor<float> S({T, gh, gw});
  for (Index t = 0; t < T; ++t) {
    const double cx = flow::px_to_grid(scene.gt.centers[0][t][0], stride);
    const double cy = flow::px_to_grid(scene.gt.centers[0][t][1], stride);
    for (Index i = 0; i < gh; ++i)
      for (Index j = 0; j < gw; ++j) {
        const double d2 = (j - cx) * (j - cx) + (i - cy) * (i - cy);
        S(t, i, j) = static_cast<float>(std::exp(-0.5 * d2));
      }
  }
  const Tensor<float> traj =
      flow::chain_tracks(scene.gt_flow, gh, gw, stride);

  // Anchor at the cell nearest the source at frame 0.
  const Index ai = std::clamp<Index>(
      std::llround(flow::px_to_grid(scene.gt.centers[0][0][1], stride)), 0,
      gh - 1);
  const Index aj = std::clamp<Index>(
      std::llround(flow::px_to_grid(scene.gt.centers[0][0][0], stride)), 0,
      gw - 1);
  const auto snapped = snap_track(S, traj, ai, aj, 48, stride);

  double mean_dist = 0;
  for (Index t = 0; t < T; ++t) {
    const double x =
        flow::grid_to_px(snapped[static_cast<std::size_t>(t)].j, stride);
    const double y =
        flow::grid_to_px(snapped[static_cast<std::size_t>(t)].i, stride);
    mean_dist += std::hypot(x - scene.gt.centers[0][t][0],
                            y - scene.gt.centers[0][t][1]);
  }
  mean_dist /= static_cast<double>(T);
  CHECK(mean_dist < spec.sources[0].radius);
}

TEST_CASE("object embeddings are unit rows whose scores resample attention") {
  Rng rng(13);
  const Index T = 6, h = 4, w = 5, D = 32;
  Tensor<float> fv({T, h, w, D});
  Tensor<float> fa({T, D});
  for (Index i = 0; i < fv.size(); ++i)
    fv[i] = static_cast<float>(rng.normal());
  for (Index i = 0; i < fa.size(); ++i)
    fa[i] = static_cast<float>(rng.normal());
  // Make one frame's cell exactly parallel to the audio row.
  for (Index d = 0; d < D; ++d)
    fv(Index(2), Index(1), Index(3), d) = 3.0f * fa(Index(2), d);

  std::vector<GridLoc> snapped;
  for (Index t = 0; t < T; ++t)
    snapped.push_back({rng.uniform_int(0, h - 1), rng.uniform_int(0, w - 1)});
  snapped[2] = {1, 3};

  const ObjectEmbeddings oe = extract_object_embeddings(fv, fa, snapped);
  const Tensor<float> S = sync::attention_map(fv, fa);
  for (Index t = 0; t < T; ++t) {
    const auto& loc = snapped[static_cast<std::size_t>(t)];
    // Bit-exact agreement with the attention map at the snapped cell.
    CHECK(oe.scores[static_cast<std::size_t>(t)] == S(t, loc.i, loc.j));
    double norm = 0;
    for (Index d = 0; d < D; ++d)
      norm += static_cast<double>(oe.emb(t, d)) * oe.emb(t, d);
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK(oe.scores[2] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("extraction finds both sources of a two-source scene") {
  // Train briefly on small two-source clips, then extract on a larger
  // held-out scene; the encoder is fully convolutional so the resolution
  // change is free.
  const fs::path root = fs::temp_directory_path() / "avobj_objects_e2e";
  fs::remove_all(root);
  synth::DatasetConfig dc;
  dc.preset = "two-source";
  dc.n_scenes = 6;
  dc.frames = 16;
  dc.width = 96;
  dc.height = 96;
  dc.seed = 515;
  const Json manifest = synth::make_dataset(dc, root.string());

  sync::SyncTrainConfig cfg;
  cfg.encoder = enc::toy_encoder_config();
  cfg.steps = 400;
  cfg.batch = 2;
  cfg.lr = 2e-3;
  cfg.radius = 4;
  cfg.n_random = 8;
  cfg.max_anchors = 4;
  cfg.eval_every = 100;
  cfg.seed = 31;
  const fs::path out = root / "run";
  const sync::SyncTrainResult tr =
      sync::train_sync(synth::split_dirs(root.string(), manifest, "train"),
                       synth::split_dirs(root.string(), manifest, "val"), cfg,
                       out.string());
  const sync::SyncModel model = sync::load_sync_model(tr.checkpoint_path);

  // Held-out scenes, twice the resolution, both sources active throughout.
  synth::DatasetConfig ec;
  ec.preset = "two-source";
  ec.frames = 20;
  ec.width = 128;
  ec.height = 128;
  ec.activity = "full";
  Rng erng(99);

  int hits = 0;
  const int n_eval = 3;
  for (int k = 0; k < n_eval; ++k) {
    const synth::SceneSpec spec = synth::sample_scene_spec(ec, erng);
    const synth::Scene scene = synth::generate_scene(spec);
    Tensor<float> clip({spec.frames, spec.height, spec.width, 3});
    for (Index t = 0; t < spec.frames; ++t)
      for (Index c = 0; c < 3; ++c)
        for (Index y = 0; y < spec.height; ++y)
          for (Index x = 0; x < spec.width; ++x)
            clip(t, y, x, c) = scene.frames[static_cast<std::size_t>(t)](c, y, x);
    audio::Wav wav;
    wav.sample_rate = spec.sample_rate;
    wav.samples = scene.mixture;
    const Tensor<float> mel = audio::log_mel_clip(
        wav, spec.frames, spec.fps,
        audio::MelConfig{spec.sample_rate, audio::StftConfig{512, 400, 160},
                         80, 0.0, 8000.0});

    ExtractConfig xc;  // default rho 100 px, max_n 5, flow on
    const auto objects = extract_objects(clip, mel, model, xc);
    REQUIRE(objects.size() >= 2);
    for (std::size_t a = 1; a < objects.size(); ++a)
      CHECK(objects[a].aggregate <= objects[a - 1].aggregate);

    // One-to-one match of the top two objects to the two GT tracks by mean
    // center distance.
    std::vector<double> cost(4, 0.0);
    for (int o = 0; o < 2; ++o)
      for (int s = 0; s < 2; ++s) {
        double acc = 0;
        for (const ObjectFrame& f : objects[static_cast<std::size_t>(o)].track)
          acc += std::hypot(
              f.x_px - scene.gt.centers[static_cast<std::size_t>(s)]
                                       [static_cast<std::size_t>(f.frame)][0],
              f.y_px - scene.gt.centers[static_cast<std::size_t>(s)]
                                       [static_cast<std::size_t>(f.frame)][1]);
        cost[static_cast<std::size_t>(o * 2 + s)] =
            acc / static_cast<double>(objects[static_cast<std::size_t>(o)]
                                          .track.size());
      }
    const std::vector<Index> assign = eval::greedy_assign(cost, 2, 2);
    const double d0 = cost[static_cast<std::size_t>(assign[0])];
    const double d1 = cost[static_cast<std::size_t>(2 + assign[1])];
    if (d0 < xc.rho_px / 2 && d1 < xc.rho_px / 2) ++hits;

    if (k == 0) {
      // Determinism: a second run serializes identically.
      const auto again = extract_objects(clip, mel, model, xc);
      CHECK(objects_to_json(again).dump() == objects_to_json(objects).dump());
      // Pre-alignment on an already-aligned clip keeps the (possibly
      // cropped) frame indices inside the clip.
      ExtractConfig xa = xc;
      xa.pre_align = true;
      xa.align_radius = 6;
      const auto aligned = extract_objects(clip, mel, model, xa);
      REQUIRE(!aligned.empty());
      for (const ObjectFrame& f : aligned[0].track) {
        CHECK(f.frame >= 2);
        CHECK(f.frame < spec.frames - 2);
      }
      // JSON shape.
      const Json j = objects_to_json(objects);
      const Json& o0 = j.at("objects").at(0);
      CHECK(o0.contains("id"));
      CHECK(o0.contains("aggregate"));
      CHECK(o0.at("frames").size() == objects[0].track.size());
      CHECK(o0.at("frames").at(0).contains("x_px"));
      CHECK(o0.at("frames").at(0).contains("sync_score"));
      // Identity trajectories also run end to end.
      ExtractConfig xn = xc;
      xn.use_flow = false;
      CHECK(!extract_objects(clip, mel, model, xn).empty());
    }
  }
  CHECK(hits >= 2);  // localization quality has its own harder gate
  fs::remove_all(root);
}
