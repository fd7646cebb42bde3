#pragma once

#include <string>
#include <utility>
#include <vector>

#include "avobj/eval.hpp"
#include "avobj/objects.hpp"
#include "avobj/sync.hpp"
#include "avobj/tensor.hpp"

namespace avobj::eval {

// ---------------------------------------------------------------------------
// Ground truth and localization.

// One evaluated source: per-frame boxes in pixels plus activity labels,
// indexed by video frame.
struct GtTrack {
  Index source = 0;
  std::vector<std::array<double, 4>> boxes;  // x0, y0, x1, y1
  std::vector<int> active;
};

// Reads the per-source tracks of a scene ground-truth document.
std::vector<GtTrack> gt_tracks_from_json(const Json& gt);

struct LocResult {
  double accuracy = 0;
  Index correct = 0;
  Index evaluated = 0;
  Index skipped = 0;  // frames with no active ground-truth box
};

// Point-in-box test of the top object's location on every frame it covers.
// A frame counts as correct when the point lies inside the box of any
// source active on that frame; frames with no active source are skipped.
LocResult localization_accuracy(
    const std::vector<objects::AudioVisualObject>& objs,
    const std::vector<GtTrack>& tracks);

// Per track, the index of the object whose trajectory follows it closest
// (mean center distance over shared frames), assigned greedily one-to-one
// by ascending distance; -1 when no object is left or none overlaps.
std::vector<Index> associate_tracks_to_boxes(
    const std::vector<objects::AudioVisualObject>& objs,
    const std::vector<GtTrack>& tracks);

// ---------------------------------------------------------------------------
// Active speaker detection.

struct AsdResult {
  double threshold = 0;
  std::vector<Index> assignment;    // per track, object index or -1
  std::vector<F1Result> per_source;
  double macro_f1 = 0;
  double ap = 0;  // ranking AP over all (object, frame) scores
};

// Thresholds each assigned object's per-frame sync scores against the
// track's activity labels. Tracks with no assigned object count every
// active frame as missed.
AsdResult asd_evaluate(const std::vector<objects::AudioVisualObject>& objs,
                       const std::vector<GtTrack>& tracks, double threshold);

// ---------------------------------------------------------------------------
// Offset recovery vs. context length.

struct OffsetClip {
  Tensor<float> fv;  // (T', h, w, D)
  Tensor<float> fa;  // (T', D)
  Index true_dt = 0; // the shift score_offsets should recover
};

struct SyncAccuracy {
  Index context = 0;
  double accuracy = 0;
  Index evaluated = 0;      // (clip, window placement) decisions
  Index skipped_clips = 0;  // clips shorter than context + 2 * radius
};

// For each context length K: per-offset scores are averaged over every
// K-frame window (all placements, stride 1) before the argmax; a decision
// is correct when the argmax lies within one frame of true_dt.
std::vector<SyncAccuracy> sync_accuracy_protocol(
    const std::vector<OffsetClip>& clips, const std::vector<Index>& contexts,
    Index radius = 15, sync::Pool mode = sync::Pool::max);

// ---------------------------------------------------------------------------
// Motion subsets and NMS sweep.

// Mean displacement magnitude over all pixels of all fields.
double mean_flow_magnitude(const std::vector<flow::Field>& flows);

struct MotionSplit {
  std::vector<Index> low;   // clip indices, ascending magnitude
  std::vector<Index> high;  // clip indices, descending magnitude
};

// Bottom and top quantile of clips ranked by motion magnitude. Each side
// holds max(1, floor(n * quantile)) clips.
MotionSplit motion_subsets(const std::vector<double>& magnitudes,
                           double quantile = 0.25);

// One scene ready for evaluation.
struct EvalScene {
  Tensor<float> clip;  // (T, H, W, 3)
  Tensor<float> mel;   // (4T, n_mels)
  std::vector<GtTrack> tracks;
};

struct SweepRow {
  double rho_px = 0;
  double accuracy = 0;
  Index evaluated = 0;
  Index skipped = 0;
};

// Localization accuracy per NMS window size: extraction reruns per rho with
// everything else held fixed.
std::vector<SweepRow> nms_sweep(const std::vector<EvalScene>& scenes,
                                const sync::SyncModel& model,
                                const std::vector<double>& rhos,
                                const objects::ExtractConfig& base);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

// ---------------------------------------------------------------------------
// Report plumbing.

struct EvalReport {
  std::string task;
  Json config;          // effective configuration echo
  std::string dataset;  // manifest path or identity string
  std::vector<std::pair<std::string, double>> metrics;
  Json extra;           // counts and per-item breakdowns
};

Json report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

}  // namespace avobj::eval
