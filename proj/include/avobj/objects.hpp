#pragma once

#include <string>
#include <vector>

#include "avobj/config.hpp"
#include "avobj/flow.hpp"
#include "avobj/sync.hpp"
#include "avobj/tensor.hpp"

namespace avobj::objects {

// Grid-cell peak in an aggregated attention map. i is the row, j the column.
struct Peak {
  Index i = 0, j = 0;
  float score = 0;
};

struct GridLoc {
  Index i = 0, j = 0;
};

// Greedy non-maximum suppression over a (gh, gw) map. Candidates are strict
// 8-neighborhood local maxima; an equal-valued plateau that dominates its
// surroundings contributes only its row-major-first cell. Selection is by
// descending score, ties by smallest row-major index, and each kept peak
// suppresses every candidate within rho_px/(2*stride) cells of it per axis
// (a rho x rho pixel box). At most max_n peaks are returned.
std::vector<Peak> detect_peaks_nms(const Tensor<float>& map, double rho_px,
                                   Index stride, Index max_n);

// Per-frame argmax of S (T, gh, gw) inside the rho-window centered on the
// trajectory of the cell (anchor_i, anchor_j). traj is (T, gh, gw, 2) with
// (x, y) grid positions as produced by flow::chain_tracks. The window is
// clipped at the grid borders and always contains at least the cell nearest
// to the trajectory, so a snapped location never strays more than
// rho_px/(2*stride) cells per axis from the track.
std::vector<GridLoc> snap_track(const Tensor<float>& S,
                                const Tensor<float>& traj, Index anchor_i,
                                Index anchor_j, double rho_px, Index stride);

struct ObjectEmbeddings {
  Tensor<float> emb;          // (T, D), rows unit-norm
  std::vector<float> scores;  // per-frame cosine against the audio feature
};

// Rows of f_v at the snapped locations, l2-normalized, and their cosine
// against the matching audio feature. The arithmetic mirrors attention_map
// exactly, so scores[t] equals S_av(t, i_t, j_t) bit for bit.
ObjectEmbeddings extract_object_embeddings(const Tensor<float>& fv,
                                           const Tensor<float>& fa,
                                           const std::vector<GridLoc>& snapped);

struct ObjectFrame {
  Index frame = 0;  // video frame index in the input clip
  Index i = 0, j = 0;
  double x_px = 0, y_px = 0;
  float sync_score = 0;
};

struct AudioVisualObject {
  Index id = 0;  // rank by aggregate score, 0 is strongest
  Peak anchor;   // peak in the trajectory-aggregated map
  std::vector<ObjectFrame> track;
  Tensor<float> embeddings;  // (T', D)
  double aggregate = 0;      // aggregated attention at the anchor
};

struct ExtractConfig {
  double rho_px = 100;     // suppression and snapping window, in pixels
  Index max_n = 5;
  bool use_flow = true;    // identity trajectories when false
  bool pre_align = false;  // correct a global AV offset before extraction
  Index align_radius = 15;
  flow::LkConfig lk;
};

// Full pipeline on one clip: encode both streams, optionally re-align the
// audio by the recovered offset, compute per-frame attention, track cells
// along optical flow, aggregate, pick peaks, snap, and embed. Objects come
// back ordered by aggregate score.
std::vector<AudioVisualObject> extract_objects(const Tensor<float>& clip,
                                               const Tensor<float>& mel,
                                               const sync::SyncModel& model,
                                               const ExtractConfig& cfg);

Json objects_to_json(const std::vector<AudioVisualObject>& objects);

}  // namespace avobj::objects
