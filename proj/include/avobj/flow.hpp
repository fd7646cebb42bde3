#pragma once

#include <string>
#include <vector>

#include "avobj/tensor.hpp"

namespace avobj::flow {

// Dense displacement field (2,H,W): channel 0 is u (x), channel 1 is v (y),
// in pixels, mapping frame t onto frame t+1.
using Field = Tensor<float>;

// Middlebury .flo: float magic 202021.25, int32 width/height, interleaved
// float32 (u,v) rows.
Field read_flo(const std::string& path);
void write_flo(const std::string& path, const Field& field);

struct LkConfig {
  Index levels = 3;
  Index iterations = 5;
  Index radius = 3;        // window is (2r+1)^2
  double damping = 1e-3;   // Tikhonov term on the normal equations
};

// Dense pyramidal Lucas-Kanade between two grayscale frames (H,W).
Field lucas_kanade(const Tensor<float>& img0, const Tensor<float>& img1,
                   const LkConfig& cfg = {});

// Per-pair flow for a clip of T grayscale frames; returns T-1 fields.
std::vector<Field> estimate_flow(const std::vector<Tensor<float>>& gray,
                                 const LkConfig& cfg = {});

// Feature cell (i,j) of a stride-s grid sits at pixel (g + 0.5)*s - 0.5.
inline double grid_to_px(double g, Index stride) {
  return (g + 0.5) * static_cast<double>(stride) - 0.5;
}
inline double px_to_grid(double p, Index stride) {
  return (p + 0.5) / static_cast<double>(stride) - 0.5;
}

// Averages pixel flow over stride x stride cells and rescales displacements
// into grid units.
Field to_grid(const Field& pixel_flow, Index stride, Index gh, Index gw);

// Trajectory positions in grid coordinates, (T, gh, gw, 2) with (x,y) pairs.
// Row t holds where the track anchored at cell (i,j) at frame 0 sits at
// frame t. flows[t] is pixel resolution, frame t -> t+1; it is sampled
// bilinearly at the pixel-scaled track location and the displacement is
// divided by the stride. Positions are clamped to [0, gw-1] x [0, gh-1].
Tensor<float> chain_tracks(const std::vector<Field>& flows, Index gh, Index gw,
                           Index stride);

// Identity trajectories: every cell stays put. The "no flow" ablation.
Tensor<float> identity_trajectories(Index T, Index gh, Index gw);

// Mean of attention sampled along each track: out(i,j) averages
// bilinear_at(S[t], traj(t,i,j)) over t. S is (T,gh,gw), traj (T,gh,gw,2).
Tensor<float> aggregate_attention(const Tensor<float>& S,
                                  const Tensor<float>& traj);

}  // namespace avobj::flow
