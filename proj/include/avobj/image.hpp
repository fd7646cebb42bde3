#pragma once

#include <string>

#include "avobj/tensor.hpp"

namespace avobj::img {

// Images are float tensors (C,H,W) in [0,1]. PNG io is 8-bit.

Tensor<float> read_png(const std::string& path);  // (3,H,W)
void write_png(const std::string& path, const Tensor<float>& image);

// Luma from RGB; pass-through for single-channel input. Returns (H,W).
Tensor<float> to_gray(const Tensor<float>& image);

// Drawing helpers for overlays; all clip to the image bounds.
void draw_box(Tensor<float>& image, Index x0, Index y0, Index x1, Index y1,
              float r, float g, float b, Index thickness = 1);
void fill_rect(Tensor<float>& image, Index x0, Index y0, Index x1, Index y1,
               float r, float g, float b, float alpha);
void draw_cross(Tensor<float>& image, Index x, Index y, Index arm, float r,
                float g, float b);

// Blends a scalar map (h,w) over the image through a blue-to-red colormap,
// upsampling by nearest cell. alpha is the blend weight of the heatmap.
void overlay_heatmap(Tensor<float>& image, const Tensor<float>& map,
                     float alpha);

}  // namespace avobj::img
