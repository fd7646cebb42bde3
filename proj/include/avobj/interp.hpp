#pragma once

#include "avobj/autodiff.hpp"

namespace avobj {

// Bilinear sampling with border clamp. Sampling weights always sum to 1, so
// interpolating a constant field returns the constant exactly.
template <typename S>
S bilinear_at(const S* img, Index H, Index W, double x, double y) {
  x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
  const Index x0 = std::min(static_cast<Index>(x), W - 2 >= 0 ? W - 2 : 0);
  const Index y0 = std::min(static_cast<Index>(y), H - 2 >= 0 ? H - 2 : 0);
  const Index x1 = std::min(x0 + 1, W - 1);
  const Index y1 = std::min(y0 + 1, H - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double v00 = static_cast<double>(img[y0 * W + x0]);
  const double v01 = static_cast<double>(img[y0 * W + x1]);
  const double v10 = static_cast<double>(img[y1 * W + x0]);
  const double v11 = static_cast<double>(img[y1 * W + x1]);
  return static_cast<S>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                        fy * ((1 - fx) * v10 + fx * v11));
}

template <typename S>
S bilinear_at(const Tensor<S>& img, double x, double y) {
  return bilinear_at(img.data(), img.dim(0), img.dim(1), x, y);
}

// Differentiable gather: out[t,i,j] = maps[t] sampled at coords[t,i,j,(x,y)].
// Coordinates are plain data; gradients flow into the map values through the
// four fixed bilinear weights.
template <typename S>
Var<S> grid_sample_hw(Var<S> maps, const Tensor<S>& coords) {
  Tape<S>& tp = *maps.tape;
  const Tensor<S>& vm = maps.val();
  const Index T = vm.dim(0), H = vm.dim(1), W = vm.dim(2);
  if (coords.rank() != 4 || coords.dim(0) != T || coords.dim(3) != 2)
    throw config_error("grid_sample_hw coords must be (T,h,w,2), got " +
                       shape_str(coords.shape()));
  if (H < 2 || W < 2)
    throw config_error("grid_sample_hw needs maps of at least 2x2");
  const Index Oh = coords.dim(1), Ow = coords.dim(2);

  struct Tap {
    Index base;  // flat index of (y0,x0) within one map
    S w00, w01, w10, w11;
  };
  auto taps = std::make_shared<std::vector<Tap>>(
      static_cast<std::size_t>(T * Oh * Ow));
  Tensor<S> out({T, Oh, Ow});
  Index q = 0;
  for (Index t = 0; t < T; ++t) {
    const S* m = vm.data() + t * H * W;
    for (Index i = 0; i < Oh; ++i)
      for (Index j = 0; j < Ow; ++j, ++q) {
        double x = static_cast<double>(coords(t, i, j, Index(0)));
        double y = static_cast<double>(coords(t, i, j, Index(1)));
        x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
        y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
        const Index x0 = std::min(static_cast<Index>(x), W - 2 >= 0 ? W - 2 : 0);
        const Index y0 = std::min(static_cast<Index>(y), H - 2 >= 0 ? H - 2 : 0);
        const double fx = x - static_cast<double>(x0);
        const double fy = y - static_cast<double>(y0);
        Tap& tap = (*taps)[static_cast<std::size_t>(q)];
        tap.base = y0 * W + x0;
        tap.w00 = static_cast<S>((1 - fy) * (1 - fx));
        tap.w01 = static_cast<S>((1 - fy) * fx);
        tap.w10 = static_cast<S>(fy * (1 - fx));
        tap.w11 = static_cast<S>(fy * fx);
        out[q] = tap.w00 * m[tap.base] + tap.w01 * m[tap.base + 1] +
                 tap.w10 * m[tap.base + W] + tap.w11 * m[tap.base + W + 1];
      }
  }
  const Index im = maps.id, io = tp.size();
  const Index HW = H * W, P = Oh * Ow;
  return tp.push(std::move(out), [im, io, taps, HW, P, W](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    Tensor<S>& gm = t.grad(im);
    const Index T = g.dim(0);
    for (Index tt = 0; tt < T; ++tt) {
      S* dst = gm.data() + tt * HW;
      const S* gsrc = g.data() + tt * P;
      const Tap* tap = taps->data() + tt * P;
      for (Index q = 0; q < P; ++q) {
        dst[tap[q].base] += tap[q].w00 * gsrc[q];
        dst[tap[q].base + 1] += tap[q].w01 * gsrc[q];
        dst[tap[q].base + W] += tap[q].w10 * gsrc[q];
        dst[tap[q].base + W + 1] += tap[q].w11 * gsrc[q];
      }
    }
  });
}

}  // namespace avobj
