#pragma once

#include "avobj/autodiff.hpp"

namespace avobj {

// Convolutions via im2col + GEMM. Data layout is channels-first:
//   conv1d  x (N,C,L)      w (Co,Ci,k)
//   conv2d  x (N,C,H,W)    w (Co,Ci,kh,kw)
//   conv3d  x (N,C,D,H,W)  w (Co,Ci,kd,kh,kw)
// Bias is not fused; add it afterwards with a broadcast add.

inline Index conv_out_dim(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline Index pool_out_dim(Index in, Index k, Index stride, Index pad,
                          bool ceil_mode) {
  const Index num = in + 2 * pad - k;
  Index out = ceil_mode ? (num + stride - 1) / stride + 1 : num / stride + 1;
  // A ceil-mode window must start inside the input or its left padding.
  if (ceil_mode && (out - 1) * stride >= in + pad) --out;
  return out;
}

namespace detail {

template <typename S>
void im2col2d(const S* x, Index C, Index H, Index W, Index kh, Index kw,
              Index sh, Index sw, Index ph, Index pw, Index Ho, Index Wo,
              S* col) {
  // col is (C*kh*kw) x (Ho*Wo), zero for out-of-bounds taps.
  const Index P = Ho * Wo;
  Index row = 0;
  for (Index c = 0; c < C; ++c) {
    const S* xc = x + c * H * W;
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj, ++row) {
        S* dst = col + row * P;
        for (Index oi = 0; oi < Ho; ++oi) {
          const Index ii = oi * sh - ph + ki;
          if (ii < 0 || ii >= H) {
            std::fill_n(dst + oi * Wo, Wo, S(0));
            continue;
          }
          const S* src = xc + ii * W;
          for (Index oj = 0; oj < Wo; ++oj) {
            const Index jj = oj * sw - pw + kj;
            dst[oi * Wo + oj] = (jj >= 0 && jj < W) ? src[jj] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im2d(const S* col, Index C, Index H, Index W, Index kh, Index kw,
              Index sh, Index sw, Index ph, Index pw, Index Ho, Index Wo,
              S* x) {
  // Scatter-add transpose of im2col2d; x must be pre-zeroed or accumulated.
  const Index P = Ho * Wo;
  Index row = 0;
  for (Index c = 0; c < C; ++c) {
    S* xc = x + c * H * W;
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj, ++row) {
        const S* src = col + row * P;
        for (Index oi = 0; oi < Ho; ++oi) {
          const Index ii = oi * sh - ph + ki;
          if (ii < 0 || ii >= H) continue;
          S* dst = xc + ii * W;
          for (Index oj = 0; oj < Wo; ++oj) {
            const Index jj = oj * sw - pw + kj;
            if (jj >= 0 && jj < W) dst[jj] += src[oi * Wo + oj];
          }
        }
      }
    }
  }
}

template <typename S>
void im2col3d(const S* x, Index C, Index D, Index H, Index W, Index kd,
              Index kh, Index kw, Index sd, Index sh, Index sw, Index pd,
              Index ph, Index pw, Index Do, Index Ho, Index Wo, S* col) {
  const Index P = Do * Ho * Wo;
  Index row = 0;
  for (Index c = 0; c < C; ++c) {
    for (Index kt = 0; kt < kd; ++kt) {
      for (Index ki = 0; ki < kh; ++ki) {
        for (Index kj = 0; kj < kw; ++kj, ++row) {
          S* dst = col + row * P;
          for (Index od = 0; od < Do; ++od) {
            const Index tt = od * sd - pd + kt;
            for (Index oi = 0; oi < Ho; ++oi) {
              const Index ii = oi * sh - ph + ki;
              S* drow = dst + (od * Ho + oi) * Wo;
              if (tt < 0 || tt >= D || ii < 0 || ii >= H) {
                std::fill_n(drow, Wo, S(0));
                continue;
              }
              const S* src = x + ((c * D + tt) * H + ii) * W;
              for (Index oj = 0; oj < Wo; ++oj) {
                const Index jj = oj * sw - pw + kj;
                drow[oj] = (jj >= 0 && jj < W) ? src[jj] : S(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
void col2im3d(const S* col, Index C, Index D, Index H, Index W, Index kd,
              Index kh, Index kw, Index sd, Index sh, Index sw, Index pd,
              Index ph, Index pw, Index Do, Index Ho, Index Wo, S* x) {
  const Index P = Do * Ho * Wo;
  Index row = 0;
  for (Index c = 0; c < C; ++c) {
    for (Index kt = 0; kt < kd; ++kt) {
      for (Index ki = 0; ki < kh; ++ki) {
        for (Index kj = 0; kj < kw; ++kj, ++row) {
          const S* src = col + row * P;
          for (Index od = 0; od < Do; ++od) {
            const Index tt = od * sd - pd + kt;
            if (tt < 0 || tt >= D) continue;
            for (Index oi = 0; oi < Ho; ++oi) {
              const Index ii = oi * sh - ph + ki;
              if (ii < 0 || ii >= H) continue;
              S* dst = x + ((c * D + tt) * H + ii) * W;
              const S* srow = src + (od * Ho + oi) * Wo;
              for (Index oj = 0; oj < Wo; ++oj) {
                const Index jj = oj * sw - pw + kj;
                if (jj >= 0 && jj < W) dst[jj] += srow[oj];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Index sh, Index sw, Index ph, Index pw) {
  Tape<S>& tp = *x.tape;
  const Tensor<S>& vx = x.val();
  const Tensor<S>& vw = w.val();
  const Index N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const Index Co = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
  if (vw.dim(1) != C)
    throw config_error("conv2d channels: x " + shape_str(vx.shape()) +
                       " w " + shape_str(vw.shape()));
  const Index Ho = conv_out_dim(H, kh, sh, ph);
  const Index Wo = conv_out_dim(W, kw, sw, pw);
  const Index K = C * kh * kw, P = Ho * Wo;
  Tensor<S> out({N, Co, Ho, Wo});
  Tensor<S> col({K, P});
  for (Index n = 0; n < N; ++n) {
    detail::im2col2d(vx.data() + n * C * H * W, C, H, W, kh, kw, sh, sw, ph,
                     pw, Ho, Wo, col.data());
    MatMap<S>(out.data() + n * Co * P, Co, P).noalias() =
        vw.mat(Co, K) * col.mat(K, P);
  }
  const Index ix = x.id, iw = w.id, io = tp.size();
  return tp.push(
      std::move(out), [=](Tape<S>& t) {
        const Tensor<S>& g = t.grad(io);
        const Tensor<S>& vx = t.value(ix);
        const Tensor<S>& vw = t.value(iw);
        Tensor<S>& gx = t.grad(ix);
        Tensor<S>& gw = t.grad(iw);
        Tensor<S> col({K, P});
        for (Index n = 0; n < N; ++n) {
          ConstMatMap<S> gn(g.data() + n * Co * P, Co, P);
          detail::im2col2d(vx.data() + n * C * H * W, C, H, W, kh, kw, sh, sw,
                           ph, pw, Ho, Wo, col.data());
          gw.mat(Co, K).noalias() += gn * col.mat(K, P).transpose();
          col.mat(K, P).noalias() = vw.mat(Co, K).transpose() * gn;
          detail::col2im2d(col.data(), C, H, W, kh, kw, sh, sw, ph, pw, Ho, Wo,
                           gx.data() + n * C * H * W);
        }
      });
}

template <typename S>
Var<S> conv3d(Var<S> x, Var<S> w, Index sd, Index sh, Index sw, Index pd,
              Index ph, Index pw) {
  Tape<S>& tp = *x.tape;
  const Tensor<S>& vx = x.val();
  const Tensor<S>& vw = w.val();
  const Index N = vx.dim(0), C = vx.dim(1), D = vx.dim(2), H = vx.dim(3),
              W = vx.dim(4);
  const Index Co = vw.dim(0), kd = vw.dim(2), kh = vw.dim(3), kw = vw.dim(4);
  if (vw.dim(1) != C)
    throw config_error("conv3d channels: x " + shape_str(vx.shape()) +
                       " w " + shape_str(vw.shape()));
  const Index Do = conv_out_dim(D, kd, sd, pd);
  const Index Ho = conv_out_dim(H, kh, sh, ph);
  const Index Wo = conv_out_dim(W, kw, sw, pw);
  const Index K = C * kd * kh * kw, P = Do * Ho * Wo;
  Tensor<S> out({N, Co, Do, Ho, Wo});
  Tensor<S> col({K, P});
  for (Index n = 0; n < N; ++n) {
    detail::im2col3d(vx.data() + n * C * D * H * W, C, D, H, W, kd, kh, kw, sd,
                     sh, sw, pd, ph, pw, Do, Ho, Wo, col.data());
    MatMap<S>(out.data() + n * Co * P, Co, P).noalias() =
        vw.mat(Co, K) * col.mat(K, P);
  }
  const Index ix = x.id, iw = w.id, io = tp.size();
  return tp.push(
      std::move(out), [=](Tape<S>& t) {
        const Tensor<S>& g = t.grad(io);
        const Tensor<S>& vx = t.value(ix);
        const Tensor<S>& vw = t.value(iw);
        Tensor<S>& gx = t.grad(ix);
        Tensor<S>& gw = t.grad(iw);
        Tensor<S> col({K, P});
        for (Index n = 0; n < N; ++n) {
          ConstMatMap<S> gn(g.data() + n * Co * P, Co, P);
          detail::im2col3d(vx.data() + n * C * D * H * W, C, D, H, W, kd, kh,
                           kw, sd, sh, sw, pd, ph, pw, Do, Ho, Wo, col.data());
          gw.mat(Co, K).noalias() += gn * col.mat(K, P).transpose();
          col.mat(K, P).noalias() = vw.mat(Co, K).transpose() * gn;
          detail::col2im3d(col.data(), C, D, H, W, kd, kh, kw, sd, sh, sw, pd,
                           ph, pw, Do, Ho, Wo, gx.data() + n * C * D * H * W);
        }
      });
}

// conv1d rides on conv2d with a singleton height axis.
template <typename S>
Var<S> conv1d(Var<S> x, Var<S> w, Index stride, Index pad) {
  const Index N = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  const Index Co = w.shape()[0], Ci = w.shape()[1], k = w.shape()[2];
  Var<S> x4 = reshape(x, {N, C, Index(1), L});
  Var<S> w4 = reshape(w, {Co, Ci, Index(1), k});
  Var<S> y = conv2d(x4, w4, 1, stride, 0, pad);
  return reshape(y, {N, Co, y.shape()[3]});
}

// Per-channel 1D convolution, stride 1. w is (C, k).
template <typename S>
Var<S> depthwise_conv1d(Var<S> x, Var<S> w, Index pad) {
  Tape<S>& tp = *x.tape;
  const Tensor<S>& vx = x.val();
  const Tensor<S>& vw = w.val();
  const Index N = vx.dim(0), C = vx.dim(1), L = vx.dim(2);
  const Index k = vw.dim(1);
  if (vw.dim(0) != C)
    throw config_error("depthwise_conv1d channels: x " +
                       shape_str(vx.shape()) + " w " + shape_str(vw.shape()));
  const Index Lo = conv_out_dim(L, k, 1, pad);
  Tensor<S> out({N, C, Lo});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const S* xc = vx.data() + (n * C + c) * L;
      const S* wc = vw.data() + c * k;
      S* oc = out.data() + (n * C + c) * Lo;
      for (Index o = 0; o < Lo; ++o) {
        S acc = S(0);
        for (Index kk = 0; kk < k; ++kk) {
          const Index i = o - pad + kk;
          if (i >= 0 && i < L) acc += xc[i] * wc[kk];
        }
        oc[o] = acc;
      }
    }
  const Index ix = x.id, iw = w.id, io = tp.size();
  return tp.push(std::move(out), [=](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    const Tensor<S>& vx = t.value(ix);
    const Tensor<S>& vw = t.value(iw);
    Tensor<S>& gx = t.grad(ix);
    Tensor<S>& gw = t.grad(iw);
    for (Index n = 0; n < N; ++n)
      for (Index c = 0; c < C; ++c) {
        const S* xc = vx.data() + (n * C + c) * L;
        const S* wc = vw.data() + c * k;
        const S* gc = g.data() + (n * C + c) * Lo;
        S* gxc = gx.data() + (n * C + c) * L;
        S* gwc = gw.data() + c * k;
        for (Index o = 0; o < Lo; ++o)
          for (Index kk = 0; kk < k; ++kk) {
            const Index i = o - pad + kk;
            if (i >= 0 && i < L) {
              gxc[i] += gc[o] * wc[kk];
              gwc[kk] += gc[o] * xc[i];
            }
          }
      }
  });
}

// Fractional-stride upsampling along time. w is (Ci, Co, k);
// Lout = (L-1)*stride - 2*pad + k + out_pad.
template <typename S>
Var<S> conv_transpose1d(Var<S> x, Var<S> w, Index stride, Index pad,
                        Index out_pad) {
  Tape<S>& tp = *x.tape;
  const Tensor<S>& vx = x.val();
  const Tensor<S>& vw = w.val();
  const Index N = vx.dim(0), Ci = vx.dim(1), L = vx.dim(2);
  const Index Co = vw.dim(1), k = vw.dim(2);
  if (vw.dim(0) != Ci)
    throw config_error("conv_transpose1d channels: x " +
                       shape_str(vx.shape()) + " w " + shape_str(vw.shape()));
  const Index Lo = (L - 1) * stride - 2 * pad + k + out_pad;
  Tensor<S> out({N, Co, Lo});
  for (Index n = 0; n < N; ++n)
    for (Index ci = 0; ci < Ci; ++ci) {
      const S* xc = vx.data() + (n * Ci + ci) * L;
      for (Index co = 0; co < Co; ++co) {
        const S* wc = vw.data() + (ci * Co + co) * k;
        S* oc = out.data() + (n * Co + co) * Lo;
        for (Index l = 0; l < L; ++l)
          for (Index kk = 0; kk < k; ++kk) {
            const Index o = l * stride - pad + kk;
            if (o >= 0 && o < Lo) oc[o] += xc[l] * wc[kk];
          }
      }
    }
  const Index ix = x.id, iw = w.id, io = tp.size();
  return tp.push(std::move(out), [=](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    const Tensor<S>& vx = t.value(ix);
    const Tensor<S>& vw = t.value(iw);
    Tensor<S>& gx = t.grad(ix);
    Tensor<S>& gw = t.grad(iw);
    for (Index n = 0; n < N; ++n)
      for (Index ci = 0; ci < Ci; ++ci) {
        const S* xc = vx.data() + (n * Ci + ci) * L;
        S* gxc = gx.data() + (n * Ci + ci) * L;
        for (Index co = 0; co < Co; ++co) {
          const S* wc = vw.data() + (ci * Co + co) * k;
          S* gwc = gw.data() + (ci * Co + co) * k;
          const S* gc = g.data() + (n * Co + co) * Lo;
          for (Index l = 0; l < L; ++l)
            for (Index kk = 0; kk < k; ++kk) {
              const Index o = l * stride - pad + kk;
              if (o >= 0 && o < Lo) {
                gxc[l] += gc[o] * wc[kk];
                gwc[kk] += gc[o] * xc[l];
              }
            }
        }
      }
  });
}

// Max pooling over (H,W); padded taps never win. Ties go to the earliest tap
// in row-major scan order.
template <typename S>
Var<S> maxpool2d(Var<S> x, Index kh, Index kw, Index sh, Index sw, Index ph,
                 Index pw, bool ceil_mode) {
  Tape<S>& tp = *x.tape;
  const Tensor<S>& vx = x.val();
  const Index N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const Index Ho = pool_out_dim(H, kh, sh, ph, ceil_mode);
  const Index Wo = pool_out_dim(W, kw, sw, pw, ceil_mode);
  Tensor<S> out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<Index>>(
      static_cast<std::size_t>(out.size()));
  Index oidx = 0;
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const S* xc = vx.data() + (n * C + c) * H * W;
      for (Index oi = 0; oi < Ho; ++oi)
        for (Index oj = 0; oj < Wo; ++oj, ++oidx) {
          S best = std::numeric_limits<S>::lowest();
          Index besti = -1;
          for (Index ki = 0; ki < kh; ++ki) {
            const Index ii = oi * sh - ph + ki;
            if (ii < 0 || ii >= H) continue;
            for (Index kj = 0; kj < kw; ++kj) {
              const Index jj = oj * sw - pw + kj;
              if (jj < 0 || jj >= W) continue;
              if (xc[ii * W + jj] > best) {
                best = xc[ii * W + jj];
                besti = (n * C + c) * H * W + ii * W + jj;
              }
            }
          }
          out[oidx] = best;
          (*argmax)[static_cast<std::size_t>(oidx)] = besti;
        }
    }
  const Index ix = x.id, io = tp.size();
  return tp.push(std::move(out), [ix, io, argmax](Tape<S>& t) {
    const Tensor<S>& g = t.grad(io);
    Tensor<S>& gx = t.grad(ix);
    for (Index i = 0; i < g.size(); ++i)
      gx[(*argmax)[static_cast<std::size_t>(i)]] += g[i];
  });
}

}  // namespace avobj
