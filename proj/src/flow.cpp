#include "avobj/flow.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "avobj/interp.hpp"

namespace avobj::flow {

namespace {

constexpr float kFloMagic = 202021.25f;

Tensor<float> downsample2(const Tensor<float>& img) {
  const Index H = img.dim(0), W = img.dim(1);
  const Index h = H / 2, w = W / 2;
  Tensor<float> out({h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      out(y, x) = 0.25f * (img(2 * y, 2 * x) + img(2 * y, 2 * x + 1) +
                           img(2 * y + 1, 2 * x) + img(2 * y + 1, 2 * x + 1));
  return out;
}

// Separable box sum over a (2r+1)^2 window with border truncation.
Tensor<float> box_sum(const Tensor<float>& img, Index r) {
  const Index H = img.dim(0), W = img.dim(1);
  Tensor<float> tmp({H, W}), out({H, W});
  for (Index y = 0; y < H; ++y) {
    double acc = 0;
    for (Index x = 0; x < std::min(W, r + 1); ++x) acc += img(y, x);
    for (Index x = 0; x < W; ++x) {
      tmp(y, x) = static_cast<float>(acc);
      const Index add = x + r + 1, drop = x - r;
      if (add < W) acc += img(y, add);
      if (drop >= 0) acc -= img(y, drop);
    }
  }
  for (Index x = 0; x < W; ++x) {
    double acc = 0;
    for (Index y = 0; y < std::min(H, r + 1); ++y) acc += tmp(y, x);
    for (Index y = 0; y < H; ++y) {
      out(y, x) = static_cast<float>(acc);
      const Index add = y + r + 1, drop = y - r;
      if (add < H) acc += tmp(add, x);
      if (drop >= 0) acc -= tmp(drop, x);
    }
  }
  return out;
}

void lk_refine(const Tensor<float>& i0, const Tensor<float>& i1, Field& uv,
               const LkConfig& cfg) {
  const Index H = i0.dim(0), W = i0.dim(1);
  Tensor<float> ix({H, W}), iy({H, W}), it({H, W});
  for (Index iter = 0; iter < cfg.iterations; ++iter) {
    // Warp i1 by the current flow and take temporal/spatial derivatives.
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double wx = x + uv(Index(0), y, x);
        const double wy = y + uv(Index(1), y, x);
        it(y, x) = bilinear_at(i1, wx, wy) - i0(y, x);
        const Index xm = std::max<Index>(0, x - 1), xp = std::min(W - 1, x + 1);
        const Index ym = std::max<Index>(0, y - 1), yp = std::min(H - 1, y + 1);
        ix(y, x) = 0.5f * (i0(y, xp) - i0(y, xm));
        iy(y, x) = 0.5f * (i0(yp, x) - i0(ym, x));
      }
    Tensor<float> ixx({H, W}), ixy({H, W}), iyy({H, W}), ixt({H, W}),
        iyt({H, W});
    for (Index i = 0; i < H * W; ++i) {
      ixx[i] = ix[i] * ix[i];
      ixy[i] = ix[i] * iy[i];
      iyy[i] = iy[i] * iy[i];
      ixt[i] = ix[i] * it[i];
      iyt[i] = iy[i] * it[i];
    }
    const Tensor<float> sxx = box_sum(ixx, cfg.radius);
    const Tensor<float> sxy = box_sum(ixy, cfg.radius);
    const Tensor<float> syy = box_sum(iyy, cfg.radius);
    const Tensor<float> sxt = box_sum(ixt, cfg.radius);
    const Tensor<float> syt = box_sum(iyt, cfg.radius);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double a = sxx(y, x) + cfg.damping;
        const double b = sxy(y, x);
        const double c = syy(y, x) + cfg.damping;
        const double det = a * c - b * b;
        if (det < 1e-12) continue;
        const double bx = -sxt(y, x);
        const double by = -syt(y, x);
        uv(Index(0), y, x) += static_cast<float>((c * bx - b * by) / det);
        uv(Index(1), y, x) += static_cast<float>((a * by - b * bx) / det);
      }
  }
}

}  // namespace

Field read_flo(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open flow file: " + path);
  float magic = 0;
  std::int32_t w = 0, h = 0;
  is.read(reinterpret_cast<char*>(&magic), 4);
  is.read(reinterpret_cast<char*>(&w), 4);
  is.read(reinterpret_cast<char*>(&h), 4);
  if (!is || magic != kFloMagic)
    throw data_error("bad flow magic in " + path);
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16)
    throw data_error("implausible flow dimensions in " + path);
  Field field({2, h, w});
  std::vector<float> row(static_cast<std::size_t>(w) * 2);
  for (Index y = 0; y < h; ++y) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * 4));
    for (Index x = 0; x < w; ++x) {
      field(Index(0), y, x) = row[static_cast<std::size_t>(2 * x)];
      field(Index(1), y, x) = row[static_cast<std::size_t>(2 * x + 1)];
    }
  }
  if (!is) throw data_error("truncated flow file: " + path);
  return field;
}

void write_flo(const std::string& path, const Field& field) {
  if (field.rank() != 3 || field.dim(0) != 2)
    throw config_error("flow field must be (2,H,W), got " +
                       shape_str(field.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open " + path + " for writing");
  const std::int32_t h = static_cast<std::int32_t>(field.dim(1));
  const std::int32_t w = static_cast<std::int32_t>(field.dim(2));
  os.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  os.write(reinterpret_cast<const char*>(&w), 4);
  os.write(reinterpret_cast<const char*>(&h), 4);
  std::vector<float> row(static_cast<std::size_t>(w) * 2);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      row[static_cast<std::size_t>(2 * x)] = field(Index(0), y, x);
      row[static_cast<std::size_t>(2 * x + 1)] = field(Index(1), y, x);
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * 4));
  }
  if (!os) throw data_error("short write to " + path);
}

Field lucas_kanade(const Tensor<float>& img0, const Tensor<float>& img1,
                   const LkConfig& cfg) {
  std::vector<Tensor<float>> pyr0{img0}, pyr1{img1};
  for (Index l = 1; l < cfg.levels; ++l) {
    if (pyr0.back().dim(0) < 16 || pyr0.back().dim(1) < 16) break;
    pyr0.push_back(downsample2(pyr0.back()));
    pyr1.push_back(downsample2(pyr1.back()));
  }
  Field uv({2, pyr0.back().dim(0), pyr0.back().dim(1)});
  for (Index l = static_cast<Index>(pyr0.size()) - 1; l >= 0; --l) {
    const Tensor<float>& i0 = pyr0[static_cast<std::size_t>(l)];
    if (uv.dim(1) != i0.dim(0)) {
      // Upsample flow to this level and double the displacements.
      Field up({2, i0.dim(0), i0.dim(1)});
      const Index ph = uv.dim(1), pw = uv.dim(2);
      for (Index c = 0; c < 2; ++c)
        for (Index y = 0; y < i0.dim(0); ++y)
          for (Index x = 0; x < i0.dim(1); ++x)
            up(c, y, x) =
                2.0f * bilinear_at(uv.data() + c * ph * pw, ph, pw,
                                   (x + 0.5) / 2.0 - 0.5, (y + 0.5) / 2.0 - 0.5);
      uv = std::move(up);
    }
    lk_refine(i0, pyr1[static_cast<std::size_t>(l)], uv, cfg);
  }
  return uv;
}

Field to_grid(const Field& pixel_flow, Index stride, Index gh, Index gw) {
  const Index H = pixel_flow.dim(1), W = pixel_flow.dim(2);
  Field out({2, gh, gw});
  for (Index c = 0; c < 2; ++c)
    for (Index i = 0; i < gh; ++i)
      for (Index j = 0; j < gw; ++j) {
        double acc = 0;
        Index count = 0;
        for (Index y = i * stride; y < std::min(H, (i + 1) * stride); ++y)
          for (Index x = j * stride; x < std::min(W, (j + 1) * stride); ++x) {
            acc += pixel_flow(c, y, x);
            ++count;
          }
        out(c, i, j) = count
                           ? static_cast<float>(acc / count /
                                                static_cast<double>(stride))
                           : 0.0f;
      }
  return out;
}

Tensor<float> chain_tracks(const std::vector<Field>& flows, Index gh, Index gw,
                           Index stride) {
  const Index T = static_cast<Index>(flows.size()) + 1;
  const double s = static_cast<double>(stride);
  Tensor<float> pos({T, gh, gw, 2});
  for (Index i = 0; i < gh; ++i)
    for (Index j = 0; j < gw; ++j) {
      pos(Index(0), i, j, Index(0)) = static_cast<float>(j);
      pos(Index(0), i, j, Index(1)) = static_cast<float>(i);
    }
  for (Index t = 0; t + 1 < T; ++t) {
    const Field& f = flows[static_cast<std::size_t>(t)];
    const Index H = f.dim(1), W = f.dim(2);
    for (Index i = 0; i < gh; ++i)
      for (Index j = 0; j < gw; ++j) {
        const double x = pos(t, i, j, Index(0));
        const double y = pos(t, i, j, Index(1));
        const double px = grid_to_px(x, stride);
        const double py = grid_to_px(y, stride);
        const double u = bilinear_at(f.data(), H, W, px, py);
        const double v = bilinear_at(f.data() + H * W, H, W, px, py);
        pos(t + 1, i, j, Index(0)) = static_cast<float>(
            std::clamp(x + u / s, 0.0, static_cast<double>(gw - 1)));
        pos(t + 1, i, j, Index(1)) = static_cast<float>(
            std::clamp(y + v / s, 0.0, static_cast<double>(gh - 1)));
      }
  }
  return pos;
}

std::vector<Field> estimate_flow(const std::vector<Tensor<float>>& gray,
                                 const LkConfig& cfg) {
  if (gray.size() < 2) throw config_error("flow needs at least two frames");
  std::vector<Field> flows;
  flows.reserve(gray.size() - 1);
  for (std::size_t t = 0; t + 1 < gray.size(); ++t)
    flows.push_back(lucas_kanade(gray[t], gray[t + 1], cfg));
  return flows;
}

Tensor<float> identity_trajectories(Index T, Index gh, Index gw) {
  Tensor<float> pos({T, gh, gw, 2});
  for (Index t = 0; t < T; ++t)
    for (Index i = 0; i < gh; ++i)
      for (Index j = 0; j < gw; ++j) {
        pos(t, i, j, Index(0)) = static_cast<float>(j);
        pos(t, i, j, Index(1)) = static_cast<float>(i);
      }
  return pos;
}

Tensor<float> aggregate_attention(const Tensor<float>& S,
                                  const Tensor<float>& traj) {
  if (S.rank() != 3 || traj.rank() != 4 || traj.dim(3) != 2)
    throw config_error("aggregate_attention wants S (T,h,w), traj (T,h,w,2)");
  if (S.dim(0) != traj.dim(0) || S.dim(1) != traj.dim(1) ||
      S.dim(2) != traj.dim(2))
    throw config_error("attention/trajectory shape mismatch: " +
                       shape_str(S.shape()) + " vs " + shape_str(traj.shape()));
  const Index T = S.dim(0), h = S.dim(1), w = S.dim(2);
  Tensor<float> out({h, w});
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) {
      double acc = 0;
      for (Index t = 0; t < T; ++t)
        acc += bilinear_at(S.data() + t * h * w, h, w, traj(t, i, j, Index(0)),
                           traj(t, i, j, Index(1)));
      out(i, j) = static_cast<float>(acc / static_cast<double>(T));
    }
  return out;
}

}  // namespace avobj::flow
