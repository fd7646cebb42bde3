#include "avobj/objects.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "avobj/encoders.hpp"
#include "avobj/image.hpp"

namespace avobj::objects {

namespace {

// Row-major-first cells of strictly dominating plateaus. A candidate region
// is a connected component (8-neighborhood) of equal value whose entire
// boundary is strictly smaller.
std::vector<Peak> local_maxima(const Tensor<float>& map) {
  const Index gh = map.dim(0), gw = map.dim(1);
  std::vector<Peak> out;
  std::vector<char> visited(static_cast<std::size_t>(gh * gw), 0);
  for (Index i = 0; i < gh; ++i)
    for (Index j = 0; j < gw; ++j) {
      if (visited[static_cast<std::size_t>(i * gw + j)]) continue;
      const float v = map(i, j);
      // Grow the equal-value component starting at its row-major-first cell.
      std::deque<GridLoc> queue{{i, j}};
      visited[static_cast<std::size_t>(i * gw + j)] = 1;
      bool dominated = false;
      while (!queue.empty()) {
        const GridLoc c = queue.front();
        queue.pop_front();
        for (Index di = -1; di <= 1; ++di)
          for (Index dj = -1; dj <= 1; ++dj) {
            if (di == 0 && dj == 0) continue;
            const Index ni = c.i + di, nj = c.j + dj;
            if (ni < 0 || ni >= gh || nj < 0 || nj >= gw) continue;
            const float nv = map(ni, nj);
            if (nv > v) dominated = true;
            if (nv == v && !visited[static_cast<std::size_t>(ni * gw + nj)]) {
              visited[static_cast<std::size_t>(ni * gw + nj)] = 1;
              queue.push_back({ni, nj});
            }
          }
      }
      if (!dominated) out.push_back({i, j, v});
    }
  return out;
}

}  // namespace

std::vector<Peak> detect_peaks_nms(const Tensor<float>& map, double rho_px,
                                   Index stride, Index max_n) {
  if (rho_px <= 0) throw config_error("rho must be positive");
  if (stride <= 0) throw config_error("stride must be positive");
  if (map.size() == 0) return {};
  if (map.rank() != 2) throw config_error("peak map must be (gh, gw)");

  std::vector<Peak> cand = local_maxima(map);
  const Index gw = map.dim(1);
  std::stable_sort(cand.begin(), cand.end(), [&](const Peak& a, const Peak& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.i * gw + a.j < b.i * gw + b.j;
  });

  const double halfw = rho_px / (2.0 * static_cast<double>(stride));
  std::vector<Peak> kept;
  for (const Peak& p : cand) {
    if (static_cast<Index>(kept.size()) >= max_n) break;
    bool suppressed = false;
    for (const Peak& k : kept)
      if (std::abs(static_cast<double>(p.i - k.i)) <= halfw &&
          std::abs(static_cast<double>(p.j - k.j)) <= halfw) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

std::vector<GridLoc> snap_track(const Tensor<float>& S,
                                const Tensor<float>& traj, Index anchor_i,
                                Index anchor_j, double rho_px, Index stride) {
  if (S.rank() != 3 || traj.rank() != 4 || S.dim(0) != traj.dim(0) ||
      S.dim(1) != traj.dim(1) || S.dim(2) != traj.dim(2))
    throw config_error("snap_track expects S (T,gh,gw) with traj (T,gh,gw,2)");
  if (anchor_i < 0 || anchor_i >= S.dim(1) || anchor_j < 0 ||
      anchor_j >= S.dim(2))
    throw config_error("anchor cell outside the grid");

  const Index T = S.dim(0), gh = S.dim(1), gw = S.dim(2);
  const double halfw = rho_px / (2.0 * static_cast<double>(stride));

  const auto window = [halfw](double center, Index n, Index& lo, Index& hi) {
    lo = std::max<Index>(0, static_cast<Index>(std::ceil(center - halfw)));
    hi = std::min<Index>(n - 1, static_cast<Index>(std::floor(center + halfw)));
    if (lo > hi) {  // sub-cell window: fall back to the nearest cell
      lo = hi = std::clamp<Index>(std::llround(center), 0, n - 1);
    }
  };

  std::vector<GridLoc> out;
  out.reserve(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    const double tx = traj(t, anchor_i, anchor_j, Index(0));
    const double ty = traj(t, anchor_i, anchor_j, Index(1));
    Index i0, i1, j0, j1;
    window(ty, gh, i0, i1);
    window(tx, gw, j0, j1);
    GridLoc best{i0, j0};
    float bv = S(t, i0, j0);
    for (Index i = i0; i <= i1; ++i)
      for (Index j = j0; j <= j1; ++j)
        if (S(t, i, j) > bv) {
          bv = S(t, i, j);
          best = {i, j};
        }
    out.push_back(best);
  }
  return out;
}

ObjectEmbeddings extract_object_embeddings(const Tensor<float>& fv,
                                           const Tensor<float>& fa,
                                           const std::vector<GridLoc>& snapped) {
  if (fv.rank() != 4 || fa.rank() != 2 || fv.dim(0) != fa.dim(0) ||
      fv.dim(3) != fa.dim(1))
    throw config_error("embedding inputs must be (T,h,w,D) and (T,D)");
  const Index T = fv.dim(0), h = fv.dim(1), w = fv.dim(2), D = fv.dim(3);
  if (static_cast<Index>(snapped.size()) != T)
    throw config_error("need one snapped location per frame");

  ObjectEmbeddings out;
  out.emb = Tensor<float>({T, D});
  out.scores.resize(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    const GridLoc loc = snapped[static_cast<std::size_t>(t)];
    if (loc.i < 0 || loc.i >= h || loc.j < 0 || loc.j >= w)
      throw config_error("snapped location outside the grid");
    const float* a = fa.data() + t * D;
    double na = 0;
    for (Index d = 0; d < D; ++d) na += static_cast<double>(a[d]) * a[d];
    na = std::max(std::sqrt(na), 1e-8);
    const float* v = fv.data() + ((t * h + loc.i) * w + loc.j) * D;
    double nv = 0, dot = 0;
    for (Index d = 0; d < D; ++d) {
      nv += static_cast<double>(v[d]) * v[d];
      dot += static_cast<double>(v[d]) * a[d];
    }
    nv = std::max(std::sqrt(nv), 1e-8);
    for (Index d = 0; d < D; ++d)
      out.emb(t, d) = static_cast<float>(static_cast<double>(v[d]) / nv);
    out.scores[static_cast<std::size_t>(t)] =
        static_cast<float>(dot / (nv * na));
  }
  return out;
}

std::vector<AudioVisualObject> extract_objects(const Tensor<float>& clip,
                                               const Tensor<float>& mel,
                                               const sync::SyncModel& model,
                                               const ExtractConfig& cfg) {
  ParamStore<float> params = model.params;  // eval pass updates no state
  const enc::VideoFeatures vf =
      enc::encode_video_eval(model.encoder, params, clip);
  Tensor<float> fv = vf.f;
  Tensor<float> fa = enc::encode_audio_eval(model.encoder, params, mel);

  // Optional global re-alignment: shift the audio stream by the recovered
  // offset and keep the overlapping frames of both streams.
  Index crop_lo = 0;
  Index T = fv.dim(0);
  if (cfg.pre_align) {
    const sync::OffsetTable table =
        sync::score_offsets(fv, fa, cfg.align_radius);
    const Index dt = table.best;
    const Index lo = std::max<Index>(0, dt);
    const Index hi = std::min<Index>(T, T + dt);
    const Index n = hi - lo;
    Tensor<float> fvc({n, fv.dim(1), fv.dim(2), fv.dim(3)});
    Tensor<float> fac({n, fa.dim(1)});
    const Index row_v = fv.dim(1) * fv.dim(2) * fv.dim(3);
    const Index row_a = fa.dim(1);
    for (Index t = 0; t < n; ++t) {
      std::copy_n(fv.data() + (lo + t) * row_v, row_v, fvc.data() + t * row_v);
      std::copy_n(fa.data() + (lo + t - dt) * row_a, row_a,
                  fac.data() + t * row_a);
    }
    fv = std::move(fvc);
    fa = std::move(fac);
    crop_lo = lo;
    T = n;
  }

  const Tensor<float> S = sync::attention_map(fv, fa);
  const Index gh = fv.dim(1), gw = fv.dim(2);

  const Index frames = clip.dim(0);
  Tensor<float> tracks;
  if (cfg.use_flow) {
    std::vector<Tensor<float>> gray;
    gray.reserve(static_cast<std::size_t>(frames));
    const Index H = clip.dim(1), W = clip.dim(2);
    for (Index t = 0; t < frames; ++t) {
      Tensor<float> g({H, W});
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          g(y, x) = 0.299f * clip(t, y, x, Index(0)) +
                    0.587f * clip(t, y, x, Index(1)) +
                    0.114f * clip(t, y, x, Index(2));
      gray.push_back(std::move(g));
    }
    tracks = flow::chain_tracks(flow::estimate_flow(gray, cfg.lk), gh, gw,
                                vf.stride);
  } else {
    tracks = flow::identity_trajectories(frames, gh, gw);
  }

  // Feature frame t sits at video frame t + offset (+ the alignment crop).
  Tensor<float> traj({T, gh, gw, 2});
  for (Index t = 0; t < T; ++t)
    std::copy_n(tracks.data() + (crop_lo + t + vf.offset) * gh * gw * 2,
                gh * gw * 2, traj.data() + t * gh * gw * 2);

  const Tensor<float> agg = flow::aggregate_attention(S, traj);
  const std::vector<Peak> peaks =
      detect_peaks_nms(agg, cfg.rho_px, vf.stride, cfg.max_n);

  std::vector<AudioVisualObject> out;
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    const Peak& p = peaks[k];
    AudioVisualObject obj;
    obj.id = static_cast<Index>(k);
    obj.anchor = p;
    obj.aggregate = p.score;
    const std::vector<GridLoc> snapped =
        snap_track(S, traj, p.i, p.j, cfg.rho_px, vf.stride);
    ObjectEmbeddings emb = extract_object_embeddings(fv, fa, snapped);
    obj.embeddings = std::move(emb.emb);
    obj.track.reserve(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) {
      const GridLoc loc = snapped[static_cast<std::size_t>(t)];
      ObjectFrame f;
      f.frame = crop_lo + t + vf.offset;
      f.i = loc.i;
      f.j = loc.j;
      f.x_px = flow::grid_to_px(static_cast<double>(loc.j), vf.stride);
      f.y_px = flow::grid_to_px(static_cast<double>(loc.i), vf.stride);
      f.sync_score = emb.scores[static_cast<std::size_t>(t)];
      obj.track.push_back(f);
    }
    out.push_back(std::move(obj));
  }
  return out;
}

Json objects_to_json(const std::vector<AudioVisualObject>& objects) {
  Json arr = Json::array();
  for (const AudioVisualObject& o : objects) {
    Json frames = Json::array();
    for (const ObjectFrame& f : o.track)
      frames.push_back({{"frame", f.frame},
                        {"x_px", f.x_px},
                        {"y_px", f.y_px},
                        {"sync_score", f.sync_score}});
    arr.push_back({{"id", o.id},
                   {"aggregate", o.aggregate},
                   {"anchor", {{"i", o.anchor.i}, {"j", o.anchor.j},
                               {"score", o.anchor.score}}},
                   {"frames", frames}});
  }
  return Json{{"objects", arr}};
}

}  // namespace avobj::objects
