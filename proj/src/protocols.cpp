#include "avobj/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace avobj::eval {

std::vector<GtTrack> gt_tracks_from_json(const Json& gt) {
  std::vector<GtTrack> out;
  for (const Json& js : gt.at("sources")) {
    GtTrack t;
    t.source = js.at("id").get<Index>();
    for (const Json& b : js.at("boxes"))
      t.boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(),
                         b.at(2).get<double>(), b.at(3).get<double>()});
    t.active = js.at("active").get<std::vector<int>>();
    out.push_back(std::move(t));
  }
  return out;
}

LocResult localization_accuracy(
    const std::vector<objects::AudioVisualObject>& objs,
    const std::vector<GtTrack>& tracks) {
  if (objs.empty())
    throw config_error("localization needs at least one object");
  LocResult r;
  for (const objects::ObjectFrame& f : objs[0].track) {
    bool any_active = false, inside = false;
    for (const GtTrack& t : tracks) {
      if (f.frame >= static_cast<Index>(t.active.size()) ||
          t.active[static_cast<std::size_t>(f.frame)] != 1)
        continue;
      any_active = true;
      const auto& b = t.boxes[static_cast<std::size_t>(f.frame)];
      if (f.x_px >= b[0] && f.x_px <= b[2] && f.y_px >= b[1] &&
          f.y_px <= b[3])
        inside = true;
    }
    if (!any_active) {
      ++r.skipped;
      continue;
    }
    ++r.evaluated;
    if (inside) ++r.correct;
  }
  r.accuracy = r.evaluated == 0
                   ? 0.0
                   : static_cast<double>(r.correct) /
                         static_cast<double>(r.evaluated);
  return r;
}

namespace {

constexpr double kNoOverlap = 1e18;

// Mean distance between the object's track and the GT box centers over the
// frames both cover.
double track_distance(const objects::AudioVisualObject& obj,
                      const GtTrack& t) {
  double acc = 0;
  Index n = 0;
  for (const objects::ObjectFrame& f : obj.track) {
    if (f.frame >= static_cast<Index>(t.boxes.size())) continue;
    const auto& b = t.boxes[static_cast<std::size_t>(f.frame)];
    acc += std::hypot(f.x_px - 0.5 * (b[0] + b[2]),
                      f.y_px - 0.5 * (b[1] + b[3]));
    ++n;
  }
  return n == 0 ? kNoOverlap : acc / static_cast<double>(n);
}

}  // namespace

std::vector<Index> associate_tracks_to_boxes(
    const std::vector<objects::AudioVisualObject>& objs,
    const std::vector<GtTrack>& tracks) {
  const Index rows = static_cast<Index>(tracks.size());
  const Index cols = static_cast<Index>(objs.size());
  if (cols == 0) throw config_error("association needs at least one object");
  std::vector<double> cost(static_cast<std::size_t>(rows * cols));
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      cost[static_cast<std::size_t>(r * cols + c)] = track_distance(
          objs[static_cast<std::size_t>(c)], tracks[static_cast<std::size_t>(r)]);
  std::vector<Index> assign = greedy_assign(cost, rows, cols);
  for (Index r = 0; r < rows; ++r)
    if (assign[static_cast<std::size_t>(r)] >= 0 &&
        cost[static_cast<std::size_t>(
            r * cols + assign[static_cast<std::size_t>(r)])] >= kNoOverlap)
      assign[static_cast<std::size_t>(r)] = -1;
  return assign;
}

AsdResult asd_evaluate(const std::vector<objects::AudioVisualObject>& objs,
                       const std::vector<GtTrack>& tracks, double threshold) {
  AsdResult res;
  res.threshold = threshold;
  res.assignment = associate_tracks_to_boxes(objs, tracks);

  std::vector<double> all_scores;
  std::vector<int> all_labels;
  double f1_sum = 0;
  for (std::size_t s = 0; s < tracks.size(); ++s) {
    const GtTrack& t = tracks[s];
    std::vector<int> pred, label;
    const Index oi = res.assignment[s];
    if (oi < 0) {
      // No object follows this source; every frame is a miss.
      label = t.active;
      pred.assign(t.active.size(), 0);
    } else {
      const objects::AudioVisualObject& obj =
          objs[static_cast<std::size_t>(oi)];
      for (const objects::ObjectFrame& f : obj.track) {
        if (f.frame >= static_cast<Index>(t.active.size())) continue;
        label.push_back(t.active[static_cast<std::size_t>(f.frame)]);
        pred.push_back(f.sync_score >= threshold ? 1 : 0);
        all_scores.push_back(f.sync_score);
        all_labels.push_back(t.active[static_cast<std::size_t>(f.frame)]);
      }
    }
    const F1Result f1 = f1_score(pred, label);
    f1_sum += f1.f1;
    res.per_source.push_back(f1);
  }
  res.macro_f1 =
      tracks.empty() ? 0.0 : f1_sum / static_cast<double>(tracks.size());
  res.ap = all_scores.empty() ? 0.0 : average_precision(all_scores, all_labels);
  return res;
}

std::vector<SyncAccuracy> sync_accuracy_protocol(
    const std::vector<OffsetClip>& clips, const std::vector<Index>& contexts,
    Index radius, sync::Pool mode) {
  std::vector<SyncAccuracy> out;
  for (const Index K : contexts) {
    if (K < 1) throw config_error("context length must be at least 1");
    out.push_back({K, 0.0, 0, 0});
  }
  std::vector<Index> correct(contexts.size(), 0);

  for (const OffsetClip& clip : clips) {
    const Index T = clip.fv.dim(0);
    Tensor<float> M;  // (2R+1, T-2R), computed once per clip
    if (T >= 2 * radius + 1)
      M = sync::offset_frame_scores(clip.fv, clip.fa, radius, mode);
    for (std::size_t k = 0; k < contexts.size(); ++k) {
      const Index K = contexts[k];
      if (T < K + 2 * radius) {
        ++out[k].skipped_clips;
        continue;
      }
      const Index cols = T - 2 * radius;
      for (Index p = 0; p + K <= cols; ++p) {
        Index best_dt = -radius;
        double best = -1e300;
        for (Index dt = -radius; dt <= radius; ++dt) {
          double acc = 0;
          for (Index c = p; c < p + K; ++c) acc += M(dt + radius, c);
          if (acc > best) {
            best = acc;
            best_dt = dt;
          }
        }
        ++out[k].evaluated;
        if (std::abs(best_dt - clip.true_dt) <= 1) ++correct[k];
      }
    }
  }
  for (std::size_t k = 0; k < contexts.size(); ++k)
    out[k].accuracy = out[k].evaluated == 0
                          ? 0.0
                          : static_cast<double>(correct[k]) /
                                static_cast<double>(out[k].evaluated);
  return out;
}

double mean_flow_magnitude(const std::vector<flow::Field>& flows) {
  double acc = 0;
  Index n = 0;
  for (const flow::Field& f : flows) {
    const Index H = f.dim(1), W = f.dim(2);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        acc += std::hypot(f(Index(0), y, x), f(Index(1), y, x));
    n += H * W;
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

MotionSplit motion_subsets(const std::vector<double>& magnitudes,
                           double quantile) {
  MotionSplit split;
  const Index n = static_cast<Index>(magnitudes.size());
  if (n == 0) return split;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return magnitudes[static_cast<std::size_t>(a)] <
           magnitudes[static_cast<std::size_t>(b)];
  });
  const Index k = std::max<Index>(
      1, static_cast<Index>(std::floor(static_cast<double>(n) * quantile)));
  split.low.assign(order.begin(), order.begin() + k);
  split.high.assign(order.rbegin(), order.rbegin() + k);
  return split;
}

std::vector<SweepRow> nms_sweep(const std::vector<EvalScene>& scenes,
                                const sync::SyncModel& model,
                                const std::vector<double>& rhos,
                                const objects::ExtractConfig& base) {
  std::vector<SweepRow> rows;
  for (const double rho : rhos) {
    objects::ExtractConfig cfg = base;
    cfg.rho_px = rho;
    SweepRow row;
    row.rho_px = rho;
    Index correct = 0;
    for (const EvalScene& scene : scenes) {
      const auto objs =
          objects::extract_objects(scene.clip, scene.mel, model, cfg);
      const LocResult loc = localization_accuracy(objs, scene.tracks);
      correct += loc.correct;
      row.evaluated += loc.evaluated;
      row.skipped += loc.skipped;
    }
    row.accuracy = row.evaluated == 0
                       ? 0.0
                       : static_cast<double>(correct) /
                             static_cast<double>(row.evaluated);
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "rho_px,accuracy,evaluated,skipped\n";
  for (const SweepRow& r : rows)
    os << r.rho_px << ',' << r.accuracy << ',' << r.evaluated << ','
       << r.skipped << '\n';
  return os.str();
}

Json report_to_json(const EvalReport& report) {
  Json metrics = Json::object();
  for (const auto& [name, value] : report.metrics) metrics[name] = value;
  return Json{{"schema", "avobj-eval-report-v1"},
              {"task", report.task},
              {"dataset", report.dataset},
              {"config", report.config},
              {"metrics", metrics},
              {"extra", report.extra}};
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value\n";
  for (const auto& [name, value] : report.metrics)
    os << name << ',' << value << '\n';
  return os.str();
}

}  // namespace avobj::eval
