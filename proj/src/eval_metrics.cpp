#include "avobj/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace avobj::eval {

namespace {

struct Rates {
  double fpr, fnr;
};

Rates rates_at(const std::vector<double>& scores, const std::vector<int>& labels,
               double threshold, Index n_pos, Index n_neg) {
  Index fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool decide = scores[i] >= threshold;
    if (decide && labels[i] == 0) ++fp;
    if (!decide && labels[i] == 1) ++fn;
  }
  return {static_cast<double>(fp) / static_cast<double>(n_neg),
          static_cast<double>(fn) / static_cast<double>(n_pos)};
}

}  // namespace

EerResult calibrate_eer_threshold(const std::vector<double>& scores,
                                  const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw config_error("scores and labels must be equal-length and nonempty");
  const Index n_pos = static_cast<Index>(
      std::count(labels.begin(), labels.end(), 1));
  const Index n_neg = static_cast<Index>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw data_error("threshold calibration needs both classes, got " +
                     std::to_string(n_pos) + " positives and " +
                     std::to_string(n_neg) + " negatives");

  std::vector<double> uniq = scores;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<double> candidates;
  candidates.push_back(uniq.front() - 1.0);
  for (std::size_t i = 0; i + 1 < uniq.size(); ++i)
    candidates.push_back(0.5 * (uniq[i] + uniq[i + 1]));
  candidates.push_back(uniq.back() + 1.0);

  double best = 2.0;
  double lo = candidates.front(), hi = candidates.front();
  for (const double c : candidates) {
    const Rates r = rates_at(scores, labels, c, n_pos, n_neg);
    const double gap = std::abs(r.fpr - r.fnr);
    if (gap < best - 1e-15) {
      best = gap;
      lo = hi = c;
    } else if (gap <= best + 1e-15) {
      hi = c;
    }
  }
  EerResult out;
  out.threshold = 0.5 * (lo + hi);
  const Rates r = rates_at(scores, labels, out.threshold, n_pos, n_neg);
  out.eer = 0.5 * (r.fpr + r.fnr);
  return out;
}

F1Result f1_score(const std::vector<int>& pred, const std::vector<int>& label) {
  if (pred.size() != label.size())
    throw config_error("prediction and label lengths differ");
  F1Result r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && label[i] == 1) ++r.tp;
    if (pred[i] == 1 && label[i] == 0) ++r.fp;
    if (pred[i] == 0 && label[i] == 1) ++r.fn;
  }
  const double denom = static_cast<double>(2 * r.tp + r.fp + r.fn);
  r.precision = r.tp + r.fp == 0
                    ? 1.0
                    : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  r.recall = r.tp + r.fn == 0
                 ? 1.0
                 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  r.f1 = denom == 0 ? 1.0 : 2.0 * static_cast<double>(r.tp) / denom;
  return r;
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw config_error("scores and labels must be equal-length and nonempty");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  const Index n_pos = static_cast<Index>(
      std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) return 0.0;

  // Precision at each recalled positive, in rank order.
  std::vector<double> prec;
  Index tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] != 1) continue;
    ++tp;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
  }
  // Envelope: precision never increases with recall after interpolation.
  for (std::size_t i = prec.size(); i-- > 1;)
    prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0;
  for (const double p : prec) ap += p;
  return ap / static_cast<double>(n_pos);
}

std::vector<Index> greedy_assign(const std::vector<double>& cost, Index rows,
                                 Index cols) {
  if (static_cast<Index>(cost.size()) != rows * cols)
    throw config_error("cost matrix size does not match rows*cols");
  struct Entry {
    double c;
    Index r, col;
  };
  std::vector<Entry> entries;
  entries.reserve(cost.size());
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      entries.push_back({cost[static_cast<std::size_t>(r * cols + c)], r, c});
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.c < b.c; });
  std::vector<Index> out(static_cast<std::size_t>(rows), -1);
  std::vector<bool> row_used(static_cast<std::size_t>(rows), false);
  std::vector<bool> col_used(static_cast<std::size_t>(cols), false);
  for (const Entry& e : entries) {
    if (row_used[static_cast<std::size_t>(e.r)] ||
        col_used[static_cast<std::size_t>(e.col)])
      continue;
    out[static_cast<std::size_t>(e.r)] = e.col;
    row_used[static_cast<std::size_t>(e.r)] = true;
    col_used[static_cast<std::size_t>(e.col)] = true;
  }
  return out;
}

}  // namespace avobj::eval
