#pragma once

#include <string>
#include <vector>

#include "avobj/common.hpp"
#include "avobj/config.hpp"

namespace avobj::eval {

// ---------------------------------------------------------------------------
// Score-level metrics. Labels are 0/1; decisions everywhere are
// score >= threshold.

struct EerResult {
  double threshold = 0;
  double eer = 0;  // (FPR + FNR) / 2 at the chosen threshold
};

// Sorted threshold sweep minimizing |FPR - FNR|. Candidate thresholds sit at
// midpoints between adjacent distinct scores plus one below and one above
// the range; a tie across several candidates resolves to the midpoint of the
// tie interval. Throws data_error when only one class is present.
EerResult calibrate_eer_threshold(const std::vector<double>& scores,
                                  const std::vector<int>& labels);

struct F1Result {
  Index tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
};

// F1 from per-frame binary decisions. With no positives anywhere and none
// predicted the score is vacuously 1 (zero errors were made).
F1Result f1_score(const std::vector<int>& pred, const std::vector<int>& label);

// Ranking AP with the precision-envelope interpolation: sort by descending
// score (ties broken by input order), take precision at each recalled
// positive, replace it by the running maximum from the right, and average
// over positives.
double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels);

// Greedy one-to-one assignment by ascending cost. cost is row-major
// (n_rows, n_cols); returns one column per row, -1 where nothing was left.
std::vector<Index> greedy_assign(const std::vector<double>& cost, Index rows,
                                 Index cols);

}  // namespace avobj::eval
