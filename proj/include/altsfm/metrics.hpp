#pragma once

#include <vector>

#include "altsfm/geometry.hpp"
#include "altsfm/image.hpp"

namespace altsfm {

enum class ScaleMode { kNone, kMedian };

/// The seven standard depth evaluation numbers.
struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;  // max(p/g, g/p) < 1.25
  double delta2 = 0.0;  //                 < 1.25²
  double delta3 = 0.0;  //                 < 1.25³
};

/// Errors/accuracies over pixels with 0 < gt <= cap. With ScaleMode::kMedian
/// the prediction is rescaled by median(gt)/median(pred) first, absorbing the
/// monocular scale ambiguity. Throws std::domain_error when no pixel is valid.
DepthMetrics depth_metrics(const DepthGrid& pred, const DepthGrid& gt, double cap,
                           ScaleMode scale_mode = ScaleMode::kMedian);

struct AteResult {
  double mean = 0.0;
  double stddev = 0.0;
  int snippets = 0;
};

/// Absolute trajectory error over N-frame snippets: each window is expressed
/// relative to its first frame, the predicted translations are scale-aligned
/// to ground truth by a single least-squares scalar, and the RMS translational
/// difference is reported as mean ± std over windows.
AteResult ate(const std::vector<Pose>& pred, const std::vector<Pose>& gt, int snippet_length);

/// Angle (radians) between translation directions; returns pi/2 when either
/// translation is numerically zero (no direction to compare).
double translation_direction_error(const Vec3& a, const Vec3& b);

}  // namespace altsfm
