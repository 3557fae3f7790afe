#include "altsfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace altsfm {

namespace {

double median(std::vector<double> v) {
  const size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + n / 2 - 1, v.end());
  return 0.5 * (v[n / 2 - 1] + hi);
}

}  // namespace

DepthMetrics depth_metrics(const DepthGrid& pred, const DepthGrid& gt, double cap, ScaleMode scale_mode) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("depth_metrics: grid shapes differ");
  std::vector<double> p, g;
  for (size_t k = 0; k < gt.d.size(); ++k) {
    if (!(gt.d[k] > 0.0) || gt.d[k] > cap) continue;
    p.push_back(pred.d[k]);
    g.push_back(gt.d[k]);
  }
  if (p.empty()) throw std::domain_error("depth_metrics: no valid pixels under the cap");

  if (scale_mode == ScaleMode::kMedian) {
    const double scale = median(g) / median(p);
    for (double& x : p) x *= scale;
  }

  DepthMetrics m;
  double se = 0.0, se_log = 0.0;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  size_t n1 = 0, n2 = 0, n3 = 0;
  for (size_t k = 0; k < p.size(); ++k) {
    const double diff = p[k] - g[k];
    m.abs_rel += std::abs(diff) / g[k];
    m.sq_rel += diff * diff / g[k];
    se += diff * diff;
    const double dl = std::log(p[k]) - std::log(g[k]);
    se_log += dl * dl;
    const double ratio = std::max(p[k] / g[k], g[k] / p[k]);
    n1 += ratio < t1;
    n2 += ratio < t2;
    n3 += ratio < t3;
  }
  const double n = static_cast<double>(p.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(se / n);
  m.rmse_log = std::sqrt(se_log / n);
  m.delta1 = n1 / n;
  m.delta2 = n2 / n;
  m.delta3 = n3 / n;
  return m;
}

AteResult ate(const std::vector<Pose>& pred, const std::vector<Pose>& gt, int snippet_length) {
  if (pred.size() != gt.size()) throw std::invalid_argument("ate: trajectory lengths differ");
  if (snippet_length < 2 || static_cast<size_t>(snippet_length) > pred.size())
    throw std::invalid_argument("ate: snippet length out of range");

  std::vector<double> errors;
  for (size_t start = 0; start + snippet_length <= pred.size(); ++start) {
    const Pose p0 = pred[start].inverse();
    const Pose g0 = gt[start].inverse();
    double dot = 0.0, norm = 0.0;
    std::vector<Vec3> dp(snippet_length), dg(snippet_length);
    for (int k = 0; k < snippet_length; ++k) {
      dp[k] = p0.compose(pred[start + k]).t;  // position relative to the window's first frame
      dg[k] = g0.compose(gt[start + k]).t;
      dot += dp[k].dot(dg[k]);
      norm += dp[k].squaredNorm();
    }
    const double scale = norm > 0.0 ? dot / norm : 1.0;
    double se = 0.0;
    for (int k = 0; k < snippet_length; ++k) se += (scale * dp[k] - dg[k]).squaredNorm();
    errors.push_back(std::sqrt(se / snippet_length));
  }

  AteResult r;
  r.snippets = static_cast<int>(errors.size());
  for (double e : errors) r.mean += e;
  r.mean /= errors.size();
  for (double e : errors) r.stddev += (e - r.mean) * (e - r.mean);
  r.stddev = std::sqrt(r.stddev / errors.size());
  return r;
}

double translation_direction_error(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return M_PI / 2.0;
  const double c = std::min(1.0, std::max(-1.0, a.dot(b) / (na * nb)));
  return std::acos(c);
}

}  // namespace altsfm
