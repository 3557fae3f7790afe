#include "altsfm/icp.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace altsfm {

CloudFromDepth cloud_from_depth(const DepthGrid& depth, const Intrinsics& K, int max_points) {
  depth.validate();
  if (max_points < 1) throw std::invalid_argument("cloud_from_depth: max_points must be positive");
  const size_t total = static_cast<size_t>(depth.height) * depth.width;
  int stride = 1;
  while (total / (static_cast<size_t>(stride) * stride) > static_cast<size_t>(max_points)) ++stride;

  CloudFromDepth out;
  out.stride = stride;
  for (int i = 0; i < depth.height; i += stride)
    for (int j = 0; j < depth.width; j += stride) {
      const Pixel p{static_cast<double>(j), static_cast<double>(i)};
      out.cloud.points.push_back(back_project(p, depth.at(i, j), K));
      out.cloud.provenance.push_back(p);
    }
  return out;
}

namespace {

/// Exact 3D k-d tree (median split). Nearest-neighbor queries prune with
/// strict bounds so equal-distance candidates are still visited, which keeps
/// the lowest-index tie-break identical to a brute-force scan.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& pts) : pts_(pts) {
    order_.resize(pts.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(pts.size());
    root_ = build(0, static_cast<int>(pts.size()));
  }

  std::pair<int, double> nearest(const Vec3& q) const {
    best_idx_ = -1;
    best_d2_ = std::numeric_limits<double>::infinity();
    search(root_, q);
    return {best_idx_, best_d2_};
  }

 private:
  struct Node {
    int index;
    int axis;
    int left = -1, right = -1;
  };

  int build(int lo, int hi) {
    if (lo >= hi) return -1;
    // split along the widest axis of this subset
    Vec3 mn = pts_[order_[lo]], mx = mn;
    for (int k = lo + 1; k < hi; ++k) {
      mn = mn.cwiseMin(pts_[order_[k]]);
      mx = mx.cwiseMax(pts_[order_[k]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const int mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
    Node node;
    node.index = order_[mid];
    node.axis = axis;
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    nodes_[self].left = build(lo, mid);
    nodes_[self].right = build(mid + 1, hi);
    return self;
  }

  void consider(int idx, const Vec3& q) const {
    const double d2 = (pts_[idx] - q).squaredNorm();
    if (d2 < best_d2_ || (d2 == best_d2_ && idx < best_idx_)) {
      best_d2_ = d2;
      best_idx_ = idx;
    }
  }

  void search(int node_id, const Vec3& q) const {
    if (node_id < 0) return;
    const Node& node = nodes_[node_id];
    consider(node.index, q);
    const double delta = q[node.axis] - pts_[node.index][node.axis];
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    search(near, q);
    if (delta * delta <= best_d2_) search(far, q);  // <=: keep exact tie-breaking
  }

  const std::vector<Vec3>& pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
  mutable int best_idx_ = -1;
  mutable double best_d2_ = 0.0;
};

}  // namespace

Correspondences nearest_correspondences(const PointCloud& target, const PointCloud& source, const Pose& T) {
  if (target.points.empty() || source.points.empty())
    throw std::invalid_argument("nearest_correspondences: empty point cloud");
  KdTree tree(source.points);
  Correspondences corr;
  corr.source_index.resize(target.size());
  corr.residual.resize(target.size());
  for (size_t i = 0; i < target.size(); ++i) {
    const auto [idx, d2] = tree.nearest(T.apply(target.points[i]));
    corr.source_index[i] = idx;
    corr.residual[i] = std::sqrt(d2);
  }
  return corr;
}

Pose best_fit_transform(const Correspondences& corr, const PointCloud& target, const PointCloud& source) {
  std::vector<size_t> used;
  for (size_t i = 0; i < corr.source_index.size(); ++i)
    if (corr.source_index[i] >= 0) used.push_back(i);
  if (used.size() < 3) throw DegenerateGeometryError("best_fit_transform: fewer than 3 matched pairs");

  Vec3 c_t = Vec3::Zero(), c_s = Vec3::Zero();
  for (size_t i : used) {
    c_t += target.points[i];
    c_s += source.points[corr.source_index[i]];
  }
  c_t /= static_cast<double>(used.size());
  c_s /= static_cast<double>(used.size());

  Mat3 cross = Mat3::Zero();
  for (size_t i : used)
    cross += (target.points[i] - c_t) * (source.points[corr.source_index[i]] - c_s).transpose();

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv[1] < 1e-9 * sv[0]) throw DegenerateGeometryError("best_fit_transform: collinear configuration");
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Pose T;
  T.R = svd.matrixV() * d * svd.matrixU().transpose();
  T.t = c_s - T.R * c_t;
  return T;
}

namespace {

Correspondences trim_pairs(const Correspondences& corr, double trim_fraction) {
  if (trim_fraction <= 0.0) return corr;
  const size_t n = corr.residual.size();
  const size_t keep = std::max<size_t>(3, static_cast<size_t>(std::ceil((1.0 - trim_fraction) * n)));
  if (keep >= n) return corr;
  std::vector<double> sorted = corr.residual;
  std::nth_element(sorted.begin(), sorted.begin() + keep - 1, sorted.end());
  const double cutoff = sorted[keep - 1];
  Correspondences out = corr;
  size_t kept = 0;
  for (size_t i = 0; i < n; ++i) {
    if (corr.residual[i] <= cutoff && kept < keep) {
      ++kept;
    } else {
      out.source_index[i] = -1;
    }
  }
  return out;
}

double rms(const Correspondences& corr) {
  double s = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < corr.residual.size(); ++i) {
    if (corr.source_index[i] < 0) continue;
    s += corr.residual[i] * corr.residual[i];
    ++n;
  }
  return n > 0 ? std::sqrt(s / static_cast<double>(n)) : 0.0;
}

}  // namespace

IcpResult icp_register(const PointCloud& target, const PointCloud& source, const Pose& initial,
                       const IcpOptions& options) {
  IcpResult res;
  res.transform = initial;
  for (int iter = 0; iter < options.max_iters; ++iter) {
    Correspondences corr = nearest_correspondences(target, source, res.transform);
    corr = trim_pairs(corr, options.trim_fraction);
    const Pose next = best_fit_transform(corr, target, source);

    // residual under the refitted transform, with this iteration's matches
    Correspondences refit = corr;
    for (size_t i = 0; i < refit.residual.size(); ++i)
      if (refit.source_index[i] >= 0)
        refit.residual[i] =
            (source.points[refit.source_index[i]] - next.apply(target.points[i])).norm();
    res.residual_history.push_back(rms(refit));
    res.correspondences = std::move(refit);
    ++res.iterations;

    const Pose delta = next.compose(res.transform.inverse());
    const double change = rotation_angle(delta.R) + delta.t.norm();
    res.transform = next;
    if (change < options.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

std::vector<PixelPair> correspondences_to_pixels(const Correspondences& corr, const PointCloud& target,
                                                 const PointCloud& source) {
  if (!target.has_provenance() || !source.has_provenance())
    throw std::invalid_argument("correspondences_to_pixels: clouds lack pixel provenance");
  std::vector<PixelPair> pairs;
  pairs.reserve(corr.source_index.size());
  for (size_t i = 0; i < corr.source_index.size(); ++i) {
    if (corr.source_index[i] < 0) continue;
    pairs.push_back({target.provenance[i], source.provenance[corr.source_index[i]]});
  }
  return pairs;
}

PointCloud load_point_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  PointCloud cloud;
  std::string line;
  bool any_prov = false, all_prov = true;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z)) throw std::runtime_error(path + ": expected 'x y z [u v]' per line");
    cloud.points.emplace_back(x, y, z);
    double u, v;
    if (ss >> u >> v) {
      cloud.provenance.push_back({u, v});
      any_prov = true;
    } else {
      all_prov = false;
    }
  }
  if (any_prov && !all_prov) throw std::runtime_error(path + ": provenance must be given for all points or none");
  return cloud;
}

void save_point_cloud(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[192];
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    if (cloud.has_provenance()) {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g\n", p.x(), p.y(), p.z(),
                    cloud.provenance[i].u, cloud.provenance[i].v);
    } else {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    }
    out << buf;
  }
}

}  // namespace altsfm
