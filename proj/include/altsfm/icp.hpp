#pragma once

#include <optional>
#include <string>
#include <vector>

#include "altsfm/geometry.hpp"
#include "altsfm/image.hpp"

namespace altsfm {

/// Back-projected 3D points; each point remembers the integer pixel it came from.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Pixel> provenance;  // integer-valued pixel of origin; may be empty

  size_t size() const { return points.size(); }
  bool has_provenance() const { return provenance.size() == points.size(); }
};

/// Back-project every stride-th pixel of a depth grid. The stride is chosen so
/// the cloud holds at most max_points points and is recorded in the result.
struct CloudFromDepth {
  PointCloud cloud;
  int stride = 1;
};
CloudFromDepth cloud_from_depth(const DepthGrid& depth, const Intrinsics& K, int max_points = 5000);

/// One match per target point: index into the source cloud plus the distance.
struct Correspondences {
  std::vector<int> source_index;   // per target point
  std::vector<double> residual;    // ‖Q_s(match) − T'·Q_t‖ per target point
};

/// Exact nearest source point for every transformed target point; ties broken
/// by lowest source index. Throws std::invalid_argument on empty clouds.
Correspondences nearest_correspondences(const PointCloud& target, const PointCloud& source, const Pose& T);

/// Least-squares rigid transform (Kabsch) aligning matched target points onto
/// their source matches; det(R)=+1 enforced. Throws DegenerateGeometryError for
/// collinear configurations (second singular value < 1e-9 × first).
Pose best_fit_transform(const Correspondences& corr, const PointCloud& target, const PointCloud& source);

struct IcpResult {
  Pose transform;
  Correspondences correspondences;
  std::vector<double> residual_history;  // RMS residual after each iteration
  int iterations = 0;
  bool converged = false;
};

struct IcpOptions {
  int max_iters = 10;
  double tol = 1e-6;          // rotation-angle + translation-norm change
  double trim_fraction = 0.0; // optional: drop the worst pairs before fitting
};

/// Classical alternation: match under the current transform, refit, repeat
/// until the transform change drops below tol. RMS residuals are non-increasing.
IcpResult icp_register(const PointCloud& target, const PointCloud& source, const Pose& initial,
                       const IcpOptions& options = {});

/// Matched 3D pairs mapped back to their originating integer pixels.
struct PixelPair {
  Pixel target;
  Pixel source;
};
std::vector<PixelPair> correspondences_to_pixels(const Correspondences& corr, const PointCloud& target,
                                                 const PointCloud& source);

/// Whitespace-separated "x y z [u v]" text lines.
PointCloud load_point_cloud(const std::string& path);
void save_point_cloud(const std::string& path, const PointCloud& cloud);

}  // namespace altsfm
