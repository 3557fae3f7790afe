#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "altsfm/errors.hpp"

namespace altsfm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Pinhole camera parameters. Camera looks down +Z, u rightward, v downward.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// K^-1 [u v 1]^T, the unit-depth ray through a pixel.
  Vec3 ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }

  /// Throws std::invalid_argument if fx,fy <= 0 or the principal point is
  /// outside the image.
  void validate() const;

  /// Plain-text key=value file: fx, fy, cx, cy, width, height.
  static Intrinsics load(const std::string& path);
  void save(const std::string& path) const;
};

/// Continuous pixel coordinates. Pixel (row i, col j) has coordinate (u=j, v=i).
struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

/// Rigid transform q -> R q + t. R kept orthonormal with det +1.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Pose identity() { return {}; }

  /// Validating factory: R must be orthonormal with det(R)=1 within 1e-9.
  static Pose from_rt(const Mat3& R, const Vec3& t);

  Vec3 apply(const Vec3& q) const { return R * q + t; }
  Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  /// this ∘ other: (a.compose(b)).apply(q) == a.apply(b.apply(q)).
  Pose compose(const Pose& other) const { return {R * other.R, R * other.t + t}; }
};

/// 6-vector [θx, θy, θz, tx, ty, tz]; angles wrapped to the principal range.
struct PoseParams {
  Vec6 v = Vec6::Zero();

  PoseParams() = default;
  PoseParams(double ax, double ay, double az, double tx, double ty, double tz);
  explicit PoseParams(const Vec6& raw);

  double angle(int i) const { return v[i]; }
  Vec3 translation() const { return v.tail<3>(); }
};

/// R = Rz(θz) · Ry(θy) · Rx(θx) (extrinsic X-then-Y-then-Z), t from the params.
Pose pose_from_params(const PoseParams& params);
Pose pose_inverse(const Pose& pose);
Pose pose_compose(const Pose& a, const Pose& b);

/// Rotation matrix together with its partial derivatives w.r.t. the three angles.
struct RotationJacobian {
  Mat3 R;
  std::array<Mat3, 3> dR;  // dR/dθx, dR/dθy, dR/dθz
};
RotationJacobian rotation_with_jacobian(double ax, double ay, double az);

/// skew(v) w == v × w; skew(v)^T == -skew(v).
Mat3 skew(const Vec3& v);

/// Lift (pixel, depth) to a camera-frame 3D point. Z equals d exactly.
/// Throws std::domain_error for non-positive or non-finite depth.
Vec3 back_project(const Pixel& p, double d, const Intrinsics& K);

/// Perspective projection of a camera-frame point; returns (pixel, depth).
/// Throws BehindCameraError if Q.z() <= 0.
std::pair<Pixel, double> project(const Vec3& Q, const Intrinsics& K);

struct Reprojection {
  Pixel pixel;
  double depth = 0.0;  // Z of the transformed point in the source camera
  bool valid = false;  // false when the transformed point falls behind the camera
};

/// project(T · back_project(p, d)): the correspondence of a target pixel in the
/// source view. Behind-camera points are flagged, not thrown.
Reprojection reproject(const Pixel& p, double d, const Pose& T, const Intrinsics& K);

/// F = K^-T [t]_x R K^-1 for T = (R, t). Rank 2 by construction.
/// Throws DegenerateMotionError when |t| < min_translation (default 1e-6):
/// pure rotation yields no usable epipolar lines.
Mat3 fundamental_matrix(const Pose& T, const Intrinsics& K, double min_translation = 1e-6);

/// Rotation angle of R in radians (0..π).
double rotation_angle(const Mat3& R);

/// Row-major 3x4 [R|t], 12 whitespace-separated numbers per line.
void save_poses(const std::string& path, const std::vector<Pose>& poses);
std::vector<Pose> load_poses(const std::string& path);

}  // namespace altsfm
