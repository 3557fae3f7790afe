#include "altsfm/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "altsfm/config.hpp"

namespace altsfm {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: image dimensions must be positive");
  if (!(cx >= 0.0 && cx < width)) throw std::invalid_argument("intrinsics: cx outside image");
  if (!(cy >= 0.0 && cy < height)) throw std::invalid_argument("intrinsics: cy outside image");
}

Intrinsics Intrinsics::load(const std::string& path) {
  KeyValueFile kv = KeyValueFile::load(path);
  Intrinsics K;
  K.fx = kv.get_double("fx");
  K.fy = kv.get_double("fy");
  K.cx = kv.get_double("cx");
  K.cy = kv.get_double("cy");
  K.width = kv.get_int("width");
  K.height = kv.get_int("height");
  kv.require_all_consumed();
  K.validate();
  return K;
}

void Intrinsics::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "fx=%.17g\nfy=%.17g\ncx=%.17g\ncy=%.17g\nwidth=%d\nheight=%d\n", fx, fy, cx, cy,
                width, height);
  out << buf;
}

Pose Pose::from_rt(const Mat3& R, const Vec3& t) {
  const Mat3 err = R.transpose() * R - Mat3::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-9) throw std::invalid_argument("pose: rotation not orthonormal");
  if (std::abs(R.determinant() - 1.0) > 1e-9) throw std::invalid_argument("pose: det(R) != 1");
  return {R, t};
}

namespace {

double wrap_angle(double a) {
  if (!std::isfinite(a)) throw std::invalid_argument("pose params: non-finite angle");
  double w = std::remainder(a, 2.0 * M_PI);
  if (w <= -M_PI) w = M_PI;  // remainder can return -π; keep (-π, π]
  return w;
}

}  // namespace

PoseParams::PoseParams(double ax, double ay, double az, double tx, double ty, double tz) {
  v << wrap_angle(ax), wrap_angle(ay), wrap_angle(az), tx, ty, tz;
}

PoseParams::PoseParams(const Vec6& raw) : PoseParams(raw[0], raw[1], raw[2], raw[3], raw[4], raw[5]) {}

RotationJacobian rotation_with_jacobian(double ax, double ay, double az) {
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);

  Mat3 Rx, Ry, Rz, dRx, dRy, dRz;
  Rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
  Ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  Rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
  dRx << 0, 0, 0, 0, -sx, -cx, 0, cx, -sx;
  dRy << -sy, 0, cy, 0, 0, 0, -cy, 0, -sy;
  dRz << -sz, -cz, 0, cz, -sz, 0, 0, 0, 0;

  RotationJacobian out;
  out.R = Rz * Ry * Rx;
  out.dR[0] = Rz * Ry * dRx;
  out.dR[1] = Rz * dRy * Rx;
  out.dR[2] = dRz * Ry * Rx;
  return out;
}

Pose pose_from_params(const PoseParams& params) {
  Pose T;
  T.R = rotation_with_jacobian(params.v[0], params.v[1], params.v[2]).R;
  T.t = params.translation();
  return T;
}

Pose pose_inverse(const Pose& pose) { return pose.inverse(); }

Pose pose_compose(const Pose& a, const Pose& b) { return a.compose(b); }

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Vec3 back_project(const Pixel& p, double d, const Intrinsics& K) {
  if (!std::isfinite(d) || d <= 0.0) throw std::domain_error("back_project: depth must be positive and finite");
  if (!std::isfinite(p.u) || !std::isfinite(p.v)) throw std::domain_error("back_project: non-finite pixel");
  return K.ray(p.u, p.v) * d;
}

std::pair<Pixel, double> project(const Vec3& Q, const Intrinsics& K) {
  if (!(Q.z() > 0.0)) throw BehindCameraError("project: point has non-positive depth");
  return {{K.fx * Q.x() / Q.z() + K.cx, K.fy * Q.y() / Q.z() + K.cy}, Q.z()};
}

Reprojection reproject(const Pixel& p, double d, const Pose& T, const Intrinsics& K) {
  const Vec3 A = T.apply(back_project(p, d, K));
  Reprojection r;
  r.depth = A.z();
  if (!(A.z() > 1e-12)) return r;  // behind-camera flag; pixel stays invalid
  r.pixel = {K.fx * A.x() / A.z() + K.cx, K.fy * A.y() / A.z() + K.cy};
  r.valid = true;
  return r;
}

Mat3 fundamental_matrix(const Pose& T, const Intrinsics& K, double min_translation) {
  if (T.t.norm() < min_translation)
    throw DegenerateMotionError("fundamental_matrix: translation below " + std::to_string(min_translation));
  Mat3 Kinv = Mat3::Identity();
  Kinv(0, 0) = 1.0 / K.fx;
  Kinv(1, 1) = 1.0 / K.fy;
  Kinv(0, 2) = -K.cx / K.fx;
  Kinv(1, 2) = -K.cy / K.fy;
  return Kinv.transpose() * skew(T.t) * T.R * Kinv;
}

double rotation_angle(const Mat3& R) {
  const double c = std::min(1.0, std::max(-1.0, (R.trace() - 1.0) / 2.0));
  return std::acos(c);
}

void save_poses(const std::string& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[64];
  for (const Pose& T : poses) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 4; ++j) {
        const double x = j < 3 ? T.R(i, j) : T.t[i];
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        out << buf << (i == 2 && j == 3 ? "" : " ");
      }
    }
    out << "\n";
  }
}

std::vector<Pose> load_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<Pose> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Mat3 R;
    Vec3 t;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) {
        double x;
        if (!(ss >> x)) throw std::runtime_error(path + ": expected 12 numbers per pose line");
        if (j < 3)
          R(i, j) = x;
        else
          t[i] = x;
      }
    poses.push_back(Pose::from_rt(R, t));
  }
  return poses;
}

}  // namespace altsfm
