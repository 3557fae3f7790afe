#include <doctest.h>

#include <Eigen/SVD>
#include <cmath>
#include <random>

#include "altsfm/geometry.hpp"

using namespace altsfm;

namespace {

std::mt19937_64 rng(17);

double uniform(double lo, double hi) { return lo + (hi - lo) * ((rng() >> 11) * 0x1.0p-53); }

Pose random_pose(double angle_scale = 0.5, double trans_scale = 2.0) {
  const PoseParams p(uniform(-angle_scale, angle_scale), uniform(-angle_scale, angle_scale),
                     uniform(-angle_scale, angle_scale), uniform(-trans_scale, trans_scale),
                     uniform(-trans_scale, trans_scale), uniform(-trans_scale, trans_scale));
  return pose_from_params(p);
}

// independent scalar-arithmetic oracle for the back-projection formula
void back_project_oracle(double u, double v, double d, double fx, double fy, double cx, double cy, double* out) {
  out[0] = (u - cx) / fx * d;
  out[1] = (v - cy) / fy * d;
  out[2] = d;
}

// independent elementary-rotation product oracle
Mat3 rotation_oracle(double ax, double ay, double az) {
  Mat3 rx, ry, rz;
  rx << 1, 0, 0, 0, std::cos(ax), -std::sin(ax), 0, std::sin(ax), std::cos(ax);
  ry << std::cos(ay), 0, std::sin(ay), 0, 1, 0, -std::sin(ay), 0, std::cos(ay);
  rz << std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az), 0, 0, 0, 1;
  return rz * ry * rx;
}

const Intrinsics kSimpleK{100.0, 100.0, 320.0, 240.0, 640, 480};

}  // namespace

TEST_CASE("back_project principal point and unit offsets") {
  const Vec3 q = back_project({320, 240}, 10.0, kSimpleK);
  CHECK(q.x() == doctest::Approx(0.0));
  CHECK(q.y() == doctest::Approx(0.0));
  CHECK(q.z() == 10.0);

  const Vec3 q2 = back_project({420, 240}, 10.0, kSimpleK);
  CHECK(q2.x() == doctest::Approx(10.0));
  CHECK(q2.y() == doctest::Approx(0.0));
  CHECK(q2.z() == 10.0);
}

TEST_CASE("back_project agrees with the scalar oracle") {
  const Intrinsics k{120.0, 130.0, 64.0, 48.0, 128, 96};
  const Vec3 q = back_project({100.5, 77.25}, 3.7, k);
  double expect[3];
  back_project_oracle(100.5, 77.25, 3.7, 120, 130, 64, 48, expect);
  CHECK(q.x() == doctest::Approx(expect[0]).epsilon(1e-12));
  CHECK(q.y() == doctest::Approx(expect[1]).epsilon(1e-12));
  CHECK(q.z() == doctest::Approx(expect[2]).epsilon(1e-12));
}

TEST_CASE("back_project rejects bad depth") {
  CHECK_THROWS_AS(back_project({1, 1}, 0.0, kSimpleK), std::domain_error);
  CHECK_THROWS_AS(back_project({1, 1}, -2.0, kSimpleK), std::domain_error);
  CHECK_THROWS_AS(back_project({1, 1}, std::nan(""), kSimpleK), std::domain_error);
}

TEST_CASE("project basics and the behind-camera error") {
  const auto [p, d] = project(Vec3(0, 0, 10), kSimpleK);
  CHECK(p.u == doctest::Approx(320.0));
  CHECK(p.v == doctest::Approx(240.0));
  CHECK(d == 10.0);
  CHECK_THROWS_AS(project(Vec3(0, 0, -1), kSimpleK), BehindCameraError);
  CHECK_THROWS_AS(project(Vec3(1, 1, 0), kSimpleK), BehindCameraError);
}

TEST_CASE("project matches the scalar oracle") {
  const Intrinsics k{120.0, 130.0, 64.0, 48.0, 128, 96};
  const auto [p, d] = project(Vec3(1.2, -0.4, 5.0), k);
  CHECK(p.u == doctest::Approx(120.0 * 1.2 / 5.0 + 64.0).epsilon(1e-12));
  CHECK(p.v == doctest::Approx(130.0 * -0.4 / 5.0 + 48.0).epsilon(1e-12));
  CHECK(d == 5.0);
}

TEST_CASE("project/back_project roundtrip identity") {
  for (int k = 0; k < 100; ++k) {
    const Pixel p{uniform(0, 639), uniform(0, 479)};
    const double d = uniform(0.2, 50.0);
    const auto [p2, d2] = project(back_project(p, d, kSimpleK), kSimpleK);
    CHECK(p2.u == doctest::Approx(p.u).epsilon(1e-10));
    CHECK(p2.v == doctest::Approx(p.v).epsilon(1e-10));
    CHECK(d2 == doctest::Approx(d).epsilon(1e-10));
  }
}

TEST_CASE("transform identity and 90-degree rotation") {
  const Vec3 q(1, 0, 0);
  CHECK((Pose::identity().apply(q) - q).norm() == 0.0);
  const Pose rot90 = pose_from_params(PoseParams(0, 0, M_PI / 2, 0, 0, 0));
  const Vec3 r = rot90.apply(q);
  CHECK(r.x() == doctest::Approx(0.0));
  CHECK(r.y() == doctest::Approx(1.0));
  CHECK(r.z() == doctest::Approx(0.0));
}

TEST_CASE("transform inverse identity") {
  for (int k = 0; k < 20; ++k) {
    const Pose t = random_pose();
    const Vec3 q(uniform(-5, 5), uniform(-5, 5), uniform(-5, 5));
    CHECK((t.apply(t.inverse().apply(q)) - q).norm() < 1e-9);
  }
}

TEST_CASE("pose group laws") {
  for (int k = 0; k < 20; ++k) {
    const Pose a = random_pose(), b = random_pose(), c = random_pose();
    const Pose ab_c = pose_compose(pose_compose(a, b), c);
    const Pose a_bc = pose_compose(a, pose_compose(b, c));
    CHECK((ab_c.R - a_bc.R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ab_c.t - a_bc.t).norm() < 1e-9);
    const Pose e = pose_compose(a, pose_inverse(a));
    CHECK((e.R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(e.t.norm() < 1e-9);
  }
}

TEST_CASE("pose_from_params zero gives identity, matches rotation oracle") {
  const Pose id = pose_from_params(PoseParams());
  CHECK((id.R - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(id.t.norm() == 0.0);

  const Pose t = pose_from_params(PoseParams(0.1, 0.2, 0.3, 1, 2, 3));
  CHECK((t.R - rotation_oracle(0.1, 0.2, 0.3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((t.t - Vec3(1, 2, 3)).norm() == 0.0);
}

TEST_CASE("pose params wrap to the principal range") {
  const PoseParams p(3 * M_PI + 0.1, -3 * M_PI, 0.0, 0, 0, 0);
  CHECK(std::abs(p.v[0]) <= M_PI);
  CHECK(p.v[0] == doctest::Approx(-M_PI + 0.1));
  CHECK(std::abs(p.v[1]) <= M_PI);
}

TEST_CASE("rotation_with_jacobian derivatives match finite differences") {
  const double ax = 0.3, ay = -0.4, az = 0.7, h = 1e-7;
  const RotationJacobian rj = rotation_with_jacobian(ax, ay, az);
  const Mat3 dx = (rotation_oracle(ax + h, ay, az) - rotation_oracle(ax - h, ay, az)) / (2 * h);
  const Mat3 dy = (rotation_oracle(ax, ay + h, az) - rotation_oracle(ax, ay - h, az)) / (2 * h);
  const Mat3 dz = (rotation_oracle(ax, ay, az + h) - rotation_oracle(ax, ay, az - h)) / (2 * h);
  CHECK((rj.dR[0] - dx).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((rj.dR[1] - dy).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((rj.dR[2] - dz).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("skew matrix properties") {
  CHECK(skew(Vec3::Zero()).cwiseAbs().maxCoeff() == 0.0);
  const Vec3 x(1, 0, 0), y(0, 1, 0);
  CHECK((skew(x) * y - Vec3(0, 0, 1)).norm() == 0.0);
  for (int k = 0; k < 20; ++k) {
    const Vec3 v(uniform(-3, 3), uniform(-3, 3), uniform(-3, 3));
    const Vec3 w(uniform(-3, 3), uniform(-3, 3), uniform(-3, 3));
    // cross-product oracle, componentwise
    const Vec3 cross(v.y() * w.z() - v.z() * w.y(), v.z() * w.x() - v.x() * w.z(),
                     v.x() * w.y() - v.y() * w.x());
    CHECK((skew(v) * w - cross).norm() < 1e-12);
    CHECK((skew(v).transpose() + skew(v)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("reproject identity and axial motion") {
  const Pixel p{123.25, 77.5};
  const Reprojection r = reproject(p, 4.0, Pose::identity(), kSimpleK);
  CHECK(r.valid);
  CHECK(r.pixel.u == doctest::Approx(p.u).epsilon(1e-12));
  CHECK(r.pixel.v == doctest::Approx(p.v).epsilon(1e-12));
  CHECK(r.depth == doctest::Approx(4.0));

  Pose towards;  // camera moves 1 unit forward: points move 1 unit closer
  towards.t = Vec3(0, 0, -1);
  const Reprojection r2 = reproject({320, 240}, 2.0, towards, kSimpleK);
  CHECK(r2.valid);
  CHECK(r2.pixel.u == doctest::Approx(320.0));
  CHECK(r2.pixel.v == doctest::Approx(240.0));
  CHECK(r2.depth == doctest::Approx(1.0));
}

TEST_CASE("reproject composes the primitive operations") {
  for (int k = 0; k < 50; ++k) {
    const Pose t = random_pose(0.2, 0.5);
    const Pixel p{uniform(0, 639), uniform(0, 479)};
    const double d = uniform(1.0, 30.0);
    const Reprojection r = reproject(p, d, t, kSimpleK);
    const Vec3 q = t.apply(back_project(p, d, kSimpleK));
    if (q.z() <= 0) {
      CHECK_FALSE(r.valid);
      continue;
    }
    const auto [p2, d2] = project(q, kSimpleK);
    REQUIRE(r.valid);
    CHECK(r.pixel.u == doctest::Approx(p2.u).epsilon(1e-12));
    CHECK(r.pixel.v == doctest::Approx(p2.v).epsilon(1e-12));
    CHECK(r.depth == doctest::Approx(d2).epsilon(1e-12));
  }
}

TEST_CASE("reproject flags behind-camera points instead of throwing") {
  Pose back;
  back.t = Vec3(0, 0, -5);
  const Reprojection r = reproject({320, 240}, 2.0, back, kSimpleK);
  CHECK_FALSE(r.valid);
}

TEST_CASE("scale covariance: scaling depth and translation leaves pixels unchanged") {
  for (double s : {0.5, 2.0, 10.0}) {
    for (int k = 0; k < 20; ++k) {
      const Pose t = random_pose(0.3, 1.0);
      Pose scaled = t;
      scaled.t *= s;
      const Pixel p{uniform(10, 630), uniform(10, 470)};
      const double d = uniform(1.0, 20.0);
      const Reprojection a = reproject(p, d, t, kSimpleK);
      const Reprojection b = reproject(p, d * s, scaled, kSimpleK);
      REQUIRE(a.valid == b.valid);
      if (!a.valid) continue;
      CHECK(a.pixel.u == doctest::Approx(b.pixel.u).epsilon(1e-9));
      CHECK(a.pixel.v == doctest::Approx(b.pixel.v).epsilon(1e-9));
    }
  }
}

TEST_CASE("fundamental matrix: closed form for identity K, pure x-translation") {
  Pose t;
  t.t = Vec3(1, 0, 0);
  const Intrinsics k{1.0, 1.0, 0.0, 0.0, 2, 2};
  const Mat3 f = fundamental_matrix(t, k);
  Mat3 expect;
  expect << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  CHECK((f - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("fundamental matrix is rank 2 for random valid motion") {
  for (int k = 0; k < 20; ++k) {
    const Pose t = random_pose(0.4, 1.5);
    if (t.t.norm() < 1e-3) continue;
    const Mat3 f = fundamental_matrix(t, kSimpleK);
    CHECK(std::abs(f.determinant()) < 1e-9 * std::pow(f.norm(), 3));
    const Eigen::JacobiSVD<Mat3> svd(f);
    CHECK(svd.singularValues()[2] < 1e-9 * svd.singularValues()[0]);
  }
}

TEST_CASE("fundamental matrix rejects degenerate motion") {
  Pose pure_rotation = pose_from_params(PoseParams(0.1, 0.05, 0.2, 0, 0, 0));
  CHECK_THROWS_AS(fundamental_matrix(pure_rotation, kSimpleK), DegenerateMotionError);
}

TEST_CASE("fundamental matrix annihilates exact correspondences") {
  for (int k = 0; k < 10; ++k) {
    const Pose t = random_pose(0.1, 0.8);
    if (t.t.norm() < 1e-2) continue;
    Mat3 f = fundamental_matrix(t, kSimpleK);
    f /= f.norm();
    for (int m = 0; m < 50; ++m) {
      const Pixel p{uniform(0, 639), uniform(0, 479)};
      const double d = uniform(2.0, 30.0);
      const Reprojection r = reproject(p, d, t, kSimpleK);
      if (!r.valid) continue;
      const Vec3 pt(p.u, p.v, 1.0), ps(r.pixel.u, r.pixel.v, 1.0);
      CHECK(std::abs(ps.dot(f * pt)) < 1e-7 * ps.norm() * pt.norm());
    }
  }
}

TEST_CASE("pose text roundtrip, 12 numbers row-major") {
  std::vector<Pose> poses;
  for (int k = 0; k < 5; ++k) poses.push_back(random_pose());
  const std::string path = "/tmp/altsfm_poses_test.txt";
  save_poses(path, poses);
  const std::vector<Pose> loaded = load_poses(path);
  REQUIRE(loaded.size() == poses.size());
  for (size_t k = 0; k < poses.size(); ++k) {
    CHECK((loaded[k].R - poses[k].R).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((loaded[k].t - poses[k].t).norm() < 1e-15);
  }
}

TEST_CASE("intrinsics validation") {
  Intrinsics bad = kSimpleK;
  bad.fx = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = kSimpleK;
  bad.cx = 999;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_NOTHROW(kSimpleK.validate());
}

TEST_CASE("pose validating factory rejects non-orthonormal rotation") {
  Mat3 r = Mat3::Identity();
  r(0, 1) = 1e-6;
  CHECK_THROWS_AS(Pose::from_rt(r, Vec3::Zero()), std::invalid_argument);
  Mat3 reflect = Mat3::Identity();
  reflect(2, 2) = -1;
  CHECK_THROWS_AS(Pose::from_rt(reflect, Vec3::Zero()), std::invalid_argument);
}
