#include <doctest.h>

#include <cmath>
#include <fstream>

#include "altsfm/sampler.hpp"
#include "altsfm/scenes.hpp"

using namespace altsfm;

namespace {

SceneSpec single_plane_scene(double z = 5.0) {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 48;
  spec.channels = 1;
  spec.intrinsics = Intrinsics{60.0, 60.0, 31.5, 23.5, 64, 48};
  spec.depth_min = 0.1;
  spec.depth_max = 100.0;
  Texture tex;
  tex.base = 0.5;
  tex.components.push_back({0.2, 0.9, 0.4, 1.0});
  spec.textures.push_back(tex);
  spec.planes.push_back({Vec3(0, 0, 1), z, 0});
  spec.trajectory.emplace_back(0, 0, 0, 0, 0, 0);
  return spec;
}

std::string scene_path(const char* name) { return std::string(ALTSFM_SCENE_DIR) + "/" + name; }

}  // namespace

TEST_CASE("fronto-parallel plane renders constant depth") {
  const SceneSpec spec = single_plane_scene(5.0);
  const RenderedFrame frame = render(spec, 0);
  for (double d : frame.depth.d) CHECK(d == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("slanted plane depth matches the ray-plane formula") {
  SceneSpec spec = single_plane_scene();
  const Vec3 n_raw(0.3, -0.2, 1.0);
  spec.planes[0].normal = n_raw.normalized();
  spec.planes[0].offset = 6.0 / n_raw.norm();
  const RenderedFrame frame = render(spec, 0);
  for (int i = 0; i < spec.height; i += 7)
    for (int j = 0; j < spec.width; j += 9) {
      // scalar ray-plane oracle: depth = d / (n · K^-1 [u v 1])
      const Vec3 ray = spec.intrinsics.ray(j, i);
      const double expect = spec.planes[0].offset / spec.planes[0].normal.dot(ray);
      CHECK(frame.depth.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("near plane moves more than far plane under camera translation") {
  SceneSpec spec = single_plane_scene(4.0);
  Texture tex2 = spec.textures[0];
  spec.textures.push_back(tex2);
  spec.patch.active = true;
  spec.patch.plane = {Vec3(0, 0, 1), 2.0, 1};
  spec.patch.s_min = -0.4;
  spec.patch.s_max = 0.4;
  spec.patch.t_min = -0.5;
  spec.patch.t_max = 0.5;
  spec.patch.motion.emplace_back(0, 0, 0, 0, 0, 0);
  spec.patch.motion.emplace_back(0, 0, 0, 0, 0, 0);
  spec.trajectory.emplace_back(0, 0, 0, -0.1, 0, 0);

  const GroundTruthCorrespondences gt = ground_truth_correspondences(spec, 0, 1);
  double near_flow = 0, far_flow = 0;
  int near_n = 0, far_n = 0;
  for (int i = 0; i < spec.height; ++i)
    for (int j = 0; j < spec.width; ++j) {
      const size_t k = static_cast<size_t>(i) * spec.width + j;
      if (!gt.visible.at(i, j)) continue;
      const double flow = std::abs(gt.pairs[k].source.u - gt.pairs[k].target.u);
      if (gt.on_patch[k]) {
        near_flow += flow;
        ++near_n;
      } else {
        far_flow += flow;
        ++far_n;
      }
    }
  REQUIRE(near_n > 100);
  REQUIRE(far_n > 100);
  CHECK(near_flow / near_n > 1.5 * far_flow / far_n);
}

TEST_CASE("identity motion gives identity correspondences with no occlusion") {
  SceneSpec spec = single_plane_scene();
  spec.trajectory.emplace_back(0, 0, 0, 0, 0, 0);
  const GroundTruthCorrespondences gt = ground_truth_correspondences(spec, 0, 1);
  for (int i = 0; i < spec.height; ++i)
    for (int j = 0; j < spec.width; ++j) {
      const size_t k = static_cast<size_t>(i) * spec.width + j;
      REQUIRE(gt.visible.at(i, j));
      CHECK(gt.pairs[k].source.u == doctest::Approx(j).epsilon(1e-12));
      CHECK(gt.pairs[k].source.v == doctest::Approx(i).epsilon(1e-12));
    }
}

TEST_CASE("ground-truth correspondences satisfy the true fundamental matrix") {
  const SceneSpec spec = SceneSpec::load(scene_path("slanted.txt"));
  const Pose rel = relative_pose(spec, 0, 1);
  Mat3 f = fundamental_matrix(rel, spec.intrinsics);
  f /= f.norm();
  const GroundTruthCorrespondences gt = ground_truth_correspondences(spec, 0, 1);
  for (size_t k = 0; k < gt.pairs.size(); k += 17) {
    if (!gt.visible.valid[k]) continue;
    const Vec3 pt(gt.pairs[k].target.u, gt.pairs[k].target.v, 1.0);
    const Vec3 ps(gt.pairs[k].source.u, gt.pairs[k].source.v, 1.0);
    CHECK(std::abs(ps.dot(f * pt)) < 1e-7 * ps.norm() * pt.norm());
  }
}

TEST_CASE("closed-form flow for a fronto-parallel plane under pure x-translation") {
  SceneSpec spec = single_plane_scene(5.0);
  const double tx = -0.2;
  spec.trajectory.emplace_back(0, 0, 0, tx, 0, 0);
  const GroundTruthCorrespondences gt = ground_truth_correspondences(spec, 0, 1);
  // flow = -fx * tx / Z for camera translation tx (world point fixed)
  const double expect = -spec.intrinsics.fx * tx / 5.0;
  for (const auto& [i, j] : std::vector<std::pair<int, int>>{{5, 7}, {24, 32}, {40, 55}}) {
    const size_t k = static_cast<size_t>(i) * spec.width + j;
    REQUIRE(gt.visible.at(i, j));
    CHECK(gt.pairs[k].source.u - gt.pairs[k].target.u == doctest::Approx(expect).epsilon(1e-10));
    CHECK(gt.pairs[k].source.v - gt.pairs[k].target.v == doctest::Approx(0.0).epsilon(1e-10));
  }
}

TEST_CASE("scene must be closed: ray missing all planes is an error") {
  SceneSpec spec = single_plane_scene();
  spec.planes[0].normal = Vec3(1, 0, 0);  // vertical plane parallel to many rays
  spec.planes[0].offset = 50.0;
  CHECK_THROWS_AS(render(spec, 0), SceneSpecError);
}

TEST_CASE("texture amplitude exceeding [0,1] is rejected") {
  SceneSpec spec = single_plane_scene();
  spec.textures[0].components.push_back({0.5, 1.0, 0.0, 0.0});
  CHECK_THROWS_AS(spec.validate(), SceneSpecError);
}

TEST_CASE("reference suite loads, renders, and stays within its depth range") {
  for (const char* name : {"fronto_parallel.txt", "slanted.txt", "two_plane.txt", "pure_rotation.txt",
                           "sideways.txt", "moving_patch.txt"}) {
    const SceneSpec spec = SceneSpec::load(scene_path(name));
    REQUIRE(spec.frame_count() == 2);
    for (int fidx = 0; fidx < spec.frame_count(); ++fidx) {
      const RenderedFrame frame = render(spec, fidx);
      for (double v : frame.image.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      for (double d : frame.depth.d) {
        CHECK(d >= spec.depth_min);
        CHECK(d <= spec.depth_max);
      }
    }
  }
}

TEST_CASE("warping a rendered view back with ground truth reproduces the target") {
  for (const char* name : {"fronto_parallel.txt", "slanted.txt", "sideways.txt"}) {
    CAPTURE(name);
    const SceneSpec spec = SceneSpec::load(scene_path(name));
    const RenderedFrame target = render(spec, 0);
    const RenderedFrame source = render(spec, 1);
    const Pose rel = relative_pose(spec, 0, 1);  // frame-0 coords -> frame-1 coords
    const WarpResult warp = warp_source_to_target(source.image, target.depth, rel, spec.intrinsics);
    double worst = 0.0;
    size_t n = 0;
    for (int i = 0; i < spec.height; ++i)
      for (int j = 0; j < spec.width; ++j) {
        if (!warp.mask.at(i, j)) continue;
        worst = std::max(worst, std::abs(warp.image.at(i, j) - target.image.at(i, j)));
        ++n;
      }
    REQUIRE(n > spec.width * spec.height * 0.8);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("moving patch pixels violate the camera fundamental matrix") {
  const SceneSpec spec = SceneSpec::load(scene_path("moving_patch.txt"));
  const Pose rel = relative_pose(spec, 0, 1);
  Mat3 f = fundamental_matrix(rel, spec.intrinsics);
  f /= f.norm();
  const GroundTruthCorrespondences gt = ground_truth_correspondences(spec, 0, 1);
  double patch_res = 0, bg_res = 0;
  int patch_n = 0, bg_n = 0;
  for (size_t k = 0; k < gt.pairs.size(); ++k) {
    if (!gt.visible.valid[k]) continue;
    const Vec3 pt(gt.pairs[k].target.u, gt.pairs[k].target.v, 1.0);
    const Vec3 ps(gt.pairs[k].source.u, gt.pairs[k].source.v, 1.0);
    const Vec3 line = f * pt;
    const double denom = std::hypot(line[0], line[1]);
    if (denom < 1e-12) continue;
    const double d = std::abs(ps.dot(line)) / denom;
    if (gt.on_patch[k]) {
      patch_res += d;
      ++patch_n;
    } else {
      bg_res += d;
      ++bg_n;
    }
  }
  REQUIRE(patch_n > 100);
  REQUIRE(bg_n > 100);
  CHECK(patch_res / patch_n > 100.0 * (bg_res / bg_n + 1e-12));
}

TEST_CASE("seeded texture generation is deterministic") {
  const std::string text = "size 16 12\nchannels 1\nintrinsics 10 10 7.5 5.5\n"
                           "texture_seeded 0 42 5 0.3 0.5 1.5\ntexture 0 0.5\n"
                           "plane 0 0 1 5 0\nframe 0 0 0 0 0 0\n";
  const std::string path = "/tmp/altsfm_seeded_scene.txt";
  {
    std::ofstream out(path);
    out << text;
  }
  const SceneSpec a = SceneSpec::load(path);
  const SceneSpec b = SceneSpec::load(path);
  const RenderedFrame fa = render(a, 0);
  const RenderedFrame fb = render(b, 0);
  CHECK(fa.image.data == fb.image.data);
}

TEST_CASE("unknown scene directive is an error") {
  const std::string path = "/tmp/altsfm_bad_scene.txt";
  {
    std::ofstream out(path);
    out << "size 8 8\nintrinsics 5 5 3.5 3.5\nbogus 1 2 3\n";
  }
  CHECK_THROWS_AS(SceneSpec::load(path), SceneSpecError);
}
