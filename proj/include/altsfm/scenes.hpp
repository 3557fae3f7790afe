#pragma once

#include <string>
#include <vector>

#include "altsfm/geometry.hpp"
#include "altsfm/icp.hpp"
#include "altsfm/image.hpp"
#include "altsfm/sampler.hpp"

namespace altsfm {

/// Scene description or rendering failed in a way that makes the spec invalid
/// (e.g. a pixel ray misses every plane: scenes must be closed).
class SceneSpecError : public std::runtime_error {
 public:
  explicit SceneSpecError(const std::string& what) : std::runtime_error(what) {}
};

/// One sinusoidal texture component: amp·sin(ω(cosθ·s + sinθ·t) + φ) in the
/// plane's 2D coordinates (s, t). Sums of these stay band-limited, which keeps
/// bilinear interpolation error on rendered views small.
struct TextureComponent {
  double amplitude = 0.0;
  double omega = 0.0;  // rad per scene unit, in-plane
  double angle = 0.0;
  double phase = 0.0;
};

struct Texture {
  double base = 0.5;
  std::vector<TextureComponent> components;
};

/// Plane n·X = offset in world coordinates, textured.
struct ScenePlane {
  Vec3 normal = Vec3(0, 0, 1);  // stored unit-length
  double offset = 1.0;
  int texture = 0;
};

/// A bounded plane patch with its own per-frame rigid world motion. The patch
/// texture and bounds ride along with the motion.
struct MovingPatch {
  bool active = false;
  ScenePlane plane;                // at frame 0
  double s_min = 0, s_max = 0, t_min = 0, t_max = 0;  // bounds in plane coords
  std::vector<PoseParams> motion;  // world-frame rigid motion, one per frame
};

struct SceneSpec {
  int width = 0;
  int height = 0;
  int channels = 1;
  Intrinsics intrinsics;
  double depth_min = 0.1;
  double depth_max = 100.0;
  std::vector<Texture> textures;
  std::vector<ScenePlane> planes;
  std::vector<PoseParams> trajectory;  // camera-to-world per frame
  MovingPatch patch;

  int frame_count() const { return static_cast<int>(trajectory.size()); }

  /// Plain-text structured file; unknown directives are errors.
  static SceneSpec load(const std::string& path);
  void validate() const;
};

/// Deterministic orthonormal in-plane basis for a unit normal.
void plane_basis(const Vec3& normal, Vec3& e1, Vec3& e2);

struct RenderedFrame {
  ImageGrid image;
  DepthGrid depth;
  Pose camera_to_world;
};

/// Ray-casts every pixel center against the plane set (plus the moving patch
/// at its frame-f placement). Depth and pose are exact by construction.
/// Throws SceneSpecError if any pixel misses all planes or lands outside
/// [depth_min, depth_max].
RenderedFrame render(const SceneSpec& spec, int frame);

/// Relative pose mapping frame-t camera coordinates into frame-s camera
/// coordinates (the transform the losses consume).
Pose relative_pose(const SceneSpec& spec, int frame_t, int frame_s);

struct GroundTruthCorrespondences {
  std::vector<PixelPair> pairs;   // one per frame-a pixel, row-major
  ValidityMask visible;           // false where occluded, out of frame, or behind camera
  std::vector<uint8_t> on_patch;  // pixel lies on the moving patch in frame a
};

/// Exact correspondence of every frame-a pixel in frame b using true depth,
/// camera motion, and (for patch pixels) the patch's own motion.
GroundTruthCorrespondences ground_truth_correspondences(const SceneSpec& spec, int frame_a, int frame_b);

}  // namespace altsfm
