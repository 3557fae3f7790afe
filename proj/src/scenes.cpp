#include "altsfm/scenes.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace altsfm {

void plane_basis(const Vec3& normal, Vec3& e1, Vec3& e2) {
  int smallest = 0;
  normal.cwiseAbs().minCoeff(&smallest);
  Vec3 axis = Vec3::Zero();
  axis[smallest] = 1.0;
  e1 = axis.cross(normal).normalized();
  e2 = normal.cross(e1);
}

namespace {

double texture_value(const Texture& tex, const Vec3& normal, const Vec3& point, int channel) {
  Vec3 e1, e2;
  plane_basis(normal, e1, e2);
  const double s = e1.dot(point);
  const double t = e2.dot(point);
  double v = tex.base;
  const double channel_shift = channel * 2.0 * M_PI / 3.0;
  for (const TextureComponent& c : tex.components)
    v += c.amplitude * std::sin(c.omega * (std::cos(c.angle) * s + std::sin(c.angle) * t) + c.phase + channel_shift);
  return v;
}

struct PlacedPlane {
  Vec3 normal;     // at the queried frame
  double offset;
  int texture;
  bool is_patch = false;
  Pose to_frame0;  // pulls a world point at this frame back to the patch's frame-0 placement
};

struct SceneAtFrame {
  std::vector<PlacedPlane> planes;
  const SceneSpec* spec;
  Pose camera;  // camera-to-world
};

SceneAtFrame place_scene(const SceneSpec& spec, int frame) {
  if (frame < 0 || frame >= spec.frame_count()) throw SceneSpecError("frame index out of range");
  SceneAtFrame out;
  out.spec = &spec;
  out.camera = pose_from_params(spec.trajectory[frame]);
  for (const ScenePlane& pl : spec.planes) out.planes.push_back({pl.normal, pl.offset, pl.texture, false, Pose()});
  if (spec.patch.active) {
    const Pose M = pose_from_params(spec.patch.motion[frame]);
    PlacedPlane pp;
    pp.normal = M.R * spec.patch.plane.normal;
    pp.offset = spec.patch.plane.offset + pp.normal.dot(M.t);
    pp.texture = spec.patch.plane.texture;
    pp.is_patch = true;
    pp.to_frame0 = M.inverse();
    out.planes.push_back(pp);
  }
  return out;
}

struct Hit {
  bool found = false;
  double depth = 0.0;   // camera-frame Z (== ray parameter, since ray.z == 1)
  Vec3 world;           // intersection point, world coordinates
  Vec3 frame0;          // pulled back to frame-0 placement (texture/bounds space)
  int plane_index = -1;
  bool on_patch = false;
};

bool patch_contains(const SceneSpec& spec, const Vec3& frame0_point) {
  Vec3 e1, e2;
  plane_basis(spec.patch.plane.normal, e1, e2);
  const double s = e1.dot(frame0_point);
  const double t = e2.dot(frame0_point);
  return s >= spec.patch.s_min && s <= spec.patch.s_max && t >= spec.patch.t_min && t <= spec.patch.t_max;
}

/// Nearest front-most intersection along the pixel ray. `u, v` are continuous.
Hit cast_ray(const SceneAtFrame& scene, double u, double v) {
  const Vec3 dir = scene.camera.R * scene.spec->intrinsics.ray(u, v);
  const Vec3 origin = scene.camera.t;
  Hit best;
  for (size_t k = 0; k < scene.planes.size(); ++k) {
    const PlacedPlane& pl = scene.planes[k];
    const double denom = pl.normal.dot(dir);
    if (std::abs(denom) < 1e-15) continue;
    const double s = (pl.offset - pl.normal.dot(origin)) / denom;
    if (s <= 1e-12) continue;
    if (best.found && s >= best.depth) continue;
    const Vec3 world = origin + s * dir;
    const Vec3 frame0 = pl.is_patch ? pl.to_frame0.apply(world) : world;
    if (pl.is_patch && !patch_contains(*scene.spec, frame0)) continue;
    best.found = true;
    best.depth = s;
    best.world = world;
    best.frame0 = frame0;
    best.plane_index = static_cast<int>(k);
    best.on_patch = pl.is_patch;
  }
  return best;
}

}  // namespace

void SceneSpec::validate() const {
  intrinsics.validate();
  if (width != intrinsics.width || height != intrinsics.height)
    throw SceneSpecError("scene size and intrinsics dimensions disagree");
  if (channels != 1 && channels != 3) throw SceneSpecError("channels must be 1 or 3");
  if (planes.empty()) throw SceneSpecError("scene needs at least one plane");
  if (trajectory.empty()) throw SceneSpecError("scene needs at least one frame");
  if (!(depth_min > 0.0) || !(depth_max > depth_min)) throw SceneSpecError("bad depth range");
  for (const ScenePlane& pl : planes)
    if (pl.texture < 0 || pl.texture >= static_cast<int>(textures.size()))
      throw SceneSpecError("plane references unknown texture");
  if (patch.active) {
    if (patch.plane.texture < 0 || patch.plane.texture >= static_cast<int>(textures.size()))
      throw SceneSpecError("patch references unknown texture");
    if (patch.motion.size() != trajectory.size())
      throw SceneSpecError("patch needs one motion entry per frame");
  }
  for (const Texture& tex : textures) {
    double amp = 0.0;
    for (const TextureComponent& c : tex.components) amp += std::abs(c.amplitude);
    if (tex.base - amp < 0.0 || tex.base + amp > 1.0)
      throw SceneSpecError("texture exceeds [0,1] intensity range");
  }
}

RenderedFrame render(const SceneSpec& spec, int frame) {
  spec.validate();
  const SceneAtFrame scene = place_scene(spec, frame);
  RenderedFrame out;
  out.camera_to_world = scene.camera;
  out.image = ImageGrid(spec.height, spec.width, spec.channels);
  out.depth = DepthGrid(spec.height, spec.width, 1.0);
  for (int i = 0; i < spec.height; ++i)
    for (int j = 0; j < spec.width; ++j) {
      const Hit hit = cast_ray(scene, static_cast<double>(j), static_cast<double>(i));
      if (!hit.found)
        throw SceneSpecError("pixel (" + std::to_string(i) + "," + std::to_string(j) +
                             ") of frame " + std::to_string(frame) + " hits no plane; scenes must be closed");
      if (hit.depth < spec.depth_min || hit.depth > spec.depth_max)
        throw SceneSpecError("pixel depth " + std::to_string(hit.depth) + " outside depth range");
      out.depth.at(i, j) = hit.depth;
      const PlacedPlane& pl = scene.planes[hit.plane_index];
      const Vec3 base_normal = pl.is_patch ? spec.patch.plane.normal : pl.normal;
      for (int c = 0; c < spec.channels; ++c)
        out.image.at(i, j, c) = texture_value(spec.textures[pl.texture], base_normal, hit.frame0, c);
    }
  return out;
}

Pose relative_pose(const SceneSpec& spec, int frame_t, int frame_s) {
  const Pose ct = pose_from_params(spec.trajectory[frame_t]);
  const Pose cs = pose_from_params(spec.trajectory[frame_s]);
  return cs.inverse().compose(ct);
}

GroundTruthCorrespondences ground_truth_correspondences(const SceneSpec& spec, int frame_a, int frame_b) {
  spec.validate();
  const SceneAtFrame scene_a = place_scene(spec, frame_a);
  const SceneAtFrame scene_b = place_scene(spec, frame_b);
  const Pose world_to_b = scene_b.camera.inverse();
  const Pose patch_motion_b =
      spec.patch.active ? pose_from_params(spec.patch.motion[frame_b]) : Pose::identity();

  GroundTruthCorrespondences out;
  out.pairs.resize(static_cast<size_t>(spec.height) * spec.width);
  out.visible = ValidityMask(spec.height, spec.width);
  out.on_patch.assign(out.pairs.size(), 0);

  for (int i = 0; i < spec.height; ++i)
    for (int j = 0; j < spec.width; ++j) {
      const size_t idx = static_cast<size_t>(i) * spec.width + j;
      const Hit hit = cast_ray(scene_a, static_cast<double>(j), static_cast<double>(i));
      if (!hit.found) throw SceneSpecError("frame-a pixel hits no plane");
      out.pairs[idx].target = {static_cast<double>(j), static_cast<double>(i)};
      out.on_patch[idx] = hit.on_patch;

      // Patch points move with the patch; static geometry stays put.
      const Vec3 world_b = hit.on_patch ? patch_motion_b.apply(hit.frame0) : hit.world;
      const Vec3 cam_b = world_to_b.apply(world_b);
      if (!(cam_b.z() > 1e-12)) continue;
      const Pixel q{spec.intrinsics.fx * cam_b.x() / cam_b.z() + spec.intrinsics.cx,
                    spec.intrinsics.fy * cam_b.y() / cam_b.z() + spec.intrinsics.cy};
      out.pairs[idx].source = q;
      if (q.u < 0.0 || q.v < 0.0 || q.u > spec.width - 1.0 || q.v > spec.height - 1.0) continue;

      // Hidden if something in frame b is strictly in front of the mapped point.
      const Hit hit_b = cast_ray(scene_b, q.u, q.v);
      if (!hit_b.found) continue;
      if (cam_b.z() > hit_b.depth * (1.0 + 1e-7) + 1e-9) continue;
      out.visible.at(i, j) = true;
    }
  return out;
}

namespace {

std::mt19937_64 seeded_rng(uint64_t seed) { return std::mt19937_64(seed); }

double unit_uniform(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

}  // namespace

SceneSpec SceneSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  SceneSpec spec;
  bool have_size = false, have_intrinsics = false;
  double fx = 0, fy = 0, cx = 0, cy = 0;

  auto texture_ref = [&](int id) -> Texture& {
    if (id < 0 || id > 255) throw SceneSpecError(path + ": texture id out of range");
    if (static_cast<int>(spec.textures.size()) <= id) spec.textures.resize(id + 1);
    return spec.textures[id];
  };

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    auto need = [&](auto&... vals) {
      if (!((ss >> vals) && ...)) throw SceneSpecError(where + ": malformed '" + word + "' directive");
    };

    if (word == "size") {
      need(spec.width, spec.height);
      have_size = true;
    } else if (word == "channels") {
      need(spec.channels);
    } else if (word == "intrinsics") {
      need(fx, fy, cx, cy);
      have_intrinsics = true;
    } else if (word == "depth_range") {
      need(spec.depth_min, spec.depth_max);
    } else if (word == "texture") {
      int id;
      double base;
      need(id, base);
      texture_ref(id).base = base;
    } else if (word == "texture_sin") {
      int id;
      TextureComponent c;
      need(id, c.amplitude, c.omega, c.angle, c.phase);
      texture_ref(id).components.push_back(c);
    } else if (word == "texture_seeded") {
      int id, count;
      uint64_t seed;
      double total_amp, omega_min, omega_max;
      need(id, seed, count, total_amp, omega_min, omega_max);
      auto rng = seeded_rng(seed);
      for (int k = 0; k < count; ++k) {
        TextureComponent c;
        c.amplitude = total_amp / count;
        c.omega = omega_min + (omega_max - omega_min) * unit_uniform(rng);
        c.angle = M_PI * unit_uniform(rng);
        c.phase = 2.0 * M_PI * unit_uniform(rng);
        texture_ref(id).components.push_back(c);
      }
    } else if (word == "plane") {
      ScenePlane pl;
      need(pl.normal.x(), pl.normal.y(), pl.normal.z(), pl.offset, pl.texture);
      const double n = pl.normal.norm();
      if (n < 1e-12) throw SceneSpecError(where + ": zero plane normal");
      pl.normal /= n;
      pl.offset /= n;
      spec.planes.push_back(pl);
    } else if (word == "frame") {
      double a[6];
      need(a[0], a[1], a[2], a[3], a[4], a[5]);
      spec.trajectory.emplace_back(a[0], a[1], a[2], a[3], a[4], a[5]);
    } else if (word == "patch") {
      ScenePlane pl;
      need(pl.normal.x(), pl.normal.y(), pl.normal.z(), pl.offset, pl.texture, spec.patch.s_min,
           spec.patch.s_max, spec.patch.t_min, spec.patch.t_max);
      const double n = pl.normal.norm();
      if (n < 1e-12) throw SceneSpecError(where + ": zero patch normal");
      pl.normal /= n;
      pl.offset /= n;
      spec.patch.plane = pl;
      spec.patch.active = true;
    } else if (word == "patch_motion") {
      double a[6];
      need(a[0], a[1], a[2], a[3], a[4], a[5]);
      spec.patch.motion.emplace_back(a[0], a[1], a[2], a[3], a[4], a[5]);
    } else {
      throw SceneSpecError(where + ": unknown directive '" + word + "'");
    }
    std::string excess;
    if (ss >> excess) throw SceneSpecError(where + ": trailing tokens after '" + word + "'");
  }
  if (!have_size || !have_intrinsics) throw SceneSpecError(path + ": size and intrinsics are required");
  spec.intrinsics = Intrinsics{fx, fy, cx, cy, spec.width, spec.height};
  spec.validate();
  return spec;
}

}  // namespace altsfm
