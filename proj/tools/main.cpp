#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "altsfm/config.hpp"
#include "altsfm/epipolar.hpp"
#include "altsfm/geometry.hpp"
#include "altsfm/icp.hpp"
#include "altsfm/image.hpp"
#include "altsfm/metrics.hpp"
#include "altsfm/optim.hpp"
#include "altsfm/photometric.hpp"
#include "altsfm/scenes.hpp"

namespace fs = std::filesystem;
using namespace altsfm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

std::string frame_name(int index, int channels) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%03d.%s", index, channels == 1 ? "pgm" : "ppm");
  return buf;
}

// ---------------------------------------------------------------------------
// gen-scene
// ---------------------------------------------------------------------------

int run_gen_scene(const std::string& spec_path, const std::string& out_dir) {
  const SceneSpec spec = SceneSpec::load(spec_path);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  std::vector<Pose> poses;
  for (int f = 0; f < spec.frame_count(); ++f) {
    const RenderedFrame frame = render(spec, f);
    save_image((out / frame_name(f, spec.channels)).string(), frame.image);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "depth_%03d.raw", f);
    save_depth_raw((out / buf).string(), frame.depth);
    poses.push_back(frame.camera_to_world);
  }
  save_poses((out / "poses.txt").string(), poses);
  spec.intrinsics.save((out / "intrinsics.txt").string());

  // exact correspondences for every ordered adjacent pair
  for (int a = 0; a < spec.frame_count(); ++a)
    for (int b : {a - 1, a + 1}) {
      if (b < 0 || b >= spec.frame_count()) continue;
      const GroundTruthCorrespondences gt = ground_truth_correspondences(spec, a, b);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "corr_%03d_%03d.txt", a, b);
      std::ofstream corr((out / buf).string());
      char line[256];
      for (size_t k = 0; k < gt.pairs.size(); ++k) {
        std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %d %d\n", gt.pairs[k].target.u,
                      gt.pairs[k].target.v, gt.pairs[k].source.u, gt.pairs[k].source.v,
                      gt.visible.valid[k] ? 1 : 0, gt.on_patch[k] ? 1 : 0);
        corr << line;
      }
    }
  std::cout << "wrote " << spec.frame_count() << " frames to " << out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// scene-directory loading for train/ablate
// ---------------------------------------------------------------------------

struct SceneData {
  FrameSet frames;
  std::vector<DepthGrid> gt_depths;
  std::vector<Pose> gt_poses;  // camera-to-world
};

SceneData load_scene_dir(const std::string& dir) {
  SceneData data;
  const fs::path in(dir);
  data.frames.intrinsics = Intrinsics::load((in / "intrinsics.txt").string());
  data.gt_poses = load_poses((in / "poses.txt").string());
  for (int f = 0;; ++f) {
    fs::path p5 = in / frame_name(f, 1);
    fs::path p6 = in / frame_name(f, 3);
    std::string path;
    if (fs::exists(p5))
      path = p5.string();
    else if (fs::exists(p6))
      path = p6.string();
    else
      break;
    data.frames.images.push_back(load_image(path));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "depth_%03d.raw", f);
    if (fs::exists(in / buf)) data.gt_depths.push_back(load_depth_raw((in / buf).string()));
  }
  if (data.frames.images.size() < 2) throw std::runtime_error(dir + ": need at least two frames");
  if (data.frames.images.size() != data.gt_poses.size())
    throw std::runtime_error(dir + ": frame/pose count mismatch");
  return data;
}

/// Chains the learned pairwise transforms (source = target+1) into a
/// camera-to-world trajectory anchored at identity.
std::vector<Pose> predicted_trajectory(const TrainState& state) {
  int n_frames = 0;
  for (const PairSpec& p : state.pairs) n_frames = std::max(n_frames, std::max(p.target, p.source) + 1);
  std::vector<Pose> traj(n_frames, Pose::identity());
  for (int t = 0; t + 1 < n_frames; ++t) {
    for (size_t k = 0; k < state.pairs.size(); ++k) {
      if (state.pairs[k].target != t || state.pairs[k].source != t + 1) continue;
      const RotationJacobian rj = rotation_with_jacobian(state.poses[k][0], state.poses[k][1], state.poses[k][2]);
      Pose rel;  // maps frame-t coords into frame-(t+1) coords
      rel.R = rj.R;
      rel.t = state.poses[k].tail<3>();
      traj[t + 1] = traj[t].compose(rel.inverse());
      break;
    }
  }
  return traj;
}

struct PairErrors {
  double rot_rad = 0.0;
  double t_dir_rad = 0.0;
};

PairErrors pose_pair_errors(const TrainState& state, const std::vector<Pose>& gt_poses, size_t pair_idx) {
  const PairSpec& pr = state.pairs[pair_idx];
  const Pose gt_rel = gt_poses[pr.source].inverse().compose(gt_poses[pr.target]);
  const RotationJacobian rj =
      rotation_with_jacobian(state.poses[pair_idx][0], state.poses[pair_idx][1], state.poses[pair_idx][2]);
  PairErrors e;
  e.rot_rad = rotation_angle(rj.R * gt_rel.R.transpose());
  e.t_dir_rad = translation_direction_error(state.poses[pair_idx].tail<3>(), gt_rel.t);
  return e;
}

void write_metrics_csv(const std::string& path, const SceneData& data, const TrainResult& result,
                       const TrainConfig& config, double cap) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "kind,id,v1,v2,v3,v4,v5,v6,v7\n";
  char buf[512];
  for (size_t f = 0; f < data.gt_depths.size(); ++f) {
    const RealizedDepth rd = realize_depth(result.state.depths[f], config.depth_min, config.depth_max);
    const DepthMetrics m = depth_metrics(rd.depth, data.gt_depths[f], cap, ScaleMode::kMedian);
    std::snprintf(buf, sizeof(buf), "depth,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", f, m.abs_rel,
                  m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3);
    out << buf;
  }
  for (size_t k = 0; k < result.state.pairs.size(); ++k) {
    const PairErrors e = pose_pair_errors(result.state, data.gt_poses, k);
    std::snprintf(buf, sizeof(buf), "pose,%zu,%.17g,%.17g,,,,,\n", k, e.rot_rad, e.t_dir_rad);
    out << buf;
  }
  for (int n : {3, 5}) {
    if (static_cast<size_t>(n) > data.gt_poses.size()) continue;
    const AteResult a = ate(predicted_trajectory(result.state), data.gt_poses, n);
    std::snprintf(buf, sizeof(buf), "ate,%d,%.17g,%.17g,,,,,\n", n, a.mean, a.stddev);
    out << buf;
  }
}

int run_train(const std::string& scene_dir, const std::string& config_path, const std::string& out_dir,
              TrainConfig config, double cap) {
  const SceneData data = load_scene_dir(scene_dir);
  (void)config_path;
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  const TrainResult result = alternate_train(data.frames, config);
  write_loss_csv((out / "loss.csv").string(), result.log);
  config.save((out / "config_used.txt").string());
  for (size_t f = 0; f < result.state.depths.size(); ++f) {
    const RealizedDepth rd = realize_depth(result.state.depths[f], config.depth_min, config.depth_max);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "depth_pred_%03zu.raw", f);
    save_depth_raw((out / buf).string(), rd.depth);
    std::snprintf(buf, sizeof(buf), "depth_pred_%03zu.ppm", f);
    save_image((out / buf).string(), depth_to_false_color(rd.depth));
  }
  save_poses((out / "poses_pred.txt").string(), predicted_trajectory(result.state));
  if (!data.gt_depths.empty())
    write_metrics_csv((out / "metrics.csv").string(), data, result, config, cap);
  std::cout << "final total loss " << result.log.back().total << " after " << result.log.size() << " steps\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

SceneSpec builtin_gradcheck_scene() {
  SceneSpec spec;
  spec.width = 48;
  spec.height = 36;
  spec.channels = 1;
  spec.intrinsics = Intrinsics{42.0, 42.0, 23.5, 17.5, 48, 36};
  spec.depth_min = 0.1;
  spec.depth_max = 100.0;
  Texture tex;
  tex.base = 0.5;
  tex.components.push_back({0.22, 0.5, 0.35, 0.4});
  tex.components.push_back({0.15, 1.3, 1.9, 1.1});
  tex.components.push_back({0.08, 2.6, 0.9, 2.7});
  spec.textures.push_back(tex);
  spec.planes.push_back({Vec3(0.12, -0.08, 1.0).normalized(), 6.0, 0});
  spec.trajectory.emplace_back(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
  spec.trajectory.emplace_back(0.0, 0.01, 0.005, -0.25, 0.04, 0.08);
  return spec;
}

int run_grad_check(const std::string& scene_path, int states, int coords, double tol, uint64_t seed,
                   const std::string& corrupt_name) {
  const SceneSpec spec = scene_path.empty() ? builtin_gradcheck_scene() : SceneSpec::load(scene_path);
  FrameSet frames;
  frames.intrinsics = spec.intrinsics;
  std::vector<DepthGrid> gt_depths;
  for (int f = 0; f < spec.frame_count(); ++f) {
    RenderedFrame rf = render(spec, f);
    frames.images.push_back(std::move(rf.image));
    gt_depths.push_back(std::move(rf.depth));
  }

  TrainConfig config;
  config.seed = seed;
  config.sample_count = 256;
  config.icp_max_points = 512;

  const Term* corrupt = nullptr;
  Term corrupt_term = Term::kPhotometric;
  if (!corrupt_name.empty()) {
    bool found = false;
    for (Term t : kAllTerms)
      if (corrupt_name == term_name(t)) {
        corrupt_term = t;
        found = true;
      }
    if (!found) throw std::runtime_error("unknown term name: " + corrupt_name);
    corrupt = &corrupt_term;
  }

  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * ((rng() >> 11) * 0x1.0p-53); };

  std::map<Term, double> worst;
  bool all_pass = true;
  for (int s = 0; s < states; ++s) {
    TrainState state = init_train_state(frames, config);
    // random state: ground truth + noise, so every term has signal
    for (size_t f = 0; f < state.depths.size(); ++f) {
      DepthParams& dp = state.depths[f];
      for (Eigen::Index k = 0; k < dp.log_depth.size(); ++k) {
        const int i = static_cast<int>(k) / dp.coarse_w, j = static_cast<int>(k) % dp.coarse_w;
        const int fi = std::min(dp.height - 1, i * std::max(1, dp.height / dp.coarse_h));
        const int fj = std::min(dp.width - 1, j * std::max(1, dp.width / dp.coarse_w));
        dp.log_depth[k] = std::log(gt_depths[f].at(fi, fj)) + uniform(-0.15, 0.15);
      }
    }
    for (size_t k = 0; k < state.poses.size(); ++k) {
      const PairSpec& pr = state.pairs[k];
      const Pose ct = pose_from_params(spec.trajectory[pr.target]);
      const Pose cs = pose_from_params(spec.trajectory[pr.source]);
      const Pose rel = cs.inverse().compose(ct);
      Vec6 v;
      v << uniform(-0.02, 0.02), uniform(-0.02, 0.02), uniform(-0.02, 0.02),
          rel.t.x() + uniform(-0.05, 0.05), rel.t.y() + uniform(-0.05, 0.05),
          rel.t.z() + uniform(-0.05, 0.05);
      state.poses[k] = v;
    }
    state.rng.seed(seed + 1000 + s);

    const std::vector<GradCheckReport> reports =
        gradient_check(frames, state, config, coords, tol, corrupt);
    for (const GradCheckReport& r : reports) {
      worst[r.term] = std::max(worst[r.term], r.max_rel_err);
      if (!r.pass) all_pass = false;
    }
  }

  for (Term t : kAllTerms)
    std::printf("%-6s max relative error %.3e  %s\n", term_name(t), worst[t],
                worst[t] < tol ? "ok" : "FAIL");
  if (!all_pass) {
    std::cout << "gradient check FAILED\n";
    return kExitNumerical;
  }
  std::cout << "gradient check passed (" << states << " states, " << coords << " coords per term)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// icp-demo
// ---------------------------------------------------------------------------

int run_icp_demo(const std::string& cloud_a, const std::string& cloud_b, int max_iters, double tol,
                 double trim) {
  const PointCloud a = load_point_cloud(cloud_a);
  const PointCloud b = load_point_cloud(cloud_b);
  IcpOptions opts;
  opts.max_iters = max_iters;
  opts.tol = tol;
  opts.trim_fraction = trim;
  const IcpResult res = icp_register(a, b, Pose::identity(), opts);
  std::printf("converged=%d iterations=%d\n", res.converged ? 1 : 0, res.iterations);
  for (int i = 0; i < 3; ++i)
    std::printf("%.12g %.12g %.12g %.12g\n", res.transform.R(i, 0), res.transform.R(i, 1),
                res.transform.R(i, 2), res.transform.t[i]);
  std::printf("residual history:");
  for (double r : res.residual_history) std::printf(" %.6e", r);
  std::printf("\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationRow {
  const char* label;
  bool use_3d;
  bool log_3d;
  bool use_ep;
  bool use_lr;
  bool use_sub;
  bool alternate;
};

constexpr AblationRow kAblationGrid[] = {
    {"baseline", false, false, false, false, false, false},
    {"baseline+alt", false, false, false, false, false, true},
    {"3d", true, false, false, false, false, false},
    {"3d-log", true, true, false, false, false, false},
    {"ep", false, false, true, false, false, false},
    {"3d-log+ep", true, true, true, false, false, false},
    {"3d-log+ep+lr", true, true, true, true, false, false},
    {"3d-log+ep+lr+sub", true, true, true, true, true, false},
    {"all+alt", true, true, true, true, true, true},
};

TrainConfig ablation_config(const TrainConfig& base, const AblationRow& row) {
  TrainConfig c = base;
  if (!row.use_3d) c.weights.lambda_3d = 0.0;
  c.log_variant = row.log_3d ? Log3dVariant::kSignedLog1p : Log3dVariant::kPlain;
  if (!row.use_ep) c.weights.lambda_e = 0.0;
  if (!row.use_lr) c.weights.lambda_l = 0.0;
  if (!row.use_sub) c.weights.lambda_su = 0.0;
  c.mode = row.alternate ? TrainMode::kAlternating : TrainMode::kJoint;
  return c;
}

int run_ablate(const std::string& scene_dir, const std::string& out_dir, const TrainConfig& base, double cap) {
  const SceneData data = load_scene_dir(scene_dir);
  fs::create_directories(out_dir);
  std::ofstream out((fs::path(out_dir) / "ablation.csv").string());
  if (!out) throw std::runtime_error("cannot write ablation.csv");
  out << "config,l3d,log,ep,lr,sub,alternate,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,"
         "rot_err_rad,t_dir_err_rad,final_depth_obj\n";
  char buf[768];
  for (const AblationRow& row : kAblationGrid) {
    const TrainConfig config = ablation_config(base, row);
    const TrainResult result = alternate_train(data.frames, config);
    DepthMetrics mean_m;
    int n_frames = 0;
    for (size_t f = 0; f < data.gt_depths.size(); ++f) {
      const RealizedDepth rd = realize_depth(result.state.depths[f], config.depth_min, config.depth_max);
      const DepthMetrics m = depth_metrics(rd.depth, data.gt_depths[f], cap, ScaleMode::kMedian);
      mean_m.abs_rel += m.abs_rel;
      mean_m.sq_rel += m.sq_rel;
      mean_m.rmse += m.rmse;
      mean_m.rmse_log += m.rmse_log;
      mean_m.delta1 += m.delta1;
      mean_m.delta2 += m.delta2;
      mean_m.delta3 += m.delta3;
      ++n_frames;
    }
    double rot = 0.0, tdir = 0.0;
    for (size_t k = 0; k < result.state.pairs.size(); ++k) {
      const PairErrors e = pose_pair_errors(result.state, data.gt_poses, k);
      rot += e.rot_rad;
      tdir += e.t_dir_rad;
    }
    rot /= result.state.pairs.size();
    tdir /= result.state.pairs.size();
    const double inv = n_frames > 0 ? 1.0 / n_frames : 0.0;
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  row.label, row.use_3d, row.log_3d, row.use_ep, row.use_lr, row.use_sub, row.alternate,
                  mean_m.abs_rel * inv, mean_m.sq_rel * inv, mean_m.rmse * inv, mean_m.rmse_log * inv,
                  mean_m.delta1 * inv, mean_m.delta2 * inv, mean_m.delta3 * inv, rot, tdir,
                  result.log.back().depth_obj);
    out << buf;
    std::cout << row.label << " done (abs_rel " << mean_m.abs_rel * inv << ")\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct alternating optimization of depth grids and camera poses on synthetic scenes"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, scene_dir, config_path, weights_path;
  std::string cloud_a, cloud_b, corrupt_name, scene_path;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string mode;
  int epochs = -1;
  double lr = -1.0;
  int sample_count = -1;
  double cap = 80.0;
  std::string log_variant;
  int gc_states = 3, gc_coords = 64;
  double gc_tol = 1e-4;
  int icp_iters = 10;
  double icp_tol = 1e-6, icp_trim = 0.0;
  int steps = -1;

  CLI::App* gen = app.add_subcommand("gen-scene", "Render a scene spec to frames/depths/poses");
  gen->add_option("spec", spec_path, "scene spec file")->required();
  gen->add_option("out", out_dir, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "Optimize depth grids and poses on a generated scene");
  train->add_option("scene", scene_dir, "scene directory from gen-scene")->required();
  train->add_option("out", out_dir, "output directory")->required();
  train->add_option("--config", config_path, "training config file");
  train->add_option("--weights", weights_path, "loss-weight key=value file");
  train->add_option("--seed", seed)->each([&](const std::string&) { seed_set = true; });
  train->add_option("--mode", mode)->check(CLI::IsMember({"joint", "alternating"}));
  train->add_option("--epochs", epochs);
  train->add_option("--steps", steps, "outer steps (overrides epochs)");
  train->add_option("--lr", lr);
  train->add_option("--sample-count", sample_count);
  train->add_option("--cap", cap, "depth cap for metrics");
  train->add_option("--log-variant", log_variant)->check(CLI::IsMember({"signed-log1p", "z-only", "plain"}));

  CLI::App* grad = app.add_subcommand("grad-check", "Finite-difference check of every loss term");
  grad->add_option("--scene", scene_path, "scene spec file (default: built-in)");
  grad->add_option("--states", gc_states);
  grad->add_option("--coords", gc_coords);
  grad->add_option("--tol", gc_tol);
  grad->add_option("--seed", seed);
  grad->add_option("--corrupt-term", corrupt_name, "bias this term's gradient (negative control)");

  CLI::App* icp = app.add_subcommand("icp-demo", "Register two point-cloud text files");
  icp->add_option("cloud_a", cloud_a)->required();
  icp->add_option("cloud_b", cloud_b)->required();
  icp->add_option("--max-iters", icp_iters);
  icp->add_option("--tol", icp_tol);
  icp->add_option("--trim", icp_trim);

  CLI::App* ablate = app.add_subcommand("ablate", "Run the loss-configuration grid and emit a comparison CSV");
  ablate->add_option("scene", scene_dir)->required();
  ablate->add_option("out", out_dir)->required();
  ablate->add_option("--config", config_path);
  ablate->add_option("--seed", seed)->each([&](const std::string&) { seed_set = true; });
  ablate->add_option("--steps", steps);
  ablate->add_option("--cap", cap);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitInput;
  }

  try {
    if (gen->parsed()) return run_gen_scene(spec_path, out_dir);

    if (train->parsed() || ablate->parsed()) {
      TrainConfig config = config_path.empty() ? TrainConfig() : TrainConfig::load(config_path);
      if (!weights_path.empty()) {
        KeyValueFile kv = KeyValueFile::load(weights_path);
        config.weights.lambda_s = kv.get_double("lambda_s", config.weights.lambda_s);
        config.weights.lambda_e = kv.get_double("lambda_e", config.weights.lambda_e);
        config.weights.lambda_3d = kv.get_double("lambda_3d", config.weights.lambda_3d);
        config.weights.lambda_l = kv.get_double("lambda_l", config.weights.lambda_l);
        config.weights.lambda_su = kv.get_double("lambda_su", config.weights.lambda_su);
        config.weights.alpha = kv.get_double("alpha", config.weights.alpha);
        kv.require_all_consumed();
      }
      if (seed_set) config.seed = seed;
      if (!mode.empty()) config.mode = mode == "joint" ? TrainMode::kJoint : TrainMode::kAlternating;
      if (epochs >= 0) config.outer_steps = epochs * config.steps_per_epoch;
      if (steps >= 0) config.outer_steps = steps;
      if (lr > 0) config.lr = lr;
      if (sample_count > 0) config.sample_count = sample_count;
      if (!log_variant.empty())
        config.log_variant = log_variant == "signed-log1p" ? Log3dVariant::kSignedLog1p
                             : log_variant == "z-only"     ? Log3dVariant::kZOnly
                                                           : Log3dVariant::kPlain;
      if (train->parsed()) return run_train(scene_dir, config_path, out_dir, config, cap);
      return run_ablate(scene_dir, out_dir, config, cap);
    }

    if (grad->parsed()) return run_grad_check(scene_path, gc_states, gc_coords, gc_tol, seed, corrupt_name);
    if (icp->parsed()) return run_icp_demo(cloud_a, cloud_b, icp_iters, icp_tol, icp_trim);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}
