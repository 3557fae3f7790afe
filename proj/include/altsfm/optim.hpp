#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "altsfm/geometry.hpp"
#include "altsfm/image.hpp"
#include "altsfm/structural3d.hpp"

namespace altsfm {

/// Per-term weights of the composite objectives, plus the photometric mix α.
struct LossWeights {
  double lambda_s = 0.001;
  double lambda_e = 0.002;
  double lambda_3d = 0.02;
  double lambda_l = 0.001;
  double lambda_su = 0.0001;
  double alpha = 0.85;
};

enum class TrainMode { kAlternating, kJoint };

struct TrainConfig {
  LossWeights weights;
  double lr = 1e-4;
  int lr_half_every = 10;     // epochs between halvings
  int steps_per_epoch = 100;  // outer steps per epoch for the lr schedule
  int outer_steps = 1000;
  uint64_t seed = 1;
  TrainMode mode = TrainMode::kAlternating;
  int sample_count = 2000;    // correspondence pairs per epipolar matrix
  int icp_max_points = 2048;
  int icp_max_iters = 10;
  double icp_tol = 1e-6;
  double icp_trim = 0.0;
  double depth_init = 5.0;
  double depth_min = 0.1;
  double depth_max = 100.0;
  int depth_down = 1;  // coarse-grid factor for the depth parameters
  Log3dVariant log_variant = Log3dVariant::kSignedLog1p;
  bool normalize_epipolar = true;
  double min_translation = 1e-6;

  /// key=value file; unknown keys are errors. Missing keys keep defaults.
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

/// Log-depth parameter grid, optionally at a coarser resolution that is
/// bilinearly upsampled to full resolution. Positivity is unconditional.
struct DepthParams {
  int height = 0, width = 0;   // full resolution
  int coarse_h = 0, coarse_w = 0;
  Eigen::VectorXd log_depth;   // coarse_h × coarse_w, row-major

  static DepthParams constant(int height, int width, int factor, double depth);
  int param_count() const { return coarse_h * coarse_w; }

  /// Full-resolution log-depth (bilinear, corner-aligned).
  std::vector<double> expand() const;
  /// Adjoint of expand(): accumulates a full-resolution gradient into the
  /// coarse parameter layout.
  void contract_gradient(const std::vector<double>& grad_full, Eigen::VectorXd& grad_coarse) const;
};

/// Depth realized from log parameters with [depth_min, depth_max] clamping.
/// dd_dlog carries d(depth)/d(log-depth) per pixel (zero where clamped).
struct RealizedDepth {
  DepthGrid depth;
  std::vector<double> dd_dlog;
  int clamp_events = 0;
};
RealizedDepth realize_depth(const DepthParams& params, double depth_min, double depth_max);

struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;
};

/// Standard Adam with bias correction: β1=0.9, β2=0.999, ε=1e-8.
void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Learning rate after `outer_step` steps: halved every lr_half_every epochs.
double scheduled_lr(const TrainConfig& config, long outer_step);

/// Ordered training pair: losses for target frame `target` against `source`.
struct PairSpec {
  int target = 0;
  int source = 0;
};

struct FrameSet {
  std::vector<ImageGrid> images;
  Intrinsics intrinsics;
};

struct TrainState {
  std::vector<DepthParams> depths;  // per frame
  std::vector<Vec6> poses;          // per ordered pair, [θx θy θz tx ty tz]
  std::vector<PairSpec> pairs;
  AdamState adam_depth, adam_pose;
  std::mt19937_64 rng;
  long outer_step = 0;
  long clamp_events = 0;
  long degenerate_pairs = 0;  // freeze-time pairs that had to drop L_ep/L_sub
};

/// Adjacent ordered pairs (t, t±1), constant depth, identity poses.
TrainState init_train_state(const FrameSet& frames, const TrainConfig& config);

/// Discrete state frozen for the duration of one gradient step: ICP matches,
/// the auto-mask, per-pixel argmin selections, reduction counts, and the
/// sampled pixels backing the epipolar matrix. Gradients treat all of it as
/// constant; finite differences against the same frozen state agree with the
/// analytic gradients.
struct FrozenPair {
  std::vector<Pixel> icp_source_pixel;  // per strided target cell
  std::vector<int> esample;             // target pixel ids for epipolar-matrix columns
  bool degenerate = false;              // translation too small for epipolar terms
  bool icp_failed = false;
  int stride = 1, cells_h = 0, cells_w = 0;
};
struct FrozenTarget {
  std::vector<uint8_t> mu;        // auto-mask, per pixel
  std::vector<int8_t> argmin_ph;  // source slot per pixel, -1 none valid
  std::vector<int8_t> argmin_3d;
  std::vector<int8_t> argmin_ep;  // per strided cell
  int count_ph = 0, count_3d = 0, count_ep = 0;
};
struct Frozen {
  std::vector<FrozenTarget> targets;  // per frame
  std::vector<FrozenPair> pairs;      // aligned with TrainState::pairs
};

/// Freezes every discrete selection at the current parameters. Draws the
/// epipolar samples from state.rng; recomputes ICP with the current pose as
/// the initial transform.
Frozen freeze_selections(const FrameSet& frames, TrainState& state, const TrainConfig& config);

/// Refreshes only the ICP-derived selections (matches and their per-cell
/// argmin) in an existing Frozen; used between the depth and pose halves of an
/// alternating outer step.
void refreeze_icp(const FrameSet& frames, TrainState& state, const TrainConfig& config, Frozen& frozen);

enum class Term { kPhotometric, kSmoothness, kStructural3d, kEpipolar, kLowRank, kSubspace };
const char* term_name(Term term);
constexpr std::array<Term, 6> kAllTerms = {Term::kPhotometric, Term::kSmoothness, Term::kStructural3d,
                                           Term::kEpipolar,    Term::kLowRank,    Term::kSubspace};

enum class ObjectiveKind { kPose, kDepth, kJoint };

struct Gradients {
  std::vector<Eigen::VectorXd> depth;  // per frame, coarse parameter layout
  std::vector<Vec6> pose;              // per pair

  static Gradients zeros(const TrainState& state);
};

struct EvalResult {
  double total = 0.0;                    // weighted objective
  std::map<Term, double> term_values;    // raw (unweighted) term means
};

/// Weighted objective value, optionally with analytic gradients. The pose
/// objective never touches depth gradients and vice versa (exact zeros).
EvalResult evaluate_objective(ObjectiveKind kind, const FrameSet& frames, const TrainState& state,
                              const Frozen& frozen, const TrainConfig& config, Gradients* grads);

/// Raw single-term value (mean over target frames), with gradients w.r.t.
/// everything the term genuinely depends on. Used by the gradient checker.
double evaluate_term(Term term, const FrameSet& frames, const TrainState& state, const Frozen& frozen,
                     const TrainConfig& config, Gradients* grads);

/// Eq.-15-style composite: μ·L_ph + λ_s·L_s + λ_e·L_ep + λ_su·L_sub,
/// depth parameters treated as constants.
EvalResult pose_objective(const FrameSet& frames, const TrainState& state, const Frozen& frozen,
                          const TrainConfig& config, Gradients* grads = nullptr);
/// Eq.-16-style composite: μ·L_ph + λ_s·L_s + λ_3d·L_3D + λ_l·L_lr,
/// pose parameters treated as constants.
EvalResult depth_objective(const FrameSet& frames, const TrainState& state, const Frozen& frozen,
                           const TrainConfig& config, Gradients* grads = nullptr);

struct TrainLogRow {
  long step = 0;
  double l_ph = 0, l_s = 0, l_3d = 0, l_ep = 0, l_lr = 0, l_sub = 0;
  double depth_obj = 0, pose_obj = 0, total = 0;
};

struct TrainResult {
  TrainState state;
  std::vector<TrainLogRow> log;
};

/// The training loop. Alternating mode: per outer step, (1) one Adam update of
/// the depth grids under the depth objective with poses frozen, then (2) after
/// refreshing the ICP matches, one Adam update of the poses under the pose
/// objective with depths frozen. Joint mode: a single combined update of
/// everything. Deterministic given the seed. Throws NumericalError naming the
/// term if the loss goes non-finite.
TrainResult alternate_train(const FrameSet& frames, const TrainConfig& config);

void write_loss_csv(const std::string& path, const std::vector<TrainLogRow>& log);

struct GradCheckReport {
  Term term = Term::kPhotometric;
  double max_rel_err = 0.0;
  int coords_checked = 0;
  bool pass = true;
};

/// Central finite differences (h=1e-5 on log-depth, 1e-6 on pose) against the
/// analytic gradients at the current state, per term, at `coords_per_term`
/// sampled parameter coordinates. `corrupt` biases that term's analytic
/// gradient so the negative-control path can be exercised.
std::vector<GradCheckReport> gradient_check(const FrameSet& frames, TrainState& state,
                                            const TrainConfig& config, int coords_per_term, double tol,
                                            const Term* corrupt = nullptr);

}  // namespace altsfm
