#include "altsfm/optim.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "altsfm/config.hpp"
#include "altsfm/epipolar.hpp"
#include "altsfm/icp.hpp"
#include "altsfm/photometric.hpp"
#include "altsfm/sampler.hpp"

namespace altsfm {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TrainConfig TrainConfig::load(const std::string& path) {
  KeyValueFile kv = KeyValueFile::load(path);
  TrainConfig c;
  c.weights.lambda_s = kv.get_double("lambda_s", c.weights.lambda_s);
  c.weights.lambda_e = kv.get_double("lambda_e", c.weights.lambda_e);
  c.weights.lambda_3d = kv.get_double("lambda_3d", c.weights.lambda_3d);
  c.weights.lambda_l = kv.get_double("lambda_l", c.weights.lambda_l);
  c.weights.lambda_su = kv.get_double("lambda_su", c.weights.lambda_su);
  c.weights.alpha = kv.get_double("alpha", c.weights.alpha);
  c.lr = kv.get_double("lr", c.lr);
  c.lr_half_every = kv.get_int("lr_half_every", c.lr_half_every);
  c.steps_per_epoch = kv.get_int("steps_per_epoch", c.steps_per_epoch);
  c.outer_steps = kv.get_int("outer_steps", c.outer_steps);
  c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int>(c.seed)));
  const std::string mode = kv.get_string("mode", "alternating");
  if (mode == "alternating")
    c.mode = TrainMode::kAlternating;
  else if (mode == "joint")
    c.mode = TrainMode::kJoint;
  else
    throw std::runtime_error(path + ": mode must be 'alternating' or 'joint'");
  c.sample_count = kv.get_int("sample_count", c.sample_count);
  c.icp_max_points = kv.get_int("icp_max_points", c.icp_max_points);
  c.icp_max_iters = kv.get_int("icp_max_iters", c.icp_max_iters);
  c.icp_tol = kv.get_double("icp_tol", c.icp_tol);
  c.icp_trim = kv.get_double("icp_trim", c.icp_trim);
  c.depth_init = kv.get_double("depth_init", c.depth_init);
  c.depth_min = kv.get_double("depth_min", c.depth_min);
  c.depth_max = kv.get_double("depth_max", c.depth_max);
  c.depth_down = kv.get_int("depth_down", c.depth_down);
  const std::string lv = kv.get_string("log_variant", "signed-log1p");
  if (lv == "signed-log1p")
    c.log_variant = Log3dVariant::kSignedLog1p;
  else if (lv == "z-only")
    c.log_variant = Log3dVariant::kZOnly;
  else if (lv == "plain")
    c.log_variant = Log3dVariant::kPlain;
  else
    throw std::runtime_error(path + ": log_variant must be signed-log1p, z-only, or plain");
  c.normalize_epipolar = kv.get_bool("normalize_epipolar", c.normalize_epipolar);
  c.min_translation = kv.get_double("min_translation", c.min_translation);
  kv.require_all_consumed();
  return c;
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  const char* mode_s = mode == TrainMode::kAlternating ? "alternating" : "joint";
  const char* lv = log_variant == Log3dVariant::kSignedLog1p ? "signed-log1p"
                   : log_variant == Log3dVariant::kZOnly     ? "z-only"
                                                             : "plain";
  char buf[2048];
  std::snprintf(buf, sizeof(buf),
                "lambda_s=%.17g\nlambda_e=%.17g\nlambda_3d=%.17g\nlambda_l=%.17g\nlambda_su=%.17g\n"
                "alpha=%.17g\nlr=%.17g\nlr_half_every=%d\nsteps_per_epoch=%d\nouter_steps=%d\nseed=%llu\n"
                "mode=%s\nsample_count=%d\nicp_max_points=%d\nicp_max_iters=%d\nicp_tol=%.17g\nicp_trim=%.17g\n"
                "depth_init=%.17g\ndepth_min=%.17g\ndepth_max=%.17g\ndepth_down=%d\nlog_variant=%s\n"
                "normalize_epipolar=%d\nmin_translation=%.17g\n",
                weights.lambda_s, weights.lambda_e, weights.lambda_3d, weights.lambda_l, weights.lambda_su,
                weights.alpha, lr, lr_half_every, steps_per_epoch, outer_steps,
                static_cast<unsigned long long>(seed), mode_s, sample_count, icp_max_points, icp_max_iters,
                icp_tol, icp_trim, depth_init, depth_min, depth_max, depth_down, lv, normalize_epipolar ? 1 : 0,
                min_translation);
  out << buf;
}

// ---------------------------------------------------------------------------
// Depth parameters
// ---------------------------------------------------------------------------

namespace {

int coarse_dim(int full, int factor) {
  if (factor <= 1 || full == 1) return full;
  return std::max(2, (full + factor - 1) / factor);
}

/// Corner-aligned bilinear map from the coarse grid to full resolution.
template <typename Fn>
void for_each_upsample_weight(int h, int w, int ch, int cw, Fn&& fn) {
  for (int i = 0; i < h; ++i) {
    const double cy = h > 1 ? static_cast<double>(i) * (ch - 1) / (h - 1) : 0.0;
    const int i0 = std::min(static_cast<int>(cy), ch - 1);
    const int i1 = std::min(i0 + 1, ch - 1);
    const double fv = cy - i0;
    for (int j = 0; j < w; ++j) {
      const double cx = w > 1 ? static_cast<double>(j) * (cw - 1) / (w - 1) : 0.0;
      const int j0 = std::min(static_cast<int>(cx), cw - 1);
      const int j1 = std::min(j0 + 1, cw - 1);
      const double fu = cx - j0;
      const int full = i * w + j;
      fn(full, i0 * cw + j0, (1 - fu) * (1 - fv), i0 * cw + j1, fu * (1 - fv), i1 * cw + j0, (1 - fu) * fv,
         i1 * cw + j1, fu * fv);
    }
  }
}

}  // namespace

DepthParams DepthParams::constant(int height, int width, int factor, double depth) {
  if (!(depth > 0.0)) throw std::domain_error("DepthParams: initial depth must be positive");
  DepthParams p;
  p.height = height;
  p.width = width;
  p.coarse_h = coarse_dim(height, factor);
  p.coarse_w = coarse_dim(width, factor);
  p.log_depth = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(p.coarse_h) * p.coarse_w, std::log(depth));
  return p;
}

std::vector<double> DepthParams::expand() const {
  std::vector<double> full(static_cast<size_t>(height) * width, 0.0);
  if (coarse_h == height && coarse_w == width) {
    for (size_t k = 0; k < full.size(); ++k) full[k] = log_depth[static_cast<Eigen::Index>(k)];
    return full;
  }
  for_each_upsample_weight(height, width, coarse_h, coarse_w,
                           [&](int f, int a, double wa, int b, double wb, int c, double wc, int d, double wd) {
                             full[f] = wa * log_depth[a] + wb * log_depth[b] + wc * log_depth[c] +
                                       wd * log_depth[d];
                           });
  return full;
}

void DepthParams::contract_gradient(const std::vector<double>& grad_full, Eigen::VectorXd& grad_coarse) const {
  grad_coarse.setZero(param_count());
  if (coarse_h == height && coarse_w == width) {
    for (size_t k = 0; k < grad_full.size(); ++k) grad_coarse[static_cast<Eigen::Index>(k)] = grad_full[k];
    return;
  }
  for_each_upsample_weight(height, width, coarse_h, coarse_w,
                           [&](int f, int a, double wa, int b, double wb, int c, double wc, int d, double wd) {
                             const double g = grad_full[f];
                             grad_coarse[a] += wa * g;
                             grad_coarse[b] += wb * g;
                             grad_coarse[c] += wc * g;
                             grad_coarse[d] += wd * g;
                           });
}

RealizedDepth realize_depth(const DepthParams& params, double depth_min, double depth_max) {
  RealizedDepth r;
  r.depth = DepthGrid(params.height, params.width, 1.0);
  const std::vector<double> logd = params.expand();
  r.dd_dlog.assign(logd.size(), 0.0);
  for (size_t k = 0; k < logd.size(); ++k) {
    double d = std::exp(logd[k]);
    double deriv = d;
    if (d < depth_min) {
      d = depth_min;
      deriv = 0.0;
      ++r.clamp_events;
    } else if (d > depth_max) {
      d = depth_max;
      deriv = 0.0;
      ++r.clamp_events;
    }
    r.depth.d[k] = d;
    r.dd_dlog[k] = deriv;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad, double lr,
               double beta1, double beta2, double eps) {
  if (params.size() != grad.size()) throw std::invalid_argument("adam_step: shape mismatch");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

double scheduled_lr(const TrainConfig& config, long outer_step) {
  const long epoch = config.steps_per_epoch > 0 ? outer_step / config.steps_per_epoch : 0;
  const long halvings = config.lr_half_every > 0 ? epoch / config.lr_half_every : 0;
  return config.lr * std::pow(0.5, static_cast<double>(halvings));
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

TrainState init_train_state(const FrameSet& frames, const TrainConfig& config) {
  if (frames.images.size() < 2) throw std::invalid_argument("init_train_state: need at least 2 frames");
  TrainState state;
  const int h = frames.images[0].height, w = frames.images[0].width;
  for (const ImageGrid& img : frames.images)
    if (img.height != h || img.width != w) throw std::invalid_argument("init_train_state: frame sizes differ");
  for (size_t f = 0; f < frames.images.size(); ++f)
    state.depths.push_back(DepthParams::constant(h, w, config.depth_down, config.depth_init));
  const int n = static_cast<int>(frames.images.size());
  for (int t = 0; t < n; ++t)
    for (int s : {t - 1, t + 1})
      if (s >= 0 && s < n) {
        state.pairs.push_back({t, s});
        state.poses.push_back(Vec6::Zero());
      }
  state.rng.seed(config.seed);
  return state;
}

Gradients Gradients::zeros(const TrainState& state) {
  Gradients g;
  for (const DepthParams& d : state.depths) g.depth.push_back(Eigen::VectorXd::Zero(d.param_count()));
  g.pose.assign(state.poses.size(), Vec6::Zero());
  return g;
}

const char* term_name(Term term) {
  switch (term) {
    case Term::kPhotometric: return "L_ph";
    case Term::kSmoothness: return "L_s";
    case Term::kStructural3d: return "L_3d";
    case Term::kEpipolar: return "L_ep";
    case Term::kLowRank: return "L_lr";
    case Term::kSubspace: return "L_sub";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Warp fields and sampling helpers
// ---------------------------------------------------------------------------

namespace {

struct WarpPixel {
  uint8_t valid = 0;
  double u = 0, v = 0;          // reprojected source coordinates
  Vec3 A = Vec3::Zero();        // transformed target point, source camera frame
  Vec3 du_dA = Vec3::Zero();    // d(u)/dA
  Vec3 dv_dA = Vec3::Zero();
  Vec3 dA_dlogd = Vec3::Zero(); // d(A)/d(log-depth at this pixel)
  Eigen::Matrix<double, 3, 6> dA_dxi = Eigen::Matrix<double, 3, 6>::Zero();
};

struct WarpField {
  int h = 0, w = 0;
  Mat3 R;
  Vec3 t;
  std::array<Mat3, 3> dR;
  std::vector<WarpPixel> px;
};

WarpField compute_warp_field(const RealizedDepth& target_depth, const Vec6& xi, const Intrinsics& K,
                             bool with_jacobians) {
  WarpField wf;
  wf.h = target_depth.depth.height;
  wf.w = target_depth.depth.width;
  const RotationJacobian rj = rotation_with_jacobian(xi[0], xi[1], xi[2]);
  wf.R = rj.R;
  wf.dR = rj.dR;
  wf.t = xi.tail<3>();
  wf.px.resize(static_cast<size_t>(wf.h) * wf.w);
  for (int i = 0; i < wf.h; ++i)
    for (int j = 0; j < wf.w; ++j) {
      WarpPixel& p = wf.px[static_cast<size_t>(i) * wf.w + j];
      const Vec3 ray = K.ray(j, i);
      const double d = target_depth.depth.at(i, j);
      const Vec3 Q = ray * d;
      const Vec3 A = wf.R * Q + wf.t;
      p.A = A;
      if (!(A.z() > 1e-9)) continue;
      p.valid = 1;
      p.u = K.fx * A.x() / A.z() + K.cx;
      p.v = K.fy * A.y() / A.z() + K.cy;
      if (!with_jacobians) continue;
      const double inv_z = 1.0 / A.z();
      p.du_dA = Vec3(K.fx * inv_z, 0.0, -K.fx * A.x() * inv_z * inv_z);
      p.dv_dA = Vec3(0.0, K.fy * inv_z, -K.fy * A.y() * inv_z * inv_z);
      p.dA_dlogd = wf.R * ray * target_depth.dd_dlog[static_cast<size_t>(i) * wf.w + j];
      for (int k = 0; k < 3; ++k) p.dA_dxi.col(k) = wf.dR[k] * Q;
      p.dA_dxi.block<3, 3>(0, 3).setIdentity();
    }
  return wf;
}

/// Clamped bilinear lookup with the spatial gradient of the interpolant.
/// Clamping makes off-by-epsilon probes continuous; the gradient is zeroed in
/// a clamped direction.
struct ClampedSample {
  double value[3] = {0, 0, 0};
  double du[3] = {0, 0, 0};
  double dv[3] = {0, 0, 0};
};

ClampedSample sample_image_clamped(const ImageGrid& img, double u, double v) {
  const double uc = std::min(std::max(u, 0.0), static_cast<double>(img.width - 1));
  const double vc = std::min(std::max(v, 0.0), static_cast<double>(img.height - 1));
  ClampedSample out;
  const SampleResult r = sample_bilinear(img, uc, vc);
  const SampleGradient g = sample_bilinear_gradient(img, uc, vc);
  for (int c = 0; c < img.channels; ++c) {
    out.value[c] = r.value[c];
    out.du[c] = (uc == u) ? g.du[c] : 0.0;
    out.dv[c] = (vc == v) ? g.dv[c] : 0.0;
  }
  return out;
}

struct DepthSample {
  double value = 0;
  double du = 0, dv = 0;
  int idx[4] = {0, 0, 0, 0};
  double w[4] = {0, 0, 0, 0};
};

DepthSample sample_depth_clamped(const DepthGrid& depth, double u, double v) {
  const double uc = std::min(std::max(u, 0.0), static_cast<double>(depth.width - 1));
  const double vc = std::min(std::max(v, 0.0), static_cast<double>(depth.height - 1));
  const int j0 = std::min(static_cast<int>(std::floor(uc)), depth.width - 1);
  const int i0 = std::min(static_cast<int>(std::floor(vc)), depth.height - 1);
  const int j1 = std::min(j0 + 1, depth.width - 1);
  const int i1 = std::min(i0 + 1, depth.height - 1);
  const double fu = uc - j0, fv = vc - i0;
  DepthSample s;
  const double g00 = depth.at(i0, j0), g01 = depth.at(i0, j1), g10 = depth.at(i1, j0), g11 = depth.at(i1, j1);
  s.value = (1 - fu) * (1 - fv) * g00 + fu * (1 - fv) * g01 + (1 - fu) * fv * g10 + fu * fv * g11;
  s.du = (uc == u) ? (1 - fv) * (g01 - g00) + fv * (g11 - g10) : 0.0;
  s.dv = (vc == v) ? (1 - fu) * (g10 - g00) + fu * (g11 - g01) : 0.0;
  s.idx[0] = i0 * depth.width + j0;
  s.idx[1] = i0 * depth.width + j1;
  s.idx[2] = i1 * depth.width + j0;
  s.idx[3] = i1 * depth.width + j1;
  s.w[0] = (1 - fu) * (1 - fv);
  s.w[1] = fu * (1 - fv);
  s.w[2] = (1 - fu) * fv;
  s.w[3] = fu * fv;
  return s;
}

// ---------------------------------------------------------------------------
// Photometric workspace: dense warped image + SSIM window statistics
// ---------------------------------------------------------------------------

struct WarpedImage {
  ImageGrid image;
  std::vector<double> du, dv;  // same layout as image.data
};

WarpedImage resample_source(const ImageGrid& source, const WarpField& wf) {
  WarpedImage out;
  out.image = ImageGrid(wf.h, wf.w, source.channels);
  out.du.assign(out.image.data.size(), 0.0);
  out.dv.assign(out.image.data.size(), 0.0);
  for (size_t k = 0; k < wf.px.size(); ++k) {
    const WarpPixel& p = wf.px[k];
    if (!p.valid) continue;
    const ClampedSample s = sample_image_clamped(source, p.u, p.v);
    for (int c = 0; c < source.channels; ++c) {
      out.image.data[k * source.channels + c] = s.value[c];
      out.du[k * source.channels + c] = s.du[c];
      out.dv[k * source.channels + c] = s.dv[c];
    }
  }
  return out;
}

/// Dense clipped-window statistics between the target image A and a warped
/// image B, per channel, matching ssim_map's window convention.
struct SsimStats {
  int h = 0, w = 0, channels = 0;
  std::vector<double> mu_a, mu_b, e_aa, e_bb, e_ab;  // [(i*w+j)*channels + c]
  std::vector<double> inv_n;                         // per pixel

  double at(const std::vector<double>& v, int i, int j, int c) const {
    return v[(static_cast<size_t>(i) * w + j) * channels + c];
  }
};

SsimStats compute_ssim_stats(const ImageGrid& a, const ImageGrid& b) {
  SsimStats s;
  s.h = a.height;
  s.w = a.width;
  s.channels = a.channels;
  const size_t n = a.data.size();
  s.mu_a.assign(n, 0.0);
  s.mu_b.assign(n, 0.0);
  s.e_aa.assign(n, 0.0);
  s.e_bb.assign(n, 0.0);
  s.e_ab.assign(n, 0.0);
  s.inv_n.assign(a.pixel_count(), 0.0);
  for (int i = 0; i < s.h; ++i)
    for (int j = 0; j < s.w; ++j) {
      int count = 0;
      for (int di = -kSsimRadius; di <= kSsimRadius; ++di)
        for (int dj = -kSsimRadius; dj <= kSsimRadius; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= s.h || jj < 0 || jj >= s.w) continue;
          ++count;
          for (int c = 0; c < s.channels; ++c) {
            const double xa = a.at(ii, jj, c), xb = b.at(ii, jj, c);
            const size_t at = (static_cast<size_t>(i) * s.w + j) * s.channels + c;
            s.mu_a[at] += xa;
            s.mu_b[at] += xb;
            s.e_aa[at] += xa * xa;
            s.e_bb[at] += xb * xb;
            s.e_ab[at] += xa * xb;
          }
        }
      const double inv = 1.0 / count;
      s.inv_n[static_cast<size_t>(i) * s.w + j] = inv;
      for (int c = 0; c < s.channels; ++c) {
        const size_t at = (static_cast<size_t>(i) * s.w + j) * s.channels + c;
        s.mu_a[at] *= inv;
        s.mu_b[at] *= inv;
        s.e_aa[at] *= inv;
        s.e_bb[at] *= inv;
        s.e_ab[at] *= inv;
      }
    }
  return s;
}

double ssim_from_stats(const SsimStats& s, int i, int j, int c) {
  const double mu_a = s.at(s.mu_a, i, j, c), mu_b = s.at(s.mu_b, i, j, c);
  const double var_a = s.at(s.e_aa, i, j, c) - mu_a * mu_a;
  const double var_b = s.at(s.e_bb, i, j, c) - mu_b * mu_b;
  const double cov = s.at(s.e_ab, i, j, c) - mu_a * mu_b;
  return (2 * mu_a * mu_b + kSsimC1) * (2 * cov + kSsimC2) /
         ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
}

double photometric_at(const SsimStats& s, const ImageGrid& a, const ImageGrid& b, int i, int j, double alpha) {
  double ssim = 0.0, l1 = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    ssim += ssim_from_stats(s, i, j, c);
    l1 += std::abs(a.at(i, j, c) - b.at(i, j, c));
  }
  ssim /= a.channels;
  l1 /= a.channels;
  return alpha * (1.0 - ssim) / 2.0 + (1.0 - alpha) * l1;
}

/// Distributes the adjoint of SSIM(i,j,c) onto the warped values in its
/// window: grad_b[q,c] += adj * dSSIM/dB(q,c).
void ssim_backward(const SsimStats& s, const ImageGrid& a, const ImageGrid& b, int i, int j, int c, double adj,
                   std::vector<double>& grad_b) {
  const double mu_a = s.at(s.mu_a, i, j, c), mu_b = s.at(s.mu_b, i, j, c);
  const double var_a = s.at(s.e_aa, i, j, c) - mu_a * mu_a;
  const double var_b = s.at(s.e_bb, i, j, c) - mu_b * mu_b;
  const double cov = s.at(s.e_ab, i, j, c) - mu_a * mu_b;
  const double num1 = 2 * mu_a * mu_b + kSsimC1;
  const double den1 = mu_a * mu_a + mu_b * mu_b + kSsimC1;
  const double num2 = 2 * cov + kSsimC2;
  const double den2 = var_a + var_b + kSsimC2;
  const double s1 = num1 / den1, s2 = num2 / den2;
  const double ds1_dmub = (2 * mu_a * den1 - num1 * 2 * mu_b) / (den1 * den1);
  const double ds2_dmub = (-2 * mu_a * den2 + num2 * 2 * mu_b) / (den2 * den2);
  const double ds_dmub = ds1_dmub * s2 + s1 * ds2_dmub;
  const double ds_deab = s1 * 2.0 / den2;
  const double ds_debb = s1 * (-num2 / (den2 * den2));
  const double inv_n = s.inv_n[static_cast<size_t>(i) * s.w + j];
  for (int di = -kSsimRadius; di <= kSsimRadius; ++di)
    for (int dj = -kSsimRadius; dj <= kSsimRadius; ++dj) {
      const int ii = i + di, jj = j + dj;
      if (ii < 0 || ii >= s.h || jj < 0 || jj >= s.w) continue;
      const size_t q = (static_cast<size_t>(ii) * s.w + jj) * s.channels + c;
      grad_b[q] += adj * inv_n * (ds_dmub + ds_deab * a.data[q] + ds_debb * 2.0 * b.data[q]);
    }
}

// ---------------------------------------------------------------------------
// Evaluation context
// ---------------------------------------------------------------------------

struct GradSink {
  bool want_depth = false;
  bool want_pose = false;
  std::vector<std::vector<double>> depth_full;  // per frame, full-resolution log-depth layout
  std::vector<Vec6> pose;                       // per pair
};

struct EvalContext {
  const FrameSet* frames = nullptr;
  const TrainState* state = nullptr;
  const TrainConfig* config = nullptr;
  const Frozen* frozen = nullptr;
  std::vector<RealizedDepth> realized;              // per frame
  std::vector<WarpField> warps;                     // per pair
  std::vector<WarpedImage> warped;                  // per pair
  std::vector<SsimStats> stats;                     // per pair
  std::vector<std::vector<int>> pairs_of_target;    // frame -> pair indices

  int n_targets() const {
    int n = 0;
    for (const auto& v : pairs_of_target) n += !v.empty();
    return n;
  }
};

EvalContext build_context(const FrameSet& frames, const TrainState& state, const TrainConfig& config,
                          const Frozen& frozen, bool with_jacobians, bool with_photo) {
  EvalContext ctx;
  ctx.frames = &frames;
  ctx.state = &state;
  ctx.config = &config;
  ctx.frozen = &frozen;
  for (const DepthParams& d : state.depths)
    ctx.realized.push_back(realize_depth(d, config.depth_min, config.depth_max));
  ctx.pairs_of_target.resize(frames.images.size());
  for (size_t k = 0; k < state.pairs.size(); ++k)
    ctx.pairs_of_target[state.pairs[k].target].push_back(static_cast<int>(k));
  ctx.warps.reserve(state.pairs.size());
  for (size_t k = 0; k < state.pairs.size(); ++k)
    ctx.warps.push_back(compute_warp_field(ctx.realized[state.pairs[k].target], state.poses[k],
                                           frames.intrinsics, with_jacobians));
  if (with_photo) {
    for (size_t k = 0; k < state.pairs.size(); ++k) {
      ctx.warped.push_back(resample_source(frames.images[state.pairs[k].source], ctx.warps[k]));
      ctx.stats.push_back(compute_ssim_stats(frames.images[state.pairs[k].target], ctx.warped.back().image));
    }
  }
  return ctx;
}

void accumulate_pixel(GradSink* sink, const EvalContext& ctx, int pair_idx, size_t pixel, double gu, double gv,
                      const Vec3& gA_extra) {
  if (!sink) return;
  const WarpPixel& wp = ctx.warps[pair_idx].px[pixel];
  const Vec3 gA = gu * wp.du_dA + gv * wp.dv_dA + gA_extra;
  if (sink->want_depth) {
    const int t = ctx.state->pairs[pair_idx].target;
    sink->depth_full[t][pixel] += gA.dot(wp.dA_dlogd);
  }
  if (sink->want_pose) sink->pose[pair_idx] += wp.dA_dxi.transpose() * gA;
}

// ---------------------------------------------------------------------------
// Term evaluators (value + gradient accumulation, scaled by `scale`)
// ---------------------------------------------------------------------------

double eval_photometric_target(const EvalContext& ctx, int t, GradSink* sink, double scale) {
  const FrozenTarget& ft = ctx.frozen->targets[t];
  const std::vector<int>& slots = ctx.pairs_of_target[t];
  if (slots.empty() || ft.count_ph == 0) return 0.0;
  const ImageGrid& target = ctx.frames->images[t];
  const double alpha = ctx.config->weights.alpha;
  const int channels = target.channels;
  const size_t npx = target.pixel_count();

  double sum = 0.0;
  const double g0 = scale / ft.count_ph;
  std::vector<std::vector<double>> grad_b(sink ? slots.size() : 0);
  if (sink)
    for (auto& g : grad_b) g.assign(npx * channels, 0.0);

  for (size_t px = 0; px < npx; ++px) {
    if (!ft.mu[px] || ft.argmin_ph[px] < 0) continue;
    const int slot = ft.argmin_ph[px];
    const int pair_idx = slots[slot];
    const int i = static_cast<int>(px) / target.width, j = static_cast<int>(px) % target.width;
    const WarpedImage& wi = ctx.warped[pair_idx];
    const SsimStats& st = ctx.stats[pair_idx];
    sum += photometric_at(st, target, wi.image, i, j, alpha);
    if (!sink) continue;
    for (int c = 0; c < channels; ++c) {
      const size_t at = px * channels + c;
      const double diff = target.data[at] - wi.image.data[at];
      const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      grad_b[slot][at] += -(1.0 - alpha) / channels * sgn * g0;
      ssim_backward(st, target, wi.image, i, j, c, -alpha / (2.0 * channels) * g0, grad_b[slot]);
    }
  }
  if (sink) {
    for (size_t slot = 0; slot < slots.size(); ++slot) {
      const int pair_idx = slots[slot];
      const WarpedImage& wi = ctx.warped[pair_idx];
      for (size_t px = 0; px < npx; ++px) {
        double gu = 0.0, gv = 0.0;
        bool nonzero = false;
        for (int c = 0; c < channels; ++c) {
          const double g = grad_b[slot][px * channels + c];
          if (g == 0.0) continue;
          nonzero = true;
          gu += g * wi.du[px * channels + c];
          gv += g * wi.dv[px * channels + c];
        }
        if (nonzero) accumulate_pixel(sink, ctx, pair_idx, px, gu, gv, Vec3::Zero());
      }
    }
  }
  return sum / ft.count_ph;
}

double eval_smoothness_target(const EvalContext& ctx, int t, GradSink* sink, double scale) {
  const DepthGrid& depth = ctx.realized[t].depth;
  const ImageGrid& image = ctx.frames->images[t];
  const int h = depth.height, w = depth.width;
  const size_t npx = depth.d.size();

  double mean_inv = 0.0;
  for (double v : depth.d) mean_inv += 1.0 / v;
  mean_inv /= static_cast<double>(npx);

  std::vector<double> dstar(npx);
  for (size_t k = 0; k < npx; ++k) dstar[k] = (1.0 / depth.d[k]) / mean_inv;

  auto image_grad = [&](int i, int j, int di, int dj) {
    double g = 0.0;
    for (int c = 0; c < image.channels; ++c) g += std::abs(image.at(i + di, j + dj, c) - image.at(i, j, c));
    return g / image.channels;
  };

  std::vector<double> gstar(sink ? npx : 0, 0.0);
  double value = 0.0;
  if (w > 1) {
    const double inv_count = 1.0 / (static_cast<double>(h) * (w - 1));
    for (int i = 0; i < h; ++i)
      for (int j = 0; j + 1 < w; ++j) {
        const size_t k0 = static_cast<size_t>(i) * w + j, k1 = k0 + 1;
        const double diff = dstar[k1] - dstar[k0];
        const double wgt = std::exp(-image_grad(i, j, 0, 1)) * inv_count;
        value += std::abs(diff) * wgt;
        if (sink) {
          const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
          gstar[k1] += sgn * wgt;
          gstar[k0] -= sgn * wgt;
        }
      }
  }
  if (h > 1) {
    const double inv_count = 1.0 / (static_cast<double>(h - 1) * w);
    for (int i = 0; i + 1 < h; ++i)
      for (int j = 0; j < w; ++j) {
        const size_t k0 = static_cast<size_t>(i) * w + j, k1 = k0 + w;
        const double diff = dstar[k1] - dstar[k0];
        const double wgt = std::exp(-image_grad(i, j, 1, 0)) * inv_count;
        value += std::abs(diff) * wgt;
        if (sink) {
          const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
          gstar[k1] += sgn * wgt;
          gstar[k0] -= sgn * wgt;
        }
      }
  }
  if (sink && sink->want_depth) {
    // d* = inv / mean(inv): the mean couples every pixel.
    double dot = 0.0;
    for (size_t k = 0; k < npx; ++k) dot += gstar[k] * dstar[k];
    for (size_t k = 0; k < npx; ++k) {
      const double dinv = gstar[k] / mean_inv - dot / (mean_inv * static_cast<double>(npx));
      const double dlog = dinv * (-1.0 / depth.d[k]) * (ctx.realized[t].dd_dlog[k] / depth.d[k]);
      sink->depth_full[t][k] += scale * dlog;
    }
  }
  return value;
}

struct CoordTransform {
  double f_a, f_b;    // transformed coordinates
  double df_a, df_b;  // derivatives of the transform at a and b
};

CoordTransform structural_transform(double a, double b, int coord, Log3dVariant variant) {
  switch (variant) {
    case Log3dVariant::kSignedLog1p:
      return {signed_log1p(a), signed_log1p(b), 1.0 / (1.0 + std::abs(a)), 1.0 / (1.0 + std::abs(b))};
    case Log3dVariant::kZOnly:
      if (coord == 2) return {std::log(a), std::log(b), 1.0 / a, 1.0 / b};
      return {a, b, 1.0, 1.0};
    case Log3dVariant::kPlain:
      return {a, b, 1.0, 1.0};
  }
  return {a, b, 1.0, 1.0};
}

double eval_structural_target(const EvalContext& ctx, int t, GradSink* sink, double scale) {
  const FrozenTarget& ft = ctx.frozen->targets[t];
  const std::vector<int>& slots = ctx.pairs_of_target[t];
  if (slots.empty() || ft.count_3d == 0) return 0.0;
  const Intrinsics& K = ctx.frames->intrinsics;
  const Log3dVariant variant = ctx.config->log_variant;
  const double g0 = scale / ft.count_3d;

  double sum = 0.0;
  for (size_t px = 0; px < ft.argmin_3d.size(); ++px) {
    const int slot = ft.argmin_3d[px];
    if (slot < 0) continue;
    const int pair_idx = slots[slot];
    const int s = ctx.state->pairs[pair_idx].source;
    const WarpPixel& wp = ctx.warps[pair_idx].px[px];
    const DepthSample ds = sample_depth_clamped(ctx.realized[s].depth, wp.u, wp.v);
    const Vec3 ray = K.ray(wp.u, wp.v);
    const Vec3 B = ray * ds.value;

    double r = 0.0;
    Vec3 dA = Vec3::Zero(), dB = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
      const CoordTransform tr = structural_transform(wp.A[c], B[c], c, variant);
      const double diff = tr.f_a - tr.f_b;
      const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      r += std::abs(diff);
      dA[c] = sgn * tr.df_a;
      dB[c] = -sgn * tr.df_b;
    }
    sum += r;
    if (!sink) continue;

    // B = ray(u,v)·d_s: chain through the sampled depth and the coordinates.
    const double g_ds = dB.dot(ray);
    const double gu = g0 * (dB.x() * ds.value / K.fx + g_ds * ds.du);
    const double gv = g0 * (dB.y() * ds.value / K.fy + g_ds * ds.dv);
    if (sink->want_depth) {
      for (int nb = 0; nb < 4; ++nb)
        sink->depth_full[s][ds.idx[nb]] += g0 * g_ds * ds.w[nb] * ctx.realized[s].dd_dlog[ds.idx[nb]];
    }
    accumulate_pixel(sink, ctx, pair_idx, px, gu, gv, g0 * dA);
  }
  return sum / ft.count_3d;
}

Mat3 intrinsics_inverse(const Intrinsics& K) {
  Mat3 kinv = Mat3::Identity();
  kinv(0, 0) = 1.0 / K.fx;
  kinv(1, 1) = 1.0 / K.fy;
  kinv(0, 2) = -K.cx / K.fx;
  kinv(1, 2) = -K.cy / K.fy;
  return kinv;
}

double eval_epipolar_target(const EvalContext& ctx, int t, GradSink* sink, double scale) {
  const FrozenTarget& ft = ctx.frozen->targets[t];
  const std::vector<int>& slots = ctx.pairs_of_target[t];
  if (slots.empty() || ft.count_ep == 0) return 0.0;
  const Intrinsics& K = ctx.frames->intrinsics;
  const Mat3 kinv = intrinsics_inverse(K);
  const Mat3 kinv_t = kinv.transpose();

  std::vector<Mat3> F(slots.size(), Mat3::Zero());
  std::vector<Mat3> grad_f(slots.size(), Mat3::Zero());
  std::vector<uint8_t> usable(slots.size(), 0);
  for (size_t slot = 0; slot < slots.size(); ++slot) {
    const int pair_idx = slots[slot];
    const FrozenPair& fp = ctx.frozen->pairs[pair_idx];
    if (fp.degenerate || fp.icp_failed || fp.icp_source_pixel.empty()) continue;
    const WarpField& wf = ctx.warps[pair_idx];
    F[slot] = kinv_t * skew(wf.t) * wf.R * kinv;
    if (F[slot].norm() < 1e-300) continue;
    usable[slot] = 1;
  }

  double sum = 0.0;
  for (size_t cell = 0; cell < ft.argmin_ep.size(); ++cell) {
    const int slot = ft.argmin_ep[cell];
    if (slot < 0 || !usable[slot]) continue;
    const int pair_idx = slots[slot];
    const FrozenPair& fp = ctx.frozen->pairs[pair_idx];
    const int ci = static_cast<int>(cell) / fp.cells_w, cj = static_cast<int>(cell) % fp.cells_w;
    const Vec3 b(static_cast<double>(cj * fp.stride), static_cast<double>(ci * fp.stride), 1.0);
    const Pixel& ps = fp.icp_source_pixel[cell];
    const Vec3 a(ps.u, ps.v, 1.0);
    const Vec3 line = F[slot] * b;
    const double m = std::hypot(line[0], line[1]);
    if (m < 1e-300) continue;
    const double n = a.dot(line);
    sum += std::abs(n) / m;
    if (sink && sink->want_pose) {
      const double sgn = n > 0 ? 1.0 : (n < 0 ? -1.0 : 0.0);
      grad_f[slot] += (sgn / m) * a * b.transpose() -
                      (std::abs(n) / (m * m * m)) * (line[0] * Vec3::UnitX() + line[1] * Vec3::UnitY()) *
                          b.transpose();
    }
  }
  if (sink && sink->want_pose) {
    const double g0 = scale / ft.count_ep;
    for (size_t slot = 0; slot < slots.size(); ++slot) {
      if (!usable[slot]) continue;
      const int pair_idx = slots[slot];
      const WarpField& wf = ctx.warps[pair_idx];
      Vec6 g;
      for (int k = 0; k < 3; ++k) {
        g[k] = g0 * grad_f[slot].cwiseProduct(kinv_t * skew(wf.t) * wf.dR[k] * kinv).sum();
        g[3 + k] = g0 * grad_f[slot].cwiseProduct(kinv_t * skew(Vec3::Unit(k)) * wf.R * kinv).sum();
      }
      sink->pose[pair_idx] += g;
    }
  }
  return sum / ft.count_ep;
}

double spectral_h_prime(double sigma, double lambda) {
  const double phi = 1.0 + lambda * sigma * sigma;
  return lambda * sigma / (phi * phi);
}

double eval_spectral_target(const EvalContext& ctx, int t, bool subspace, GradSink* sink, double scale) {
  const std::vector<int>& slots = ctx.pairs_of_target[t];
  if (slots.empty()) return 0.0;
  const Intrinsics& K = ctx.frames->intrinsics;
  const bool normalize = ctx.config->normalize_epipolar;
  const double lambda = kDefaultSubspaceLambda;

  // the term is the mean over the usable pairs, so count them first
  int used = 0;
  for (int pair_idx : slots) {
    const FrozenPair& fp = ctx.frozen->pairs[pair_idx];
    if (subspace && fp.degenerate) continue;
    if (!fp.esample.empty()) ++used;
  }
  if (used == 0) return 0.0;
  const double g0 = scale / used;

  double sum = 0.0;
  for (size_t slot = 0; slot < slots.size(); ++slot) {
    const int pair_idx = slots[slot];
    const FrozenPair& fp = ctx.frozen->pairs[pair_idx];
    if (subspace && fp.degenerate) continue;  // no usable epipolar geometry for this pair
    const int n = static_cast<int>(fp.esample.size());
    if (n == 0) continue;
    const WarpField& wf = ctx.warps[pair_idx];
    const int w = wf.w;

    Eigen::MatrixXd e(9, n);
    std::vector<Vec3> bs(n);
    for (int col = 0; col < n; ++col) {
      const int px = fp.esample[col];
      const WarpPixel& wp = wf.px[px];
      const double tu = px % w, tv = px / w;
      const Vec3 b = normalize ? K.ray(tu, tv) : Vec3(tu, tv, 1.0);
      const Vec3 a = normalize ? K.ray(wp.u, wp.v) : Vec3(wp.u, wp.v, 1.0);
      bs[col] = b;
      for (int bc = 0; bc < 3; ++bc)
        for (int ar = 0; ar < 3; ++ar) e(3 * bc + ar, col) = a[ar] * b[bc];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(e, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sigma = svd.singularValues();
    if (subspace)
      sum += subspace_loss_from_singular_values(sigma, lambda);
    else
      sum += sigma.sum();

    if (sink && (sink->want_depth || sink->want_pose)) {
      Eigen::VectorXd diag(sigma.size());
      for (Eigen::Index i = 0; i < sigma.size(); ++i)
        diag[i] = subspace ? spectral_h_prime(sigma[i], lambda) : 1.0;
      const Eigen::MatrixXd g = svd.matrixU() * diag.asDiagonal() * svd.matrixV().transpose();
      for (int col = 0; col < n; ++col) {
        // adjoint of the column w.r.t. the source-side homogeneous point a
        Vec3 ga = Vec3::Zero();
        for (int bc = 0; bc < 3; ++bc)
          for (int ar = 0; ar < 3; ++ar) ga[ar] += g(3 * bc + ar, col) * bs[col][bc];
        const double gu = g0 * (normalize ? ga.x() / K.fx : ga.x());
        const double gv = g0 * (normalize ? ga.y() / K.fy : ga.y());
        accumulate_pixel(sink, ctx, pair_idx, fp.esample[col], gu, gv, Vec3::Zero());
      }
    }
  }
  return sum / used;
}

}  // namespace

// ---------------------------------------------------------------------------
// Freezing
// ---------------------------------------------------------------------------

namespace {

struct PairFreezeView {
  ValidityMask valid;        // warp validity (in-bounds, in-front)
  ValidityMask eroded;       // valid eroded by the SSIM window radius
  ImageGrid ph_warp;         // photometric error map vs the warped source
  ImageGrid residual_3d;     // structural residual map
  ValidityMask valid_3d;
};

ValidityMask warp_validity(const WarpField& wf) {
  ValidityMask m(wf.h, wf.w);
  for (int i = 0; i < wf.h; ++i)
    for (int j = 0; j < wf.w; ++j) {
      const WarpPixel& p = wf.px[static_cast<size_t>(i) * wf.w + j];
      m.at(i, j) = p.valid && p.u >= 0.0 && p.v >= 0.0 && p.u <= wf.w - 1.0 && p.v <= wf.h - 1.0;
    }
  return m;
}

}  // namespace

Frozen freeze_selections(const FrameSet& frames, TrainState& state, const TrainConfig& config) {
  Frozen frozen;
  frozen.targets.resize(frames.images.size());
  frozen.pairs.resize(state.pairs.size());

  EvalContext ctx = build_context(frames, state, config, frozen, /*with_jacobians=*/false,
                                  /*with_photo=*/true);
  for (const RealizedDepth& r : ctx.realized) state.clamp_events += r.clamp_events;

  // per-pair views
  std::vector<PairFreezeView> views(state.pairs.size());
  for (size_t k = 0; k < state.pairs.size(); ++k) {
    const int t = state.pairs[k].target;
    const int s = state.pairs[k].source;
    PairFreezeView& view = views[k];
    view.valid = warp_validity(ctx.warps[k]);
    view.eroded = view.valid.eroded(kSsimRadius);
    const ImageGrid& target = frames.images[t];
    view.ph_warp = ImageGrid(target.height, target.width, 1);
    for (int i = 0; i < target.height; ++i)
      for (int j = 0; j < target.width; ++j)
        view.ph_warp.at(i, j) = photometric_at(ctx.stats[k], target, ctx.warped[k].image, i, j,
                                               config.weights.alpha);
    // structural residuals
    view.residual_3d = ImageGrid(target.height, target.width, 1);
    view.valid_3d = ValidityMask(target.height, target.width);
    const Intrinsics& K = frames.intrinsics;
    for (int i = 0; i < target.height; ++i)
      for (int j = 0; j < target.width; ++j) {
        const size_t px = static_cast<size_t>(i) * target.width + j;
        const WarpPixel& wp = ctx.warps[k].px[px];
        if (!view.valid.at(i, j)) continue;
        const DepthSample ds = sample_depth_clamped(ctx.realized[s].depth, wp.u, wp.v);
        if (!(ds.value > 0.0)) continue;
        const Vec3 B = K.ray(wp.u, wp.v) * ds.value;
        double r = 0.0;
        for (int c = 0; c < 3; ++c) {
          const CoordTransform tr = structural_transform(wp.A[c], B[c], c, config.log_variant);
          r += std::abs(tr.f_a - tr.f_b);
        }
        view.residual_3d.at(i, j) = r;
        view.valid_3d.at(i, j) = true;
      }

    // epipolar-matrix samples: valid warp pixels, uniformly without replacement
    FrozenPair& fp = frozen.pairs[k];
    std::vector<int> candidates;
    for (size_t px = 0; px < ctx.warps[k].px.size(); ++px)
      if (ctx.warps[k].px[px].valid) candidates.push_back(static_cast<int>(px));
    const int take = std::min<int>(config.sample_count, static_cast<int>(candidates.size()));
    for (int i = 0; i < take; ++i) {
      const int j = i + static_cast<int>(state.rng() % static_cast<uint64_t>(candidates.size() - i));
      std::swap(candidates[i], candidates[j]);
    }
    fp.esample.assign(candidates.begin(), candidates.begin() + take);
    (void)s;
  }

  // per-target selections
  for (size_t t = 0; t < frames.images.size(); ++t) {
    FrozenTarget& ft = frozen.targets[t];
    const std::vector<int>& slots = ctx.pairs_of_target[t];
    const ImageGrid& target = frames.images[t];
    const size_t npx = target.pixel_count();
    ft.mu.assign(npx, 0);
    ft.argmin_ph.assign(npx, -1);
    ft.argmin_3d.assign(npx, -1);
    if (slots.empty()) continue;

    // unwarped photometric error per source, for the auto-mask
    std::vector<ImageGrid> ph_ident;
    for (int pair_idx : slots)
      ph_ident.push_back(
          photometric_error(target, frames.images[state.pairs[pair_idx].source], config.weights.alpha));

    for (size_t px = 0; px < npx; ++px) {
      const int i = static_cast<int>(px) / target.width, j = static_cast<int>(px) % target.width;
      double best_ph = 0.0;
      int best_slot = -1;
      for (size_t slot = 0; slot < slots.size(); ++slot) {
        if (!views[slots[slot]].eroded.at(i, j)) continue;
        const double e = views[slots[slot]].ph_warp.at(i, j);
        if (best_slot < 0 || e < best_ph) {
          best_ph = e;
          best_slot = static_cast<int>(slot);
        }
      }
      ft.argmin_ph[px] = static_cast<int8_t>(best_slot);
      if (best_slot >= 0) {
        double best_ident = ph_ident[0].at(i, j);
        for (size_t slot = 1; slot < slots.size(); ++slot)
          best_ident = std::min(best_ident, ph_ident[slot].at(i, j));
        ft.mu[px] = best_ph < best_ident;
        if (ft.mu[px]) ++ft.count_ph;
      }
      double best_3d = 0.0;
      int best_slot_3d = -1;
      for (size_t slot = 0; slot < slots.size(); ++slot) {
        if (!views[slots[slot]].valid_3d.at(i, j)) continue;
        const double r = views[slots[slot]].residual_3d.at(i, j);
        if (best_slot_3d < 0 || r < best_3d) {
          best_3d = r;
          best_slot_3d = static_cast<int>(slot);
        }
      }
      ft.argmin_3d[px] = static_cast<int8_t>(best_slot_3d);
      if (best_slot_3d >= 0) ++ft.count_3d;
    }
  }

  refreeze_icp(frames, state, config, frozen);
  return frozen;
}

void refreeze_icp(const FrameSet& frames, TrainState& state, const TrainConfig& config, Frozen& frozen) {
  // Re-register the clouds at the current parameters, then recompute the
  // per-cell source-slot argmin of the epipolar residuals under the current
  // fundamental matrices.
  std::vector<RealizedDepth> realized;
  for (const DepthParams& d : state.depths) realized.push_back(realize_depth(d, config.depth_min, config.depth_max));

  for (size_t k = 0; k < state.pairs.size(); ++k) {
    const int t = state.pairs[k].target;
    const int s = state.pairs[k].source;
    FrozenPair& fp = frozen.pairs[k];
    fp.icp_failed = false;
    const Vec3 translation = state.poses[k].tail<3>();
    const bool was_degenerate = fp.degenerate;
    fp.degenerate = translation.norm() < config.min_translation;
    if (fp.degenerate && !was_degenerate) ++state.degenerate_pairs;
    try {
      const CloudFromDepth ct = cloud_from_depth(realized[t].depth, frames.intrinsics, config.icp_max_points);
      const CloudFromDepth cs = cloud_from_depth(realized[s].depth, frames.intrinsics, config.icp_max_points);
      fp.stride = ct.stride;
      fp.cells_h = (realized[t].depth.height + ct.stride - 1) / ct.stride;
      fp.cells_w = (realized[t].depth.width + ct.stride - 1) / ct.stride;
      const RotationJacobian rj = rotation_with_jacobian(state.poses[k][0], state.poses[k][1], state.poses[k][2]);
      Pose init;
      init.R = rj.R;
      init.t = translation;
      IcpOptions opts;
      opts.max_iters = config.icp_max_iters;
      opts.tol = config.icp_tol;
      opts.trim_fraction = config.icp_trim;
      const IcpResult icp = icp_register(ct.cloud, cs.cloud, init, opts);
      fp.icp_source_pixel.resize(ct.cloud.size());
      for (size_t c = 0; c < ct.cloud.size(); ++c) {
        const int si = icp.correspondences.source_index[c];
        fp.icp_source_pixel[c] = si >= 0 ? cs.cloud.provenance[si] : Pixel{-1, -1};
      }
    } catch (const DegenerateGeometryError&) {
      fp.icp_failed = true;
      fp.icp_source_pixel.clear();
    }
  }

  const Intrinsics& K = frames.intrinsics;
  const Mat3 kinv = intrinsics_inverse(K);
  const Mat3 kinv_t = kinv.transpose();

  std::vector<std::vector<int>> pairs_of_target(frames.images.size());
  for (size_t k = 0; k < state.pairs.size(); ++k)
    pairs_of_target[state.pairs[k].target].push_back(static_cast<int>(k));

  for (size_t t = 0; t < frames.images.size(); ++t) {
    FrozenTarget& ft = frozen.targets[t];
    const std::vector<int>& slots = pairs_of_target[t];
    ft.argmin_ep.clear();
    ft.count_ep = 0;
    if (slots.empty()) continue;
    size_t cells = 0;
    for (int pair_idx : slots) cells = std::max(cells, frozen.pairs[pair_idx].icp_source_pixel.size());
    ft.argmin_ep.assign(cells, -1);
    if (cells == 0) continue;

    std::vector<Mat3> F(slots.size(), Mat3::Zero());
    std::vector<uint8_t> usable(slots.size(), 0);
    for (size_t slot = 0; slot < slots.size(); ++slot) {
      const int pair_idx = slots[slot];
      const FrozenPair& fp = frozen.pairs[pair_idx];
      if (fp.degenerate || fp.icp_failed || fp.icp_source_pixel.empty()) continue;
      const RotationJacobian rj =
          rotation_with_jacobian(state.poses[pair_idx][0], state.poses[pair_idx][1], state.poses[pair_idx][2]);
      F[slot] = kinv_t * skew(state.poses[pair_idx].tail<3>()) * rj.R * kinv;
      if (F[slot].norm() < 1e-300) continue;
      F[slot] /= F[slot].norm();
      usable[slot] = 1;
    }
    for (size_t cell = 0; cell < cells; ++cell) {
      double best = 0.0;
      int best_slot = -1;
      for (size_t slot = 0; slot < slots.size(); ++slot) {
        if (!usable[slot]) continue;
        const FrozenPair& fp = frozen.pairs[slots[slot]];
        if (cell >= fp.icp_source_pixel.size()) continue;
        const Pixel& ps = fp.icp_source_pixel[cell];
        if (ps.u < 0) continue;
        const int ci = static_cast<int>(cell) / fp.cells_w, cj = static_cast<int>(cell) % fp.cells_w;
        const Vec3 b(static_cast<double>(cj * fp.stride), static_cast<double>(ci * fp.stride), 1.0);
        const Vec3 line = F[slot] * b;
        const double m = std::hypot(line[0], line[1]);
        if (m < 1e-12) continue;  // epipole coincidence
        const double d = std::abs(Vec3(ps.u, ps.v, 1.0).dot(line)) / m;
        if (best_slot < 0 || d < best) {
          best = d;
          best_slot = static_cast<int>(slot);
        }
      }
      ft.argmin_ep[cell] = static_cast<int8_t>(best_slot);
      if (best_slot >= 0) ++ft.count_ep;
    }
  }
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

namespace {

struct TermSpec {
  Term term;
  double weight;
};

std::vector<TermSpec> objective_terms(ObjectiveKind kind, const LossWeights& w) {
  switch (kind) {
    case ObjectiveKind::kPose:
      return {{Term::kPhotometric, 1.0},
              {Term::kSmoothness, w.lambda_s},
              {Term::kEpipolar, w.lambda_e},
              {Term::kSubspace, w.lambda_su}};
    case ObjectiveKind::kDepth:
      return {{Term::kPhotometric, 1.0},
              {Term::kSmoothness, w.lambda_s},
              {Term::kStructural3d, w.lambda_3d},
              {Term::kLowRank, w.lambda_l}};
    case ObjectiveKind::kJoint:
      return {{Term::kPhotometric, 1.0},   {Term::kSmoothness, w.lambda_s},
              {Term::kStructural3d, w.lambda_3d}, {Term::kEpipolar, w.lambda_e},
              {Term::kLowRank, w.lambda_l},      {Term::kSubspace, w.lambda_su}};
  }
  return {};
}

double eval_term_target(Term term, const EvalContext& ctx, int t, GradSink* sink, double scale) {
  switch (term) {
    case Term::kPhotometric: return eval_photometric_target(ctx, t, sink, scale);
    case Term::kSmoothness: return eval_smoothness_target(ctx, t, sink, scale);
    case Term::kStructural3d: return eval_structural_target(ctx, t, sink, scale);
    case Term::kEpipolar: return eval_epipolar_target(ctx, t, sink, scale);
    case Term::kLowRank: return eval_spectral_target(ctx, t, false, sink, scale);
    case Term::kSubspace: return eval_spectral_target(ctx, t, true, sink, scale);
  }
  return 0.0;
}

bool term_needs_photo(Term term) { return term == Term::kPhotometric; }

GradSink make_sink(const TrainState& state, bool want_depth, bool want_pose) {
  GradSink sink;
  sink.want_depth = want_depth;
  sink.want_pose = want_pose;
  for (const DepthParams& d : state.depths)
    sink.depth_full.emplace_back(static_cast<size_t>(d.height) * d.width, 0.0);
  sink.pose.assign(state.poses.size(), Vec6::Zero());
  return sink;
}

void sink_to_gradients(const GradSink& sink, const TrainState& state, Gradients& grads) {
  grads.depth.resize(state.depths.size());
  for (size_t f = 0; f < state.depths.size(); ++f)
    state.depths[f].contract_gradient(sink.depth_full[f], grads.depth[f]);
  grads.pose = sink.pose;
}

}  // namespace

EvalResult evaluate_objective(ObjectiveKind kind, const FrameSet& frames, const TrainState& state,
                              const Frozen& frozen, const TrainConfig& config, Gradients* grads) {
  const bool want_depth = grads && kind != ObjectiveKind::kPose;
  const bool want_pose = grads && kind != ObjectiveKind::kDepth;
  EvalContext ctx = build_context(frames, state, config, frozen, grads != nullptr, true);
  const std::vector<TermSpec> specs = objective_terms(kind, config.weights);
  const int nt = ctx.n_targets();
  GradSink sink = make_sink(state, want_depth, want_pose);

  EvalResult res;
  for (const TermSpec& spec : specs) res.term_values[spec.term] = 0.0;
  for (size_t t = 0; t < frames.images.size(); ++t) {
    if (ctx.pairs_of_target[t].empty()) continue;
    for (const TermSpec& spec : specs) {
      const double scale = spec.weight / nt;
      const double value = eval_term_target(spec.term, ctx, static_cast<int>(t),
                                            grads ? &sink : nullptr, scale);
      res.term_values[spec.term] += value / nt;
      res.total += spec.weight * value / nt;
    }
  }
  if (grads) sink_to_gradients(sink, state, *grads);
  for (const auto& [term, value] : res.term_values)
    if (!std::isfinite(value)) throw NumericalError(term_name(term), "non-finite loss value");
  return res;
}

double evaluate_term(Term term, const FrameSet& frames, const TrainState& state, const Frozen& frozen,
                     const TrainConfig& config, Gradients* grads) {
  EvalContext ctx = build_context(frames, state, config, frozen, grads != nullptr, term_needs_photo(term));
  const int nt = ctx.n_targets();
  GradSink sink = make_sink(state, grads != nullptr, grads != nullptr);
  double value = 0.0;
  for (size_t t = 0; t < frames.images.size(); ++t) {
    if (ctx.pairs_of_target[t].empty()) continue;
    value +=
        eval_term_target(term, ctx, static_cast<int>(t), grads ? &sink : nullptr, 1.0 / nt) / nt;
  }
  if (!std::isfinite(value)) throw NumericalError(term_name(term), "non-finite loss value");
  if (grads) sink_to_gradients(sink, state, *grads);
  return value;
}

EvalResult pose_objective(const FrameSet& frames, const TrainState& state, const Frozen& frozen,
                          const TrainConfig& config, Gradients* grads) {
  return evaluate_objective(ObjectiveKind::kPose, frames, state, frozen, config, grads);
}

EvalResult depth_objective(const FrameSet& frames, const TrainState& state, const Frozen& frozen,
                           const TrainConfig& config, Gradients* grads) {
  return evaluate_objective(ObjectiveKind::kDepth, frames, state, frozen, config, grads);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd gather_depth_params(const TrainState& state) {
  Eigen::Index total = 0;
  for (const DepthParams& d : state.depths) total += d.param_count();
  Eigen::VectorXd v(total);
  Eigen::Index at = 0;
  for (const DepthParams& d : state.depths) {
    v.segment(at, d.param_count()) = d.log_depth;
    at += d.param_count();
  }
  return v;
}

void scatter_depth_params(TrainState& state, const Eigen::VectorXd& v) {
  Eigen::Index at = 0;
  for (DepthParams& d : state.depths) {
    d.log_depth = v.segment(at, d.param_count());
    at += d.param_count();
  }
}

Eigen::VectorXd gather_depth_grads(const Gradients& grads) {
  Eigen::Index total = 0;
  for (const Eigen::VectorXd& g : grads.depth) total += g.size();
  Eigen::VectorXd v(total);
  Eigen::Index at = 0;
  for (const Eigen::VectorXd& g : grads.depth) {
    v.segment(at, g.size()) = g;
    at += g.size();
  }
  return v;
}

Eigen::VectorXd gather_pose_params(const TrainState& state) {
  Eigen::VectorXd v(6 * static_cast<Eigen::Index>(state.poses.size()));
  for (size_t k = 0; k < state.poses.size(); ++k) v.segment<6>(6 * static_cast<Eigen::Index>(k)) = state.poses[k];
  return v;
}

void scatter_pose_params(TrainState& state, const Eigen::VectorXd& v) {
  for (size_t k = 0; k < state.poses.size(); ++k) state.poses[k] = v.segment<6>(6 * static_cast<Eigen::Index>(k));
}

Eigen::VectorXd gather_pose_grads(const Gradients& grads) {
  Eigen::VectorXd v(6 * static_cast<Eigen::Index>(grads.pose.size()));
  for (size_t k = 0; k < grads.pose.size(); ++k) v.segment<6>(6 * static_cast<Eigen::Index>(k)) = grads.pose[k];
  return v;
}

double weighted_total(const LossWeights& w, const TrainLogRow& row) {
  return row.l_ph + w.lambda_s * row.l_s + w.lambda_3d * row.l_3d + w.lambda_e * row.l_ep +
         w.lambda_l * row.l_lr + w.lambda_su * row.l_sub;
}

}  // namespace

TrainResult alternate_train(const FrameSet& frames, const TrainConfig& config) {
  TrainResult result;
  result.state = init_train_state(frames, config);
  TrainState& state = result.state;

  for (long outer = 0; outer < config.outer_steps; ++outer) {
    const double lr = scheduled_lr(config, outer);
    Frozen frozen = freeze_selections(frames, state, config);
    TrainLogRow row;
    row.step = outer;

    if (config.mode == TrainMode::kAlternating) {
      Gradients gd = Gradients::zeros(state);
      const EvalResult ev_d = evaluate_objective(ObjectiveKind::kDepth, frames, state, frozen, config, &gd);
      Eigen::VectorXd dp = gather_depth_params(state);
      adam_step(state.adam_depth, dp, gather_depth_grads(gd), lr);
      scatter_depth_params(state, dp);

      refreeze_icp(frames, state, config, frozen);

      Gradients gp = Gradients::zeros(state);
      const EvalResult ev_p = evaluate_objective(ObjectiveKind::kPose, frames, state, frozen, config, &gp);
      Eigen::VectorXd pp = gather_pose_params(state);
      adam_step(state.adam_pose, pp, gather_pose_grads(gp), lr);
      scatter_pose_params(state, pp);

      row.l_ph = ev_p.term_values.at(Term::kPhotometric);
      row.l_s = ev_p.term_values.at(Term::kSmoothness);
      row.l_3d = ev_d.term_values.at(Term::kStructural3d);
      row.l_lr = ev_d.term_values.at(Term::kLowRank);
      row.l_ep = ev_p.term_values.at(Term::kEpipolar);
      row.l_sub = ev_p.term_values.at(Term::kSubspace);
      row.depth_obj = ev_d.total;
      row.pose_obj = ev_p.total;
    } else {
      Gradients g = Gradients::zeros(state);
      const EvalResult ev = evaluate_objective(ObjectiveKind::kJoint, frames, state, frozen, config, &g);
      Eigen::VectorXd dp = gather_depth_params(state);
      adam_step(state.adam_depth, dp, gather_depth_grads(g), lr);
      scatter_depth_params(state, dp);
      Eigen::VectorXd pp = gather_pose_params(state);
      adam_step(state.adam_pose, pp, gather_pose_grads(g), lr);
      scatter_pose_params(state, pp);

      row.l_ph = ev.term_values.at(Term::kPhotometric);
      row.l_s = ev.term_values.at(Term::kSmoothness);
      row.l_3d = ev.term_values.at(Term::kStructural3d);
      row.l_lr = ev.term_values.at(Term::kLowRank);
      row.l_ep = ev.term_values.at(Term::kEpipolar);
      row.l_sub = ev.term_values.at(Term::kSubspace);
      const LossWeights& w = config.weights;
      row.depth_obj = row.l_ph + w.lambda_s * row.l_s + w.lambda_3d * row.l_3d + w.lambda_l * row.l_lr;
      row.pose_obj = row.l_ph + w.lambda_s * row.l_s + w.lambda_e * row.l_ep + w.lambda_su * row.l_sub;
    }
    row.total = weighted_total(config.weights, row);
    if (!std::isfinite(row.total)) throw NumericalError("total", "non-finite training loss");
    result.log.push_back(row);
    state.outer_step = outer + 1;
  }
  if (state.clamp_events > 0)
    std::cerr << "warning: depth clamping activated " << state.clamp_events << " times during training\n";
  return result;
}

void write_loss_csv(const std::string& path, const std::vector<TrainLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,L_ph,L_s,L_3d,L_ep,L_lr,L_sub,depth_objective,pose_objective,total\n";
  char buf[512];
  for (const TrainLogRow& r : log) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                  r.l_ph, r.l_s, r.l_3d, r.l_ep, r.l_lr, r.l_sub, r.depth_obj, r.pose_obj, r.total);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

std::vector<GradCheckReport> gradient_check(const FrameSet& frames, TrainState& state,
                                            const TrainConfig& config, int coords_per_term, double tol,
                                            const Term* corrupt) {
  const Frozen frozen = freeze_selections(frames, state, config);
  std::mt19937_64 coord_rng(state.rng());

  struct Coord {
    bool is_pose;
    int index;       // pair index or frame index
    int offset;      // component within the pair/frame parameter block
  };
  std::vector<Coord> coords;
  for (size_t k = 0; k < state.poses.size(); ++k)
    for (int c = 0; c < 6; ++c) coords.push_back({true, static_cast<int>(k), c});
  const int depth_coords = std::max(0, coords_per_term - static_cast<int>(coords.size()));
  for (int k = 0; k < depth_coords; ++k) {
    const int f = static_cast<int>(coord_rng() % state.depths.size());
    const int off = static_cast<int>(coord_rng() % static_cast<uint64_t>(state.depths[f].param_count()));
    coords.push_back({false, f, off});
  }

  std::vector<GradCheckReport> reports;
  for (Term term : kAllTerms) {
    Gradients grads = Gradients::zeros(state);
    evaluate_term(term, frames, state, frozen, config, &grads);
    const bool corrupted = corrupt && *corrupt == term;

    GradCheckReport rep;
    rep.term = term;
    for (const Coord& c : coords) {
      double analytic = c.is_pose ? grads.pose[c.index][c.offset] : grads.depth[c.index][c.offset];
      if (corrupted) analytic += 1e-2 * (1.0 + std::abs(analytic));
      const double h = c.is_pose ? 1e-6 : 1e-5;

      TrainState probe = state;
      auto set_param = [&](double delta) {
        if (c.is_pose)
          probe.poses[c.index][c.offset] = state.poses[c.index][c.offset] + delta;
        else
          probe.depths[c.index].log_depth[c.offset] = state.depths[c.index].log_depth[c.offset] + delta;
      };
      set_param(h);
      const double f_plus = evaluate_term(term, frames, probe, frozen, config, nullptr);
      set_param(-h);
      const double f_minus = evaluate_term(term, frames, probe, frozen, config, nullptr);
      const double fd = (f_plus - f_minus) / (2.0 * h);

      const double err = std::abs(analytic - fd);
      const double denom = std::max(std::abs(analytic), std::abs(fd));
      ++rep.coords_checked;
      if (denom > 1e-9) rep.max_rel_err = std::max(rep.max_rel_err, err / denom);
      if (err > tol * denom + 1e-9) rep.pass = false;
    }
    reports.push_back(rep);
  }
  return reports;
}

}  // namespace altsfm
