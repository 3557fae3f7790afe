#pragma once

#include <Eigen/Core>
#include <random>
#include <vector>

#include "altsfm/geometry.hpp"
#include "altsfm/icp.hpp"

namespace altsfm {

inline constexpr int kDefaultEpipolarSamples = 2000;
inline constexpr double kDefaultSubspaceLambda = 0.05;

/// 9×N matrix of vectorized correspondence outer products. Column t is
/// vec([p_s,1]^T [p_t,1]) (column-direction), so the 9th entry is always 1.
/// When built in normalized mode the homogeneous pixels are premultiplied by
/// K^-1 to keep the singular spectrum well conditioned.
struct EpipolarMatrix {
  Eigen::Matrix<double, 9, Eigen::Dynamic> columns;
  std::vector<int> sample_index;  // index into the input pair list, per column
  bool normalized = false;

  int count() const { return static_cast<int>(columns.cols()); }
};

/// Point-to-epipolar-line distances in pixels:
/// |[p_s,1]·F·[p_t,1]^T| / ‖(l1,l2)‖ with l = F·[p_t,1]^T. Pairs whose line
/// has ‖(l1,l2)‖ < 1e-12 (epipole coincidence) are excluded. The value is
/// invariant to rescaling of F; F is normalized to unit Frobenius internally.
struct EpipolarResiduals {
  std::vector<double> distance;  // per pair, pixels; 0 where excluded
  std::vector<uint8_t> valid;
  double mean = 0.0;  // masked mean
};
EpipolarResiduals epipolar_residuals(const std::vector<PixelPair>& pairs, const Mat3& F);

/// Masked mean of the point-to-line distances. Throws on empty pair list.
double epipolar_loss(const std::vector<PixelPair>& pairs, const Mat3& F);

/// Uniformly samples min(sample_count, available) pairs without replacement
/// using the given generator and builds the 9×N matrix. Pass `normalize_by`
/// to premultiply homogeneous pixels by K^-1 (the default operating mode).
EpipolarMatrix build_epipolar_matrix(const std::vector<PixelPair>& pairs, int sample_count,
                                     std::mt19937_64& rng, const Intrinsics* normalize_by = nullptr);

/// Thin SVD of the 9×N matrix; sigma has min(9, N) entries, descending.
struct EpipolarSvd {
  Eigen::VectorXd sigma;
  Eigen::MatrixXd u;  // 9×r
  Eigen::MatrixXd v;  // N×r
};
EpipolarSvd epipolar_svd(const EpipolarMatrix& matrix);

/// Nuclear norm Σ σ_i.
double low_rank_loss(const EpipolarMatrix& matrix);

/// Self-expression objective ½‖C‖_F² + (λ/2)‖EC − E‖_F² with the closed-form
/// coefficient C = (I + λE^T E)^{-1} λE^T E, evaluated through the thin SVD:
/// ½ Σ (λσ²/(1+λσ²))² + (λ/2) Σ σ²/(1+λσ²)².
double subspace_loss(const EpipolarMatrix& matrix, double lambda = kDefaultSubspaceLambda);
double subspace_loss_from_singular_values(const Eigen::VectorXd& sigma, double lambda);

}  // namespace altsfm
