#include "altsfm/epipolar.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace altsfm {

EpipolarResiduals epipolar_residuals(const std::vector<PixelPair>& pairs, const Mat3& F) {
  if (pairs.empty()) throw std::invalid_argument("epipolar_residuals: empty pair list");
  const Mat3 Fn = F / F.norm();
  EpipolarResiduals out;
  out.distance.resize(pairs.size(), 0.0);
  out.valid.resize(pairs.size(), 0);
  double sum = 0.0;
  size_t n = 0;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const Vec3 bt(pairs[k].target.u, pairs[k].target.v, 1.0);
    const Vec3 as(pairs[k].source.u, pairs[k].source.v, 1.0);
    const Vec3 line = Fn * bt;
    const double norm12 = std::hypot(line[0], line[1]);
    if (norm12 < 1e-12) continue;  // epipole coincidence: pair excluded
    const double d = std::abs(as.dot(line)) / norm12;
    out.distance[k] = d;
    out.valid[k] = 1;
    sum += d;
    ++n;
  }
  out.mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return out;
}

double epipolar_loss(const std::vector<PixelPair>& pairs, const Mat3& F) {
  return epipolar_residuals(pairs, F).mean;
}

EpipolarMatrix build_epipolar_matrix(const std::vector<PixelPair>& pairs, int sample_count,
                                     std::mt19937_64& rng, const Intrinsics* normalize_by) {
  if (pairs.empty()) throw std::invalid_argument("build_epipolar_matrix: empty pair list");
  const int n = static_cast<int>(pairs.size());
  const int take = std::min(sample_count, n);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  // partial Fisher-Yates: the first `take` entries are a uniform sample
  for (int i = 0; i < take; ++i) {
    const int j = i + static_cast<int>(rng() % static_cast<uint64_t>(n - i));
    std::swap(order[i], order[j]);
  }

  EpipolarMatrix matrix;
  matrix.normalized = normalize_by != nullptr;
  matrix.columns.resize(9, take);
  matrix.sample_index.assign(order.begin(), order.begin() + take);
  for (int c = 0; c < take; ++c) {
    const PixelPair& pr = pairs[matrix.sample_index[c]];
    const Vec3 b = normalize_by ? normalize_by->ray(pr.target.u, pr.target.v)
                                : Vec3(pr.target.u, pr.target.v, 1.0);
    const Vec3 a = normalize_by ? normalize_by->ray(pr.source.u, pr.source.v)
                                : Vec3(pr.source.u, pr.source.v, 1.0);
    // vec(a b^T) along columns: entry 3*col + row
    for (int col = 0; col < 3; ++col)
      for (int row = 0; row < 3; ++row) matrix.columns(3 * col + row, c) = a[row] * b[col];
  }
  return matrix;
}

EpipolarSvd epipolar_svd(const EpipolarMatrix& matrix) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix.columns, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {svd.singularValues(), svd.matrixU(), svd.matrixV()};
}

double low_rank_loss(const EpipolarMatrix& matrix) {
  if (matrix.count() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix.columns);
  return svd.singularValues().sum();
}

double subspace_loss_from_singular_values(const Eigen::VectorXd& sigma, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("subspace_loss: lambda must be positive");
  double cost_c = 0.0, cost_fit = 0.0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    const double s2 = sigma[i] * sigma[i];
    const double phi = 1.0 + lambda * s2;
    const double w = lambda * s2 / phi;
    cost_c += w * w;
    cost_fit += s2 / (phi * phi);
  }
  return 0.5 * cost_c + 0.5 * lambda * cost_fit;
}

double subspace_loss(const EpipolarMatrix& matrix, double lambda) {
  if (matrix.count() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix.columns);
  return subspace_loss_from_singular_values(svd.singularValues(), lambda);
}

}  // namespace altsfm
