#pragma once

#include <vector>

#include "altsfm/image.hpp"

namespace altsfm {

/// A reduced loss together with the per-pixel map and the mask that was used
/// for the reduction.
struct LossValue {
  double value = 0.0;
  ImageGrid per_pixel;  // single channel
  ValidityMask mask;
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr int kSsimRadius = 1;  // 3×3 uniform window
inline constexpr double kDefaultAlpha = 0.85;

/// Windowed SSIM with a 3×3 uniform window clipped at image borders,
/// channels averaged. Values in [-1, 1]; ssim_map(A, A) == 1 everywhere.
/// Throws std::invalid_argument on dimension mismatch.
ImageGrid ssim_map(const ImageGrid& a, const ImageGrid& b);

/// α(1−SSIM)/2 + (1−α)|A−B|₁ per pixel, channels averaged.
ImageGrid photometric_error(const ImageGrid& a, const ImageGrid& b, double alpha = kDefaultAlpha);

struct MinPhotometricResult {
  LossValue loss;               // per-pixel minimum error, masked mean over valid pixels
  std::vector<int8_t> argmin;   // chosen source per pixel; -1 where no source is valid
};

/// Per-pixel minimum of photometric_error(target, warp) over the source views.
/// A pixel participates only in sources where its mask is true; pixels invalid
/// in all sources are excluded from the mean. Throws on zero sources.
MinPhotometricResult min_photometric_loss(const ImageGrid& target, const std::vector<ImageGrid>& warped,
                                          const std::vector<ValidityMask>& masks, double alpha = kDefaultAlpha);

/// Auto-mask μ: true where the best warped source explains the target strictly
/// better than the best unwarped source. Pixels with no valid warp are false.
ValidityMask auto_mask(const ImageGrid& target, const std::vector<ImageGrid>& sources,
                       const std::vector<ImageGrid>& warped, const std::vector<ValidityMask>& warp_masks,
                       double alpha = kDefaultAlpha);

/// Edge-aware smoothness of the mean-normalized inverse depth:
/// mean |∂x d*| e^{-|∂x I|} + mean |∂y d*| e^{-|∂y I|}, forward differences,
/// each axis averaged over its own difference count. Invariant to positive
/// rescaling of the depth. Throws std::domain_error on non-positive depth.
double smoothness_loss(const DepthGrid& depth, const ImageGrid& image);

}  // namespace altsfm
