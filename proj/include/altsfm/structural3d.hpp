#pragma once

#include <vector>

#include "altsfm/geometry.hpp"
#include "altsfm/photometric.hpp"

namespace altsfm {

/// Reading of the per-coordinate residual between the pose-transformed target
/// structure A and the source-sampled structure B.
enum class Log3dVariant {
  kSignedLog1p,  // Σ_c |slog(A_c) − slog(B_c)|, slog(x) = sign(x)·ln(1+|x|)
  kZOnly,        // |ΔX| + |ΔY| + |ln A_z − ln B_z|
  kPlain,        // Σ_c |A_c − B_c| (no log)
};

/// sign(x)·ln(1+|x|): odd, defined on all reals, ≈ ln at large magnitudes.
double signed_log1p(double x);

/// Per-pixel structural residual between the target structure transformed by T
/// and the structure back-projected from the bilinearly sampled source depth.
/// Pixels that reproject behind the camera, sample out of bounds, or sample a
/// non-positive depth are marked invalid. Reduced by a masked mean.
LossValue log3d_map(const DepthGrid& target_depth, const DepthGrid& source_depth, const Pose& T,
                    const Intrinsics& K, Log3dVariant variant = Log3dVariant::kSignedLog1p);

/// Multi-source form: per-pixel minimum of the per-source residuals, masked
/// mean over pixels valid in at least one source.
LossValue log3d_loss(const DepthGrid& target_depth, const std::vector<DepthGrid>& source_depths,
                     const std::vector<Pose>& poses, const Intrinsics& K,
                     Log3dVariant variant = Log3dVariant::kSignedLog1p);

}  // namespace altsfm
