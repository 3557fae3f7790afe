#pragma once

#include <vector>

#include "altsfm/geometry.hpp"
#include "altsfm/image.hpp"

namespace altsfm {

/// Per-pixel continuous sampling coordinates, one Pixel per target pixel.
struct PixelField {
  int height = 0;
  int width = 0;
  std::vector<Pixel> coords;

  PixelField() = default;
  PixelField(int h, int w) : height(h), width(w), coords(static_cast<size_t>(h) * w) {}
  Pixel& at(int i, int j) { return coords[static_cast<size_t>(i) * width + j]; }
  const Pixel& at(int i, int j) const { return coords[static_cast<size_t>(i) * width + j]; }

  /// coords(i,j) = (j, i): sampling with it reproduces the grid exactly.
  static PixelField identity(int h, int w);
};

/// One bilinear lookup. Out-of-bounds or non-finite coordinates give value 0
/// and valid=false; coordinates exactly on the grid reproduce grid values.
struct SampleResult {
  double value[3] = {0, 0, 0};
  bool valid = false;
};
SampleResult sample_bilinear(const ImageGrid& grid, double u, double v);

/// Bilinear spatial gradient d(value)/d(u,v) of the interpolant at (u,v),
/// per channel. Zero outside the valid domain.
struct SampleGradient {
  double du[3] = {0, 0, 0};
  double dv[3] = {0, 0, 0};
};
SampleGradient sample_bilinear_gradient(const ImageGrid& grid, double u, double v);

/// Dense 4-neighbor bilinear resampling of a grid at the given coordinates.
std::pair<ImageGrid, ValidityMask> bilinear_sample(const ImageGrid& grid, const PixelField& coords);

struct WarpResult {
  ImageGrid image;        // the reconstructed target view
  ValidityMask mask;      // in-bounds ∧ in-front-of-camera
  PixelField coords;      // the reprojected coordinates used for sampling
  std::vector<double> source_depth;  // Z of each transformed point
};

/// Inverse warp: for each target pixel, reproject through (D, T, K) and sample
/// the source image. The mask combines bounds validity and behind-camera flags.
WarpResult warp_source_to_target(const ImageGrid& source, const DepthGrid& depth, const Pose& T,
                                 const Intrinsics& K);

}  // namespace altsfm
