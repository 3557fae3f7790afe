#include "altsfm/sampler.hpp"

#include <cmath>

namespace altsfm {

PixelField PixelField::identity(int h, int w) {
  PixelField f(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) f.at(i, j) = {static_cast<double>(j), static_cast<double>(i)};
  return f;
}

namespace {

struct Corner {
  int j0, i0, j1, i1;
  double fu, fv;
  bool valid;
};

Corner locate(const ImageGrid& grid, double u, double v) {
  Corner c{};
  if (!std::isfinite(u) || !std::isfinite(v) || u < 0.0 || v < 0.0 || u > grid.width - 1.0 ||
      v > grid.height - 1.0) {
    c.valid = false;
    return c;
  }
  c.j0 = static_cast<int>(std::floor(u));
  c.i0 = static_cast<int>(std::floor(v));
  c.fu = u - c.j0;
  c.fv = v - c.i0;
  c.j1 = std::min(c.j0 + 1, grid.width - 1);
  c.i1 = std::min(c.i0 + 1, grid.height - 1);
  c.valid = true;
  return c;
}

}  // namespace

SampleResult sample_bilinear(const ImageGrid& grid, double u, double v) {
  SampleResult r;
  const Corner c = locate(grid, u, v);
  if (!c.valid) return r;
  const double w00 = (1.0 - c.fu) * (1.0 - c.fv);
  const double w01 = c.fu * (1.0 - c.fv);
  const double w10 = (1.0 - c.fu) * c.fv;
  const double w11 = c.fu * c.fv;
  for (int ch = 0; ch < grid.channels; ++ch)
    r.value[ch] = w00 * grid.at(c.i0, c.j0, ch) + w01 * grid.at(c.i0, c.j1, ch) + w10 * grid.at(c.i1, c.j0, ch) +
                  w11 * grid.at(c.i1, c.j1, ch);
  r.valid = true;
  return r;
}

SampleGradient sample_bilinear_gradient(const ImageGrid& grid, double u, double v) {
  SampleGradient g;
  const Corner c = locate(grid, u, v);
  if (!c.valid) return g;
  for (int ch = 0; ch < grid.channels; ++ch) {
    const double g00 = grid.at(c.i0, c.j0, ch), g01 = grid.at(c.i0, c.j1, ch);
    const double g10 = grid.at(c.i1, c.j0, ch), g11 = grid.at(c.i1, c.j1, ch);
    g.du[ch] = (1.0 - c.fv) * (g01 - g00) + c.fv * (g11 - g10);
    g.dv[ch] = (1.0 - c.fu) * (g10 - g00) + c.fu * (g11 - g01);
  }
  return g;
}

std::pair<ImageGrid, ValidityMask> bilinear_sample(const ImageGrid& grid, const PixelField& coords) {
  ImageGrid out(coords.height, coords.width, grid.channels);
  ValidityMask mask(coords.height, coords.width);
  for (int i = 0; i < coords.height; ++i)
    for (int j = 0; j < coords.width; ++j) {
      const Pixel& p = coords.at(i, j);
      const SampleResult r = sample_bilinear(grid, p.u, p.v);
      for (int ch = 0; ch < grid.channels; ++ch) out.at(i, j, ch) = r.value[ch];
      mask.at(i, j) = r.valid;
    }
  return {std::move(out), std::move(mask)};
}

WarpResult warp_source_to_target(const ImageGrid& source, const DepthGrid& depth, const Pose& T,
                                 const Intrinsics& K) {
  depth.validate();
  WarpResult out;
  out.image = ImageGrid(depth.height, depth.width, source.channels);
  out.mask = ValidityMask(depth.height, depth.width);
  out.coords = PixelField(depth.height, depth.width);
  out.source_depth.assign(static_cast<size_t>(depth.height) * depth.width, 0.0);
  for (int i = 0; i < depth.height; ++i)
    for (int j = 0; j < depth.width; ++j) {
      const Reprojection rp =
          reproject({static_cast<double>(j), static_cast<double>(i)}, depth.at(i, j), T, K);
      out.source_depth[static_cast<size_t>(i) * depth.width + j] = rp.depth;
      if (!rp.valid) continue;  // behind camera: mask stays false, coords zero
      out.coords.at(i, j) = rp.pixel;
      const SampleResult s = sample_bilinear(source, rp.pixel.u, rp.pixel.v);
      for (int ch = 0; ch < source.channels; ++ch) out.image.at(i, j, ch) = s.value[ch];
      out.mask.at(i, j) = s.valid;
    }
  return out;
}

}  // namespace altsfm
