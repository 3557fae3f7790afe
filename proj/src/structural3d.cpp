#include "altsfm/structural3d.hpp"

#include <cmath>
#include <stdexcept>

#include "altsfm/sampler.hpp"

namespace altsfm {

double signed_log1p(double x) { return x >= 0.0 ? std::log1p(x) : -std::log1p(-x); }

namespace {

double residual(const Vec3& a, const Vec3& b, Log3dVariant variant) {
  switch (variant) {
    case Log3dVariant::kSignedLog1p:
      return std::abs(signed_log1p(a.x()) - signed_log1p(b.x())) +
             std::abs(signed_log1p(a.y()) - signed_log1p(b.y())) +
             std::abs(signed_log1p(a.z()) - signed_log1p(b.z()));
    case Log3dVariant::kZOnly:
      return std::abs(a.x() - b.x()) + std::abs(a.y() - b.y()) + std::abs(std::log(a.z()) - std::log(b.z()));
    case Log3dVariant::kPlain:
      return (a - b).cwiseAbs().sum();
  }
  return 0.0;
}

}  // namespace

LossValue log3d_map(const DepthGrid& target_depth, const DepthGrid& source_depth, const Pose& T,
                    const Intrinsics& K, Log3dVariant variant) {
  target_depth.validate();
  source_depth.validate();
  const int h = target_depth.height, w = target_depth.width;

  ImageGrid source_view(source_depth.height, source_depth.width, 1);
  source_view.data = source_depth.d;

  LossValue out;
  out.per_pixel = ImageGrid(h, w, 1);
  out.mask = ValidityMask(h, w);
  double sum = 0.0;
  size_t n = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const Pixel p{static_cast<double>(j), static_cast<double>(i)};
      const Vec3 a = T.apply(back_project(p, target_depth.at(i, j), K));
      if (!(a.z() > 1e-12)) continue;
      const Pixel ps{K.fx * a.x() / a.z() + K.cx, K.fy * a.y() / a.z() + K.cy};
      const SampleResult s = sample_bilinear(source_view, ps.u, ps.v);
      if (!s.valid || !(s.value[0] > 0.0)) continue;
      const Vec3 b = K.ray(ps.u, ps.v) * s.value[0];
      const double r = residual(a, b, variant);
      out.per_pixel.at(i, j) = r;
      out.mask.at(i, j) = true;
      sum += r;
      ++n;
    }
  out.value = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return out;
}

LossValue log3d_loss(const DepthGrid& target_depth, const std::vector<DepthGrid>& source_depths,
                     const std::vector<Pose>& poses, const Intrinsics& K, Log3dVariant variant) {
  if (source_depths.empty() || source_depths.size() != poses.size())
    throw std::invalid_argument("log3d_loss: need one pose per source depth");
  std::vector<LossValue> maps;
  maps.reserve(source_depths.size());
  for (size_t s = 0; s < source_depths.size(); ++s)
    maps.push_back(log3d_map(target_depth, source_depths[s], poses[s], K, variant));

  LossValue out;
  const int h = target_depth.height, w = target_depth.width;
  out.per_pixel = ImageGrid(h, w, 1);
  out.mask = ValidityMask(h, w);
  double sum = 0.0;
  size_t n = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      bool any = false;
      double best = 0.0;
      for (const LossValue& m : maps) {
        if (!m.mask.at(i, j)) continue;
        const double r = m.per_pixel.at(i, j);
        if (!any || r < best) best = r;
        any = true;
      }
      if (!any) continue;
      out.per_pixel.at(i, j) = best;
      out.mask.at(i, j) = true;
      sum += best;
      ++n;
    }
  out.value = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return out;
}

}  // namespace altsfm
