#include "altsfm/photometric.hpp"

#include <cmath>
#include <stdexcept>

namespace altsfm {

namespace {

void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* who) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

/// Clipped-window box mean of an arbitrary per-pixel functional.
template <typename F>
double window_mean(const ImageGrid& img, int i, int j, int ch, F&& f) {
  double sum = 0.0;
  int n = 0;
  for (int di = -kSsimRadius; di <= kSsimRadius; ++di)
    for (int dj = -kSsimRadius; dj <= kSsimRadius; ++dj) {
      const int ii = i + di, jj = j + dj;
      if (ii < 0 || ii >= img.height || jj < 0 || jj >= img.width) continue;
      sum += f(ii, jj, ch);
      ++n;
    }
  return sum / n;
}

}  // namespace

ImageGrid ssim_map(const ImageGrid& a, const ImageGrid& b) {
  require_same_shape(a, b, "ssim_map");
  ImageGrid out(a.height, a.width, 1);
  for (int i = 0; i < a.height; ++i)
    for (int j = 0; j < a.width; ++j) {
      double acc = 0.0;
      for (int ch = 0; ch < a.channels; ++ch) {
        const double mu_a = window_mean(a, i, j, ch, [&](int ii, int jj, int c) { return a.at(ii, jj, c); });
        const double mu_b = window_mean(b, i, j, ch, [&](int ii, int jj, int c) { return b.at(ii, jj, c); });
        const double e_aa = window_mean(a, i, j, ch, [&](int ii, int jj, int c) {
          const double x = a.at(ii, jj, c);
          return x * x;
        });
        const double e_bb = window_mean(b, i, j, ch, [&](int ii, int jj, int c) {
          const double x = b.at(ii, jj, c);
          return x * x;
        });
        const double e_ab =
            window_mean(a, i, j, ch, [&](int ii, int jj, int c) { return a.at(ii, jj, c) * b.at(ii, jj, c); });
        const double var_a = e_aa - mu_a * mu_a;
        const double var_b = e_bb - mu_b * mu_b;
        const double cov = e_ab - mu_a * mu_b;
        acc += (2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2) /
               ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
      }
      out.at(i, j) = acc / a.channels;
    }
  return out;
}

ImageGrid photometric_error(const ImageGrid& a, const ImageGrid& b, double alpha) {
  require_same_shape(a, b, "photometric_error");
  const ImageGrid ssim = ssim_map(a, b);
  ImageGrid out(a.height, a.width, 1);
  for (int i = 0; i < a.height; ++i)
    for (int j = 0; j < a.width; ++j) {
      double l1 = 0.0;
      for (int ch = 0; ch < a.channels; ++ch) l1 += std::abs(a.at(i, j, ch) - b.at(i, j, ch));
      l1 /= a.channels;
      out.at(i, j) = alpha * (1.0 - ssim.at(i, j)) / 2.0 + (1.0 - alpha) * l1;
    }
  return out;
}

MinPhotometricResult min_photometric_loss(const ImageGrid& target, const std::vector<ImageGrid>& warped,
                                          const std::vector<ValidityMask>& masks, double alpha) {
  if (warped.empty()) throw std::invalid_argument("min_photometric_loss: zero source views");
  if (warped.size() != masks.size())
    throw std::invalid_argument("min_photometric_loss: warped/mask count mismatch");

  std::vector<ImageGrid> errs;
  errs.reserve(warped.size());
  for (const ImageGrid& w : warped) errs.push_back(photometric_error(target, w, alpha));

  MinPhotometricResult res;
  res.loss.per_pixel = ImageGrid(target.height, target.width, 1);
  res.loss.mask = ValidityMask(target.height, target.width);
  res.argmin.assign(target.pixel_count(), -1);

  double sum = 0.0;
  size_t n = 0;
  for (int i = 0; i < target.height; ++i)
    for (int j = 0; j < target.width; ++j) {
      double best = 0.0;
      int8_t best_s = -1;
      for (size_t s = 0; s < errs.size(); ++s) {
        if (!masks[s].at(i, j)) continue;
        const double e = errs[s].at(i, j);
        if (best_s < 0 || e < best) {
          best = e;
          best_s = static_cast<int8_t>(s);
        }
      }
      if (best_s < 0) continue;
      res.argmin[static_cast<size_t>(i) * target.width + j] = best_s;
      res.loss.per_pixel.at(i, j) = best;
      res.loss.mask.at(i, j) = true;
      sum += best;
      ++n;
    }
  res.loss.value = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return res;
}

ValidityMask auto_mask(const ImageGrid& target, const std::vector<ImageGrid>& sources,
                       const std::vector<ImageGrid>& warped, const std::vector<ValidityMask>& warp_masks,
                       double alpha) {
  if (sources.empty() || warped.size() != sources.size() || warp_masks.size() != sources.size())
    throw std::invalid_argument("auto_mask: inconsistent view counts");

  std::vector<ImageGrid> warp_err, ident_err;
  for (size_t s = 0; s < sources.size(); ++s) {
    warp_err.push_back(photometric_error(target, warped[s], alpha));
    ident_err.push_back(photometric_error(target, sources[s], alpha));
  }
  ValidityMask mu(target.height, target.width);
  for (int i = 0; i < target.height; ++i)
    for (int j = 0; j < target.width; ++j) {
      double best_warp = 0.0;
      bool any = false;
      for (size_t s = 0; s < sources.size(); ++s) {
        if (!warp_masks[s].at(i, j)) continue;
        const double e = warp_err[s].at(i, j);
        if (!any || e < best_warp) best_warp = e;
        any = true;
      }
      if (!any) continue;
      double best_ident = ident_err[0].at(i, j);
      for (size_t s = 1; s < sources.size(); ++s) best_ident = std::min(best_ident, ident_err[s].at(i, j));
      mu.at(i, j) = best_warp < best_ident;
    }
  return mu;
}

double smoothness_loss(const DepthGrid& depth, const ImageGrid& image) {
  depth.validate();
  if (depth.height != image.height || depth.width != image.width)
    throw std::invalid_argument("smoothness_loss: dimension mismatch");
  const int h = depth.height, w = depth.width;

  // mean-normalized inverse depth
  double mean_inv = 0.0;
  for (double v : depth.d) mean_inv += 1.0 / v;
  mean_inv /= static_cast<double>(depth.d.size());
  auto dstar = [&](int i, int j) { return (1.0 / depth.at(i, j)) / mean_inv; };

  auto image_grad = [&](int i, int j, int di, int dj) {
    double g = 0.0;
    for (int ch = 0; ch < image.channels; ++ch) g += std::abs(image.at(i + di, j + dj, ch) - image.at(i, j, ch));
    return g / image.channels;
  };

  double sum_x = 0.0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j + 1 < w; ++j)
      sum_x += std::abs(dstar(i, j + 1) - dstar(i, j)) * std::exp(-image_grad(i, j, 0, 1));
  double sum_y = 0.0;
  for (int i = 0; i + 1 < h; ++i)
    for (int j = 0; j < w; ++j)
      sum_y += std::abs(dstar(i + 1, j) - dstar(i, j)) * std::exp(-image_grad(i, j, 1, 0));

  double loss = 0.0;
  if (w > 1) loss += sum_x / (static_cast<double>(h) * (w - 1));
  if (h > 1) loss += sum_y / (static_cast<double>(h - 1) * w);
  return loss;
}

}  // namespace altsfm
