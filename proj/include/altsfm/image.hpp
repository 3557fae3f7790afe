#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace altsfm {

/// Row-major scalar raster, 1 or 3 channels. Photometric images live in [0,1];
/// the struct itself only requires finiteness so depth rasters can reuse it.
struct ImageGrid {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> data;  // (i*width + j)*channels + c

  ImageGrid() = default;
  ImageGrid(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  double& at(int i, int j, int c = 0) { return data[(static_cast<size_t>(i) * width + j) * channels + c]; }
  double at(int i, int j, int c = 0) const { return data[(static_cast<size_t>(i) * width + j) * channels + c]; }
  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
  bool same_shape(const ImageGrid& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
};

/// Per-pixel validity flags. False marks out-of-bounds samples or
/// behind-camera reprojections; invalid pixels are excluded from every loss.
struct ValidityMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> valid;

  ValidityMask() = default;
  ValidityMask(int h, int w, bool fill = false)
      : height(h), width(w), valid(static_cast<size_t>(h) * w, fill ? 1 : 0) {}

  uint8_t& at(int i, int j) { return valid[static_cast<size_t>(i) * width + j]; }
  bool at(int i, int j) const { return valid[static_cast<size_t>(i) * width + j] != 0; }
  size_t count() const;

  /// True only where every in-bounds neighbor within `radius` is valid.
  ValidityMask eroded(int radius) const;
};

/// H×W strictly positive depths in scene units.
struct DepthGrid {
  int height = 0;
  int width = 0;
  std::vector<double> d;

  DepthGrid() = default;
  DepthGrid(int h, int w, double fill) : height(h), width(w), d(static_cast<size_t>(h) * w, fill) {}

  double& at(int i, int j) { return d[static_cast<size_t>(i) * width + j]; }
  double at(int i, int j) const { return d[static_cast<size_t>(i) * width + j]; }

  /// Throws std::domain_error if any entry is non-positive or non-finite.
  void validate() const;
};

/// Binary PPM (P6) / PGM (P5), 8-bit. Values map to [0,1] by dividing by 255.
/// Writing quantizes with round(v*255) after clamping to [0,1].
ImageGrid load_image(const std::string& path);
void save_image(const std::string& path, const ImageGrid& image);

/// Raw little-endian float32 raster with a 16-byte header:
/// magic "DPTH", uint32 width, uint32 height, uint32 zero.
DepthGrid load_depth_raw(const std::string& path);
void save_depth_raw(const std::string& path, const DepthGrid& depth);

/// False-color depth rendering through the fixed colormap table shipped with
/// the library, normalized to the grid's own [min,max]. Bit-exact testable.
ImageGrid depth_to_false_color(const DepthGrid& depth);

}  // namespace altsfm
