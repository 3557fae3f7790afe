#include "altsfm/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace altsfm {

size_t ValidityMask::count() const {
  size_t n = 0;
  for (uint8_t v : valid) n += v != 0;
  return n;
}

ValidityMask ValidityMask::eroded(int radius) const {
  ValidityMask out(height, width);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      bool ok = true;
      for (int di = -radius; ok && di <= radius; ++di)
        for (int dj = -radius; ok && dj <= radius; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= height || jj < 0 || jj >= width) continue;
          if (!at(ii, jj)) ok = false;
        }
      out.at(i, j) = ok;
    }
  return out;
}

void DepthGrid::validate() const {
  for (double v : d)
    if (!std::isfinite(v) || v <= 0.0) throw std::domain_error("depth grid: non-positive or non-finite entry");
}

namespace {

int read_pnm_token(std::istream& in) {
  // Skips whitespace and # comments per the PNM header grammar.
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      in.unget();
      break;
    }
  }
  int value;
  if (!(in >> value)) throw std::runtime_error("truncated PNM header");
  return value;
}

}  // namespace

ImageGrid load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[2];
  if (!in.read(magic, 2)) throw std::runtime_error(path + ": truncated header");
  int channels;
  if (magic[0] == 'P' && magic[1] == '5')
    channels = 1;
  else if (magic[0] == 'P' && magic[1] == '6')
    channels = 3;
  else
    throw std::runtime_error(path + ": not a binary PGM/PPM file");
  const int width = read_pnm_token(in);
  const int height = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (width <= 0 || height <= 0) throw std::runtime_error(path + ": bad dimensions");
  if (maxval != 255) throw std::runtime_error(path + ": only 8-bit maxval 255 supported");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(width) * height * channels);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw std::runtime_error(path + ": truncated pixel data");
  ImageGrid img(height, width, channels);
  for (size_t k = 0; k < raw.size(); ++k) img.data[k] = raw[k] / 255.0;
  return img;
}

void save_image(const std::string& path, const ImageGrid& image) {
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("save_image: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << (image.channels == 1 ? "P5" : "P6") << "\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.data.size());
  for (size_t k = 0; k < raw.size(); ++k) {
    const double v = std::min(1.0, std::max(0.0, image.data[k]));
    raw[k] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

namespace {
constexpr char kDepthMagic[4] = {'D', 'P', 'T', 'H'};

uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

void write_u32_le(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
}  // namespace

DepthGrid load_depth_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  unsigned char header[16];
  if (!in.read(reinterpret_cast<char*>(header), 16)) throw std::runtime_error(path + ": truncated depth header");
  if (std::memcmp(header, kDepthMagic, 4) != 0) throw std::runtime_error(path + ": bad depth magic");
  const uint32_t width = read_u32_le(header + 4);
  const uint32_t height = read_u32_le(header + 8);
  DepthGrid depth(static_cast<int>(height), static_cast<int>(width), 1.0);
  std::vector<unsigned char> raw(static_cast<size_t>(width) * height * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw std::runtime_error(path + ": truncated depth data");
  for (size_t k = 0; k < depth.d.size(); ++k) {
    const uint32_t bits = read_u32_le(raw.data() + 4 * k);
    float f;
    std::memcpy(&f, &bits, 4);
    depth.d[k] = f;
  }
  return depth;
}

void save_depth_raw(const std::string& path, const DepthGrid& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kDepthMagic, 4);
  write_u32_le(out, static_cast<uint32_t>(depth.width));
  write_u32_le(out, static_cast<uint32_t>(depth.height));
  write_u32_le(out, 0);
  for (double v : depth.d) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32_le(out, bits);
  }
}

namespace {
// 8-entry blue→green→red→white ramp; interpolated linearly between anchors.
constexpr double kColormap[8][3] = {
    {0.05, 0.03, 0.35}, {0.12, 0.30, 0.75}, {0.10, 0.60, 0.70}, {0.20, 0.78, 0.35},
    {0.65, 0.85, 0.20}, {0.95, 0.75, 0.15}, {0.98, 0.45, 0.10}, {0.95, 0.95, 0.90},
};
}  // namespace

ImageGrid depth_to_false_color(const DepthGrid& depth) {
  double lo = depth.d.empty() ? 0.0 : depth.d[0];
  double hi = lo;
  for (double v : depth.d) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  ImageGrid img(depth.height, depth.width, 3);
  for (int i = 0; i < depth.height; ++i)
    for (int j = 0; j < depth.width; ++j) {
      const double x = span > 0.0 ? (depth.at(i, j) - lo) / span : 0.0;
      const double pos = x * 7.0;
      const int k = std::min(6, static_cast<int>(pos));
      const double f = pos - k;
      for (int c = 0; c < 3; ++c) img.at(i, j, c) = kColormap[k][c] * (1.0 - f) + kColormap[k + 1][c] * f;
    }
  return img;
}

}  // namespace altsfm
