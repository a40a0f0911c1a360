#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/rng.hpp"

namespace mgcap {

/// Interleaved (row, col, channel) pixels scaled to [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t r, std::size_t col, std::size_t ch) noexcept { return pixels[(r * width + col) * channels + ch]; }
  double at(std::size_t r, std::size_t col, std::size_t ch) const noexcept {
    return pixels[(r * width + col) * channels + ch];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

class PnmReader {
 public:
  explicit PnmReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  char next_char() {
    if (pos_ >= bytes_.size()) throw Error(ErrorKind::UnexpectedEof, "end of file inside header");
    return static_cast<char>(bytes_[pos_++]);
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t read_uint() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size()) throw Error(ErrorKind::UnexpectedEof, "end of file inside header");
    if (!std::isdigit(bytes_[pos_])) throw Error(ErrorKind::MalformedHeader, "expected an unsigned integer");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 24)) throw Error(ErrorKind::MalformedHeader, "header value too large");
      ++pos_;
    }
    return v;
  }

  /// Consumes the single whitespace byte separating header and raster.
  void end_header() {
    if (pos_ >= bytes_.size()) throw Error(ErrorKind::UnexpectedEof, "missing raster");
    if (!std::isspace(bytes_[pos_])) throw Error(ErrorKind::MalformedHeader, "maxval not followed by whitespace");
    ++pos_;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const unsigned char* cursor() const { return bytes_.data() + pos_; }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes binary P5 (gray) or P6 (RGB) with maxval 255.
inline Image decode_pnm(std::vector<unsigned char> bytes) {
  detail::PnmReader rd(std::move(bytes));
  if (rd.next_char() != 'P') throw Error(ErrorKind::MalformedHeader, "missing P magic");
  const char kind = rd.next_char();
  std::size_t channels;
  if (kind == '5') {
    channels = 1;
  } else if (kind == '6') {
    channels = 3;
  } else {
    throw Error(ErrorKind::MalformedHeader, std::string("unsupported magic P") + kind);
  }
  const std::size_t width = rd.read_uint();
  const std::size_t height = rd.read_uint();
  const std::size_t maxval = rd.read_uint();
  if (width == 0 || height == 0) throw Error(ErrorKind::MalformedHeader, "zero image dimension");
  if (maxval != 255) throw Error(ErrorKind::UnsupportedMaxval, "maxval " + std::to_string(maxval));
  rd.end_header();

  const std::size_t need = width * height * channels;
  if (rd.remaining() < need)
    throw Error(ErrorKind::UnexpectedEof,
                "raster has " + std::to_string(rd.remaining()) + " of " + std::to_string(need) + " bytes");
  Image img(height, width, channels);
  const unsigned char* p = rd.cursor();
  for (std::size_t k = 0; k < need; ++k) img.pixels[k] = static_cast<double>(p[k]) / 255.0;
  return img;
}

inline Image load_ppm(const std::filesystem::path& path) { return decode_pnm(detail::read_file(path)); }

inline std::vector<unsigned char> encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw Error(ErrorKind::InvalidArgument, "only 1- or 3-channel images can be encoded");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

inline void save_ppm(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
}

inline Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || top + h > img.height || left + w > img.width)
    throw Error(ErrorKind::CropOutOfBounds, "crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                                                std::to_string(top) + "," + std::to_string(left) + ") of " +
                                                std::to_string(img.height) + "x" + std::to_string(img.width));
  Image out(h, w, img.channels);
  for (std::size_t r = 0; r < h; ++r)
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(((top + r) * img.width + left) * img.channels),
                w * img.channels, out.pixels.begin() + static_cast<std::ptrdiff_t>(r * w * img.channels));
  return out;
}

/// Side length round(ratio * side) for a centered square window.
inline std::size_t center_crop_side(std::size_t side, double ratio) {
  return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(side)));
}

/// Centered square window of side round(ratio * min(H, W)).
inline Image center_crop(const Image& img, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0) throw Error(ErrorKind::CropOutOfBounds, "crop ratio must be in (0, 1]");
  const std::size_t side = center_crop_side(std::min(img.height, img.width), ratio);
  if (side == 0) throw Error(ErrorKind::CropOutOfBounds, "crop ratio yields an empty window");
  return crop(img, (img.height - side) / 2, (img.width - side) / 2, side, side);
}

inline Image center_crop_to(const Image& img, std::size_t side) {
  if (side > img.height || side > img.width) throw Error(ErrorKind::CropOutOfBounds, "crop larger than image");
  return crop(img, (img.height - side) / 2, (img.width - side) / 2, side, side);
}

inline Image random_crop(const Image& img, std::size_t side, Rng& rng) {
  if (side > img.height || side > img.width) throw Error(ErrorKind::CropOutOfBounds, "crop larger than image");
  const std::size_t top = uniform_index(rng, img.height - side + 1);
  const std::size_t left = uniform_index(rng, img.width - side + 1);
  return crop(img, top, left, side, side);
}

inline Image hflip(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c)
      for (std::size_t ch = 0; ch < img.channels; ++ch) out.at(r, c, ch) = img.at(r, img.width - 1 - c, ch);
  return out;
}

/// Flips with probability 0.5.
inline Image random_hflip(const Image& img, Rng& rng) { return uniform01(rng) < 0.5 ? hflip(img) : img; }

/// Counter-clockwise rotation by k * 90 degrees (as displayed, rows growing downward).
inline Image rotate90(const Image& img, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  const bool swap = k % 2 == 1;
  Image out(swap ? img.width : img.height, swap ? img.height : img.width, img.channels);
  const std::size_t h = img.height, w = img.width;
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) {
      std::size_t sr, sc;
      switch (k) {
        case 1: sr = c; sc = w - 1 - r; break;
        case 2: sr = h - 1 - r; sc = w - 1 - c; break;
        default: sr = h - 1 - c; sc = r; break;
      }
      for (std::size_t ch = 0; ch < img.channels; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
    }
  return out;
}

/// Bilinear resize with pixel-center alignment and edge replication.
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double fx = x - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < img.channels; ++ch) {
        const double top = img.at(y0, x0, ch) * (1.0 - fx) + img.at(y0, x1, ch) * fx;
        const double bot = img.at(y1, x0, ch) * (1.0 - fx) + img.at(y1, x1, ch) * fx;
        out.at(r, c, ch) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

/// ceil(side * sqrt(2)): the smallest square that contains the side x side image under any rotation.
inline std::size_t padded_side(std::size_t side) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(side) * std::sqrt(2.0) - 1e-9));
}

/// Zero-pads a square image to padded_side(s), rotates it counter-clockwise by `angle_deg`
/// about the center of the original content, then resizes to out_size x out_size.
/// Multiples of 90 degrees are exact index permutations; other angles sample bilinearly
/// from the source, with zeros outside.
inline Image pad_rotate_resize(const Image& img, double angle_deg, std::size_t out_size) {
  if (img.height != img.width) throw Error(ErrorKind::InvalidArgument, "pad_rotate_resize needs a square image");
  const std::size_t s = img.height;
  const std::size_t p = padded_side(s);
  const std::size_t off = (p - s) / 2;

  Image padded(p, p, img.channels);
  for (std::size_t r = 0; r < s; ++r)
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(r * s * img.channels), s * img.channels,
                padded.pixels.begin() + static_cast<std::ptrdiff_t>(((r + off) * p + off) * img.channels));

  // Content center; twice its coordinate is an integer, so quarter turns map grid to grid.
  const double center = static_cast<double>(off) + 0.5 * static_cast<double>(s - 1);
  const long long twice_center = static_cast<long long>(2 * off + s - 1);

  double turns = angle_deg / 90.0;
  const double nearest = std::round(turns);
  Image rotated(p, p, img.channels);
  if (std::abs(turns - nearest) < 1e-9) {
    const int k = static_cast<int>(((static_cast<long long>(nearest) % 4) + 4) % 4);
    const auto ip = static_cast<long long>(p);
    for (long long r = 0; r < ip; ++r)
      for (long long c = 0; c < ip; ++c) {
        long long sr, sc;
        switch (k) {
          case 0: sr = r; sc = c; break;
          case 1: sr = c; sc = twice_center - r; break;
          case 2: sr = twice_center - r; sc = twice_center - c; break;
          default: sr = twice_center - c; sc = r; break;
        }
        if (sr < 0 || sc < 0 || sr >= ip || sc >= ip) continue;
        for (std::size_t ch = 0; ch < img.channels; ++ch)
          rotated.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch) =
              padded.at(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc), ch);
      }
  } else {
    const double th = angle_deg * 3.14159265358979323846 / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const auto ip = static_cast<long long>(p);
    for (std::size_t r = 0; r < p; ++r)
      for (std::size_t c = 0; c < p; ++c) {
        const double xr = static_cast<double>(c) - center;
        const double yr = static_cast<double>(r) - center;
        // inverse of the counter-clockwise (y-down) rotation
        const double sx = center + ct * xr - st * yr;
        const double sy = center + st * xr + ct * yr;
        const double fx0 = std::floor(sx), fy0 = std::floor(sy);
        const auto x0 = static_cast<long long>(fx0), y0 = static_cast<long long>(fy0);
        const double fx = sx - fx0, fy = sy - fy0;
        for (std::size_t ch = 0; ch < img.channels; ++ch) {
          auto sample = [&](long long yy, long long xx) {
            if (yy < 0 || xx < 0 || yy >= ip || xx >= ip) return 0.0;
            return padded.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), ch);
          };
          const double top = sample(y0, x0) * (1.0 - fx) + sample(y0, x0 + 1) * fx;
          const double bot = sample(y0 + 1, x0) * (1.0 - fx) + sample(y0 + 1, x0 + 1) * fx;
          rotated.at(r, c, ch) = top * (1.0 - fy) + bot * fy;
        }
      }
  }
  return resize_bilinear(rotated, out_size, out_size);
}

}  // namespace mgcap
