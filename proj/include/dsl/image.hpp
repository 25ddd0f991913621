#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsl/types.hpp"

namespace dsl {

// Grayscale intensity image, row-major float storage (intensity levels,
// nominally 0..255). Sampling is bilinear; gradients are the exact
// derivatives of the bilinear interpolant, so analytic Jacobians built on
// them are true derivatives of the sampled residual between texel centers.
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.f)
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  bool in_bounds(double x, double y, double border = 0.0) const {
    return x >= border && y >= border && x <= width_ - 1.0 - border && y <= height_ - 1.0 - border;
  }

  // Bilinear intensity at (x, y). Caller guarantees in_bounds(x, y).
  double sample(double x, double y) const {
    int ix, iy;
    double u, v;
    locate(x, y, ix, iy, u, v);
    const double i00 = at(ix, iy), i10 = at(ix + 1, iy);
    const double i01 = at(ix, iy + 1), i11 = at(ix + 1, iy + 1);
    return (1 - v) * ((1 - u) * i00 + u * i10) + v * ((1 - u) * i01 + u * i11);
  }

  // Bilinear intensity plus its gradient d(sample)/d(x, y).
  double sample_with_gradient(double x, double y, Vec2& grad) const {
    int ix, iy;
    double u, v;
    locate(x, y, ix, iy, u, v);
    const double i00 = at(ix, iy), i10 = at(ix + 1, iy);
    const double i01 = at(ix, iy + 1), i11 = at(ix + 1, iy + 1);
    grad.x() = (1 - v) * (i10 - i00) + v * (i11 - i01);
    grad.y() = (1 - u) * (i01 - i00) + u * (i11 - i10);
    return (1 - v) * ((1 - u) * i00 + u * i10) + v * ((1 - u) * i01 + u * i11);
  }

  Vec2 gradient(double x, double y) const {
    Vec2 g;
    sample_with_gradient(x, y, g);
    return g;
  }

  // Half-resolution downsample by 2x2 box averaging.
  Image downsample() const {
    Image out(width_ / 2, height_ / 2);
    for (int y = 0; y < out.height_; ++y)
      for (int x = 0; x < out.width_; ++x)
        out.at(x, y) = 0.25f * (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) +
                                at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1));
    return out;
  }

 private:
  void locate(double x, double y, int& ix, int& iy, double& u, double& v) const {
    ix = static_cast<int>(std::floor(x));
    iy = static_cast<int>(std::floor(y));
    // Clamp so sampling exactly on the last row/col stays valid.
    ix = std::min(std::max(ix, 0), width_ - 2);
    iy = std::min(std::max(iy, 0), height_ - 2);
    u = x - ix;
    v = y - iy;
  }

  int width_ = 0, height_ = 0;
  std::vector<float> data_;
};

// Coarse-to-fine pyramid, level 0 at full resolution, factor 2 per level.
class ImagePyramid {
 public:
  ImagePyramid() = default;
  explicit ImagePyramid(Image base, int levels = 4) {
    levels_.reserve(levels);
    levels_.push_back(std::move(base));
    for (int l = 1; l < levels; ++l) {
      if (levels_.back().width() < 8 || levels_.back().height() < 8) break;
      levels_.push_back(levels_.back().downsample());
    }
  }

  int num_levels() const { return static_cast<int>(levels_.size()); }
  const Image& level(int l) const { return levels_.at(l); }
  const Image& base() const { return levels_.front(); }

 private:
  std::vector<Image> levels_;
};

// 8-bit binary PGM (P5).
Image load_pgm(const std::string& path);
void save_pgm(const Image& img, const std::string& path);

// 16-bit PGM, big-endian sample order per the PGM spec.
void save_pgm16(const std::vector<uint16_t>& data, int width, int height, const std::string& path);

}  // namespace dsl
