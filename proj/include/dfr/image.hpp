#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dfr {

// H x W x 3 interleaved sRGB pixels in [0,1]. Storage is double so that
// algebraic round trips (haze inversion, mixture composition) stay exact.
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }
  std::size_t size() const { return pixels_.size(); }

  double& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::span<double> data() { return pixels_; }
  std::span<const double> data() const { return pixels_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  void clamp();
  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

inline constexpr int kMinImageSide = 16;

// Throws ValidationError unless the image is at least 16x16 with finite values in [0,1].
void validate_image(const Image& img, const std::string& what = "image");

// Round to 8-bit levels, the precision images have after a PNG round trip.
Image quantize8(const Image& img);

// Bilinear resize (pixel-center aligned).
Image resize_bilinear(const Image& img, int height, int width);

// Bilinear sample with mirrored borders; coordinates in pixel units.
double sample_bilinear(const Image& img, double y, double x, int c);

// Mirror an index into [0, n).
int reflect_index(int i, int n);

}  // namespace dfr
