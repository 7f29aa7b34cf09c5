#include "dfr/image.hpp"

#include <algorithm>
#include <cmath>

#include "dfr/error.hpp"

namespace dfr {

Image::Image(int height, int width, double fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(height) * width * 3, fill) {
  if (height < 0 || width < 0) throw ValidationError("negative image dimensions");
}

void Image::clamp() {
  for (double& v : pixels_) v = std::clamp(v, 0.0, 1.0);
}

void validate_image(const Image& img, const std::string& what) {
  if (img.height() < kMinImageSide || img.width() < kMinImageSide) {
    throw ValidationError(what + ": size " + std::to_string(img.height()) + "x" +
                          std::to_string(img.width()) + " is below the 16x16 minimum");
  }
  for (double v : img.data()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ValidationError(what + ": pixel values must be finite and within [0,1]");
    }
  }
}

Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

double sample_bilinear(const Image& img, double y, double x, int c) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0;
  const double fx = x - x0;
  const int h = img.height();
  const int w = img.width();
  const int ya = reflect_index(y0, h), yb = reflect_index(y0 + 1, h);
  const int xa = reflect_index(x0, w), xb = reflect_index(x0 + 1, w);
  const double top = img.at(ya, xa, c) * (1 - fx) + img.at(ya, xb, c) * fx;
  const double bottom = img.at(yb, xa, c) * (1 - fx) + img.at(yb, xb, c) * fx;
  return top * (1 - fy) + bottom * fy;
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  Image out(height, width);
  const double sy = static_cast<double>(img.height()) / height;
  const double sx = static_cast<double>(img.width()) / width;
  // Area-average first when shrinking by more than 2x to avoid aliasing.
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double cy = (y + 0.5) * sy - 0.5;
      const double cx = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < 3; ++c) {
        if (sy <= 2.0 && sx <= 2.0) {
          out.at(y, x, c) = sample_bilinear(img, std::clamp(cy, 0.0, img.height() - 1.0),
                                            std::clamp(cx, 0.0, img.width() - 1.0), c);
        } else {
          const int y0 = static_cast<int>(std::floor(y * sy));
          const int y1 = std::max(y0 + 1, static_cast<int>(std::floor((y + 1) * sy)));
          const int x0 = static_cast<int>(std::floor(x * sx));
          const int x1 = std::max(x0 + 1, static_cast<int>(std::floor((x + 1) * sx)));
          double acc = 0.0;
          for (int yy = y0; yy < y1; ++yy)
            for (int xx = x0; xx < x1; ++xx) acc += img.at(std::min(yy, img.height() - 1), std::min(xx, img.width() - 1), c);
          out.at(y, x, c) = acc / ((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  return out;
}

}  // namespace dfr
