#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dfr/data_synth.hpp"
#include "dfr/error.hpp"
#include "dfr/rng.hpp"

namespace dfr {

namespace {

constexpr std::array<std::string_view, kNumDegradationKinds> kKindNames = {
    "noise", "low_light", "haze", "rain", "raindrop", "snow", "blur", "jpeg"};

const std::map<DegradationKind, std::vector<ParamRange>>& schemas() {
  static const std::map<DegradationKind, std::vector<ParamRange>> table = {
      {DegradationKind::noise, {{"sigma", 0.0, 100.0 / 255.0, 50.0 / 255.0}}},
      {DegradationKind::low_light,
       {{"gamma", 2.0, 4.0, 3.0}, {"scale", 0.1, 0.4, 0.25}, {"sigma", 0.0, 0.05, 0.01}}},
      {DegradationKind::haze, {{"beta", 0.0, 3.0, 1.2}, {"airlight", 0.0, 1.0, 0.85}}},
      {DegradationKind::rain,
       {{"density", 0.0, 0.05, 0.006},
        {"length_frac", 0.01, 1.0, 0.25},
        {"angle_deg", -30.0, 30.0, 0.0},
        {"intensity", 0.0, 1.0, 0.5}}},
      {DegradationKind::raindrop,
       {{"count", 0.0, 32.0, 4.0},
        {"radius_frac", 0.01, 0.3, 0.1},
        {"blur_sigma", 0.0, 8.0, 2.0},
        {"magnify", 1.0, 2.0, 1.2}}},
      {DegradationKind::snow,
       {{"density", 0.0, 0.1, 0.015}, {"radius_max", 0.5, 8.0, 1.8}, {"intensity", 0.0, 1.0, 0.8}}},
      {DegradationKind::blur,
       {{"kernel_sigma", 0.0, 8.0, 2.0},
        {"motion_length", 0.0, 32.0, 0.0},
        {"motion_angle_deg", -180.0, 180.0, 0.0}}},
      {DegradationKind::jpeg, {{"quality", 1.0, 100.0, 10.0}}},
  };
  return table;
}

Image add_gaussian_noise(const Image& img, double sigma, Rng& rng) {
  Image out = img;
  for (double& v : out.data()) v += sigma * rng.normal();
  out.clamp();
  return out;
}

Image low_light(const Image& img, double gamma, double scale, double sigma, Rng& rng) {
  Image out = img;
  for (double& v : out.data()) v = scale * std::pow(v, gamma);
  if (sigma > 0.0) {
    for (double& v : out.data()) v += sigma * rng.normal();
  }
  out.clamp();
  return out;
}

// Splats an antialiased point with bilinear weights into a single-channel layer.
void splat(std::vector<double>& layer, int h, int w, double y, double x, double value) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  const double weights[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (ys[k] < 0 || ys[k] >= h || xs[k] < 0 || xs[k] >= w) continue;
    layer[static_cast<std::size_t>(ys[k]) * w + xs[k]] += weights[k] * value;
  }
}

Image rain(const Image& img, double density, double length_frac, double angle_deg,
           double intensity, Rng& rng) {
  const int h = img.height(), w = img.width();
  std::vector<double> layer(static_cast<std::size_t>(h) * w, 0.0);
  const int streaks = static_cast<int>(std::lround(density * h * w));
  const double side = std::max(h, w);
  for (int s = 0; s < streaks; ++s) {
    const double cy = rng.uniform(-0.1 * h, 1.1 * h);
    const double cx = rng.uniform(-0.1 * w, 1.1 * w);
    const double len = length_frac * side * rng.uniform(0.5, 1.5);
    const double theta = (angle_deg + rng.uniform(-3.0, 3.0)) * std::numbers::pi / 180.0;
    const double strength = intensity * rng.uniform(0.5, 1.0);
    // Direction measured from vertical.
    const double dy = std::cos(theta), dx = std::sin(theta);
    const int samples = std::max(2, static_cast<int>(len * 2.0));
    for (int k = 0; k < samples; ++k) {
      const double t = (static_cast<double>(k) / (samples - 1) - 0.5) * len;
      splat(layer, h, w, cy + t * dy, cx + t * dx, strength * 0.5);
    }
  }
  Image out = img;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = std::min(1.0, layer[static_cast<std::size_t>(y) * w + x]);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) += a * 0.9;
    }
  out.clamp();
  return out;
}

Image snow(const Image& img, double density, double radius_max, double intensity, Rng& rng) {
  const int h = img.height(), w = img.width();
  std::vector<double> layer(static_cast<std::size_t>(h) * w, 0.0);
  const int flakes = static_cast<int>(std::lround(density * h * w));
  for (int f = 0; f < flakes; ++f) {
    const double cy = rng.uniform(0.0, h);
    const double cx = rng.uniform(0.0, w);
    const double r = rng.uniform(0.5, std::max(0.5, radius_max));
    const double a = intensity * rng.uniform(0.6, 1.0);
    const int reach = static_cast<int>(std::ceil(r * 1.5)) + 1;
    for (int y = static_cast<int>(cy) - reach; y <= static_cast<int>(cy) + reach; ++y) {
      if (y < 0 || y >= h) continue;
      for (int x = static_cast<int>(cx) - reach; x <= static_cast<int>(cx) + reach; ++x) {
        if (x < 0 || x >= w) continue;
        const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
        const double profile = std::exp(-2.0 * (d / r) * (d / r));
        layer[static_cast<std::size_t>(y) * w + x] += a * profile;
      }
    }
  }
  Image out = img;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = std::min(1.0, layer[static_cast<std::size_t>(y) * w + x]);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) += a;
    }
  out.clamp();
  return out;
}

Image raindrops(const Image& img, int count, double radius_frac, double blur_sigma,
                double magnify, Rng& rng) {
  const int h = img.height(), w = img.width();
  const Image blurred = gaussian_blur(img, blur_sigma);
  Image out = img;
  const double side = std::min(h, w);
  for (int d = 0; d < count; ++d) {
    const double cy = rng.uniform(0.0, h);
    const double cx = rng.uniform(0.0, w);
    const double r = radius_frac * side * rng.uniform(0.7, 1.3);
    const double brighten = rng.uniform(0.0, 0.08);
    const int reach = static_cast<int>(std::ceil(r)) + 1;
    for (int y = static_cast<int>(cy) - reach; y <= static_cast<int>(cy) + reach; ++y) {
      if (y < 0 || y >= h) continue;
      for (int x = static_cast<int>(cx) - reach; x <= static_cast<int>(cx) + reach; ++x) {
        if (x < 0 || x >= w) continue;
        const double py = y + 0.5 - cy, px = x + 0.5 - cx;
        const double dist = std::hypot(py, px);
        const double alpha = std::clamp(r - dist + 0.5, 0.0, 1.0);  // 1px soft rim
        if (alpha <= 0.0) continue;
        const double sy = std::clamp(cy + py / magnify - 0.5, 0.0, h - 1.0);
        const double sx = std::clamp(cx + px / magnify - 0.5, 0.0, w - 1.0);
        for (int c = 0; c < 3; ++c) {
          const double lens = sample_bilinear(blurred, sy, sx, c) + brighten;
          out.at(y, x, c) = out.at(y, x, c) * (1 - alpha) + lens * alpha;
        }
      }
    }
  }
  out.clamp();
  return out;
}

// ---- JPEG -----------------------------------------------------------------------------------

constexpr int kLumaTable[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,
                                58, 60, 55, 14, 13,  16,  24,  40,  57, 69, 56, 14, 17,
                                22, 29, 51, 87, 80,  62,  18,  22,  37, 56, 68, 109, 103,
                                77, 24, 35, 55, 64,  81,  104, 113, 92, 49, 64, 78, 87,
                                103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr int kChromaTable[64] = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99,
                                  99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

std::array<int, 64> scaled_table(const int* base, int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> table{};
  for (int i = 0; i < 64; ++i) table[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return table;
}

const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::sqrt(0.125) : 0.5;
      for (int x = 0; x < 8; ++x)
        b[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

// Quantizes one 8x8 block in place: forward DCT, quantize, dequantize, inverse DCT.
void jpeg_block(double* block, const std::array<int, 64>& table) {
  const auto& b = dct_basis();
  double tmp[64], coef[64];
  for (int u = 0; u < 8; ++u)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int y = 0; y < 8; ++y) s += b[u * 8 + y] * block[y * 8 + x];
      tmp[u * 8 + x] = s;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0;
      for (int x = 0; x < 8; ++x) s += tmp[u * 8 + x] * b[v * 8 + x];
      const double q = table[u * 8 + v];
      coef[u * 8 + v] = std::round(s / q) * q;
    }
  for (int y = 0; y < 8; ++y)
    for (int v = 0; v < 8; ++v) {
      double s = 0;
      for (int u = 0; u < 8; ++u) s += b[u * 8 + y] * coef[u * 8 + v];
      tmp[y * 8 + v] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int v = 0; v < 8; ++v) s += tmp[y * 8 + v] * b[v * 8 + x];
      block[y * 8 + x] = s;
    }
}

}  // namespace

std::string_view kind_name(DegradationKind kind) { return kKindNames[kind_index(kind)]; }

int kind_index(DegradationKind kind) { return static_cast<int>(kind); }

DegradationKind parse_kind(std::string_view name) {
  for (int i = 0; i < kNumDegradationKinds; ++i) {
    if (kKindNames[i] == name) return kAllKinds[i];
  }
  std::ostringstream os;
  os << "unknown degradation kind '" << name << "' (expected one of:";
  for (auto n : kKindNames) os << ' ' << n;
  os << ')';
  throw ValidationError(os.str());
}

const std::vector<ParamRange>& param_schema(DegradationKind kind) { return schemas().at(kind); }

double DegradationSpec::param(const std::string& name) const {
  if (auto it = params.find(name); it != params.end()) return it->second;
  for (const auto& range : param_schema(kind)) {
    if (range.name == name) return range.fallback;
  }
  throw ValidationError("degradation '" + std::string(kind_name(kind)) +
                        "' has no parameter '" + name + "'");
}

void validate_spec(const DegradationSpec& spec) {
  const auto& schema = param_schema(spec.kind);
  const std::string kind(kind_name(spec.kind));
  for (const auto& [name, value] : spec.params) {
    auto it = std::find_if(schema.begin(), schema.end(),
                           [&](const ParamRange& r) { return r.name == name; });
    if (it == schema.end()) {
      throw ValidationError("unknown parameter " + kind + "." + name);
    }
    if (!std::isfinite(value) || value < it->lo || value > it->hi) {
      std::ostringstream os;
      os << "parameter " << kind << '.' << name << " = " << value << " outside [" << it->lo
         << ", " << it->hi << ']';
      throw ValidationError(os.str());
    }
  }
}

Image convolve(const Image& img, const std::vector<double>& kernel, int ksize) {
  const int h = img.height(), w = img.width(), r = ksize / 2;
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int ky = 0; ky < ksize; ++ky) {
          const int sy = reflect_index(y + ky - r, h);
          for (int kx = 0; kx < ksize; ++kx) {
            const double k = kernel[ky * ksize + kx];
            if (k != 0.0) acc += k * img.at(sy, reflect_index(x + kx - r, w), c);
          }
        }
        out.at(y, x, c) = acc;
      }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;

  const int h = img.height(), w = img.width();
  Image tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * img.at(y, reflect_index(x + i, w), c);
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(reflect_index(y + i, h), x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

std::vector<double> motion_kernel(double length, double angle_deg, int& ksize) {
  const int half = static_cast<int>(std::ceil(length / 2.0)) + 1;
  ksize = 2 * half + 1;
  std::vector<double> k(static_cast<std::size_t>(ksize) * ksize, 0.0);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double dy = std::sin(theta), dx = std::cos(theta);
  const int samples = std::max(2, static_cast<int>(std::ceil(length * 4.0)) + 1);
  for (int s = 0; s < samples; ++s) {
    const double t = (static_cast<double>(s) / (samples - 1) - 0.5) * length;
    const double y = half + t * dy, x = half + t * dx;
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    k[y0 * ksize + x0] += (1 - fy) * (1 - fx);
    k[y0 * ksize + x0 + 1] += (1 - fy) * fx;
    k[(y0 + 1) * ksize + x0] += fy * (1 - fx);
    k[(y0 + 1) * ksize + x0 + 1] += fy * fx;
  }
  double total = 0.0;
  for (double v : k) total += v;
  for (double& v : k) v /= total;
  return k;
}

Image jpeg_roundtrip(const Image& img, int quality) {
  if (quality < 1 || quality > 100) {
    throw ValidationError("parameter jpeg.quality = " + std::to_string(quality) +
                          " outside [1, 100]");
  }
  const int h = img.height(), w = img.width();
  const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
  const auto luma = scaled_table(kLumaTable, quality);
  const auto chroma = scaled_table(kChromaTable, quality);

  // JFIF YCbCr on 8-bit levels, edge-replicated to whole blocks.
  std::vector<double> planes[3];
  for (auto& p : planes) p.assign(static_cast<std::size_t>(ph) * pw, 0.0);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) {
      const int sy = std::min(y, h - 1), sx = std::min(x, w - 1);
      const double r = std::round(std::clamp(img.at(sy, sx, 0), 0.0, 1.0) * 255.0);
      const double g = std::round(std::clamp(img.at(sy, sx, 1), 0.0, 1.0) * 255.0);
      const double b = std::round(std::clamp(img.at(sy, sx, 2), 0.0, 1.0) * 255.0);
      const std::size_t i = static_cast<std::size_t>(y) * pw + x;
      planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
      planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
      planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
  double block[64];
  for (int p = 0; p < 3; ++p) {
    const auto& table = p == 0 ? luma : chroma;
    for (int by = 0; by < ph; by += 8)
      for (int bx = 0; bx < pw; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) block[y * 8 + x] = planes[p][(by + y) * pw + bx + x];
        jpeg_block(block, table);
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) planes[p][(by + y) * pw + bx + x] = block[y * 8 + x];
      }
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * pw + x;
      const double lum = planes[0][i] + 128.0, cb = planes[1][i], cr = planes[2][i];
      const double rgb[3] = {lum + 1.402 * cr, lum - 0.344136 * cb - 0.714136 * cr,
                             lum + 1.772 * cb};
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = std::clamp(std::round(rgb[c]), 0.0, 255.0) / 255.0;
    }
  return out;
}

double haze_transmission(double beta) { return std::exp(-beta); }

Image haze_synthesize(const Image& clear, double transmission, double airlight) {
  Image out = clear;
  for (double& v : out.data()) v = v * transmission + airlight * (1.0 - transmission);
  return out;
}

Image haze_invert(const Image& hazy, double transmission, double airlight) {
  if (transmission <= 0.0) throw ValidationError("haze inversion needs transmission > 0");
  Image out = hazy;
  for (double& v : out.data()) v = (v - airlight * (1.0 - transmission)) / transmission;
  return out;
}

Image apply_degradation(const Image& img, const DegradationSpec& spec, std::uint64_t seed) {
  validate_image(img, "apply_degradation input");
  validate_spec(spec);
  Rng rng(seed + static_cast<std::uint64_t>(spec.seed_offset));
  Image out;
  switch (spec.kind) {
    case DegradationKind::noise:
      out = add_gaussian_noise(img, spec.param("sigma"), rng);
      break;
    case DegradationKind::low_light:
      out = low_light(img, spec.param("gamma"), spec.param("scale"), spec.param("sigma"), rng);
      break;
    case DegradationKind::haze:
      out = haze_synthesize(img, haze_transmission(spec.param("beta")), spec.param("airlight"));
      out.clamp();
      break;
    case DegradationKind::rain:
      out = rain(img, spec.param("density"), spec.param("length_frac"), spec.param("angle_deg"),
                 spec.param("intensity"), rng);
      break;
    case DegradationKind::raindrop:
      out = raindrops(img, static_cast<int>(std::lround(spec.param("count"))),
                      spec.param("radius_frac"), spec.param("blur_sigma"), spec.param("magnify"),
                      rng);
      break;
    case DegradationKind::snow:
      out = snow(img, spec.param("density"), spec.param("radius_max"), spec.param("intensity"),
                 rng);
      break;
    case DegradationKind::blur: {
      out = gaussian_blur(img, spec.param("kernel_sigma"));
      const double length = spec.param("motion_length");
      if (length > 0.0) {
        int ksize = 0;
        const auto kernel = motion_kernel(length, spec.param("motion_angle_deg"), ksize);
        out = convolve(out, kernel, ksize);
      }
      out.clamp();
      break;
    }
    case DegradationKind::jpeg:
      out = jpeg_roundtrip(img, static_cast<int>(std::lround(spec.param("quality"))));
      break;
  }
  return out;
}

Image compose_mixture(const Image& img, std::span<const DegradationSpec> specs,
                      std::uint64_t seed, std::size_t first_index) {
  if (specs.empty()) throw ValidationError("compose_mixture needs at least one degradation");
  Image out = img;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    out = apply_degradation(out, specs[i], derive_seed(seed, first_index + i));
  }
  return out;
}

}  // namespace dfr
