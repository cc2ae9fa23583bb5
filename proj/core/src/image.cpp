#include "irf/image.hpp"

#include <algorithm>
#include <cmath>

#include "irf/common.hpp"

namespace irf {

Image Image::zeros(int channels, int height, int width) {
  Image img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.values.assign(int64_t(channels) * height * width, 0.0);
  return img;
}

namespace {

// Catmull-Rom kernel, a = -0.5.
double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

struct ResampleTap {
  int start;
  std::vector<double> weights;
};

// Per-output-index taps for one axis. Center-aligned mapping:
// src = (dst + 0.5) * (in/out) - 0.5. Weights are normalized; indices clamp
// at the borders.
std::vector<ResampleTap> make_taps(int in_n, int out_n, bool antialias) {
  double scale = double(in_n) / double(out_n);
  double filter_scale = (antialias && scale > 1.0) ? scale : 1.0;
  double support = 2.0 * filter_scale;
  std::vector<ResampleTap> taps(out_n);
  for (int o = 0; o < out_n; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    int lo = int(std::ceil(src - support));
    int hi = int(std::floor(src + support));
    ResampleTap tap;
    tap.start = lo;
    tap.weights.resize(hi - lo + 1);
    double sum = 0.0;
    for (int i = lo; i <= hi; ++i) {
      double w = cubic_kernel((i - src) / filter_scale);
      tap.weights[i - lo] = w;
      sum += w;
    }
    for (auto& w : tap.weights) w /= sum;
    taps[o] = std::move(tap);
  }
  return taps;
}

int clamp_index(int i, int n) { return std::min(std::max(i, 0), n - 1); }

}  // namespace

Image bicubic_resize(const Image& img, int out_h, int out_w, bool antialias) {
  if (out_h < 1 || out_w < 1) throw DataError("bicubic_resize: zero-size output");
  if (img.height < 1 || img.width < 1 || img.channels < 1)
    throw DataError("bicubic_resize: empty input image");
  auto taps_x = make_taps(img.width, out_w, antialias);
  auto taps_y = make_taps(img.height, out_h, antialias);

  // Horizontal pass, then vertical.
  Image mid = Image::zeros(img.channels, img.height, out_w);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < out_w; ++x) {
        const auto& tap = taps_x[x];
        double acc = 0.0;
        for (size_t i = 0; i < tap.weights.size(); ++i)
          acc += tap.weights[i] * img.at(c, y, clamp_index(tap.start + int(i), img.width));
        mid.at(c, y, x) = acc;
      }
    }
  }
  Image out = Image::zeros(img.channels, out_h, out_w);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const auto& tap = taps_y[y];
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (size_t i = 0; i < tap.weights.size(); ++i)
          acc += tap.weights[i] * mid.at(c, clamp_index(tap.start + int(i), img.height), x);
        out.at(c, y, x) = std::min(1.0, std::max(-1.0, acc));
      }
    }
  }
  return out;
}

Image center_crop_largest(const Image& img, int aspect_w, int aspect_h) {
  if (aspect_w < 1 || aspect_h < 1) throw DataError("center_crop_largest: bad aspect ratio");
  // Largest (w,h) with w*aspect_h == h*aspect_w fitting inside the image.
  int64_t units = std::min(int64_t(img.width) / aspect_w, int64_t(img.height) / aspect_h);
  if (units < 1) throw DataError("center_crop_largest: image smaller than one aspect unit");
  int w = int(units * aspect_w);
  int h = int(units * aspect_h);
  int off_x = (img.width - w) / 2;   // floor: extra pixel drops on the right
  int off_y = (img.height - h) / 2;  // floor: extra pixel drops on the bottom
  Image out = Image::zeros(img.channels, h, w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y + off_y, x + off_x);
  return out;
}

ImagePair make_pair(const Image& hi, int scale) {
  if (scale < 1) throw DataError("make_pair: scale must be >= 1");
  if (hi.height % scale != 0 || hi.width % scale != 0)
    throw DataError("make_pair: image " + std::to_string(hi.width) + "x" + std::to_string(hi.height) +
                    " not divisible by scale " + std::to_string(scale));
  ImagePair pair;
  pair.y0 = hi;
  pair.x = scale == 1 ? hi : bicubic_resize(hi, hi.height / scale, hi.width / scale, true);
  pair.scale_factor = scale;
  return pair;
}

SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "gradients") return SynthKind::gradients;
  if (s == "shapes") return SynthKind::shapes;
  if (s == "gaussians") return SynthKind::gaussians;
  throw DataError("unknown synth dataset kind: " + s);
}

std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::gradients: return "gradients";
    case SynthKind::shapes: return "shapes";
    case SynthKind::gaussians: return "gaussians";
  }
  return "?";
}

namespace {

double smoothstep01(double t) {
  t = std::min(1.0, std::max(0.0, t));
  return t * t * (3.0 - 2.0 * t);
}

void fill_gradient(Image& img, Rng& rng) {
  double ax = rng.uniform(-2.0, 2.0);
  double ay = rng.uniform(-2.0, 2.0);
  double c = rng.uniform(-0.5, 0.5);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double u = img.width > 1 ? double(x) / (img.width - 1) - 0.5 : 0.0;
      double v = img.height > 1 ? double(y) / (img.height - 1) - 0.5 : 0.0;
      img.at(0, y, x) = std::min(1.0, std::max(-1.0, ax * u + ay * v + c));
    }
}

void fill_shapes(Image& img, Rng& rng) {
  // Mild background gradient, then 1..3 soft-edged ellipses/rectangles.
  double ax = rng.uniform(-0.6, 0.6);
  double ay = rng.uniform(-0.6, 0.6);
  double c = rng.uniform(-0.4, 0.4);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double u = img.width > 1 ? double(x) / (img.width - 1) - 0.5 : 0.0;
      double v = img.height > 1 ? double(y) / (img.height - 1) - 0.5 : 0.0;
      img.at(0, y, x) = ax * u + ay * v + c;
    }
  int count = int(rng.uniform_int(1, 3));
  double edge = 1.5;  // soft-edge falloff in pixels
  for (int s = 0; s < count; ++s) {
    bool ellipse = rng.uniform() < 0.5;
    double cx = rng.uniform(0.15, 0.85) * img.width;
    double cy = rng.uniform(0.15, 0.85) * img.height;
    double rx = rng.uniform(0.12, 0.32) * img.width;
    double ry = rng.uniform(0.12, 0.32) * img.height;
    double fill = rng.uniform(-1.0, 1.0);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double coverage;
        if (ellipse) {
          double d = std::sqrt(((x - cx) / rx) * ((x - cx) / rx) + ((y - cy) / ry) * ((y - cy) / ry));
          // signed distance to the boundary, approximated in pixels
          double dist_px = (1.0 - d) * std::min(rx, ry);
          coverage = smoothstep01(0.5 + dist_px / (2.0 * edge));
        } else {
          double dx = std::min(x - (cx - rx), (cx + rx) - x);
          double dy = std::min(y - (cy - ry), (cy + ry) - y);
          double dist_px = std::min(dx, dy);
          coverage = smoothstep01(0.5 + dist_px / (2.0 * edge));
        }
        if (coverage > 0.0) {
          double& v = img.at(0, y, x);
          v = v * (1.0 - coverage) + fill * coverage;
        }
      }
  }
  for (auto& v : img.values) v = std::min(1.0, std::max(-1.0, v));
}

void fill_gaussians(Image& img, Rng& rng) {
  std::fill(img.values.begin(), img.values.end(), rng.uniform(-0.3, 0.3));
  int count = int(rng.uniform_int(2, 5));
  for (int s = 0; s < count; ++s) {
    double cx = rng.uniform(0.1, 0.9) * img.width;
    double cy = rng.uniform(0.1, 0.9) * img.height;
    double sigma = rng.uniform(1.0 / 12.0, 0.25) * img.width;
    double amp = rng.uniform(-1.0, 1.0);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2.0 * sigma * sigma);
        img.at(0, y, x) += amp * std::exp(-r2);
      }
  }
  for (auto& v : img.values) v = std::min(1.0, std::max(-1.0, v));
}

}  // namespace

Image synth_image(SynthKind kind, int hw, Rng& rng) {
  Image img = Image::zeros(1, hw, hw);
  switch (kind) {
    case SynthKind::gradients: fill_gradient(img, rng); break;
    case SynthKind::shapes: fill_shapes(img, rng); break;
    case SynthKind::gaussians: fill_gaussians(img, rng); break;
  }
  return img;
}

std::vector<ImagePair> synth_dataset(SynthKind kind, int n, int hw, int scale, Rng& rng) {
  if (n < 1) throw DataError("synth_dataset: n must be >= 1");
  std::vector<ImagePair> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng item = rng.derive(uint64_t(i));
    out.push_back(make_pair(synth_image(kind, hw, item), scale));
  }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& w : k) w /= sum;
  Image mid = Image::zeros(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img.at(c, y, clamp_index(x + i, img.width));
        mid.at(c, y, x) = acc;
      }
  Image out = Image::zeros(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * mid.at(c, clamp_index(y + i, img.height), x);
        out.at(c, y, x) = acc;
      }
  return out;
}

uint8_t quantize_to_u8(double v) {
  double p = (v + 1.0) * 127.5;
  p = std::floor(p + 0.5);  // round half up
  return uint8_t(std::min(255.0, std::max(0.0, p)));
}

}  // namespace irf
