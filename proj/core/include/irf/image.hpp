#pragma once

#include <string>
#include <vector>

#include "irf/rng.hpp"
#include "irf/tensor.hpp"

namespace irf {

// Planar image in the [-1,1] working range; 8-bit I/O converts at the
// boundary via v = p/127.5 - 1.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // [c][y][x]

  int64_t numel() const { return int64_t(channels) * height * width; }
  double& at(int c, int y, int x) { return values[(int64_t(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return values[(int64_t(c) * height + y) * width + x]; }

  static Image zeros(int channels, int height, int width);

  template <typename T>
  Tensor<T> to_tensor() const {
    std::vector<T> v(values.begin(), values.end());
    return Tensor<T>::from_vector({channels, height, width}, std::move(v));
  }
  template <typename T>
  static Image from_tensor(const Tensor<T>& t) {
    Image img;
    img.channels = t.shape[0];
    img.height = t.shape[1];
    img.width = t.shape[2];
    img.values.assign(t.ptr(), t.ptr() + t.numel());
    return img;
  }
};

struct ImagePair {
  Image x;   // low resolution
  Image y0;  // high resolution target
  int scale_factor = 1;
};

// Catmull-Rom (a = -0.5) resampling with clamped edges. With antialias on
// and a downscale, the kernel support widens by the scale factor. Output is
// clipped to [-1,1].
Image bicubic_resize(const Image& img, int out_h, int out_w, bool antialias);

// Largest centered crop with the given aspect ratio; odd remainders drop the
// extra pixel from the bottom/right.
Image center_crop_largest(const Image& img, int aspect_w, int aspect_h);

// x = antialiased bicubic downscale of hi by `scale`; y0 = hi.
ImagePair make_pair(const Image& hi, int scale);

enum class SynthKind { gradients, shapes, gaussians };
SynthKind synth_kind_from_string(const std::string& s);
std::string to_string(SynthKind k);

// Procedural grayscale datasets, reproducible from the rng seed.
std::vector<ImagePair> synth_dataset(SynthKind kind, int n, int hw, int scale, Rng& rng);
Image synth_image(SynthKind kind, int hw, Rng& rng);

// Separable Gaussian blur (sigma <= 0 returns the input unchanged).
Image gaussian_blur(const Image& img, double sigma);

// 8-bit grayscale/RGB PNG I/O. Loading maps to [-1,1]; saving rounds half
// away from zero and clamps. Errors name the offending path.
Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

// Loads every "<dir>/<name>.png" (sorted by name) as a high-res target and
// derives the low-res input on the fly.
std::vector<ImagePair> load_pairs(const std::string& dir, int scale);

uint8_t quantize_to_u8(double v);

}  // namespace irf
