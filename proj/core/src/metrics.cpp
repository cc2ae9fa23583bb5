#include "irf/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "irf/common.hpp"

namespace irf {

namespace {

constexpr double kPsnrCap = 99.0;
constexpr double kPeak = 2.0;

void require_same_shape(const Image& a, const Image& b, const char* op) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw DataError(std::string(op) + ": image shapes differ (" + std::to_string(a.channels) + "x" +
                    std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                    std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" +
                    std::to_string(b.width) + ")");
}

double mse(const Image& a, const Image& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a.values[i] - b.values[i];
    acc += d * d;
  }
  return acc / double(a.numel());
}

}  // namespace

FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "identity_pixels") return FeatureKind::identity_pixels;
  if (s == "patch_moments") return FeatureKind::patch_moments;
  throw DataError("unknown feature kind: " + s);
}

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(kPeak * kPeak / m));
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  constexpr int win = 11;
  constexpr double sigma = 1.5;
  constexpr double k1 = 0.01, k2 = 0.03, L = 2.0;
  const double c1 = (k1 * L) * (k1 * L);
  const double c2 = (k2 * L) * (k2 * L);
  if (a.height < win || a.width < win)
    throw DataError("ssim: image smaller than the 11x11 window");

  double kernel[win];
  double ksum = 0.0;
  for (int i = 0; i < win; ++i) {
    double d = i - (win - 1) / 2.0;
    kernel[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    ksum += kernel[i];
  }
  for (auto& k : kernel) k /= ksum;

  int oh = a.height - win + 1, ow = a.width - win + 1;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    // Separable passes over the five per-pixel products.
    auto blur = [&](auto getter) {
      std::vector<double> mid(size_t(a.height) * ow, 0.0);
      for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int i = 0; i < win; ++i) acc += kernel[i] * getter(y, x + i);
          mid[size_t(y) * ow + x] = acc;
        }
      std::vector<double> out(size_t(oh) * ow, 0.0);
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int i = 0; i < win; ++i) acc += kernel[i] * mid[size_t(y + i) * ow + x];
          out[size_t(y) * ow + x] = acc;
        }
      return out;
    };
    auto mu_a = blur([&](int y, int x) { return a.at(c, y, x); });
    auto mu_b = blur([&](int y, int x) { return b.at(c, y, x); });
    auto r_aa = blur([&](int y, int x) { return a.at(c, y, x) * a.at(c, y, x); });
    auto r_bb = blur([&](int y, int x) { return b.at(c, y, x) * b.at(c, y, x); });
    auto r_ab = blur([&](int y, int x) { return a.at(c, y, x) * b.at(c, y, x); });
    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      double va = r_aa[i] - mu_a[i] * mu_a[i];
      double vb = r_bb[i] - mu_b[i] * mu_b[i];
      double vab = r_ab[i] - mu_a[i] * mu_b[i];
      double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * vab + c2);
      double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
      acc += num / den;
    }
    total += acc / double(mu_a.size());
  }
  return total / a.channels;
}

ConsistencyResult consistency_mse(const Image& output_hi, const Image& input_lo, int scale) {
  if (scale < 1) throw DataError("consistency_mse: scale must be >= 1");
  if (output_hi.height != input_lo.height * scale || output_hi.width != input_lo.width * scale ||
      output_hi.channels != input_lo.channels)
    throw DataError("consistency_mse: dimensions incompatible with scale " + std::to_string(scale));
  Image down = scale == 1 ? output_hi
                          : bicubic_resize(output_hi, input_lo.height, input_lo.width, true);
  ConsistencyResult r;
  r.mse = mse(down, input_lo);
  r.mse_x1e5 = r.mse * 1e5;
  return r;
}

std::vector<double> patch_moment_features(const Image& img) {
  if (img.height < 3 || img.width < 3)
    throw DataError("patch_moment_features: image smaller than a 3x3 patch");
  std::vector<double> feat;
  feat.reserve(size_t(img.channels) * 6);
  for (int c = 0; c < img.channels; ++c) {
    double sm = 0, sm2 = 0, sv = 0, sv2 = 0, sg = 0, sg2 = 0;
    int64_t n = 0;
    for (int y = 1; y + 1 < img.height; ++y)
      for (int x = 1; x + 1 < img.width; ++x) {
        double sum = 0, sum2 = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            double v = img.at(c, y + dy, x + dx);
            sum += v;
            sum2 += v * v;
          }
        double m = sum / 9.0;
        double v = sum2 / 9.0 - m * m;
        double gx = (img.at(c, y, x + 1) - img.at(c, y, x - 1)) * 0.5;
        double gy = (img.at(c, y + 1, x) - img.at(c, y - 1, x)) * 0.5;
        double g = gx * gx + gy * gy;
        sm += m;
        sm2 += m * m;
        sv += v;
        sv2 += v * v;
        sg += g;
        sg2 += g * g;
        ++n;
      }
    auto push_mean_std = [&](double s, double s2) {
      double mean = s / double(n);
      double var = std::max(0.0, s2 / double(n) - mean * mean);
      feat.push_back(mean);
      feat.push_back(std::sqrt(var));
    };
    push_mean_std(sm, sm2);
    push_mean_std(sv, sv2);
    push_mean_std(sg, sg2);
  }
  return feat;
}

FeatureStats fit_stats_vectors(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) throw DataError("fit_stats: need at least 2 samples");
  int dim = int(features[0].size());
  for (const auto& f : features)
    if (int(f.size()) != dim) throw DataError("fit_stats: inconsistent feature dimensionality");
  FeatureStats s;
  s.dim = dim;
  s.count = int64_t(features.size());
  s.mean.assign(dim, 0.0);
  for (const auto& f : features)
    for (int i = 0; i < dim; ++i) s.mean[i] += f[i];
  for (auto& m : s.mean) m /= double(s.count);
  s.cov.assign(size_t(dim) * dim, 0.0);
  for (const auto& f : features)
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        s.cov[size_t(i) * dim + j] += (f[i] - s.mean[i]) * (f[j] - s.mean[j]);
  for (auto& c : s.cov) c /= double(s.count - 1);
  return s;
}

FeatureStats fit_stats(const std::vector<Image>& images, FeatureKind feature) {
  std::vector<std::vector<double>> feats;
  feats.reserve(images.size());
  for (const auto& img : images) {
    if (feature == FeatureKind::identity_pixels)
      feats.push_back(img.values);
    else
      feats.push_back(patch_moment_features(img));
  }
  return fit_stats_vectors(feats);
}

void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigenvalues,
                  std::vector<double>& eigenvectors) {
  eigenvectors.assign(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eigenvectors[size_t(i) * n + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[size_t(i) * n + j]; };
  auto V = [&](int i, int j) -> double& { return eigenvectors[size_t(i) * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-30) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(A(p, q)) < 1e-300) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eigenvalues.resize(n);
  for (int i = 0; i < n; ++i) eigenvalues[i] = A(i, i);
}

namespace {

// B = M1 * M2 for row-major n x n.
std::vector<double> matmul_sq(const std::vector<double>& m1, const std::vector<double>& m2, int n) {
  std::vector<double> out(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double v = m1[size_t(i) * n + k];
      if (v == 0.0) continue;
      for (int j = 0; j < n; ++j) out[size_t(i) * n + j] += v * m2[size_t(k) * n + j];
    }
  return out;
}

constexpr double kEigTolerance = -1e-10;

std::vector<double> sqrtm_spd(const std::vector<double>& m, int n) {
  std::vector<double> evals, evecs;
  jacobi_eigen(m, n, evals, evecs);
  for (auto& l : evals) {
    if (l < kEigTolerance) throw NumericError("frechet: matrix square root failed, eigenvalue " +
                                              std::to_string(l) + " below tolerance");
    l = std::sqrt(std::max(0.0, l));
  }
  std::vector<double> out(size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += evecs[size_t(i) * n + k] * evals[k] * evecs[size_t(j) * n + k];
      out[size_t(i) * n + j] = acc;
    }
  return out;
}

}  // namespace

double frechet(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim != b.dim) throw DataError("frechet: dimensionality mismatch " + std::to_string(a.dim) +
                                      " vs " + std::to_string(b.dim));
  int n = a.dim;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (std::abs(a.cov[size_t(i) * n + j] - a.cov[size_t(j) * n + i]) > 1e-10 ||
          std::abs(b.cov[size_t(i) * n + j] - b.cov[size_t(j) * n + i]) > 1e-10)
        throw NumericError("frechet: covariance not symmetric within tolerance");
    }
  double mean_term = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = a.mean[i] - b.mean[i];
    mean_term += d * d;
  }
  // tr((C1 C2)^{1/2}) via the symmetric form S1 C2 S1.
  std::vector<double> s1 = sqrtm_spd(a.cov, n);
  std::vector<double> inner = matmul_sq(matmul_sq(s1, b.cov, n), s1, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double avg = 0.5 * (inner[size_t(i) * n + j] + inner[size_t(j) * n + i]);
      inner[size_t(i) * n + j] = inner[size_t(j) * n + i] = avg;
    }
  std::vector<double> evals, evecs;
  jacobi_eigen(inner, n, evals, evecs);
  double trace_root = 0.0;
  for (double l : evals) {
    if (l < kEigTolerance)
      throw NumericError("frechet: product eigenvalue " + std::to_string(l) + " below tolerance");
    trace_root += std::sqrt(std::max(0.0, l));
  }
  double tr1 = 0.0, tr2 = 0.0;
  for (int i = 0; i < n; ++i) {
    tr1 += a.cov[size_t(i) * n + i];
    tr2 += b.cov[size_t(i) * n + i];
  }
  return std::max(0.0, mean_term + tr1 + tr2 - 2.0 * trace_root);
}

}  // namespace irf
