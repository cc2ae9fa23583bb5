#pragma once

#include <string>
#include <vector>

#include "irf/image.hpp"

namespace irf {

// Gaussian fit of a feature set; the Fréchet proxy compares two of these.
struct FeatureStats {
  int dim = 0;
  int64_t count = 0;
  std::vector<double> mean;  // dim
  std::vector<double> cov;   // dim x dim, row-major, symmetric PSD
};

enum class FeatureKind { identity_pixels, patch_moments };
FeatureKind feature_kind_from_string(const std::string& s);

// Peak signal-to-noise ratio in dB, peak = 2.0 for the [-1,1] range;
// identical images report the 99 dB cap.
double psnr(const Image& a, const Image& b);

// Mean local SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
// dynamic range 2.0, averaged over channels.
double ssim(const Image& a, const Image& b);

struct ConsistencyResult {
  double mse = 0;       // raw
  double mse_x1e5 = 0;  // Table-style display scale
};

// MSE between the antialiased bicubic downscale of output_hi and input_lo.
ConsistencyResult consistency_mse(const Image& output_hi, const Image& input_lo, int scale);

FeatureStats fit_stats(const std::vector<Image>& images, FeatureKind feature);
FeatureStats fit_stats_vectors(const std::vector<std::vector<double>>& features);

// |m1-m2|^2 + tr(C1 + C2 - 2 (C1 C2)^{1/2}); the matrix root comes from a
// symmetric eigendecomposition with negative eigenvalues clipped at -1e-10.
double frechet(const FeatureStats& a, const FeatureStats& b);

// Feature vector used by fit_stats(patch_moments): per channel, mean/std of
// 3x3-patch means, variances, and centered-gradient energies (6 per channel).
std::vector<double> patch_moment_features(const Image& img);

// Symmetric eigendecomposition via cyclic Jacobi. Exposed for tests.
void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigenvalues,
                  std::vector<double>& eigenvectors);

}  // namespace irf
