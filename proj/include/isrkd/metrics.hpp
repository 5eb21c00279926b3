#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "isrkd/image.hpp"
#include "isrkd/networks.hpp"

namespace isrkd {

inline constexpr double kPsnrCap = 100.0;

double psnr_from_mse(double mse);
// Over all channels; images in [0,1]. Identical images give kPsnrCap.
double psnr(const Image& a, const Image& b);

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) on the Y channel.
// Three-channel inputs are converted to luma; one-channel inputs are used as-is.
double ssim(const Image& a, const Image& b);

// Row-major [rows, cols] feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
};

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet_gaussians(std::span<const double> mean_a, std::span<const double> cov_a,
                         std::span<const double> mean_b, std::span<const double> cov_b,
                         std::size_t dim);
// Gaussian fit per set (N-1 normalisation, 1e-6 ridge), then frechet_gaussians.
double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b);

struct MetricsRow {
  std::string experiment;
  std::string test_domain;
  double psnr = 0;
  double ssim = 0;
  double fid_proxy = 0;
  std::size_t n = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::uint64_t seed = 0;
};

// Embedder logits for a set of 128x128 RGB images.
FeatureMatrix embed_features(const IdentityEmbedder<float>& embedder, std::span<const Image> images);

// Mean PSNR/SSIM over (sr, hr) pairs and proxy-FID between the two sets.
MetricsRow evaluate_pairs(std::span<const Image> sr, std::span<const Image> hr,
                          const IdentityEmbedder<float>& embedder);

// Super-resolves every LR image (output clamped to [0,1]) and scores it against HR.
std::vector<Image> super_resolve(const Generator<float>& generator, std::span<const Image> lr);
MetricsRow evaluate(const Generator<float>& generator, std::span<const Image> lr,
                    std::span<const Image> hr, const IdentityEmbedder<float>& embedder);

inline constexpr const char* kMetricsCsvHeader = "experiment,test_domain,psnr,ssim,fid_proxy,n";
std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace isrkd
