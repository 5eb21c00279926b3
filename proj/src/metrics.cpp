#include "isrkd/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "isrkd/error.hpp"
#include "isrkd/ops.hpp"

namespace isrkd {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr double kCovarianceRidge = 1e-6;
constexpr double kNegativeEigenTolerance = 1e-6;
constexpr std::size_t kEmbedBatch = 8;

void require_same_geometry(const Image& a, const Image& b, const char* op) {
  if (!a.same_geometry(b)) {
    throw ShapeError(std::string(op) + ": image geometry mismatch " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                     std::to_string(b.channels));
  }
}

std::vector<double> gray_plane(const Image& img) {
  const Image y = img.channels == 3 ? luma(img) : img;
  if (y.channels != 1) throw ShapeError("ssim: expected 1 or 3 channels");
  return {y.data.begin(), y.data.end()};
}

// Valid-mode separable Gaussian filter of a w x h plane.
std::vector<double> gaussian_valid(const std::vector<double>& plane, int w, int h,
                                   const std::vector<double>& taps) {
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(std::size_t(ow) * h), out(std::size_t(ow) * oh);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < kSsimWindow; ++k) acc += taps[k] * plane[std::size_t(y) * w + x + k];
      rows[std::size_t(y) * ow + x] = acc;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < kSsimWindow; ++k) acc += taps[k] * rows[std::size_t(y + k) * ow + x];
      out[std::size_t(y) * ow + x] = acc;
    }
  return out;
}

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw NumericalError(std::string("frechet: eigensolver failed on ") + what);
  Eigen::VectorXd values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] < -kNegativeEigenTolerance * scale) {
      throw NumericalError(std::string("frechet: ") + what + " has eigenvalue " + std::to_string(values[i]));
    }
    values[i] = std::sqrt(std::max(values[i], 0.0));
  }
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double psnr_from_mse(double mse) {
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Image& a, const Image& b) {
  require_same_geometry(a, b, "psnr");
  if (a.data.empty()) throw ShapeError("psnr: empty images");
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  return psnr_from_mse(acc / double(a.data.size()));
}

double ssim(const Image& a, const Image& b) {
  require_same_geometry(a, b, "ssim");
  if (a.width < kSsimWindow || a.height < kSsimWindow) {
    throw ShapeError("ssim: image smaller than the 11x11 window");
  }
  std::vector<double> taps(kSsimWindow);
  double total = 0;
  for (int k = 0; k < kSsimWindow; ++k) {
    const double d = k - kSsimWindow / 2;
    total += taps[k] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
  }
  for (auto& t : taps) t /= total;

  const int w = a.width, h = a.height;
  const auto x = gray_plane(a), y = gray_plane(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = gaussian_valid(x, w, h, taps), my = gaussian_valid(y, w, h, taps);
  const auto sxx = gaussian_valid(xx, w, h, taps), syy = gaussian_valid(yy, w, h, taps),
             sxy = gaussian_valid(xy, w, h, taps);
  double acc = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    acc += ((2 * mx[i] * my[i] + kSsimC1) * (2 * cxy + kSsimC2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + kSsimC1) * (vx + vy + kSsimC2));
  }
  return acc / double(mx.size());
}

double frechet_gaussians(std::span<const double> mean_a, std::span<const double> cov_a,
                         std::span<const double> mean_b, std::span<const double> cov_b,
                         std::size_t dim) {
  if (mean_a.size() != dim || mean_b.size() != dim || cov_a.size() != dim * dim || cov_b.size() != dim * dim) {
    throw ShapeError("frechet_gaussians: inconsistent dimensions");
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::MatrixXd sa = Eigen::Map<const RowMat>(cov_a.data(), dim, dim);
  const Eigen::MatrixXd sb = Eigen::Map<const RowMat>(cov_b.data(), dim, dim);
  const Eigen::Map<const Eigen::VectorXd> ma(mean_a.data(), dim), mb(mean_b.data(), dim);

  const Eigen::MatrixXd root_a = symmetric_sqrt(0.5 * (sa + sa.transpose()), "covariance A");
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("frechet: eigensolver failed");
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  double trace_root = 0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    const double v = eig.eigenvalues()[i];
    if (v < -kNegativeEigenTolerance * scale) {
      throw NumericalError("frechet: product covariance has eigenvalue " + std::to_string(v));
    }
    trace_root += std::sqrt(std::max(v, 0.0));
  }
  const double value = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * trace_root;
  return std::max(value, 0.0);
}

double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols != b.cols) throw ShapeError("frechet_distance: feature widths differ");
  if (a.rows < 2 || b.rows < 2) throw ShapeError("frechet_distance: need at least 2 samples per set");
  if (a.data.size() != a.rows * a.cols || b.data.size() != b.rows * b.cols) {
    throw ShapeError("frechet_distance: malformed feature matrix");
  }
  const std::size_t d = a.cols;
  const auto fit = [d](const FeatureMatrix& f, std::vector<double>& mean, std::vector<double>& cov) {
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMat> x(f.data.data(), f.rows, d);
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mu;
    Eigen::MatrixXd c = centered.transpose() * centered / double(f.rows - 1);
    c.diagonal().array() += kCovarianceRidge;
    mean.assign(mu.data(), mu.data() + d);
    cov.resize(d * d);
    Eigen::Map<RowMat>(cov.data(), d, d) = c;
  };
  std::vector<double> ma, ca, mb, cb;
  fit(a, ma, ca);
  fit(b, mb, cb);
  return frechet_gaussians(ma, ca, mb, cb, d);
}

FeatureMatrix embed_features(const IdentityEmbedder<float>& embedder, std::span<const Image> images) {
  FeatureMatrix out{images.size(), kIdentityClasses, {}};
  out.data.reserve(images.size() * kIdentityClasses);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < images.size(); start += kEmbedBatch) {
    const auto chunk = images.subspan(start, std::min(kEmbedBatch, images.size() - start));
    const auto logits = embedder.logits(images_to_tensor<float>(chunk));
    out.data.insert(out.data.end(), logits.data().begin(), logits.data().end());
  }
  return out;
}

MetricsRow evaluate_pairs(std::span<const Image> sr, std::span<const Image> hr,
                          const IdentityEmbedder<float>& embedder) {
  if (sr.empty() || sr.size() != hr.size()) throw ShapeError("evaluate: need equal, nonempty SR and HR sets");
  MetricsRow row;
  row.n = sr.size();
  for (std::size_t i = 0; i < sr.size(); ++i) {
    row.psnr += psnr(sr[i], hr[i]);
    row.ssim += ssim(sr[i], hr[i]);
  }
  row.psnr /= double(sr.size());
  row.ssim /= double(sr.size());
  row.fid_proxy = sr.size() >= 2 ? frechet_distance(embed_features(embedder, sr), embed_features(embedder, hr)) : 0.0;
  return row;
}

std::vector<Image> super_resolve(const Generator<float>& generator, std::span<const Image> lr) {
  std::vector<Image> out;
  out.reserve(lr.size());
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < lr.size(); start += kEmbedBatch) {
    const auto chunk = lr.subspan(start, std::min(kEmbedBatch, lr.size() - start));
    const auto sr = generator.forward(images_to_tensor<float>(chunk)).sr;
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(clamp_unit(tensor_to_image(sr, i)));
  }
  return out;
}

MetricsRow evaluate(const Generator<float>& generator, std::span<const Image> lr,
                    std::span<const Image> hr, const IdentityEmbedder<float>& embedder) {
  const auto sr = super_resolve(generator, lr);
  return evaluate_pairs(sr, hr, embedder);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += r.experiment + "," + r.test_domain + "," + format_double(r.psnr) + "," + format_double(r.ssim) +
           "," + format_double(r.fid_proxy) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << metrics_csv(rows);
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace isrkd
