#include <cmath>
#include <random>

#include "doctest.h"
#include "isrkd/metrics.hpp"

using namespace isrkd;

namespace {

Image random_image(int w, int h, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(w, h, c);
  for (auto& v : img.data) v = u(rng);
  return img;
}

// Direct per-window SSIM on single-channel images.
double ssim_oracle(const Image& a, const Image& b) {
  double w[11][11], total = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) total += w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  double acc = 0;
  int windows = 0;
  for (int y0 = 0; y0 + 11 <= a.height; ++y0)
    for (int x0 = 0; x0 + 11 <= a.width; ++x0) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          mx += w[i][j] / total * a.at(x0 + j, y0 + i);
          my += w[i][j] / total * b.at(x0 + j, y0 + i);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double dx = a.at(x0 + j, y0 + i) - mx, dy = b.at(x0 + j, y0 + i) - my;
          vx += w[i][j] / total * dx * dx;
          vy += w[i][j] / total * dy * dy;
          cxy += w[i][j] / total * dx * dy;
        }
      const double c1 = 1e-4, c2 = 9e-4;
      acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  return acc / windows;
}

FeatureMatrix gaussian_cloud(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  FeatureMatrix f{n, d, std::vector<double>(n * d)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) f.data[i * d + k] = g(rng) + (k == 0 ? shift : 0.0);
  return f;
}

}  // namespace

TEST_CASE("psnr closed forms") {
  const auto a = random_image(16, 16, 3, 1);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(psnr_from_mse(1.0) == 0.0);
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0).epsilon(1e-12));

  // 64 of 100 pixels differ by 1/8: MSE = 64/64/100 = 0.01 exactly.
  Image x(10, 10, 1, 0.5f), y(10, 10, 1, 0.5f);
  for (int i = 0; i < 64; ++i) y.data[i] += 0.125f;
  CHECK(psnr(x, y) == 20.0);

  CHECK_THROWS_AS(psnr(a, random_image(8, 8, 3, 2)), ShapeError);
}

TEST_CASE("psnr falls as noise grows") {
  const Image base(32, 32, 3, 0.5f);
  std::mt19937_64 rng(3);
  double previous = kPsnrCap + 1;
  for (float sigma : {0.01f, 0.05f, 0.2f}) {
    std::normal_distribution<float> g(0.0f, sigma);
    Image noisy = base;
    for (auto& v : noisy.data) v += g(rng);
    const double p = psnr(base, noisy);
    CHECK(p > 0.0);
    CHECK(p < previous);
    previous = p;
  }
}

TEST_CASE("ssim") {
  const auto a = random_image(24, 20, 1, 4);
  const auto b = random_image(24, 20, 1, 5);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
  CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-9));

  // Checkerboard against its inverse anticorrelates in every window.
  Image board(16, 16, 1), inverse(16, 16, 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      board.at(x, y) = float((x + y) % 2);
      inverse.at(x, y) = 1.0f - board.at(x, y);
    }
  const double anti = ssim(board, inverse);
  CHECK(anti < 0.0);
  CHECK(anti == doctest::Approx(ssim_oracle(board, inverse)).epsilon(1e-9));

  // RGB input is scored on luma.
  const auto rgb = random_image(16, 16, 3, 6);
  const auto rgb2 = random_image(16, 16, 3, 7);
  CHECK(ssim(rgb, rgb2) == doctest::Approx(ssim(luma(rgb), luma(rgb2))).epsilon(1e-12));

  // Small luminance shifts barely move SSIM.
  const auto photo = random_image(32, 32, 3, 8);
  for (float c : {0.5f / 255.0f, 1.0f / 255.0f, 2.0f / 255.0f}) {
    Image shifted = photo;
    for (auto& v : shifted.data) v += c;
    CHECK(ssim(photo, shifted) > 0.99);
  }

  CHECK_THROWS_AS(ssim(Image(10, 10, 1), Image(10, 10, 1)), ShapeError);
}

TEST_CASE("frechet distance") {
  // Means 0/1, variances 1/4: 1 + (1 + 4 - 2*2) = 2.
  const double m0 = 0, m1 = 1, v1 = 1, v4 = 4;
  CHECK(frechet_gaussians({&m0, 1}, {&v1, 1}, {&m1, 1}, {&v4, 1}, 1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std::abs(frechet_gaussians({&m0, 1}, {&v1, 1}, {&m1, 1}, {&v4, 1}, 1) - 2.0) < 1e-6);

  const auto a = gaussian_cloud(64, 512, 0.0, 9);
  CHECK(frechet_distance(a, a) < 1e-6);
  const auto b = gaussian_cloud(80, 512, 0.3, 10);
  CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-6 * frechet_distance(a, b) + 1e-6);

  // Monte Carlo: N(0, I) vs N(delta e1, I) approaches delta^2.
  const double delta = 2.0;
  const double mc = frechet_distance(gaussian_cloud(20000, 8, 0.0, 11), gaussian_cloud(20000, 8, delta, 12));
  CHECK(std::abs(mc - delta * delta) < 0.1 * delta * delta);

  CHECK_THROWS_AS(frechet_distance(gaussian_cloud(1, 4, 0, 1), gaussian_cloud(5, 4, 0, 2)), ShapeError);
  CHECK_THROWS_AS(frechet_distance(gaussian_cloud(5, 3, 0, 1), gaussian_cloud(5, 4, 0, 2)), ShapeError);
  const double bad_cov = -1.0;
  CHECK_THROWS_AS(frechet_gaussians({&m0, 1}, {&bad_cov, 1}, {&m1, 1}, {&v4, 1}, 1), NumericalError);
}

TEST_CASE("evaluation") {
  IdentityEmbedder<float> embedder;
  std::vector<Image> hr, lr;
  for (int i = 0; i < 8; ++i) {
    hr.push_back(random_image(128, 128, 3, 100 + i));
    lr.push_back(degrade(hr.back(), 0.0f, 0));
  }
  const auto self = evaluate_pairs(hr, hr, embedder);
  CHECK(self.psnr == kPsnrCap);
  CHECK(self.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(self.fid_proxy < 1e-6);
  CHECK(self.n == 8);

  std::vector<Image> bicubic;
  for (const auto& l : lr) bicubic.push_back(clamp_unit(resize_bicubic(l, 128, 128)));
  const auto baseline = evaluate_pairs(bicubic, hr, embedder);
  CHECK(std::isfinite(baseline.psnr));
  CHECK(baseline.psnr > 0.0);
  CHECK(baseline.ssim <= 1.0);
  CHECK(baseline.fid_proxy >= 0.0);

  Generator<float> g({.features = 4}, 1);
  const auto a = evaluate(g, lr, hr, embedder);
  const auto b = evaluate(g, lr, hr, embedder);
  CHECK(metrics_csv({a}) == metrics_csv({b}));
  for (const auto& img : super_resolve(g, lr)) {
    CHECK(img.width == 128);
    for (float v : img.data) CHECK((v >= 0.0f && v <= 1.0f));
  }
}

TEST_CASE("metrics csv") {
  MetricsRow row{"mix_0_64", "source", 24.5, 0.71, 44.25, 8};
  CHECK(metrics_csv({row, row}) ==
        "experiment,test_domain,psnr,ssim,fid_proxy,n\n"
        "mix_0_64,source,24.500000,0.710000,44.250000,8\n"
        "mix_0_64,source,24.500000,0.710000,44.250000,8\n");
}
