#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

#include "isrkd/error.hpp"
#include "isrkd/image.hpp"

namespace isrkd {

namespace {

constexpr int kBlurRadius = 2;
constexpr double kBlurSigma = 1.4;

std::array<float, 2 * kBlurRadius + 1> gaussian_taps() {
  std::array<float, 2 * kBlurRadius + 1> taps{};
  double total = 0;
  for (int i = -kBlurRadius; i <= kBlurRadius; ++i) {
    total += std::exp(-(i * i) / (2 * kBlurSigma * kBlurSigma));
  }
  for (int i = -kBlurRadius; i <= kBlurRadius; ++i) {
    taps[i + kBlurRadius] = float(std::exp(-(i * i) / (2 * kBlurSigma * kBlurSigma)) / total);
  }
  return taps;
}

// Separable blur with clamped borders.
std::vector<float> blur(const Image& gray) {
  static const auto taps = gaussian_taps();
  const int w = gray.width, h = gray.height;
  std::vector<float> tmp(std::size_t(w) * h), out(std::size_t(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int k = -kBlurRadius; k <= kBlurRadius; ++k) {
        acc += taps[k + kBlurRadius] * gray.data[std::size_t(y) * w + std::clamp(x + k, 0, w - 1)];
      }
      tmp[std::size_t(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int k = -kBlurRadius; k <= kBlurRadius; ++k) {
        acc += taps[k + kBlurRadius] * tmp[std::size_t(std::clamp(y + k, 0, h - 1)) * w + x];
      }
      out[std::size_t(y) * w + x] = acc;
    }
  return out;
}

// Otsu over a histogram of magnitudes binned on [0, peak]; returns the upper
// edge of the last bin assigned to the background class.
float otsu_threshold(const std::vector<float>& magnitude, float peak) {
  std::array<double, kOtsuBins> hist{};
  for (float m : magnitude) {
    const int bin = std::min(int(m / peak * kOtsuBins), kOtsuBins - 1);
    hist[bin] += 1;
  }
  const double total = double(magnitude.size());
  double sum_all = 0;
  for (int i = 0; i < kOtsuBins; ++i) sum_all += i * hist[i];

  double weight_bg = 0, sum_bg = 0, best = -1;
  int best_bin = 0;
  for (int t = 0; t < kOtsuBins - 1; ++t) {
    weight_bg += hist[t];
    sum_bg += t * hist[t];
    const double weight_fg = total - weight_bg;
    if (weight_bg == 0 || weight_fg == 0) continue;
    const double mean_bg = sum_bg / weight_bg;
    const double mean_fg = (sum_all - sum_bg) / weight_fg;
    const double between = weight_bg * weight_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
    if (between > best) {
      best = between;
      best_bin = t;
    }
  }
  return float(best_bin + 1) / kOtsuBins * peak;
}

}  // namespace

EdgeMap canny_edges(const Image& gray) {
  if (gray.channels != 1) {
    throw ShapeError("canny_edges: expected a single-channel image, got " +
                     std::to_string(gray.channels) + " channels");
  }
  if (gray.width < 5 || gray.height < 5) {
    throw ShapeError("canny_edges: image smaller than 5x5");
  }
  const int w = gray.width, h = gray.height;
  const auto idx = [w](int x, int y) { return std::size_t(y) * w + x; };
  const auto smooth = blur(gray);
  const auto px = [&](int x, int y) {
    return smooth[idx(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1))];
  };

  std::vector<float> magnitude(std::size_t(w) * h);
  std::vector<std::uint8_t> sector(std::size_t(w) * h);
  float peak = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                       (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const float gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                       (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      const float m = std::sqrt(gx * gx + gy * gy);
      magnitude[idx(x, y)] = m;
      peak = std::max(peak, m);
      // Quantize the gradient direction to 0/45/90/135 degrees.
      double angle = std::atan2(double(gy), double(gx)) * 180.0 / M_PI;
      if (angle < 0) angle += 180.0;
      sector[idx(x, y)] = angle < 22.5 || angle >= 157.5 ? 0 : angle < 67.5 ? 1 : angle < 112.5 ? 2 : 3;
    }

  EdgeMap edges{w, h, std::vector<float>(std::size_t(w) * h, 0.0f)};
  if (peak <= 0.0f) return edges;

  // Non-maximum suppression; the outermost ring is never an edge.
  static constexpr int kStep[4][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};
  std::vector<float> thin(std::size_t(w) * h, 0.0f);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const float m = magnitude[idx(x, y)];
      if (m <= 0.0f) continue;
      // Image y grows downward, so the 45-degree gradient points to (+1, +1).
      const auto& s = kStep[sector[idx(x, y)]];
      const float ahead = magnitude[idx(x + s[0], y + s[1])];
      const float behind = magnitude[idx(x - s[0], y - s[1])];
      if (m > ahead && m >= behind) thin[idx(x, y)] = m;
    }

  const float high = otsu_threshold(magnitude, peak);
  const float low = 0.5f * high;

  std::deque<std::pair<int, int>> frontier;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (thin[idx(x, y)] >= high) {
        edges.data[idx(x, y)] = 1.0f;
        frontier.emplace_back(x, y);
      }
    }
  while (!frontier.empty()) {
    const auto [x, y] = frontier.front();
    frontier.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        if (edges.data[idx(nx, ny)] == 0.0f && thin[idx(nx, ny)] >= low) {
          edges.data[idx(nx, ny)] = 1.0f;
          frontier.emplace_back(nx, ny);
        }
      }
  }
  return edges;
}

}  // namespace isrkd
