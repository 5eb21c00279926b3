#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace isrkd {

// Interleaved (HWC) image with compute values in [0, 1]. 8-bit storage only
// exists at the PPM boundary.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f);

  float& at(int x, int y, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  bool same_geometry(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// Single-channel edge map: strictly {0, 1} for Canny ground truth.
struct EdgeMap {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  float at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  friend bool operator==(const EdgeMap&, const EdgeMap&) = default;
};

// ---- PPM (P6 RGB / P5 gray, maxval 255) ----
Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);
Image read_ppm(const std::string& path);
void write_ppm(const Image& image, const std::string& path);

// ---- colour ----
// BT.601 full range on unit-scale values; chroma is offset by 0.5.
Image rgb_to_ycbcr(const Image& rgb);
Image ycbcr_to_rgb(const Image& ycbcr);
// Y channel as a one-channel image.
Image luma(const Image& rgb);

// ---- resampling and degradation ----
// Catmull-Rom (a = -0.5) cubic convolution with clamped borders. When
// shrinking, the kernel is widened by the scale factor (antialiased).
Image resize_bicubic(const Image& image, int new_width, int new_height);

inline constexpr int kScaleFactor = 8;
inline constexpr float kDefaultNoiseSigma = 2.0f / 255.0f;

// 8x bicubic downsample plus N(0, sigma^2) noise, clamped to [0, 1].
Image degrade(const Image& hr, float noise_sigma, std::uint64_t seed);

// ---- edges ----
// Gaussian 5x5 (sigma 1.4) -> Sobel -> non-maximum suppression -> hysteresis.
// The high threshold is Otsu's threshold over a kOtsuBins-bin histogram of the
// gradient magnitude (range [0, max]); low = 0.5 * high.
inline constexpr int kOtsuBins = 256;
EdgeMap canny_edges(const Image& gray);

// ---- augmentation ----
Image flip_horizontal(const Image& image);
// Quarter turn: pixel (x, y) lands at (y, W - 1 - x).
Image rotate90(const Image& image);
Image rotate_quarters(const Image& image, int quarters);
Image center_crop(const Image& image, int size);

struct AugmentOptions {
  bool crop_and_resize = false;  // center-crop to 178, resize to 128
  std::optional<bool> force_flip;
  std::optional<int> force_quarters;  // 0, 1 or 3
};

// The geometric choices one augment() call makes, so paired images (HR, LR,
// edge map) can receive the same transform.
struct AugmentDraw {
  bool flip = false;
  int quarters = 0;
};

AugmentDraw draw_augment(std::uint64_t seed, const AugmentOptions& options = {});
Image apply_augment(const Image& image, const AugmentDraw& draw);
EdgeMap apply_augment(const EdgeMap& edges, const AugmentDraw& draw);
Image augment(const Image& image, std::uint64_t seed, const AugmentOptions& options = {});

// Pixel-wise clamp to [0, 1].
Image clamp_unit(Image image);

EdgeMap edge_map_from_image(const Image& gray);
Image image_from_edge_map(const EdgeMap& edges);

}  // namespace isrkd
