#include "isrkd/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "isrkd/error.hpp"

namespace isrkd {

Image::Image(int w, int h, int c, float fill)
    : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

// ---------------------------------------------------------------------------
// PPM

namespace {

struct PpmCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  long read_uint(const char* field) {
    skip_space_and_comments();
    long value = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos++] - '0');
      if (value > 1'000'000) throw FormatError(std::string("ppm: ") + field + " too large");
      ++digits;
    }
    if (digits == 0) throw FormatError(std::string("ppm: malformed header, expected ") + field);
    return value;
  }
};

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("ppm: missing magic number");
  int channels = 0;
  if (bytes[1] == '6') {
    channels = 3;
  } else if (bytes[1] == '5') {
    channels = 1;
  } else {
    throw FormatError(std::string("ppm: unsupported format P") + char(bytes[1]) +
                      " (only binary P5/P6)");
  }
  PpmCursor cur{bytes, 2};
  const long width = cur.read_uint("width");
  const long height = cur.read_uint("height");
  const long maxval = cur.read_uint("maxval");
  if (width <= 0 || height <= 0) throw FormatError("ppm: zero image dimension");
  if (maxval != 255) throw FormatError("ppm: only maxval 255 is supported");
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos])) {
    throw FormatError("ppm: malformed header terminator");
  }
  ++cur.pos;
  const std::size_t payload = std::size_t(width) * std::size_t(height) * channels;
  if (bytes.size() - cur.pos < payload) throw FormatError("ppm: truncated payload");
  Image image(int(width), int(height), channels);
  for (std::size_t i = 0; i < payload; ++i) image.data[i] = bytes[cur.pos + i] / 255.0f;
  return image;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw FormatError("ppm: cannot encode " + std::to_string(image.channels) + " channels");
  }
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(image.width) + " " + std::to_string(image.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.data.size());
  for (float v : image.data) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  return out;
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

void write_ppm(const Image& image, const std::string& path) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Colour

namespace {

void require_rgb(const Image& image, const char* op) {
  if (image.channels != 3) {
    throw ShapeError(std::string(op) + ": expected 3 channels, got " +
                     std::to_string(image.channels));
  }
}

}  // namespace

Image rgb_to_ycbcr(const Image& rgb) {
  require_rgb(rgb, "rgb_to_ycbcr");
  Image out(rgb.width, rgb.height, 3);
  for (std::size_t i = 0; i < rgb.data.size(); i += 3) {
    const float r = rgb.data[i], g = rgb.data[i + 1], b = rgb.data[i + 2];
    out.data[i] = 0.299f * r + 0.587f * g + 0.114f * b;
    out.data[i + 1] = 0.5f - 0.168736f * r - 0.331264f * g + 0.5f * b;
    out.data[i + 2] = 0.5f + 0.5f * r - 0.418688f * g - 0.081312f * b;
  }
  return out;
}

Image ycbcr_to_rgb(const Image& ycbcr) {
  require_rgb(ycbcr, "ycbcr_to_rgb");
  Image out(ycbcr.width, ycbcr.height, 3);
  for (std::size_t i = 0; i < ycbcr.data.size(); i += 3) {
    const float y = ycbcr.data[i], cb = ycbcr.data[i + 1] - 0.5f, cr = ycbcr.data[i + 2] - 0.5f;
    out.data[i] = y + 1.402f * cr;
    out.data[i + 1] = y - 0.344136f * cb - 0.714136f * cr;
    out.data[i + 2] = y + 1.772f * cb;
  }
  return out;
}

Image luma(const Image& rgb) {
  if (rgb.channels == 1) return rgb;
  require_rgb(rgb, "luma");
  Image out(rgb.width, rgb.height, 1);
  for (std::size_t p = 0; p < out.data.size(); ++p) {
    out.data[p] = 0.299f * rgb.data[3 * p] + 0.587f * rgb.data[3 * p + 1] +
                  0.114f * rgb.data[3 * p + 2];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

double catmull_rom(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::vector<int> first;            // first source index per output
  std::vector<std::vector<float>> w; // normalized weights per output
};

// Weight table for one axis, clamping source indices to [0, in - 1].
Taps make_taps(int in, int out) {
  const double scale = double(in) / double(out);
  const double support = scale > 1.0 ? 2.0 * scale : 2.0;
  const double stretch = scale > 1.0 ? scale : 1.0;
  Taps taps;
  taps.first.resize(out);
  taps.w.resize(out);
  for (int o = 0; o < out; ++o) {
    const double center = (o + 0.5) * scale - 0.5;
    const int lo = int(std::floor(center - support)) + 1;
    const int hi = int(std::floor(center + support));
    taps.first[o] = lo;
    std::vector<double> weights;
    double total = 0;
    for (int s = lo; s <= hi; ++s) {
      const double w = catmull_rom((s - center) / stretch);
      weights.push_back(w);
      total += w;
    }
    for (double w : weights) taps.w[o].push_back(float(w / total));
  }
  return taps;
}

}  // namespace

Image resize_bicubic(const Image& image, int new_width, int new_height) {
  if (new_width < 1 || new_height < 1) {
    throw ShapeError("resize_bicubic: target dimensions must be >= 1");
  }
  const int c = image.channels;
  const Taps tx = make_taps(image.width, new_width);
  const Taps ty = make_taps(image.height, new_height);

  Image horizontal(new_width, image.height, c);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < new_width; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (std::size_t k = 0; k < tx.w[x].size(); ++k) {
          const int sx = std::clamp(tx.first[x] + int(k), 0, image.width - 1);
          acc += double(tx.w[x][k]) * image.at(sx, y, ch);
        }
        horizontal.at(x, y, ch) = float(acc);
      }
    }
  }
  Image out(new_width, new_height, c);
  for (int y = 0; y < new_height; ++y) {
    for (int x = 0; x < new_width; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (std::size_t k = 0; k < ty.w[y].size(); ++k) {
          const int sy = std::clamp(ty.first[y] + int(k), 0, image.height - 1);
          acc += double(ty.w[y][k]) * horizontal.at(x, sy, ch);
        }
        out.at(x, y, ch) = float(acc);
      }
    }
  }
  return out;
}

Image degrade(const Image& hr, float noise_sigma, std::uint64_t seed) {
  if (hr.width % kScaleFactor != 0 || hr.height % kScaleFactor != 0) {
    throw ShapeError("degrade: HR dimensions " + std::to_string(hr.width) + "x" +
                     std::to_string(hr.height) + " are not divisible by " +
                     std::to_string(kScaleFactor));
  }
  Image lr = resize_bicubic(hr, hr.width / kScaleFactor, hr.height / kScaleFactor);
  if (noise_sigma > 0.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, noise_sigma);
    for (auto& v : lr.data) v += noise(rng);
  }
  return clamp_unit(std::move(lr));
}

// ---------------------------------------------------------------------------
// Augmentation

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        out.at(image.width - 1 - x, y, c) = image.at(x, y, c);
  return out;
}

Image rotate90(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(y, image.width - 1 - x, c) = image.at(x, y, c);
  return out;
}

Image rotate_quarters(const Image& image, int quarters) {
  Image out = image;
  for (int i = 0; i < ((quarters % 4) + 4) % 4; ++i) out = rotate90(out);
  return out;
}

Image center_crop(const Image& image, int size) {
  size = std::min({size, image.width, image.height});
  const int x0 = (image.width - size) / 2, y0 = (image.height - size) / 2;
  Image out(size, size, image.channels);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(x0 + x, y0 + y, c);
  return out;
}

AugmentDraw draw_augment(std::uint64_t seed, const AugmentOptions& options) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> turn(0, 2);
  AugmentDraw draw;
  draw.flip = coin(rng);
  static constexpr int kQuarters[3] = {0, 1, 3};
  draw.quarters = kQuarters[turn(rng)];
  if (options.force_flip) draw.flip = *options.force_flip;
  if (options.force_quarters) draw.quarters = *options.force_quarters;
  return draw;
}

Image apply_augment(const Image& image, const AugmentDraw& draw) {
  return rotate_quarters(draw.flip ? flip_horizontal(image) : image, draw.quarters);
}

EdgeMap apply_augment(const EdgeMap& edges, const AugmentDraw& draw) {
  return edge_map_from_image(apply_augment(image_from_edge_map(edges), draw));
}

Image augment(const Image& image, std::uint64_t seed, const AugmentOptions& options) {
  Image base = image;
  if (options.crop_and_resize) base = resize_bicubic(center_crop(image, 178), 128, 128);
  return apply_augment(base, draw_augment(seed, options));
}

Image clamp_unit(Image image) {
  for (auto& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
  return image;
}

EdgeMap edge_map_from_image(const Image& gray) {
  if (gray.channels != 1) throw ShapeError("edge map requires a single-channel image");
  return EdgeMap{gray.width, gray.height, gray.data};
}

Image image_from_edge_map(const EdgeMap& edges) {
  Image out(edges.width, edges.height, 1);
  out.data = edges.data;
  return out;
}

}  // namespace isrkd
