#include "isrkd/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "isrkd/error.hpp"

namespace isrkd {

namespace {

constexpr int kSize = 128;
constexpr std::uint64_t kSourceSalt = 0x50C0FFEEull;
constexpr std::uint64_t kTargetSalt = 0x7A46E7ull;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t salt, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ salt) + index);
}

using Rgb = std::array<float, 3>;

struct Rng {
  std::mt19937_64 engine;
  explicit Rng(std::uint64_t seed) : engine(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine); }
};

Rgb hsv(double h, double s, double v) {
  const double c = v * s, hp = std::fmod(h, 1.0) * 6.0, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  return {float(r + m), float(g + m), float(b + m)};
}

void quantize(Image& img) {
  for (auto& v : img.data) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

// Normalised elliptical radius (1 on the boundary).
double ellipse_radius(double x, double y, double cx, double cy, double rx, double ry, double angle) {
  const double dx = x - cx, dy = y - cy, c = std::cos(angle), s = std::sin(angle);
  const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
  return std::sqrt(u * u + v * v);
}

Image render_source(std::uint64_t seed) {
  Rng rng(seed);
  Image img(kSize, kSize, 3);

  // Background: linear gradient between two muted colours plus a radial glow.
  const Rgb c0 = hsv(rng.uniform(0, 1), rng.uniform(0.1, 0.35), rng.uniform(0.35, 0.7));
  const Rgb c1 = hsv(rng.uniform(0, 1), rng.uniform(0.1, 0.35), rng.uniform(0.35, 0.7));
  const double dir = rng.uniform(0, 2 * M_PI), glow = rng.uniform(0.05, 0.15);
  const double gx = rng.uniform(20, 108), gy = rng.uniform(20, 108);

  // Face: soft ellipse with soft eyes and mouth.
  const double cx = 64 + rng.uniform(-8, 8), cy = 64 + rng.uniform(-8, 8);
  const double rx = rng.uniform(30, 40), ry = rng.uniform(38, 50), tilt = rng.uniform(-0.2, 0.2);
  const Rgb skin = hsv(rng.uniform(0.02, 0.1), rng.uniform(0.25, 0.5), rng.uniform(0.6, 0.85));
  const double softness = rng.uniform(0.06, 0.12);
  const double eye_dx = rx * rng.uniform(0.3, 0.45), eye_y = cy - ry * rng.uniform(0.1, 0.3);
  const double eye_sigma = rng.uniform(3.0, 5.0), mouth_y = cy + ry * rng.uniform(0.35, 0.5);
  const double mouth_w = rx * rng.uniform(0.3, 0.5), mouth_sigma = rng.uniform(2.5, 4.0);
  const Rgb lip = hsv(rng.uniform(0.95, 1.02), rng.uniform(0.3, 0.5), rng.uniform(0.4, 0.6));

  // Smooth texture: a coarse random grid upsampled bicubically.
  Image coarse(8, 8, 1);
  for (auto& v : coarse.data) v = float(rng.uniform(-1, 1));
  const Image texture = resize_bicubic(coarse, kSize, kSize);
  const double texture_amp = rng.uniform(0.01, 0.03);

  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double t = std::clamp(0.5 + ((px - 64) * std::cos(dir) + (py - 64) * std::sin(dir)) / 128.0, 0.0, 1.0);
      const double g = glow * std::exp(-((px - gx) * (px - gx) + (py - gy) * (py - gy)) / (2 * 40.0 * 40.0));
      std::array<double, 3> rgb;
      for (int c = 0; c < 3; ++c) rgb[c] = (1 - t) * c0[c] + t * c1[c] + g;

      const double r = ellipse_radius(px, py, cx, cy, rx, ry, tilt);
      const double alpha = 1.0 / (1.0 + std::exp((r - 1.0) / softness));
      const double shade = 1.0 - 0.15 * r * r;
      const double eyes = std::exp(-((px - cx + eye_dx) * (px - cx + eye_dx) + (py - eye_y) * (py - eye_y)) /
                                   (2 * eye_sigma * eye_sigma)) +
                          std::exp(-((px - cx - eye_dx) * (px - cx - eye_dx) + (py - eye_y) * (py - eye_y)) /
                                   (2 * eye_sigma * eye_sigma));
      const double mdx = std::max(0.0, std::abs(px - cx) - mouth_w);
      const double mouth = std::exp(-(mdx * mdx + (py - mouth_y) * (py - mouth_y)) / (2 * mouth_sigma * mouth_sigma));
      for (int c = 0; c < 3; ++c) {
        double face = skin[c] * shade;
        face = face * (1 - 0.6 * eyes);
        face = face * (1 - 0.7 * mouth) + 0.7 * mouth * lip[c];
        rgb[c] = (1 - alpha) * rgb[c] + alpha * face + texture_amp * texture.at(x, y);
        img.at(x, y, c) = float(rgb[c]);
      }
    }
  quantize(img);
  return img;
}

struct FlatShape {
  enum Kind { ellipse, polygon } kind = ellipse;
  double cx = 0, cy = 0, rx = 0, ry = 0, angle = 0;
  std::vector<std::array<double, 2>> vertices;
  Rgb colour{};

  bool inside(double x, double y) const {
    if (kind == ellipse) return ellipse_radius(x, y, cx, cy, rx, ry, angle) <= 1.0;
    bool in = false;
    for (std::size_t i = 0, j = vertices.size() - 1; i < vertices.size(); j = i++) {
      const auto& a = vertices[i];
      const auto& b = vertices[j];
      if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
    }
    return in;
  }
};

FlatShape random_polygon(Rng& rng, const Rgb& colour) {
  FlatShape s;
  s.kind = FlatShape::polygon;
  s.colour = colour;
  const int corners = rng.integer(3, 5);
  const double cx = rng.uniform(0, kSize), cy = rng.uniform(0, kSize), radius = rng.uniform(20, 50);
  const double start = rng.uniform(0, 2 * M_PI);
  for (int i = 0; i < corners; ++i) {
    const double a = start + 2 * M_PI * i / corners + rng.uniform(-0.3, 0.3);
    const double r = radius * rng.uniform(0.7, 1.0);
    s.vertices.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return s;
}

FlatShape flat_ellipse(double cx, double cy, double rx, double ry, double angle, const Rgb& colour) {
  FlatShape s;
  s.cx = cx, s.cy = cy, s.rx = rx, s.ry = ry, s.angle = angle, s.colour = colour;
  return s;
}

// Paints a shape with a dark outline of the given width (pixels inside the
// shape within `outline` of its boundary).
void paint(Image& img, const FlatShape& shape, int outline, const Rgb& ink) {
  std::vector<std::uint8_t> mask(std::size_t(kSize) * kSize);
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x) mask[std::size_t(y) * kSize + x] = shape.inside(x + 0.5, y + 0.5);
  const auto in = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < kSize && y < kSize && mask[std::size_t(y) * kSize + x];
  };
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x) {
      if (!in(x, y)) continue;
      bool border = false;
      for (int dy = -outline; dy <= outline && !border; ++dy)
        for (int dx = -outline; dx <= outline && !border; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < kSize && ny < kSize && !in(nx, ny)) border = true;
        }
      const Rgb& c = border ? ink : shape.colour;
      for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
    }
}

Rgb saturated(Rng& rng) { return hsv(rng.uniform(0, 1), rng.uniform(0.6, 1.0), rng.uniform(0.65, 1.0)); }

Image render_target(std::uint64_t seed) {
  Rng rng(seed);
  Image img(kSize, kSize, 3);
  const Rgb background = saturated(rng);
  for (int p = 0; p < kSize * kSize; ++p)
    for (int c = 0; c < 3; ++c) img.data[std::size_t(p) * 3 + c] = background[c];
  const Rgb ink = hsv(rng.uniform(0, 1), rng.uniform(0, 0.5), rng.uniform(0.02, 0.12));
  const int outline = rng.integer(1, 2);

  // Face, two eyes and a mouth, plus up to four background polygons: 4-8 regions.
  const int extras = rng.integer(0, 4);
  for (int i = 0; i < extras; ++i) paint(img, random_polygon(rng, saturated(rng)), outline, ink);
  const double cx = 64 + rng.uniform(-8, 8), cy = 64 + rng.uniform(-8, 8);
  const double rx = rng.uniform(30, 40), ry = rng.uniform(38, 50), tilt = rng.uniform(-0.2, 0.2);
  paint(img, flat_ellipse(cx, cy, rx, ry, tilt, saturated(rng)), outline, ink);
  const double eye_dx = rx * rng.uniform(0.3, 0.45), eye_y = cy - ry * rng.uniform(0.1, 0.3);
  const double eye_r = rng.uniform(5, 9);
  const Rgb eye = saturated(rng);
  paint(img, flat_ellipse(cx - eye_dx, eye_y, eye_r, eye_r * 1.3, 0, eye), outline, ink);
  paint(img, flat_ellipse(cx + eye_dx, eye_y, eye_r, eye_r * 1.3, 0, eye), outline, ink);
  paint(img, flat_ellipse(cx, cy + ry * rng.uniform(0.35, 0.5), rx * rng.uniform(0.3, 0.5), rng.uniform(3, 6), 0,
                          saturated(rng)),
        outline, ink);
  quantize(img);
  return img;
}

std::vector<DomainSample> generate(Domain domain, std::uint64_t seed, std::size_t n) {
  if (n == 0) throw ConfigError("sample count must be at least 1");
  const std::uint64_t salt = domain == Domain::source ? kSourceSalt : kTargetSalt;
  std::vector<DomainSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = sample_seed(seed, salt, i);
    out.push_back(make_sample(domain == Domain::source ? render_source(s) : render_target(s), domain, i, s));
  }
  return out;
}

}  // namespace

std::string domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& name) {
  if (name == "source") return Domain::source;
  if (name == "target") return Domain::target;
  throw ConfigError("unknown domain '" + name + "' (expected source or target)");
}

DomainSample make_sample(Image hr, Domain domain, std::uint64_t id, std::uint64_t seed) {
  if (hr.width != kSize || hr.height != kSize || hr.channels != 3) {
    throw ShapeError("samples must be 128x128 RGB, got " + std::to_string(hr.width) + "x" +
                     std::to_string(hr.height) + "x" + std::to_string(hr.channels));
  }
  DomainSample s;
  s.lr = degrade(hr, kDefaultNoiseSigma, seed);
  s.hr_edges = canny_edges(luma(hr));
  s.hr = std::move(hr);
  s.domain = domain;
  s.id = id;
  s.seed = seed;
  return s;
}

bool sample_is_consistent(const DomainSample& s) {
  return s.lr == degrade(s.hr, kDefaultNoiseSigma, s.seed) && s.hr_edges == canny_edges(luma(s.hr));
}

std::vector<DomainSample> gen_source(std::uint64_t seed, std::size_t n) { return generate(Domain::source, seed, n); }
std::vector<DomainSample> gen_target(std::uint64_t seed, std::size_t n) { return generate(Domain::target, seed, n); }
std::vector<DomainSample> gen_domain(Domain domain, std::uint64_t seed, std::size_t n) {
  return generate(domain, seed, n);
}

std::pair<std::vector<DomainSample>, std::vector<DomainSample>> split(std::vector<DomainSample> samples,
                                                                      double train_frac,
                                                                      std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  const std::size_t n_train = std::size_t(std::llround(train_frac * double(samples.size())));
  if (n_train == 0 || n_train == samples.size()) throw ConfigError("split leaves one side empty");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<DomainSample> train, test;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : test).push_back(std::move(samples[order[i]]));
  }
  return {std::move(train), std::move(test)};
}

double edge_density(const EdgeMap& edges) {
  if (edges.data.empty()) return 0.0;
  double on = 0;
  for (float v : edges.data) on += v != 0.0f;
  return on / double(edges.data.size());
}

double mean_gradient_magnitude(const Image& rgb) {
  const Image y = luma(rgb);
  const int w = y.width, h = y.height;
  double acc = 0;
  for (int r = 1; r < h - 1; ++r)
    for (int c = 1; c < w - 1; ++c) {
      const double gx = 0.5 * (y.at(c + 1, r) - y.at(c - 1, r));
      const double gy = 0.5 * (y.at(c, r + 1) - y.at(c, r - 1));
      acc += std::sqrt(gx * gx + gy * gy);
    }
  return acc / double((w - 2) * (h - 2));
}

namespace {

std::string image_name(Domain d, std::uint64_t id) { return domain_name(d) + "_" + std::to_string(id) + ".ppm"; }

}  // namespace

void export_samples(const std::string& dir, std::span<const DomainSample> samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  std::ofstream manifest(std::filesystem::path(dir) / "manifest.csv", std::ios::binary);
  if (!manifest) throw IoError("cannot write manifest in " + dir);
  manifest << "id,domain,seed\n";
  for (const auto& s : samples) {
    write_ppm(s.hr, (std::filesystem::path(dir) / image_name(s.domain, s.id)).string());
    manifest << s.id << "," << domain_name(s.domain) << "," << s.seed << "\n";
  }
  if (!manifest) throw IoError("manifest write failed in " + dir);
}

std::vector<DomainSample> ingest_samples(const std::string& dir) {
  const auto manifest_path = std::filesystem::path(dir) / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open " + manifest_path.string());
  std::string line;
  if (!std::getline(manifest, line) || line != "id,domain,seed") {
    throw FormatError(manifest_path.string() + ": expected header 'id,domain,seed'");
  }
  std::vector<DomainSample> out;
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream fields(line);
    std::string id_text, domain_text, seed_text;
    if (!std::getline(fields, id_text, ',') || !std::getline(fields, domain_text, ',') ||
        !std::getline(fields, seed_text)) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) + ": expected id,domain,seed");
    }
    std::uint64_t id = 0, seed = 0;
    try {
      std::size_t used = 0;
      id = std::stoull(id_text, &used);
      if (used != id_text.size()) throw std::invalid_argument("id");
      seed = std::stoull(seed_text, &used);
      if (used != seed_text.size()) throw std::invalid_argument("seed");
    } catch (const std::exception&) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
    Domain domain;
    try {
      domain = parse_domain(domain_text);
    } catch (const ConfigError& e) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Image hr = read_ppm((std::filesystem::path(dir) / image_name(domain, id)).string());
    out.push_back(make_sample(std::move(hr), domain, id, seed));
  }
  return out;
}

std::vector<Image> hr_images(std::span<const DomainSample> samples) {
  std::vector<Image> out;
  for (const auto& s : samples) out.push_back(s.hr);
  return out;
}

std::vector<Image> lr_images(std::span<const DomainSample> samples) {
  std::vector<Image> out;
  for (const auto& s : samples) out.push_back(s.lr);
  return out;
}

}  // namespace isrkd
