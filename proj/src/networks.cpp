#include "isrkd/networks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "isrkd/error.hpp"
#include "isrkd/ops.hpp"

namespace isrkd {

// ---------------------------------------------------------------------------
// ParameterSet

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Shape shape) {
  if (contains(name)) throw Error("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), Tensor<T>::zeros(std::move(shape), true));
  return entries_.back().second;
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw Error("unknown parameter " + name);
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw Error("unknown parameter " + name);
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::set_trainable(bool on) {
  for (auto& e : entries_) e.second.set_requires_grad(on);
}

template <typename T>
ParameterSet<T> ParameterSet<T>::clone() const {
  ParameterSet copy;
  for (const auto& [name, t] : entries_) copy.entries_.emplace_back(name, t.clone());
  return copy;
}

namespace {

// He-uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
template <typename T>
void he_uniform(Tensor<T>& t, double fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void add_conv(ParameterSet<T>& params, const std::string& name, std::size_t out,
              std::size_t in, std::size_t k) {
  params.add(name + ".weight", {out, in, k, k});
  params.add(name + ".bias", {out});
}

template <typename T>
void add_transpose_conv(ParameterSet<T>& params, const std::string& name, std::size_t in,
                        std::size_t out, std::size_t k) {
  params.add(name + ".weight", {in, out, k, k});
  params.add(name + ".bias", {out});
}

template <typename T>
void add_dense(ParameterSet<T>& params, const std::string& name, std::size_t in,
               std::size_t out) {
  params.add(name + ".weight", {in, out});
  params.add(name + ".bias", {out});
}

// Fan-in per weight layout: conv [O,C,k,k] -> C*k*k; transpose conv
// [C,O,k,k] with stride 2 -> C*k*k/4; dense [D,M] -> D.
template <typename T>
void init_all(ParameterSet<T>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& [name, t] : params.entries()) {
    if (name.ends_with(".bias")) continue;
    auto tensor = t;
    const auto& s = tensor.shape();
    double fan_in = 0;
    if (s.size() == 2) {
      fan_in = double(s[0]);
    } else if (name.find(".up.") != std::string::npos) {
      fan_in = double(s[0] * s[2] * s[3]) / 4.0;
    } else {
      fan_in = double(s[1] * s[2] * s[3]);
    }
    he_uniform(tensor, fan_in, rng);
  }
}

template <typename T>
Tensor<T> conv_layer(const ParameterSet<T>& p, const std::string& name, const Tensor<T>& x,
                     std::size_t stride = 1) {
  return conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), stride, Padding::same);
}

template <typename T>
Tensor<T> dense_layer(const ParameterSet<T>& p, const std::string& name, const Tensor<T>& x) {
  return dense(x, p.get(name + ".weight"), p.get(name + ".bias"));
}

void require_images(const Shape& s, std::size_t size, const char* who) {
  if (s.size() != 4 || s[1] != 3 || s[2] != size || s[3] != size) {
    throw ShapeError(std::string(who) + ": expected [B,3," + std::to_string(size) + "," +
                     std::to_string(size) + "], got " + shape_str(s));
  }
}

std::string stage_name(int s) { return "stage" + std::to_string(s); }

}  // namespace

// ---------------------------------------------------------------------------
// Edge block

std::size_t edge_block_kernel(std::size_t spatial) {
  switch (spatial) {
    case 32: return 5;
    case 64: return 7;
    case 128: return 10;
    default:
      throw ShapeError("edge_block: unsupported spatial size " + std::to_string(spatial) +
                       " (supported: 32, 64, 128)");
  }
}

template <typename T>
EdgeBlockOutput<T> edge_block(const Tensor<T>& features, const Tensor<T>& weight,
                              const Tensor<T>& bias) {
  if (features.rank() != 4 || features.dim(2) != features.dim(3)) {
    throw ShapeError("edge_block: expected square NCHW features, got " +
                     shape_str(features.shape()));
  }
  const std::size_t kernel = edge_block_kernel(features.dim(2));
  const auto blurred = avg_pool2d(features, kernel);
  const auto raw_edges = sub(features, blurred);
  auto edge_map = conv2d(raw_edges, weight, bias, 1, Padding::same);
  return {concat_channels(features, edge_map), edge_map};
}

// ---------------------------------------------------------------------------
// Generator

template <typename T>
Generator<T>::Generator(GeneratorConfig config) : config_(config) {
  const std::size_t f = config_.features;
  if (f == 0) throw ConfigError("generator: feature width must be positive");
  add_conv(params_, "head", f, 3, 3);
  for (int s = 1; s <= 3; ++s) {
    const std::size_t in = s == 1 ? f : f + 1;
    add_conv(params_, stage_name(s) + ".res.conv1", f, in, 3);
    add_conv(params_, stage_name(s) + ".res.conv2", f, f, 3);
    add_transpose_conv(params_, stage_name(s) + ".up", f, f, 4);
    add_conv(params_, stage_name(s) + ".edge", 1, f, 1);
  }
  add_conv(params_, "tail", 3, f + 1, 3);
  if (config_.extended_tail) {
    for (int i = 1; i <= 6; ++i) {
      const std::size_t in = i == 1 ? 3 : f;
      const std::size_t out = i == 6 ? 3 : f;
      add_conv(params_, "ext" + std::to_string(i), out, in, 3);
    }
  }
}

template <typename T>
Generator<T>::Generator(GeneratorConfig config, std::uint64_t seed) : Generator(config) {
  init_all(params_, seed);
}

template <typename T>
Generator<T> Generator<T>::zeros(GeneratorConfig config) {
  return Generator(config);
}

template <typename T>
GeneratorOutput<T> Generator<T>::forward(const Tensor<T>& lr, ShapeTrace* trace) const {
  require_images(lr.shape(), kLowResSize, "generator");
  const auto note = [trace](const std::string& name, const Tensor<T>& t) {
    if (trace) trace->add(name, t.shape());
  };
  const std::size_t f = config_.features;
  GeneratorOutput<T> out;
  auto h = conv_layer(params_, "head", lr);
  note("head", h);
  for (int s = 1; s <= 3; ++s) {
    const auto name = stage_name(s);
    auto r = relu(conv_layer(params_, name + ".res.conv1", h));
    note(name + ".res.conv1", r);
    r = relu(conv_layer(params_, name + ".res.conv2", r));
    note(name + ".res.conv2", r);
    // Skip path carries the feature channels; the edge channel feeds conv1 only.
    auto res = add(r, slice_channels(h, 0, f));
    note(name + ".res", res);
    if (s == 3) out.bottleneck = res;
    auto up = relu(transpose_conv2d(res, params_.get(name + ".up.weight"),
                                    params_.get(name + ".up.bias"), 2));
    note(name + ".up", up);
    auto edge = edge_block(up, params_.get(name + ".edge.weight"), params_.get(name + ".edge.bias"));
    note(name + ".edge_map", edge.edge_map);
    note(name + ".edge", edge.features_out);
    out.edge_maps[s - 1] = edge.edge_map;
    h = edge.features_out;
  }
  auto sr = conv_layer(params_, "tail", h);
  note("tail", sr);
  if (config_.extended_tail) {
    for (int i = 1; i <= 6; ++i) {
      sr = conv_layer(params_, "ext" + std::to_string(i), sr);
      if (i < 6) sr = relu(sr);
      note("ext" + std::to_string(i), sr);
    }
  }
  out.sr = sr;
  return out;
}

template <typename T>
void Generator<T>::freeze() {
  params_.set_trainable(false);
  frozen_ = true;
}

template <typename T>
Generator<T> Generator<T>::clone() const {
  Generator copy(config_);
  copy.params_ = params_.clone();
  copy.frozen_ = frozen_;
  return copy;
}

template <typename T>
Generator<T> init_student_from_teacher(Generator<T>& teacher, GeneratorConfig student_config,
                                       std::uint64_t seed) {
  if (student_config.features != teacher.config().features) {
    throw ShapeError("init_student_from_teacher: feature width " +
                     std::to_string(student_config.features) + " incompatible with teacher width " +
                     std::to_string(teacher.config().features));
  }
  Generator<T> student(student_config, seed);
  for (const auto& [name, t] : teacher.params().entries()) {
    if (!student.params().contains(name)) {
      throw ShapeError("init_student_from_teacher: student lacks teacher parameter " + name);
    }
    auto& dst = student.params().get(name);
    if (dst.shape() != t.shape()) {
      throw ShapeError("init_student_from_teacher: " + name + " shape " + shape_str(dst.shape()) +
                       " vs teacher " + shape_str(t.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), dst.mutable_data().begin());
  }
  teacher.freeze();
  return student;
}

// ---------------------------------------------------------------------------
// Discriminator

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorConfig config) : config_(config) {
  if (config_.base_width == 0 || config_.hidden == 0) {
    throw ConfigError("discriminator: widths must be positive");
  }
  std::size_t in = 3, spatial = kHighResSize;
  for (std::size_t i = 0; i < 7; ++i) {
    const std::size_t out = config_.base_width * kDiscriminatorWidthMultipliers[i];
    add_conv(params_, "conv" + std::to_string(i + 1), out, in, 3);
    in = out;
    spatial = (spatial + kDiscriminatorStrides[i] - 1) / kDiscriminatorStrides[i];
  }
  add_dense(params_, "fc1", in * spatial * spatial, config_.hidden);
  add_dense(params_, "fc2", config_.hidden, 1);
}

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorConfig config, std::uint64_t seed)
    : Discriminator(config) {
  init_all(params_, seed);
}

template <typename T>
Discriminator<T> Discriminator<T>::zeros(DiscriminatorConfig config) {
  return Discriminator(config);
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& images, ShapeTrace* trace) const {
  require_images(images.shape(), kHighResSize, "discriminator");
  auto h = images;
  for (std::size_t i = 0; i < 7; ++i) {
    const auto name = "conv" + std::to_string(i + 1);
    h = conv_layer(params_, name, h, kDiscriminatorStrides[i]);
    if (i < 6) h = leaky_relu(h, T(kLeakySlope));
    if (trace) trace->add(name, h.shape());
  }
  const std::size_t batch = h.dim(0);
  h = reshape(h, {batch, h.numel() / batch});
  if (trace) trace->add("flatten", h.shape());
  h = leaky_relu(dense_layer(params_, "fc1", h), T(kLeakySlope));
  if (trace) trace->add("fc1", h.shape());
  h = dense_layer(params_, "fc2", h);
  if (trace) trace->add("fc2", h.shape());
  return h;
}

// ---------------------------------------------------------------------------
// Identity embedder

namespace {
constexpr std::array<std::size_t, 4> kEmbedderWidths = {8, 16, 32, 64};
}  // namespace

template <typename T>
IdentityEmbedder<T>::IdentityEmbedder(std::uint64_t seed) {
  std::size_t in = 3;
  for (std::size_t i = 0; i < kEmbedderWidths.size(); ++i) {
    add_conv(params_, "conv" + std::to_string(i + 1), kEmbedderWidths[i], in, 3);
    in = kEmbedderWidths[i];
  }
  add_dense(params_, "fc", in, kIdentityClasses);
  init_all(params_, seed);
  // Small random biases so the logits are not a pure function of scale.
  std::mt19937_64 rng(seed ^ 0xB1A5ull);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (const auto& [name, t] : params_.entries()) {
    if (!name.ends_with(".bias")) continue;
    auto tensor = t;
    for (auto& v : tensor.mutable_data()) v = static_cast<T>(dist(rng));
  }
  params_.set_trainable(false);
}

template <typename T>
Tensor<T> IdentityEmbedder<T>::logits(const Tensor<T>& images) const {
  require_images(images.shape(), kHighResSize, "identity_embed");
  auto h = images;
  for (std::size_t i = 0; i < kEmbedderWidths.size(); ++i) {
    h = relu(conv_layer(params_, "conv" + std::to_string(i + 1), h, 2));
  }
  return dense_layer(params_, "fc", global_avg_pool(h));
}

template <typename T>
Tensor<T> IdentityEmbedder<T>::probabilities(const Tensor<T>& images) const {
  return softmax_rows(logits(images));
}

// ---------------------------------------------------------------------------
// Batches

template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const auto& first = images.front();
  const std::size_t c = first.channels, h = first.height, w = first.width, hw = h * w;
  std::vector<T> values(images.size() * c * hw);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_geometry(first)) throw ShapeError("images_to_tensor: ragged batch");
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch)
        values[(i * c + ch) * hw + p] = static_cast<T>(images[i].data[p * c + ch]);
  }
  return Tensor<T>::from({images.size(), c, h, w}, std::move(values));
}

template <typename T>
Tensor<T> edges_to_tensor(std::span<const EdgeMap> edges) {
  if (edges.empty()) throw ShapeError("edges_to_tensor: empty batch");
  const std::size_t h = edges.front().height, w = edges.front().width;
  std::vector<T> values;
  values.reserve(edges.size() * h * w);
  for (const auto& e : edges) {
    if (std::size_t(e.height) != h || std::size_t(e.width) != w) {
      throw ShapeError("edges_to_tensor: ragged batch");
    }
    for (float v : e.data) values.push_back(static_cast<T>(v));
  }
  return Tensor<T>::from({edges.size(), 1, h, w}, std::move(values));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& batch, std::size_t index) {
  if (batch.rank() != 4 || index >= batch.dim(0)) {
    throw ShapeError("tensor_to_image: bad batch " + shape_str(batch.shape()));
  }
  const std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3), hw = h * w;
  Image out(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < c; ++ch)
      out.data[p * c + ch] = static_cast<float>(batch.data()[(index * c + ch) * hw + p]);
  return out;
}

#define ISRKD_INSTANTIATE_NETWORKS(T)                                                   \
  template class ParameterSet<T>;                                                      \
  template class Generator<T>;                                                         \
  template class Discriminator<T>;                                                     \
  template class IdentityEmbedder<T>;                                                  \
  template EdgeBlockOutput<T> edge_block(const Tensor<T>&, const Tensor<T>&,           \
                                         const Tensor<T>&);                            \
  template Generator<T> init_student_from_teacher(Generator<T>&, GeneratorConfig,      \
                                                  std::uint64_t);                      \
  template Tensor<T> images_to_tensor(std::span<const Image>);                         \
  template Tensor<T> edges_to_tensor(std::span<const EdgeMap>);                        \
  template Image tensor_to_image(const Tensor<T>&, std::size_t);

ISRKD_INSTANTIATE_NETWORKS(float)
ISRKD_INSTANTIATE_NETWORKS(double)

}  // namespace isrkd
