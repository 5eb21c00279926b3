#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isrkd/image.hpp"
#include "isrkd/tensor.hpp"

namespace isrkd {

// Ordered collection of named parameter tensors.
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(std::string name, Shape shape);
  bool contains(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;
  std::size_t scalar_count() const;
  void set_trainable(bool on);
  // Deep copy: the new set shares no storage with this one.
  ParameterSet clone() const;

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

// Records the output shape of each layer during a forward pass.
struct ShapeTrace {
  std::vector<std::pair<std::string, Shape>> layers;
  void add(std::string name, const Shape& shape) { layers.emplace_back(std::move(name), shape); }
};

// ---- edge block ----

// Pooling kernel for the edge block at a given (square) spatial size.
std::size_t edge_block_kernel(std::size_t spatial);

template <typename T>
struct EdgeBlockOutput {
  Tensor<T> features_out;  // input features with the edge map appended
  Tensor<T> edge_map;      // [B,1,H,W]
};

// blurred = avg_pool(features); edge_map = pointwise_conv(features - blurred);
// output = concat(features, edge_map).
template <typename T>
EdgeBlockOutput<T> edge_block(const Tensor<T>& features, const Tensor<T>& weight,
                              const Tensor<T>& bias);

// ---- generator ----

struct GeneratorConfig {
  std::size_t features = 64;
  bool extended_tail = false;  // six extra SAME convs after the tail conv
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

template <typename T>
struct GeneratorOutput {
  Tensor<T> sr;                        // [B,3,128,128], unclamped
  std::array<Tensor<T>, 3> edge_maps;  // [B,1,32,32], [B,1,64,64], [B,1,128,128]
  Tensor<T> bottleneck;                // stage-3 residual output, [B,F,64,64]
};

inline constexpr std::size_t kLowResSize = 16;
inline constexpr std::size_t kHighResSize = 128;

template <typename T>
class Generator {
 public:
  // He-uniform weights, zero biases.
  Generator(GeneratorConfig config, std::uint64_t seed);
  static Generator zeros(GeneratorConfig config);

  GeneratorOutput<T> forward(const Tensor<T>& lr, ShapeTrace* trace = nullptr) const;

  const GeneratorConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  void freeze();
  bool frozen() const { return frozen_; }
  Generator clone() const;

 private:
  explicit Generator(GeneratorConfig config);
  GeneratorConfig config_;
  ParameterSet<T> params_;
  bool frozen_ = false;
};

// Copies every teacher parameter into a fresh student (layers the teacher
// lacks, i.e. the extended tail, keep their random init) and freezes the teacher.
template <typename T>
Generator<T> init_student_from_teacher(Generator<T>& teacher, GeneratorConfig student_config,
                                       std::uint64_t seed);

// ---- discriminator ----

struct DiscriminatorConfig {
  // Output channels of the seven convs are base_width * {1,1,2,2,2,4,4}.
  std::size_t base_width = 128;
  std::size_t hidden = 1024;
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

inline constexpr std::array<std::size_t, 7> kDiscriminatorWidthMultipliers = {1, 1, 2, 2, 2, 4, 4};
inline constexpr std::array<std::size_t, 7> kDiscriminatorStrides = {1, 2, 1, 2, 1, 2, 2};
inline constexpr float kLeakySlope = 0.2f;

template <typename T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig config, std::uint64_t seed);
  static Discriminator zeros(DiscriminatorConfig config);

  // [B,3,128,128] -> logits [B,1] (no sigmoid).
  Tensor<T> forward(const Tensor<T>& images, ShapeTrace* trace = nullptr) const;

  const DiscriminatorConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

 private:
  explicit Discriminator(DiscriminatorConfig config);
  DiscriminatorConfig config_;
  ParameterSet<T> params_;
};

// ---- frozen identity embedder ----

inline constexpr std::size_t kIdentityClasses = 512;
inline constexpr std::uint64_t kEmbedderSeed = 0x1D5EEDull;

// Fixed-seed conv stack standing in for a pretrained identity network.
// Parameters never require grad; gradients still flow to the input images.
template <typename T>
class IdentityEmbedder {
 public:
  explicit IdentityEmbedder(std::uint64_t seed = kEmbedderSeed);

  Tensor<T> logits(const Tensor<T>& images) const;         // [B,512]
  Tensor<T> probabilities(const Tensor<T>& images) const;  // softmax rows

  const ParameterSet<T>& params() const { return params_; }

 private:
  ParameterSet<T> params_;
};

// ---- batches ----

template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images);
template <typename T>
Tensor<T> edges_to_tensor(std::span<const EdgeMap> edges);
// Item `index` of an NCHW batch as an image (values copied as-is).
template <typename T>
Image tensor_to_image(const Tensor<T>& batch, std::size_t index);

}  // namespace isrkd
