#include <random>

#include "doctest.h"
#include "isrkd/adam.hpp"
#include "isrkd/networks.hpp"
#include "isrkd/ops.hpp"
#include "oracles.hpp"

using namespace isrkd;

namespace {

// Hand-derived parameter counts for the layer list (3x3 convs, 4x4 upsampler).
std::size_t expected_generator_params(std::size_t f) {
  const std::size_t head = 3 * f * 9 + f;
  const std::size_t conv_ff = f * f * 9 + f;
  const std::size_t conv_f1f = (f + 1) * f * 9 + f;
  const std::size_t up = f * f * 16 + f;
  const std::size_t edge = f + 1;
  const std::size_t tail = (f + 1) * 3 * 9 + 3;
  return head + (conv_ff + conv_ff + up + edge) + 2 * (conv_f1f + conv_ff + up + edge) + tail;
}

Tensor32 random_images(std::size_t batch, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor<float>({batch, 3, size, size}, rng, 0.0f, 1.0f);
}

}  // namespace

TEST_CASE("edge block kernel table") {
  CHECK(edge_block_kernel(32) == 5);
  CHECK(edge_block_kernel(64) == 7);
  CHECK(edge_block_kernel(128) == 10);
  try {
    edge_block_kernel(48);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("32, 64, 128") != std::string::npos);
  }
}

TEST_CASE("edge block on constant features") {
  auto features = Tensor32::full({1, 4, 32, 32}, 0.75f);
  auto w = Tensor32::from({1, 4, 1, 1}, {0.3f, -0.2f, 0.9f, 0.1f});
  auto b = Tensor32::from({1}, {0.125f});
  auto out = edge_block(features, w, b);
  CHECK(out.features_out.shape() == Shape{1, 5, 32, 32});
  CHECK(out.edge_map.shape() == Shape{1, 1, 32, 32});
  for (float v : out.edge_map.data()) CHECK(v == doctest::Approx(0.125f).epsilon(1e-6));
}

TEST_CASE("edge block concat is a pure function of its inputs") {
  std::mt19937_64 rng(8);
  for (std::size_t c : {1, 3, 7}) {
    auto features = oracle::random_tensor<double>({2, c, 64, 64}, rng);
    auto w = oracle::random_tensor<double>({1, c, 1, 1}, rng);
    auto b = oracle::random_tensor<double>({1}, rng);
    auto out = edge_block(features, w, b);
    CHECK(out.features_out.dim(1) == c + 1);
    // Dropping the appended channel and re-deriving it reproduces edge_map.
    auto kept = slice_channels(out.features_out, 0, c);
    auto again = conv2d(sub(kept, avg_pool2d(kept, 7)), w, b, 1, Padding::same);
    auto appended = slice_channels(out.features_out, c, 1);
    for (std::size_t i = 0; i < again.numel(); ++i) {
      CHECK(again.data()[i] == out.edge_map.data()[i]);
      CHECK(appended.data()[i] == out.edge_map.data()[i]);
    }
  }
}

TEST_CASE("generator shape contract") {
  Generator<float> g({.features = 8}, 1);
  ShapeTrace trace;
  auto out = g.forward(random_images(2, 16, 2), &trace);
  CHECK(out.sr.shape() == Shape{2, 3, 128, 128});
  CHECK(out.edge_maps[0].shape() == Shape{2, 1, 32, 32});
  CHECK(out.edge_maps[1].shape() == Shape{2, 1, 64, 64});
  CHECK(out.edge_maps[2].shape() == Shape{2, 1, 128, 128});
  CHECK(out.bottleneck.shape() == Shape{2, 8, 64, 64});

  const std::vector<std::pair<std::string, Shape>> golden = {
      {"head", {2, 8, 16, 16}},
      {"stage1.res.conv1", {2, 8, 16, 16}},
      {"stage1.res.conv2", {2, 8, 16, 16}},
      {"stage1.res", {2, 8, 16, 16}},
      {"stage1.up", {2, 8, 32, 32}},
      {"stage1.edge_map", {2, 1, 32, 32}},
      {"stage1.edge", {2, 9, 32, 32}},
      {"stage2.res.conv1", {2, 8, 32, 32}},
      {"stage2.res.conv2", {2, 8, 32, 32}},
      {"stage2.res", {2, 8, 32, 32}},
      {"stage2.up", {2, 8, 64, 64}},
      {"stage2.edge_map", {2, 1, 64, 64}},
      {"stage2.edge", {2, 9, 64, 64}},
      {"stage3.res.conv1", {2, 8, 64, 64}},
      {"stage3.res.conv2", {2, 8, 64, 64}},
      {"stage3.res", {2, 8, 64, 64}},
      {"stage3.up", {2, 8, 128, 128}},
      {"stage3.edge_map", {2, 1, 128, 128}},
      {"stage3.edge", {2, 9, 128, 128}},
      {"tail", {2, 3, 128, 128}},
  };
  CHECK(trace.layers == golden);

  CHECK_THROWS_AS(g.forward(random_images(1, 32, 3)), ShapeError);
}

TEST_CASE("generator at default width") {
  Generator<float> g({}, 4);
  CHECK(g.params().scalar_count() == expected_generator_params(64));
  CHECK(g.params().scalar_count() == 423265);
  auto out = g.forward(random_images(2, 16, 5));
  CHECK(out.bottleneck.shape() == Shape{2, 64, 64, 64});
  CHECK(out.sr.shape() == Shape{2, 3, 128, 128});
}

TEST_CASE("zero generator outputs zeros") {
  auto g = Generator<float>::zeros({.features = 4});
  auto out = g.forward(random_images(2, 16, 6));
  for (float v : out.sr.data()) CHECK(v == 0.0f);
}

TEST_CASE("extended tail adds six convs") {
  Generator<float> g({.features = 4, .extended_tail = true}, 7);
  CHECK(g.params().scalar_count() ==
        expected_generator_params(4) + (3 * 4 * 9 + 4) + 4 * (4 * 4 * 9 + 4) + (4 * 3 * 9 + 3));
  CHECK(g.forward(random_images(1, 16, 8)).sr.shape() == Shape{1, 3, 128, 128});
}

TEST_CASE("discriminator shapes") {
  Discriminator<float> d({.base_width = 4, .hidden = 16}, 1);
  CHECK(d.forward(random_images(4, 128, 9)).shape() == Shape{4, 1});

  Discriminator<float> full({}, 2);
  CHECK(full.params().scalar_count() == 38722945);
  ShapeTrace trace;
  full.forward(random_images(1, 128, 10), &trace);
  // Strides 1,2,1,2,1,2,2 take 128 down to 8.
  const std::vector<std::pair<std::string, Shape>> golden = {
      {"conv1", {1, 128, 128, 128}}, {"conv2", {1, 128, 64, 64}}, {"conv3", {1, 256, 64, 64}},
      {"conv4", {1, 256, 32, 32}},   {"conv5", {1, 256, 32, 32}}, {"conv6", {1, 512, 16, 16}},
      {"conv7", {1, 512, 8, 8}},     {"flatten", {1, 32768}},     {"fc1", {1, 1024}},
      {"fc2", {1, 1}},
  };
  CHECK(trace.layers == golden);
}

TEST_CASE("zero discriminator emits its final bias") {
  auto d = Discriminator<float>::zeros({.base_width = 2, .hidden = 4});
  d.params().get("fc2.bias").mutable_data()[0] = 0.7f;
  auto logits = d.forward(random_images(3, 128, 11));
  for (float v : logits.data()) CHECK(v == 0.7f);
}

TEST_CASE("identity embedder") {
  IdentityEmbedder<double> e;
  std::mt19937_64 rng(12);
  auto images = oracle::random_tensor<double>({2, 3, 128, 128}, rng, 0.0, 1.0, true);
  auto probs = e.probabilities(images);
  REQUIRE(probs.shape() == Shape{2, kIdentityClasses});
  for (std::size_t r = 0; r < 2; ++r) {
    double total = 0;
    for (std::size_t k = 0; k < kIdentityClasses; ++k) total += probs.data()[r * kIdentityClasses + k];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
  }
  // Distinct images give distinct distributions.
  double js = 0;
  for (std::size_t k = 0; k < kIdentityClasses; ++k) {
    const double a = probs.data()[k], b = probs.data()[kIdentityClasses + k], m = 0.5 * (a + b);
    js += 0.5 * a * std::log(a / m) + 0.5 * b * std::log(b / m);
  }
  CHECK(js > 0.0);

  // Frozen: gradients reach the images but never the embedder.
  sum(probs).backward();
  CHECK(images.has_grad());
  for (const auto& [name, t] : e.params().entries()) {
    CHECK_FALSE(t.requires_grad());
    CHECK_FALSE(t.has_grad());
  }

  IdentityEmbedder<double> again;
  for (std::size_t i = 0; i < e.params().entries().size(); ++i) {
    const auto& a = e.params().entries()[i].second;
    const auto& b = again.params().entries()[i].second;
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  }
  auto p2 = again.probabilities(images.detach());
  CHECK(std::equal(p2.data().begin(), p2.data().end(), probs.data().begin()));
}

TEST_CASE("student initialisation from teacher") {
  Generator<float> teacher({.features = 4}, 21);
  auto student = init_student_from_teacher(teacher, {.features = 4}, 99);
  CHECK(teacher.frozen());
  for (const auto& [name, t] : teacher.params().entries()) {
    CHECK_FALSE(t.requires_grad());
    const auto& s = student.params().get(name);
    CHECK(s.requires_grad());
    CHECK(std::equal(t.data().begin(), t.data().end(), s.data().begin()));
  }
  const auto teacher_copy = teacher.params().clone();

  // Train the student for 10 steps; the teacher must not move.
  Adam<float> opt(student.params().tensors(), {.learning_rate = 1e-3});
  auto lr = random_images(2, 16, 22);
  auto target = random_images(2, 128, 23);
  for (int step = 0; step < 10; ++step) {
    opt.zero_grad();
    mean(square(sub(student.forward(lr).sr, target))).backward();
    opt.step();
  }
  bool moved = false;
  for (std::size_t i = 0; i < teacher.params().entries().size(); ++i) {
    const auto& a = teacher.params().entries()[i].second;
    const auto& b = teacher_copy.entries()[i].second;
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    const auto& s = student.params().get(teacher.params().entries()[i].first);
    moved = moved || !std::equal(a.data().begin(), a.data().end(), s.data().begin());
  }
  CHECK(moved);
}

TEST_CASE("extended student keeps random tail layers") {
  Generator<float> teacher({.features = 4}, 31);
  auto student = init_student_from_teacher(teacher, {.features = 4, .extended_tail = true}, 32);
  for (int i = 1; i <= 6; ++i) {
    const auto& w = student.params().get("ext" + std::to_string(i) + ".weight");
    CHECK(std::any_of(w.data().begin(), w.data().end(), [](float v) { return v != 0.0f; }));
  }
  Generator<float> other({.features = 8}, 1);
  CHECK_THROWS_AS(init_student_from_teacher(other, {.features = 4}, 1), ShapeError);
}

TEST_CASE("image batch conversion round trip") {
  Image img(128, 128, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(i % 251) / 250.0f;
  std::vector<Image> batch = {img, img};
  auto t = images_to_tensor<float>(batch);
  CHECK(t.shape() == Shape{2, 3, 128, 128});
  CHECK(tensor_to_image(t, 1) == img);
}
