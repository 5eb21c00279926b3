#include <cmath>
#include <random>

#include "doctest.h"
#include "isrkd/losses.hpp"
#include "isrkd/ops.hpp"
#include "oracles.hpp"

using namespace isrkd;

namespace {

constexpr std::size_t kProbes = 100;
constexpr double kGradTolerance = 1e-4;

Tensor64 probs_from_logits(const Tensor64& logits) { return softmax_rows(logits); }

}  // namespace

TEST_CASE("loss weights") {
  const LossWeights w;
  CHECK(w.kd_response == 5.0);
  CHECK(w.kd_feature == 0.01);
  CHECK(w.edge == 0.3);
  CHECK(w.adversarial == 1.0);
  CHECK(w.lce == 1.0);
  CHECK(w.identity == 1.0);
  CHECK(w.reconstruction == 1.0);
  CHECK_NOTHROW(w.validate());
  CHECK_THROWS_AS((LossWeights{.edge = -0.1}.validate()), ConfigError);
  CHECK_THROWS_AS((LossWeights{.lce = NAN}.validate()), ConfigError);
}

TEST_CASE("kd loss") {
  std::mt19937_64 rng(1);
  auto sr = oracle::random_tensor<double>({2, 3, 8, 8}, rng);
  auto bn = oracle::random_tensor<double>({2, 4, 4, 4}, rng);
  CHECK(kd_loss(sr, sr, bn, bn, 5.0, 0.01).item() == 0.0);

  auto shifted = Tensor64::from(sr.shape(), std::vector<double>(sr.data().begin(), sr.data().end()));
  for (auto& v : shifted.mutable_data()) v += 0.25;
  CHECK(kd_loss(sr, shifted, bn, bn, 5.0, 0.01).item() == doctest::Approx(5.0 * 0.0625).epsilon(1e-12));

  // Teacher receives no gradient even when it requires grad.
  auto teacher_sr = oracle::random_tensor<double>({2, 3, 8, 8}, rng, -1.0, 1.0, true);
  auto teacher_bn = oracle::random_tensor<double>({2, 4, 4, 4}, rng, -1.0, 1.0, true);
  auto student_sr = oracle::random_tensor<double>({2, 3, 8, 8}, rng, -1.0, 1.0, true);
  auto student_bn = oracle::random_tensor<double>({2, 4, 4, 4}, rng, -1.0, 1.0, true);
  kd_loss(teacher_sr, student_sr, teacher_bn, student_bn, 5.0, 0.01).backward();
  CHECK_FALSE(teacher_sr.has_grad());
  CHECK_FALSE(teacher_bn.has_grad());

  const auto r = oracle::gradcheck(
      [&] { return kd_loss(teacher_sr, student_sr, teacher_bn, student_bn, 5.0, 0.01); },
      {student_sr, student_bn}, kProbes, rng);
  CHECK(r.worst_relative_error < kGradTolerance);

  CHECK_THROWS_AS(kd_loss(sr, bn, bn, bn, 1.0, 1.0), ShapeError);
}

TEST_CASE("edge loss") {
  auto e_hr = Tensor64::zeros({1, 1, 8, 8});
  CHECK(edge_loss(e_hr, e_hr).item() == 0.0);
  const std::size_t ones = 11;
  for (std::size_t i = 0; i < ones; ++i) e_hr.mutable_data()[i * 5] = 1.0;
  auto e_sr = Tensor64::zeros({1, 1, 8, 8}, true);
  auto loss = edge_loss(e_sr, e_hr);
  CHECK(loss.item() == doctest::Approx(double(ones) / 64.0).epsilon(1e-12));
  loss.backward();
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(e_sr.grad()[i] == doctest::Approx(2.0 * (0.0 - e_hr.data()[i]) / 64.0).epsilon(1e-12));
  }

  std::mt19937_64 rng(2);
  auto pred = oracle::random_tensor<double>({2, 1, 16, 16}, rng, -1.0, 1.0, true);
  auto target = oracle::random_tensor<double>({2, 1, 16, 16}, rng, 0.0, 1.0);
  const auto r = oracle::gradcheck([&] { return edge_loss(pred, target); }, {pred}, kProbes, rng);
  CHECK(r.worst_relative_error < kGradTolerance);
  CHECK_THROWS_AS(edge_loss(pred, Tensor64::zeros({2, 1, 8, 8})), ShapeError);
  CHECK_THROWS_AS(edge_loss(Tensor64::zeros({2, 3, 8, 8}), Tensor64::zeros({2, 3, 8, 8})), ShapeError);
}

TEST_CASE("adversarial losses") {
  const auto real = Tensor64::full({4, 1}, 50.0);
  const auto fake = Tensor64::full({4, 1}, -50.0);
  CHECK(adversarial_loss_d(real, fake).item() < 1e-20);
  CHECK(std::isfinite(adversarial_loss_d(fake, real).item()));
  CHECK(adversarial_loss_d(fake, real).item() == doctest::Approx(100.0).epsilon(1e-12));

  const auto zero = Tensor64::zeros({3, 1});
  CHECK(adversarial_loss_d(zero, zero).item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(adversarial_loss_g(zero).item() == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(adversarial_loss_g(zero, GeneratorAdversarialForm::non_saturating).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Saturating form equals mean log(1 - sigmoid(x)).
  auto x = Tensor64::from({3, 1}, {-2.0, 0.5, 3.0});
  double expected = 0;
  for (double v : x.data()) expected += std::log(1.0 - 1.0 / (1.0 + std::exp(-v)));
  CHECK(adversarial_loss_g(x).item() == doctest::Approx(expected / 3.0).epsilon(1e-12));

  std::mt19937_64 rng(3);
  auto lr = oracle::random_tensor<double>({16, 1}, rng, -5.0, 5.0, true);
  auto lf = oracle::random_tensor<double>({16, 1}, rng, -5.0, 5.0, true);
  CHECK(oracle::gradcheck([&] { return adversarial_loss_d(lr, lf); }, {lr, lf}, kProbes, rng)
            .worst_relative_error < kGradTolerance);
  CHECK(oracle::gradcheck([&] { return adversarial_loss_g(lf); }, {lf}, kProbes, rng)
            .worst_relative_error < kGradTolerance);
  CHECK(oracle::gradcheck([&] { return adversarial_loss_g(lf, GeneratorAdversarialForm::non_saturating); },
                          {lf}, kProbes, rng)
            .worst_relative_error < kGradTolerance);
}

TEST_CASE("lce loss") {
  std::mt19937_64 rng(4);
  auto hr = oracle::random_tensor<double>({2, 3, 8, 8}, rng, 0.0, 1.0);
  CHECK(lce_loss(hr, hr).item() == doctest::Approx(1e-6).epsilon(1e-3));  // sqrt(eps)

  // Gray images: chroma differences cancel, so the loss is |delta|.
  const double v = 0.4, delta = -0.15;
  CHECK(lce_loss(Tensor64::full({1, 3, 4, 4}, v + delta), Tensor64::full({1, 3, 4, 4}, v)).item() ==
        doctest::Approx(std::abs(delta)).epsilon(1e-9));

  // Probed away from zero difference, where the root is smooth on the scale of h.
  auto sr = oracle::random_tensor<double>({2, 3, 8, 8}, rng, 1.5, 2.5, true);
  CHECK(oracle::gradcheck([&] { return lce_loss(sr, hr); }, {sr}, kProbes, rng).worst_relative_error <
        kGradTolerance);
  CHECK_THROWS_AS(lce_loss(Tensor64::zeros({1, 1, 4, 4}), Tensor64::zeros({1, 1, 4, 4})), ShapeError);
  CHECK_THROWS_AS(lce_loss(sr, Tensor64::zeros({2, 3, 4, 4})), ShapeError);
}

TEST_CASE("identity loss") {
  std::mt19937_64 rng(5);
  auto a = probs_from_logits(oracle::random_tensor<double>({3, 512}, rng, -3.0, 3.0));
  auto b = probs_from_logits(oracle::random_tensor<double>({3, 512}, rng, -3.0, 3.0));
  CHECK(identity_loss(a, a).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::abs(identity_loss(a, b).item() - identity_loss(b, a).item()) < 1e-7);
  CHECK(identity_loss(a, b).item() > 0.0);

  auto one_hot_a = Tensor64::zeros({2, 4});
  auto one_hot_b = Tensor64::zeros({2, 4});
  one_hot_a.mutable_data()[0] = 1.0;
  one_hot_a.mutable_data()[5] = 1.0;
  one_hot_b.mutable_data()[3] = 1.0;
  one_hot_b.mutable_data()[6] = 1.0;
  CHECK(identity_loss(one_hot_a, one_hot_b).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // JS bound over random (including sparse) rows.
  for (int trial = 0; trial < 20; ++trial) {
    auto x = probs_from_logits(oracle::random_tensor<double>({2, 16}, rng, -40.0, 40.0));
    auto y = probs_from_logits(oracle::random_tensor<double>({2, 16}, rng, -40.0, 40.0));
    const double js = identity_loss(x, y).item();
    CHECK(js >= 0.0);
    CHECK(js <= std::log(2.0) + 1e-6);
  }

  auto bad = Tensor64::from({1, 2}, {1.2, -0.2});
  CHECK_THROWS_AS(identity_loss(bad, bad), NumericalError);
  CHECK_THROWS_AS(identity_loss(Tensor64::from({1, 2}, {0.3, 0.3}), one_hot_a), ShapeError);

  // FD through a softmax keeps perturbed rows on the simplex.
  auto la = oracle::random_tensor<double>({2, 32}, rng, -2.0, 2.0, true);
  auto lb = oracle::random_tensor<double>({2, 32}, rng, -2.0, 2.0, true);
  CHECK(oracle::gradcheck([&] { return identity_loss(softmax_rows(la), softmax_rows(lb)); }, {la, lb},
                          kProbes, rng)
            .worst_relative_error < kGradTolerance);
}

TEST_CASE("reconstruction loss") {
  std::mt19937_64 rng(6);
  auto hr = oracle::random_tensor<double>({2, 3, 8, 8}, rng);
  CHECK(reconstruction_loss(hr, hr).item() == 0.0);
  auto offset = hr.clone();
  for (auto& v : offset.mutable_data()) v -= 0.3;
  CHECK(reconstruction_loss(offset, hr).item() == doctest::Approx(0.09).epsilon(1e-12));

  auto sr = oracle::random_tensor<double>({2, 3, 8, 8}, rng, -1.0, 1.0, true);
  CHECK(oracle::gradcheck([&] { return reconstruction_loss(sr, hr); }, {sr}, kProbes, rng)
            .worst_relative_error < kGradTolerance);
}

TEST_CASE("total loss") {
  LossTerms<double> terms{
      .kd_response = Tensor64::scalar(0.5),
      .kd_feature = Tensor64::scalar(2.0),
      .edge = Tensor64::scalar(0.25),
      .adversarial = Tensor64::scalar(-0.7),
      .lce = Tensor64::scalar(0.1),
      .identity = Tensor64::scalar(0.05),
      .reconstruction = Tensor64::scalar(0.02),
  };
  const LossWeights defaults;
  const auto out = total_loss(terms, defaults);
  const double expected = 5 * 0.5 + 0.01 * 2.0 + 0.3 * 0.25 - 0.7 + 0.1 + 0.05 + 0.02;
  CHECK(out.total.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(out.term("kd_feature") == 2.0);
  double weighted = 0;
  for (double w : out.weighted) weighted += w;
  CHECK(std::abs(weighted - out.total.item()) <= 1e-6 * std::abs(out.total.item()));

  const LossWeights none{0, 0, 0, 0, 0, 0, 0};
  CHECK(total_loss(terms, none).total.item() == 0.0);

  LossWeights single = none;
  single.edge = 0.3;
  CHECK(total_loss(terms, single).total.item() == doctest::Approx(0.3 * 0.25).epsilon(1e-15));

  // Linearity: doubling a term doubles its weighted contribution exactly.
  auto doubled = terms;
  doubled.lce = Tensor64::scalar(0.2);
  CHECK(total_loss(doubled, defaults).weighted[4] == 2.0 * out.weighted[4]);

  // Absent terms contribute nothing.
  LossTerms<double> partial{.reconstruction = Tensor64::scalar(0.5)};
  CHECK(total_loss(partial, defaults).total.item() == 0.5);

  auto broken = terms;
  broken.identity = Tensor64::scalar(NAN);
  try {
    total_loss(broken, defaults);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("identity") != std::string::npos);
  }

  // Gradients flow through the weighted sum.
  auto x = Tensor64::scalar(1.5, true);
  LossTerms<double> grad_terms{.edge = square(x)};
  total_loss(grad_terms, defaults).total.backward();
  CHECK(x.grad()[0] == doctest::Approx(0.3 * 2 * 1.5).epsilon(1e-12));
}

TEST_CASE("losses vanish on identity inputs and are nonnegative") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = oracle::random_tensor<double>({1, 3, 8, 8}, rng);
    auto b = oracle::random_tensor<double>({1, 3, 8, 8}, rng);
    CHECK(reconstruction_loss(a, b).item() >= 0.0);
    CHECK(lce_loss(a, b).item() >= 0.0);
    CHECK(reconstruction_loss(a, a).item() == 0.0);
    auto la = oracle::random_tensor<double>({4, 1}, rng, -5.0, 5.0);
    auto lb = oracle::random_tensor<double>({4, 1}, rng, -5.0, 5.0);
    CHECK(adversarial_loss_d(la, lb).item() >= 0.0);
    CHECK(adversarial_loss_g(la, GeneratorAdversarialForm::non_saturating).item() >= 0.0);
    // The saturating generator form is log(1 - sigmoid), never positive.
    CHECK(adversarial_loss_g(la).item() <= 0.0);
  }
}
