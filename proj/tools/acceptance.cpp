// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Criteria 7-10 drive the isrkd executable; the rest run in-process.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "isrkd/adam.hpp"
#include "isrkd/experiments.hpp"
#include "isrkd/ops.hpp"
#include "oracles.hpp"

using namespace isrkd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- criterion 1: gradients ----

constexpr std::size_t kProbes = 100;
constexpr double kGradTolerance = 1e-4;

// Uniform in +-[0.1, 1]: keeps probes off the ReLU kink.
Tensor64 off_zero(Shape shape, std::mt19937_64& rng) {
  auto t = oracle::random_tensor<double>(std::move(shape), rng, -1.0, 1.0, true);
  for (auto& v : t.mutable_data()) v = std::copysign(0.1 + 0.9 * std::abs(v), v);
  return t;
}

Tensor64 probs(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  NoGradGuard no_grad;
  return softmax_rows(oracle::random_tensor<double>({rows, cols}, rng, -3.0, 3.0));
}

Outcome gradient_suite() {
  std::mt19937_64 rng(101);
  std::vector<std::pair<std::string, double>> results;
  const auto check = [&](const std::string& name, const std::function<Tensor64()>& loss,
                         std::vector<Tensor64> inputs) {
    results.emplace_back(name, oracle::gradcheck(loss, std::move(inputs), kProbes, rng).worst_relative_error);
  };
  const auto rand = [&](Shape s, double lo = -1.0, double hi = 1.0, bool grad = true) {
    return oracle::random_tensor<double>(std::move(s), rng, lo, hi, grad);
  };

  // Losses.
  {
    auto ts = rand({2, 3, 8, 8}, 0, 1, false), ss = rand({2, 3, 8, 8}), tb = rand({2, 4, 4, 4}, -1, 1, false),
         sb = rand({2, 4, 4, 4});
    check("kd_loss", [&] { return kd_loss(ts, ss, tb, sb, 5.0, 0.01); }, {ss, sb});
    auto pred = rand({2, 1, 16, 16}), target = rand({2, 1, 16, 16}, 0, 1, false);
    check("edge_loss", [&] { return edge_loss(pred, target); }, {pred});
    auto real = rand({16, 1}, -5, 5), fake = rand({16, 1}, -5, 5);
    check("adversarial_loss_d", [&] { return adversarial_loss_d(real, fake); }, {real, fake});
    check("adversarial_loss_g", [&] { return adversarial_loss_g(fake); }, {fake});
    check("adversarial_loss_g non-saturating",
          [&] { return adversarial_loss_g(fake, GeneratorAdversarialForm::non_saturating); }, {fake});
    auto sr = rand({2, 3, 8, 8}, 1.5, 2.5), hr = rand({2, 3, 8, 8}, 0, 1, false);
    check("lce_loss", [&] { return lce_loss(sr, hr); }, {sr});
    auto la = rand({2, 64}, -2, 2), lb = rand({2, 64}, -2, 2);
    check("identity_loss", [&] { return identity_loss(softmax_rows(la), softmax_rows(lb)); }, {la, lb});
    auto rec = rand({2, 3, 8, 8});
    check("reconstruction_loss", [&] { return reconstruction_loss(rec, hr); }, {rec});
    check("total_loss",
          [&] {
            LossTerms<double> t{.kd_response = mse(rec, hr),
                                .edge = edge_loss(pred, target),
                                .adversarial = adversarial_loss_g(fake),
                                .lce = lce_loss(sr, hr),
                                .reconstruction = reconstruction_loss(rec, hr)};
            return total_loss(t, LossWeights{}).total;
          },
          {rec, pred, fake, sr});
  }

  // Layer kernels, each contracted with a fixed random tensor.
  const auto contract = [&](const std::string& name, const std::function<Tensor64()>& f,
                            std::vector<Tensor64> inputs) {
    Tensor64 r;
    {
      NoGradGuard no_grad;
      r = oracle::random_tensor<double>(f().shape(), rng);
    }
    check(name, [&] { return sum(mul(f(), r)); }, std::move(inputs));
  };
  {
    auto x = rand({2, 3, 7, 7}), w = rand({4, 3, 3, 3}), b = rand({4});
    contract("conv2d stride 1 same", [&] { return conv2d(x, w, b, 1, Padding::same); }, {x, w, b});
    contract("conv2d stride 2 same", [&] { return conv2d(x, w, b, 2, Padding::same); }, {x, w, b});
    contract("conv2d valid", [&] { return conv2d(x, w, b, 1, Padding::valid); }, {x, w, b});
    auto w1 = rand({5, 3, 1, 1}), b1 = rand({5});
    contract("conv2d pointwise", [&] { return conv2d(x, w1, b1, 1, Padding::same); }, {x, w1, b1});
    auto tx = rand({2, 3, 4, 4}), tw = rand({3, 2, 4, 4}), tb = rand({2});
    contract("transpose_conv2d", [&] { return transpose_conv2d(tx, tw, tb, 2); }, {tx, tw, tb});
    auto px = rand({1, 2, 12, 12});
    for (std::size_t k : {5, 7, 10}) {
      contract("avg_pool2d k" + std::to_string(k), [&] { return avg_pool2d(px, k); }, {px});
    }
    auto dx = rand({3, 6}), dw = rand({6, 5}), db = rand({5});
    contract("dense", [&] { return dense(dx, dw, db); }, {dx, dw, db});
    auto rx = off_zero({2, 3, 5, 5}, rng);
    contract("relu", [&] { return relu(rx); }, {rx});
    contract("leaky_relu", [&] { return leaky_relu(rx, 0.2); }, {rx});
    auto a = rand({2, 3, 4, 4}), c = rand({2, 3, 4, 4});
    contract("add", [&] { return add(a, c); }, {a, c});
    contract("sub", [&] { return sub(a, c); }, {a, c});
    contract("mul", [&] { return mul(a, c); }, {a, c});
    contract("scale", [&] { return scale(a, 0.37); }, {a});
    contract("square", [&] { return square(a); }, {a});
    check("sum", [&] { return sum(square(a)); }, {a});
    check("mean", [&] { return mean(square(a)); }, {a});
    contract("reshape", [&] { return reshape(a, {2, 48}); }, {a});
    auto e = rand({2, 1, 4, 4});
    contract("concat_channels", [&] { return concat_channels(a, e); }, {a, e});
    contract("slice_channels", [&] { return slice_channels(a, 1, 2); }, {a});
    contract("global_avg_pool", [&] { return global_avg_pool(a); }, {a});
    auto s = rand({3, 7}, -2, 2);
    contract("softmax_rows", [&] { return softmax_rows(s); }, {s});
    auto ef = rand({2, 3, 32, 32}), ew = rand({1, 3, 1, 1}), eb = rand({1});
    contract("edge_block", [&] { return edge_block(ef, ew, eb).features_out; }, {ef, ew, eb});
  }

  double worst = 0;
  std::string worst_name;
  for (const auto& [name, err] : results) {
    if (!(err <= worst) || worst_name.empty()) {
      worst = err;
      worst_name = name;
    }
  }
  const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.second < kGradTolerance; });
  return {ok, std::to_string(results.size()) + " checks x " + std::to_string(kProbes) +
                  " probes, worst relative error " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

// ---- criterion 2: kernel oracles ----

Outcome kernel_oracles() {
  std::mt19937_64 rng(202);
  const auto uni = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  constexpr std::size_t kCases = 50;
  constexpr double kTol = 1e-5;
  std::map<std::string, double> worst;
  for (std::size_t i = 0; i < kCases; ++i) {
    const std::size_t n = uni(1, 2), c = uni(1, 4), h = uni(3, 12), w = uni(3, 12), o = uni(1, 4);
    const std::size_t k = uni(1, 5), stride = uni(1, 2);
    const bool same = uni(0, 1) == 1 || k > std::min(h, w);
    auto x = oracle::random_tensor<double>({n, c, h, w}, rng);
    auto wt = oracle::random_tensor<double>({o, c, k, k}, rng);
    auto b = oracle::random_tensor<double>({o}, rng);
    const auto y = conv2d(x, wt, b, stride, same ? Padding::same : Padding::valid);
    worst["conv2d"] = std::max(worst["conv2d"],
                               oracle::max_relative_error(y.data(), oracle::conv2d(x, wt, b, stride, same), 1e-6));

    const std::size_t tk = uni(1, 5), ts = uni(1, 2);
    auto tx = oracle::random_tensor<double>({n, c, h, w}, rng);
    auto tw = oracle::random_tensor<double>({c, o, tk, tk}, rng);
    const auto ty = transpose_conv2d(tx, tw, b, ts);
    worst["transpose_conv2d"] = std::max(
        worst["transpose_conv2d"], oracle::max_relative_error(ty.data(), oracle::transpose_conv2d(tx, tw, b, ts), 1e-6));

    const std::size_t pk = uni(1, std::min<std::size_t>(10, 2 * std::min(h, w)));
    worst["avg_pool2d"] = std::max(worst["avg_pool2d"],
                                   oracle::max_relative_error(avg_pool2d(x, pk).data(), oracle::avg_pool2d(x, pk), 1e-6));

    const std::size_t d = uni(1, 40), m = uni(1, 20), rows = uni(1, 5);
    auto dx = oracle::random_tensor<double>({rows, d}, rng);
    auto dw = oracle::random_tensor<double>({d, m}, rng);
    auto db = oracle::random_tensor<double>({m}, rng);
    worst["dense"] = std::max(worst["dense"],
                              oracle::max_relative_error(dense(dx, dw, db).data(), oracle::dense(dx, dw, db), 1e-6));
  }
  bool ok = true;
  std::string detail = std::to_string(kCases) + " random shapes each;";
  for (const auto& [name, err] : worst) {
    ok = ok && err < kTol;
    detail += " " + name + " " + fmt("%.1e", err);
  }
  return {ok, detail};
}

// ---- criterion 3: architecture ----

Outcome architecture() {
  std::vector<std::string> failures;
  const auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failures.push_back(what);
  };
  std::mt19937_64 rng(303);
  Generator<float> g({}, 1);
  ShapeTrace trace;
  const auto out = g.forward(oracle::random_tensor<float>({2, 3, 16, 16}, rng, 0.0f, 1.0f), &trace);
  expect(out.sr.shape() == Shape{2, 3, 128, 128}, "sr shape");
  const std::size_t sizes[3] = {32, 64, 128}, kernels[3] = {5, 7, 10};
  for (int i = 0; i < 3; ++i) {
    expect(out.edge_maps[i].shape() == Shape{2, 1, sizes[i], sizes[i]}, "edge map " + std::to_string(i));
    expect(edge_block_kernel(sizes[i]) == kernels[i], "edge kernel at " + std::to_string(sizes[i]));
  }
  expect(out.bottleneck.shape() == Shape{2, 64, 64, 64}, "bottleneck");
  std::vector<std::pair<std::string, Shape>> golden{{"head", {2, 64, 16, 16}}};
  for (std::size_t s = 1, hw = 16; s <= 3; ++s, hw *= 2) {
    const auto st = "stage" + std::to_string(s);
    golden.push_back({st + ".res.conv1", {2, 64, hw, hw}});
    golden.push_back({st + ".res.conv2", {2, 64, hw, hw}});
    golden.push_back({st + ".res", {2, 64, hw, hw}});
    golden.push_back({st + ".up", {2, 64, 2 * hw, 2 * hw}});
    golden.push_back({st + ".edge_map", {2, 1, 2 * hw, 2 * hw}});
    golden.push_back({st + ".edge", {2, 65, 2 * hw, 2 * hw}});
  }
  golden.push_back({"tail", {2, 3, 128, 128}});
  expect(trace.layers == golden, "generator golden trace");
  expect(g.params().scalar_count() == 423265, "generator parameter count");

  Discriminator<float> d({}, 2);
  ShapeTrace dtrace;
  const auto logits = d.forward(oracle::random_tensor<float>({1, 3, 128, 128}, rng, 0.0f, 1.0f), &dtrace);
  expect(logits.shape() == Shape{1, 1}, "one logit");
  const std::vector<std::pair<std::string, Shape>> dgolden = {
      {"conv1", {1, 128, 128, 128}}, {"conv2", {1, 128, 64, 64}}, {"conv3", {1, 256, 64, 64}},
      {"conv4", {1, 256, 32, 32}},   {"conv5", {1, 256, 32, 32}}, {"conv6", {1, 512, 16, 16}},
      {"conv7", {1, 512, 8, 8}},     {"flatten", {1, 32768}},     {"fc1", {1, 1024}},
      {"fc2", {1, 1}},
  };
  expect(dtrace.layers == dgolden, "discriminator golden trace");
  expect(d.params().scalar_count() == 38722945, "discriminator parameter count");
  try {
    g.forward(Tensor32::zeros({1, 3, 32, 32}));
    failures.push_back("32x32 input accepted");
  } catch (const ShapeError&) {
  }
  std::string detail = "16x16 -> 128x128, edge maps 32/64/128 with kernels 5/7/10, D -> [B,1]";
  for (const auto& f : failures) detail += "; FAILED " + f;
  return {failures.empty(), detail};
}

// ---- criterion 4: metrics ----

Outcome metric_cases() {
  std::vector<std::string> failures;
  Image a(10, 10, 1, 0.5f), b = a;
  for (std::size_t i = 0; i < 64; ++i) b.data[i] += 0.125f;  // MSE = 64 * 0.125^2 / 100 = 0.01
  const double p = psnr(a, b);
  if (p != 20.0) failures.push_back("PSNR(MSE=0.01) = " + fmt("%.17g", p));
  if (psnr_from_mse(0.01) != 20.0) failures.push_back("psnr_from_mse(0.01)");
  std::mt19937_64 rng(404);
  Image img(64, 64, 3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.data) v = u(rng);
  const double s = ssim(img, img);
  if (std::abs(s - 1.0) > 1e-12) failures.push_back("SSIM(identical) = " + fmt("%.17g", s));

  const double ma[1] = {0}, mb[1] = {1}, ca[1] = {1}, cb[1] = {4};
  const double analytic = frechet_gaussians(ma, ca, mb, cb, 1);
  if (std::abs(analytic - 2.0) > 1e-6) failures.push_back("analytic Frechet = " + fmt("%.17g", analytic));

  constexpr std::size_t kDim = 8, kN = 20000;
  constexpr double kDelta = 2.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureMatrix fa{kN, kDim, std::vector<double>(kN * kDim)}, fb = fa;
  for (auto& v : fa.data) v = normal(rng);
  for (std::size_t i = 0; i < fb.data.size(); ++i) fb.data[i] = normal(rng) + (i % kDim == 0 ? kDelta : 0.0);
  const double mc = frechet_distance(fa, fb);
  const double expected = kDelta * kDelta;
  if (std::abs(mc - expected) > 0.1 * expected) failures.push_back("Monte Carlo Frechet = " + fmt("%.4f", mc));

  std::string detail = "PSNR " + fmt("%.15g", p) + " dB, SSIM " + fmt("%.15g", s) + ", analytic FD " +
                       fmt("%.9f", analytic) + ", MC FD " + fmt("%.4f", mc) + " (expected 4)";
  for (const auto& f : failures) detail += "; FAILED " + f;
  return {failures.empty(), detail};
}

// ---- criterion 5: loss identities ----

Outcome loss_identities() {
  std::vector<std::string> failures;
  std::mt19937_64 rng(505);
  const auto x = oracle::random_tensor<double>({2, 3, 16, 16}, rng, 0.0, 1.0);
  const auto bn = oracle::random_tensor<double>({2, 4, 8, 8}, rng);
  const auto e = oracle::random_tensor<double>({2, 1, 16, 16}, rng, 0.0, 1.0);
  const auto p = probs(rng, 3, 512);
  const std::vector<std::pair<std::string, double>> zeros = {
      {"kd", kd_loss(x, x, bn, bn, 5.0, 0.01).item()},
      {"edge", edge_loss(e, e).item()},
      {"reconstruction", reconstruction_loss(x, x).item()},
      {"identity", identity_loss(p, p).item()},
      // The 1e-12 inside the root leaves sqrt(1e-12) per pixel.
      {"lce", lce_loss(x, x).item()},
  };
  double worst_zero = 0;
  for (const auto& [name, v] : zeros) {
    worst_zero = std::max(worst_zero, std::abs(v));
    if (std::abs(v) > 1.0000001e-6) failures.push_back(name + " on identical inputs = " + fmt("%.3e", v));
  }

  double max_js = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const double v = identity_loss(probs(rng, 4, 512), probs(rng, 4, 512)).item();
    max_js = std::max(max_js, v);
  }
  // Sharp distributions push towards the bound.
  {
    NoGradGuard no_grad;
    const auto sharp_a = softmax_rows(scale(oracle::random_tensor<double>({4, 512}, rng, -1.0, 1.0), 40.0));
    const auto sharp_b = softmax_rows(scale(oracle::random_tensor<double>({4, 512}, rng, -1.0, 1.0), 40.0));
    max_js = std::max(max_js, identity_loss(sharp_a, sharp_b).item());
  }
  if (max_js > std::numbers::ln2) failures.push_back("JS exceeded ln 2: " + fmt("%.9f", max_js));

  std::vector<double> oa(512, 0.0), ob(512, 0.0);
  oa[3] = 1.0;
  ob[200] = 1.0;
  const double disjoint =
      identity_loss(Tensor64::from({1, 512}, oa), Tensor64::from({1, 512}, ob)).item();
  if (std::abs(disjoint - std::numbers::ln2) > 1e-6) failures.push_back("disjoint one-hot = " + fmt("%.12f", disjoint));

  std::string detail = "largest identical-input loss " + fmt("%.1e", worst_zero) + ", max JS " + fmt("%.4f", max_js) +
                       ", disjoint one-hot " + fmt("%.9f", disjoint) + " (ln2 " + fmt("%.9f", std::numbers::ln2) + ")";
  for (const auto& f : failures) detail += "; FAILED " + f;
  return {failures.empty(), detail};
}

// ---- criterion 6: teacher freeze and KD-zero equivalence ----

Outcome freeze_and_equivalence() {
  const auto data = make_experiment_data(6, 12, 2);
  TrainConfig config;
  config.epochs = 2;
  config.batch_size = 4;
  config.features = 4;
  config.disc_base_width = 2;
  config.disc_hidden = 8;
  config.lr = 1e-3;
  config.seed = 6;
  config.augment = false;
  const auto teacher_run = pretrain(config, data.pool_of(Domain::source));
  const auto teacher = make_checkpoint(teacher_run.generator, &teacher_run.discriminator, 0, config.epochs);
  const auto teacher_sha = parameter_sha256(teacher.generator_params);

  config.mix = {0, 12};
  config.weights.kd_response = 0;
  config.weights.kd_feature = 0;
  std::vector<std::string> kd_steps;
  const auto kd = incremental_train(teacher, data.pool_of(Domain::source), data.pool_of(Domain::target), config,
                                    [&](const StepInfo& info) {
                                      kd_steps.push_back(parameter_sha256(
                                          const_cast<Generator<float>*>(info.generator)->params()));
                                    });
  const bool frozen = parameter_sha256(teacher.generator_params) == teacher_sha;

  // Plain fine-tuning: same batches, no teacher anywhere.
  auto g = generator_from_checkpoint(teacher);
  auto d = discriminator_from_checkpoint(teacher);
  g.params().set_trainable(true);
  d.params().set_trainable(true);
  Adam<float> g_opt(g.params().tensors(), {config.lr, config.g_beta1, config.g_beta2, config.adam_eps});
  Adam<float> d_opt(d.params().tensors(), {config.lr, config.d_beta1, config.d_beta2, config.adam_eps});
  const IdentityEmbedder<float> embedder;
  const auto dataset = build_mixed_dataset(data.pool_of(Domain::source), data.pool_of(Domain::target), config.mix,
                                           config.seed);
  std::vector<std::string> plain_steps;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(dataset, config.batch_size, config.seed, epoch)) {
      std::vector<Image> lr, hr;
      std::vector<EdgeMap> edges;
      for (const auto* s : batch.task) {
        lr.push_back(s->lr);
        hr.push_back(s->hr);
        edges.push_back(s->hr_edges);
      }
      const auto lr_t = images_to_tensor<float>(lr), hr_t = images_to_tensor<float>(hr);
      auto out = g.forward(lr_t);
      d.params().set_trainable(true);
      d_opt.zero_grad();
      adversarial_loss_d(d.forward(hr_t), d.forward(out.sr.detach())).backward();
      d_opt.step();
      d.params().set_trainable(false);
      LossTerms<float> terms;
      terms.adversarial = adversarial_loss_g(d.forward(out.sr));
      terms.lce = lce_loss(out.sr, hr_t);
      terms.reconstruction = reconstruction_loss(out.sr, hr_t);
      Tensor32 hr_probs;
      {
        NoGradGuard no_grad;
        hr_probs = embedder.probabilities(hr_t);
      }
      terms.identity = identity_loss(embedder.probabilities(out.sr), hr_probs);
      terms.edge = edge_loss(out.edge_maps[2], edges_to_tensor<float>(edges));
      g_opt.zero_grad();
      total_loss(terms, config.weights).total.backward();
      g_opt.step();
      plain_steps.push_back(parameter_sha256(g.params()));
    }
  }
  const bool same = kd_steps == plain_steps && parameter_sha256(kd.generator.params()) == plain_steps.back();
  return {frozen && same && !kd_steps.empty(),
          std::string("teacher checksum ") + (frozen ? "unchanged" : "CHANGED") + "; " +
              std::to_string(kd_steps.size()) + " steps, per-step parameters " +
              (same ? "bit-identical to plain fine-tuning" : "DIFFER from plain fine-tuning")};
}

// ---- criteria 7-10: CLI-driven experiments ----

struct Context {
  std::string cli;
  fs::path work;
  fs::path configs;
  bool reuse = false;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

int run_cli(const Context& ctx, const std::string& args, const fs::path& log) {
  const std::string cmd = quote(ctx.cli) + " " + args + " >> " + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// experiment -> test_domain -> psnr
using PsnrTable = std::map<std::string, std::map<std::string, double>>;

PsnrTable read_psnr(const fs::path& csv) {
  PsnrTable table;
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string experiment, domain, psnr;
    std::getline(row, experiment, ',');
    std::getline(row, domain, ',');
    std::getline(row, psnr, ',');
    table[experiment][domain] = std::stod(psnr);
  }
  return table;
}

struct GridOutput {
  bool ok = false;
  std::string error;
  PsnrTable baseline, results;
  double seconds = 0;
};

GridOutput run_grid(const Context& ctx, const std::string& name) {
  GridOutput out;
  const auto dir = ctx.work / name;
  const auto done = dir / "COMPLETE";
  const auto start = std::chrono::steady_clock::now();
  if (!(ctx.reuse && fs::exists(done))) {
    fs::remove_all(dir);
    fs::create_directories(ctx.work);
    const int code = run_cli(ctx, "grid --spec " + quote((ctx.configs / (name + ".grid")).string()) + " --out " +
                                      quote(dir.string()),
                             ctx.work / (name + ".log"));
    if (code != 0) {
      out.error = "grid exited with " + std::to_string(code) + " (see " + (ctx.work / (name + ".log")).string() + ")";
      return out;
    }
    std::ofstream(done) << "ok\n";
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.baseline = read_psnr(dir / "baseline.csv");
  out.results = read_psnr(dir / "results.csv");
  out.ok = true;
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SettingStats {
  std::vector<double> delta;   // pretrained-domain PSNR drop vs the teacher
  std::vector<double> gained;  // new-domain PSNR
};

SettingStats stats(const GridOutput& g, const std::string& setting, const std::string& old_domain,
                   const std::string& new_domain) {
  SettingStats s;
  const double base = g.baseline.at("pretrained").at(old_domain);
  for (const auto& [experiment, row] : g.results) {
    if (experiment.rfind(setting + "_s", 0) != 0) continue;
    s.delta.push_back(base - row.at(old_domain));
    s.gained.push_back(row.at(new_domain));
  }
  return s;
}

std::string list(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : "/") + fmt("%.2f", x);
  return out;
}

Outcome forgetting(const GridOutput& g, const std::string& old_domain, const std::string& new_domain,
                   bool require_finetune_forgetting) {
  if (!g.ok) return {false, g.error};
  const auto ft = stats(g, "finetune", old_domain, new_domain);
  const auto kd = stats(g, "kd_replay32", old_domain, new_domain);
  if (ft.delta.size() != 3 || kd.delta.size() != 3) return {false, "expected 3 seeds per setting"};
  const double base_new = g.baseline.at("pretrained").at(new_domain);
  const double d0 = median(ft.delta), d1 = median(kd.delta);
  const double ft_new = median(ft.gained), kd_new = median(kd.gained);
  const bool a = ft_new > base_new && d0 > 0;
  const bool b = d1 < d0 && std::abs(kd_new - ft_new) <= 0.5;
  std::string detail;
  if (require_finetune_forgetting) {
    detail += "(a) fine-tune " + new_domain + " PSNR " + fmt("%.2f", ft_new) + " vs pretrained " +
              fmt("%.2f", base_new) + ", delta0 " + list(ft.delta) + " median " + fmt("%.2f", d0) + " dB " +
              (a ? "ok" : "FAILED") + "; ";
  }
  detail += "(b) KD delta1 " + list(kd.delta) + " median " + fmt("%.2f", d1) + " < " + fmt("%.2f", d0) + ", " +
            new_domain + " PSNR KD " + fmt("%.2f", kd_new) + " vs fine-tune " + fmt("%.2f", ft_new) + " " +
            (b ? "ok" : "FAILED") + "; grid " + fmt("%.0f", g.seconds) + " s";
  return {(a || !require_finetune_forgetting) && b, detail};
}

Outcome replay_trend(const GridOutput& g) {
  if (!g.ok) return {false, g.error};
  std::vector<double> medians;
  std::string detail = "median source delta by nS:";
  for (const auto& [setting, ns] : {std::pair{"kd_replay8", 8}, {"kd_replay16", 16}, {"kd_replay32", 32}}) {
    const auto s = stats(g, setting, "source", "target");
    if (s.delta.size() != 3) return {false, std::string("expected 3 seeds for ") + setting};
    medians.push_back(median(s.delta));
    detail += " " + std::to_string(ns) + ": " + fmt("%.2f", medians.back()) + " (" + list(s.delta) + ")";
  }
  const bool ok = medians[1] <= medians[0] && medians[2] <= medians[1];
  return {ok, detail};
}

Outcome reproducibility(const Context& ctx) {
  const auto dir = ctx.work / "repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "tiny.cfg") << "epochs = 2\nfeatures = 4\ndisc_base_width = 2\ndisc_hidden = 8\n";
  std::ofstream(dir / "tiny.grid") << "features = 4\ndisc_base_width = 2\ndisc_hidden = 8\nepochs = 1\n"
                                   << "pool_size = 16\ntest_size = 4\npretrain_epochs = 1\nseeds = 3,4\n"
                                   << "setting.1.name = ft\nsetting.1.mix = 0,8\n"
                                   << "setting.2.name = kd\nsetting.2.mix = 4,8\n";
  const auto log = dir / "cli.log";
  const std::string data = " --pool-size 16 --test-size 4 --data-seed 5";
  std::vector<std::string> compared;
  bool ok = true;
  for (const char* run : {"a", "b"}) {
    const auto r = dir / run;
    const auto p = [&](const std::string& f) { return quote((r / f).string()); };
    fs::create_directories(r);
    int code = run_cli(ctx, "pretrain --config " + quote((dir / "tiny.cfg").string()) + " --seed 11 --out " +
                                p("teacher.ckpt") + data,
                       log);
    code = code ? code
                : run_cli(ctx, "incremental --teacher " + p("teacher.ckpt") + " --config " +
                                   quote((dir / "tiny.cfg").string()) + " --mix 4,8 --seed 11 --out " +
                                   p("student.ckpt") + data,
                          log);
    code = code ? code : run_cli(ctx, "eval --ckpt " + p("student.ckpt") + " --out " + p("metrics.csv") + data, log);
    code = code ? code
                : run_cli(ctx, "grid --spec " + quote((dir / "tiny.grid").string()) + " --out " + p("grid"), log);
    if (code != 0) return {false, "CLI exited with " + std::to_string(code) + " (see " + log.string() + ")"};
  }
  for (const char* f : {"teacher.ckpt.log.csv", "student.ckpt.log.csv", "metrics.csv", "grid/results.csv",
                        "grid/baseline.csv", "grid/teacher_log.csv", "grid/runs/kd_s4_log.csv"}) {
    const auto a = slurp(dir / "a" / f), b = slurp(dir / "b" / f);
    if (a.empty() || a != b) ok = false;
    compared.push_back(f);
  }
  return {ok, std::to_string(compared.size()) + " CSV files from pretrain/incremental/eval/grid " +
                  (ok ? "byte-identical" : "DIFFER") + " across two invocations"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Context ctx;
  ctx.cli = ISRKD_CLI_PATH;
  ctx.configs = ISRKD_CONFIG_DIR;
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for experiment outputs")->capture_default_str();
  app.add_option("--cli", ctx.cli, "isrkd executable")->capture_default_str();
  app.add_option("--configs", ctx.configs, "Directory holding forward.grid and reverse.grid")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria");
  app.add_flag("--reuse", ctx.reuse, "Reuse completed grid outputs in the work directory");
  CLI11_PARSE(app, argc, argv);
  ctx.work = fs::absolute(work);

  const auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  std::optional<GridOutput> forward;
  const auto forward_grid = [&]() -> const GridOutput& {
    if (!forward) forward = run_grid(ctx, "forward");
    return *forward;
  };

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradient_suite},
      {2, kernel_oracles},
      {3, architecture},
      {4, metric_cases},
      {5, loss_identities},
      {6, freeze_and_equivalence},
      {7, [&] { return forgetting(forward_grid(), "source", "target", true); }},
      {8, [&] { return replay_trend(forward_grid()); }},
      {9, [&] { return forgetting(run_grid(ctx, "reverse"), "target", "source", false); }},
      {10, [&] { return reproducibility(ctx); }},
  };
  int failed = 0;
  for (const auto& [n, fn] : criteria) {
    if (!wanted(n)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("criterion %d: %s  %s [%.1f s]\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
