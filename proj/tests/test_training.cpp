#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "doctest.h"
#include "isrkd/adam.hpp"
#include "isrkd/error.hpp"
#include "isrkd/training.hpp"

using namespace isrkd;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 4;
  c.features = 4;
  c.disc_base_width = 2;
  c.disc_hidden = 8;
  c.lr = 1e-3;
  c.seed = 3;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("isrkd_training_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

bool same_params(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  return parameter_sha256(a) == parameter_sha256(b);
}

}  // namespace

TEST_CASE("config text round trip") {
  TrainConfig c = tiny_config();
  c.mix = {16, 48};
  c.weights.edge = 0.25;
  c.edge_mode = EdgeLossMode::all_scales;
  c.adversarial_form = GeneratorAdversarialForm::non_saturating;
  c.extended_tail = true;
  const auto text = format_config(c);
  const auto back = parse_config(text);
  CHECK(format_config(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(back.mix == c.mix);

  TrainConfig d = c;
  d.weights.edge = 0.3;
  CHECK(config_hash(d) != config_hash(c));

  const auto partial = parse_config("# comment\n epochs = 7 # trailing\n\nmix = 4, 12\n");
  CHECK(partial.epochs == 7);
  CHECK(partial.mix == MixSpec{4, 12});
  CHECK(partial.batch_size == TrainConfig{}.batch_size);

  CHECK_THROWS_AS(parse_config("epoch = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lambda_edge = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/isrkd.cfg"), ConfigError);
  try {
    parse_config("epochs = 1\nbogus = 2\n", "run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
}

TEST_CASE("mix parsing") {
  CHECK(parse_mix("16,48") == MixSpec{16, 48});
  CHECK(parse_mix("0,64") == MixSpec{0, 64});
  CHECK_THROWS_AS(parse_mix("16"), ConfigError);
  CHECK_THROWS_AS(parse_mix("16,0"), ConfigError);
  CHECK_THROWS_AS(parse_mix("a,4"), ConfigError);
  CHECK_THROWS_AS(parse_mix("-1,4"), ConfigError);
}

TEST_CASE("checkpoint round trip and corruption") {
  Generator<float> g({4, true}, 5);
  Discriminator<float> d({2, 8}, 6);
  const auto c = make_checkpoint(g, &d, 0xDEADBEEFCAFEF00Dull, 42);
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.generator == g.config());
  CHECK(back.discriminator == d.config());
  CHECK(back.config_hash == 0xDEADBEEFCAFEF00Dull);
  CHECK(back.epoch == 42);
  CHECK(same_params(back.generator_params, g.params()));
  CHECK(same_params(back.discriminator_params, d.params()));
  CHECK(encode_checkpoint(back) == bytes);

  const auto g2 = generator_from_checkpoint(back);
  CHECK(same_params(g2.params(), g.params()));
  const auto d2 = discriminator_from_checkpoint(back);
  CHECK(same_params(d2.params(), d.params()));

  const auto g_only = decode_checkpoint(encode_checkpoint(make_checkpoint(g, nullptr, 1, 2)));
  CHECK_FALSE(has_discriminator(g_only));
  CHECK_THROWS_AS(discriminator_from_checkpoint(g_only), FormatError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
  for (std::size_t cut : {std::size_t(2), std::size_t(10), bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(cut)), FormatError);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);

  const auto dir = scratch("ckpt");
  const auto path = (dir / "g.ckpt").string();
  save_checkpoint(c, path);
  CHECK(same_params(load_checkpoint(path).generator_params, g.params()));
  CHECK(file_sha256(path).size() == 64);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("mixed dataset composition") {
  const auto src = gen_source(1, 20);
  const auto tgt = gen_target(1, 30);
  const auto ds = build_mixed_dataset(src, tgt, {8, 24}, 4);
  CHECK(ds.count(Role::replay) == 8);
  CHECK(ds.count(Role::task) == 24);
  std::set<const DomainSample*> seen;
  for (const auto& e : ds.entries) {
    CHECK(seen.insert(e.sample).second);
    CHECK(e.sample->domain == (e.role == Role::replay ? Domain::source : Domain::target));
  }
  const auto again = build_mixed_dataset(src, tgt, {8, 24}, 4);
  for (std::size_t i = 0; i < ds.entries.size(); ++i) CHECK(ds.entries[i].sample == again.entries[i].sample);

  CHECK_THROWS_AS(build_mixed_dataset(src, tgt, {21, 24}, 4), ConfigError);
  CHECK_THROWS_AS(build_mixed_dataset(src, tgt, {0, 31}, 4), ConfigError);
  CHECK(build_mixed_dataset(src, tgt, {0, 30}, 4).count(Role::replay) == 0);

  const auto batches = epoch_batches(ds, 8, 4, 1);
  // bs = round(8 * 8 / 32) = 2, bt = 6, ceil(24 / 6) = 4 batches.
  REQUIRE(batches.size() == 4);
  std::set<const DomainSample*> task_seen;
  for (const auto& b : batches) {
    CHECK(b.task.size() == 6);
    CHECK(b.replay.size() == 2);
    for (auto* s : b.task) CHECK(task_seen.insert(s).second);
  }
  CHECK(task_seen.size() == 24);
  CHECK(epoch_batches(ds, 8, 4, 2)[0].task != batches[0].task);

  const auto only_task = epoch_batches(task_dataset(tgt), 8, 1, 1);
  CHECK(only_task.size() == 4);
  CHECK(only_task.back().task.size() == 6);
  for (const auto& b : only_task) CHECK(b.replay.empty());
}

TEST_CASE("pretraining smoke run is deterministic") {
  const auto data = gen_source(2, 8);
  const auto config = tiny_config();
  std::size_t steps = 0;
  const auto a = pretrain(config, data, [&](const StepInfo& info) {
    ++steps;
    CHECK(info.generator_losses->term("kd_response") == 0.0);
    CHECK(std::isfinite(info.discriminator_loss));
  });
  CHECK(steps == 2);
  REQUIRE(a.log.size() == 1);
  CHECK(std::isfinite(a.log[0].total));
  CHECK(a.log[0].terms[6] > 0);
  const auto b = pretrain(config, data);
  CHECK(same_params(a.generator.params(), b.generator.params()));
  CHECK(same_params(a.discriminator.params(), b.discriminator.params()));

  const Generator<float> init(config.generator_config(), 0);
  CHECK_FALSE(same_params(a.generator.params(), init.params()));

  const auto csv = training_log_csv(a.log);
  CHECK(csv.rfind("epoch,kd_response,kd_feature,edge,adversarial,lce,identity,reconstruction,total,d_loss\n", 0) == 0);
}

TEST_CASE("incremental training routes samples and leaves the teacher intact") {
  const auto src = gen_source(3, 8);
  const auto tgt = gen_target(3, 8);
  auto config = tiny_config();
  const auto teacher_run = pretrain(config, src);
  const auto teacher = make_checkpoint(teacher_run.generator, &teacher_run.discriminator, config_hash(config), 1);
  const auto teacher_sha = parameter_sha256(teacher.generator_params);

  config.mix = {4, 8};
  const auto r = incremental_train(teacher, src, tgt, config);
  CHECK(parameter_sha256(teacher.generator_params) == teacher_sha);
  CHECK(r.routing.task_terms_from_task == 8);
  CHECK(r.routing.discriminator_from_task == 8);
  CHECK(r.routing.task_terms_from_replay == 0);
  CHECK(r.routing.kd_terms_from_task == 0);
  CHECK(r.routing.discriminator_from_replay == 0);
  CHECK(r.routing.kd_terms_from_replay > 0);
  CHECK(r.log[0].terms[0] > 0);

  config.mix = {0, 8};
  const auto plain = incremental_train(teacher, src, tgt, config);
  CHECK(plain.routing.kd_terms_from_replay == 0);
  CHECK(plain.log[0].terms[0] == 0.0);
  CHECK(plain.log[0].terms[1] == 0.0);

  config.disc_hidden = 16;
  CHECK_THROWS_AS(incremental_train(teacher, src, tgt, config), ConfigError);
  config.reinit_discriminator = true;
  CHECK_NOTHROW(incremental_train(teacher, src, tgt, config));
}

TEST_CASE("zero KD weights reduce to plain fine-tuning") {
  const auto src = gen_source(4, 6);
  const auto tgt = gen_target(4, 6);
  auto config = tiny_config();
  config.augment = false;
  const auto teacher_run = pretrain(config, src);
  const auto teacher = make_checkpoint(teacher_run.generator, &teacher_run.discriminator, 0, 1);

  config.mix = {2, 6};
  config.epochs = 2;
  config.weights.kd_response = 0;
  config.weights.kd_feature = 0;
  const auto kd = incremental_train(teacher, src, tgt, config);

  // Reference loop: same batches, task samples only, no teacher.
  auto g = generator_from_checkpoint(teacher);
  auto d = discriminator_from_checkpoint(teacher);
  g.params().set_trainable(true);
  d.params().set_trainable(true);
  Adam<float> g_opt(g.params().tensors(), {config.lr, config.g_beta1, config.g_beta2, config.adam_eps});
  Adam<float> d_opt(d.params().tensors(), {config.lr, config.d_beta1, config.d_beta2, config.adam_eps});
  const IdentityEmbedder<float> embedder;
  const auto dataset = build_mixed_dataset(src, tgt, config.mix, config.seed);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(dataset, config.batch_size, config.seed, epoch)) {
      std::vector<Image> lr, hr;
      std::vector<EdgeMap> edges;
      for (auto* s : batch.task) {
        lr.push_back(s->lr);
        hr.push_back(s->hr);
        edges.push_back(s->hr_edges);
      }
      const auto lr_t = images_to_tensor<float>(lr), hr_t = images_to_tensor<float>(hr);
      const auto edges_t = edges_to_tensor<float>(edges);
      auto out = g.forward(lr_t);
      d.params().set_trainable(true);
      d_opt.zero_grad();
      adversarial_loss_d(d.forward(hr_t), d.forward(out.sr.detach())).backward();
      d_opt.step();
      d.params().set_trainable(false);
      LossTerms<float> terms;
      terms.adversarial = adversarial_loss_g(d.forward(out.sr), config.adversarial_form);
      terms.lce = lce_loss(out.sr, hr_t);
      terms.reconstruction = reconstruction_loss(out.sr, hr_t);
      Tensor32 hr_probs;
      {
        NoGradGuard no_grad;
        hr_probs = embedder.probabilities(hr_t);
      }
      terms.identity = identity_loss(embedder.probabilities(out.sr), hr_probs);
      terms.edge = edge_loss(out.edge_maps[2], edges_t);
      g_opt.zero_grad();
      total_loss(terms, config.weights).total.backward();
      g_opt.step();
    }
  }
  CHECK(same_params(kd.generator.params(), g.params()));
}

TEST_CASE("non-finite losses abort with the last good state") {
  auto data = gen_source(5, 4);
  data[1].hr.data[7] = std::numeric_limits<float>::quiet_NaN();
  const auto config = tiny_config();
  try {
    pretrain(config, data);
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(e.last_good().epoch == 0);
    CHECK(e.dump().find("d_loss=") != std::string::npos);
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}
