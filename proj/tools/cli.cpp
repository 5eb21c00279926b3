#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "isrkd/error.hpp"
#include "isrkd/experiments.hpp"

namespace isrkd::cli {

namespace {

namespace fs = std::filesystem;

void write_text(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

// Dataset source shared by the training and evaluation commands: either a
// directory written by gen-data (train/ and test/ in the export layout) or
// the synthetic generators.
struct DataOptions {
  std::string dir;
  std::uint64_t data_seed = 0;
  std::size_t pool_size = 256;
  std::size_t test_size = 32;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--data", dir, "Directory written by gen-data (default: generate in memory)");
    cmd.add_option("--data-seed", data_seed, "Seed for generated pools and test sets")->capture_default_str();
    cmd.add_option("--pool-size", pool_size, "Generated training images per domain")->capture_default_str();
    cmd.add_option("--test-size", test_size, "Generated held-out images per domain")->capture_default_str();
  }

  ExperimentData load() const {
    if (dir.empty()) return make_experiment_data(data_seed, pool_size, test_size);
    ExperimentData data;
    for (const auto& [sub, sets] : {std::pair{"train", &data.pool}, std::pair{"test", &data.test}}) {
      for (auto& s : ingest_samples((fs::path(dir) / sub).string())) {
        (*sets)[std::size_t(s.domain)].push_back(std::move(s));
      }
    }
    return data;
  }
};

// Training flags layered over an optional config file.
struct TrainOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::vector<std::string> overrides;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "key = value config file");
    cmd.add_option("--seed", seed, "Overrides the config seed");
    cmd.add_option("--epochs", epochs, "Overrides the config epoch count");
    cmd.add_option("--set", overrides, "Extra config entry, key=value (repeatable)");
  }

  TrainConfig load() const {
    TrainConfig config = config_path.empty() ? TrainConfig{} : load_config(config_path);
    for (const auto& entry : overrides) {
      std::string key, value;
      if (!split_key_value(entry, key, value)) throw ConfigError("--set: empty entry");
      if (!apply_config_key(config, key, value)) throw ConfigError("--set: unknown key '" + key + "'");
    }
    if (seed) config.seed = *seed;
    if (epochs) config.epochs = *epochs;
    config.validate();
    return config;
  }
};

void save_run(const Checkpoint& checkpoint, const std::vector<EpochLog>& log, const std::string& ckpt_path,
              const std::string& log_path) {
  save_checkpoint(checkpoint, ckpt_path);
  write_text(log_path.empty() ? ckpt_path + ".log.csv" : log_path, training_log_csv(log));
}

// Keeps the last good state next to the requested output when training aborts.
template <typename F>
TrainResult guarded(const std::string& out, std::ostream& err, F&& train) {
  try {
    return train();
  } catch (const TrainingAborted& e) {
    const auto path = out + ".last_good.ckpt";
    save_checkpoint(e.last_good(), path);
    err << "last good state (epoch " << e.last_good().epoch << ") written to " << path << "\n";
    throw;
  }
}

StepObserver epoch_reporter(std::ostream& err, std::size_t epochs) {
  return [&err, epochs](const StepInfo& info) {
    if (info.step == 0 && (info.epoch == 1 || info.epoch % 10 == 0 || info.epoch == epochs)) {
      err << "epoch " << info.epoch << "/" << epochs << " loss " << info.generator_losses->total.item() << "\n";
    }
  };
}

std::vector<Domain> parse_domains(const std::string& text) {
  std::vector<Domain> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_domain(item));
  if (out.empty()) throw ConfigError("--domains: expected source, target or both");
  return out;
}

Image side_by_side(const Image& lr, const Image& sr, const Image& hr) {
  Image up = resize_bicubic(lr, hr.width, hr.height);
  for (float& v : up.data) v = std::clamp(v, 0.0f, 1.0f);
  Image grid(3 * hr.width, hr.height, 3);
  const Image* panels[3] = {&up, &sr, &hr};
  for (int p = 0; p < 3; ++p)
    for (int y = 0; y < hr.height; ++y)
      for (int x = 0; x < hr.width; ++x)
        for (int c = 0; c < 3; ++c) {
          grid.data[(std::size_t(y) * grid.width + p * hr.width + x) * 3 + c] =
              panels[p]->data[(std::size_t(y) * hr.width + x) * 3 + c];
        }
  return grid;
}

Image edges_image(const EdgeMap& edges) {
  Image out(edges.width, edges.height, 1);
  out.data = edges.data;
  return out;
}

int cmd_pretrain(const TrainOptions& train, const DataOptions& data_opts, const std::string& domain_name_,
                 std::size_t count, const std::string& out, const std::string& log_path, std::ostream& err) {
  const auto config = train.load();
  const Domain domain = parse_domain(domain_name_);
  const auto data = data_opts.load();
  const auto& pool = data.pool_of(domain);
  if (pool.empty()) throw ConfigError("no " + domain_name(domain) + " training images");
  const std::size_t n = count == 0 ? pool.size() : count;
  if (n > pool.size()) throw ConfigError("--count exceeds the " + std::to_string(pool.size()) + "-image pool");
  err << "pretraining on " << n << " " << domain_name(domain) << " images\n";
  const auto result = guarded(out, err, [&] {
    return pretrain(config, std::span(pool).first(n), epoch_reporter(err, config.epochs));
  });
  save_run(make_checkpoint(result.generator, &result.discriminator, config_hash(config), config.epochs), result.log,
           out, log_path);
  return kExitOk;
}

int cmd_incremental(const TrainOptions& train, const DataOptions& data_opts, const std::string& teacher_path,
                    const std::string& mix, const std::string& direction, const std::string& out,
                    const std::string& log_path, std::ostream& err) {
  auto config = train.load();
  if (!mix.empty()) config.mix = parse_mix(mix);
  Domain replay = Domain::source;
  if (direction == "reverse") replay = Domain::target;
  else if (direction != "forward") throw ConfigError("--direction: expected forward or reverse");
  const auto teacher = load_checkpoint(teacher_path);
  const auto data = data_opts.load();
  err << "incremental training, mix " << config.mix.n_source << "," << config.mix.n_target << "\n";
  const auto result = guarded(out, err, [&] {
    return incremental_train(teacher, data.pool_of(replay), data.pool_of(other_domain(replay)), config,
                             epoch_reporter(err, config.epochs));
  });
  save_run(make_checkpoint(result.generator, &result.discriminator, config_hash(config), config.epochs), result.log,
           out, log_path);
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& domains_text, const DataOptions& data_opts,
             const std::string& out, const std::string& images_dir, const std::string& name) {
  const auto domains = parse_domains(domains_text);
  const auto generator = generator_from_checkpoint(load_checkpoint(ckpt));
  const auto data = data_opts.load();
  for (Domain d : domains) {
    if (data.test_of(d).empty()) throw ConfigError("no " + domain_name(d) + " test images");
  }
  write_metrics_csv(out, evaluate_domains(generator, data, domains, name));
  if (!images_dir.empty()) {
    fs::create_directories(images_dir);
    for (Domain d : domains) {
      const auto& test = data.test_of(d);
      const std::size_t n = std::min<std::size_t>(8, test.size());
      const auto subset = std::span(test).first(n);
      const auto sr = super_resolve(generator, lr_images(subset));
      for (std::size_t i = 0; i < n; ++i) {
        write_ppm(side_by_side(subset[i].lr, sr[i], subset[i].hr),
                  (fs::path(images_dir) / (domain_name(d) + "_" + std::to_string(i) + ".ppm")).string());
      }
    }
  }
  return kExitOk;
}

int cmd_grid(const std::string& spec_path, const std::string& out_dir, std::ostream& err) {
  const auto spec = load_grid_spec(spec_path);
  const fs::path dir(out_dir);
  fs::create_directories(dir / "runs");
  std::vector<MetricsRow> rows;
  GridCallbacks callbacks;
  callbacks.progress = [&err](const std::string& msg) { err << msg << "\n"; };
  callbacks.pretrained = [&](const Checkpoint& c, const std::vector<EpochLog>& log,
                             const std::vector<MetricsRow>& baseline) {
    save_run(c, log, (dir / "teacher.ckpt").string(), (dir / "teacher_log.csv").string());
    write_metrics_csv((dir / "baseline.csv").string(), baseline);
    write_metrics_csv((dir / "results.csv").string(), rows);
  };
  callbacks.run_finished = [&](const std::string& id, const Checkpoint& c, const std::vector<EpochLog>& log,
                               const std::vector<MetricsRow>& run_rows) {
    save_run(c, log, (dir / "runs" / (id + ".ckpt")).string(), (dir / "runs" / (id + "_log.csv")).string());
    rows.insert(rows.end(), run_rows.begin(), run_rows.end());
    // Rewritten after every run so a failure keeps the finished rows.
    write_metrics_csv((dir / "results.csv").string(), rows);
  };
  run_experiment_grid(spec, callbacks);
  return kExitOk;
}

int cmd_gen_data(const DataOptions& data_opts, const std::string& out) {
  const auto data = make_experiment_data(data_opts.data_seed, data_opts.pool_size, data_opts.test_size);
  for (const auto& [sub, sets] : {std::pair{"train", &data.pool}, std::pair{"test", &data.test}}) {
    std::vector<DomainSample> all;
    for (const auto& set : *sets) all.insert(all.end(), set.begin(), set.end());
    export_samples((fs::path(out) / sub).string(), all);
  }
  return kExitOk;
}

int cmd_export_samples(std::uint64_t seed, std::size_t count, const std::string& out) {
  if (count == 0) throw ConfigError("--count must be positive");
  fs::create_directories(out);
  std::string manifest = "id,domain,seed\n";
  for (Domain d : {Domain::source, Domain::target}) {
    for (const auto& s : gen_domain(d, seed, count)) {
      const auto stem = (fs::path(out) / (domain_name(d) + "_" + std::to_string(s.id))).string();
      write_ppm(s.hr, stem + "_hr.ppm");
      write_ppm(s.lr, stem + "_lr.ppm");
      write_ppm(edges_image(s.hr_edges), stem + "_edges.pgm");
      manifest += std::to_string(s.id) + "," + domain_name(d) + "," + std::to_string(s.seed) + "\n";
    }
  }
  write_text((fs::path(out) / "manifest.csv").string(), manifest);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Incremental face super-resolution with knowledge distillation"};
  app.name("isrkd");
  app.require_subcommand(1);

  TrainOptions pre_train, inc_train;
  DataOptions pre_data, inc_data, eval_data, gen_data;
  std::string pre_out, pre_log, pre_domain = "source";
  std::size_t pre_count = 0;
  std::string inc_teacher, inc_mix, inc_out, inc_log, inc_direction = "forward";
  std::string eval_ckpt, eval_domains = "source,target", eval_out, eval_images, eval_name = "eval";
  std::string grid_spec, grid_out, gen_out, export_out;
  std::uint64_t export_seed = 0;
  std::size_t export_count = 4;

  auto* pre = app.add_subcommand("pretrain", "Train G and D from scratch on one domain");
  pre_train.add_to(*pre);
  pre_data.add_to(*pre);
  pre->add_option("--domain", pre_domain, "Domain to pretrain on")->capture_default_str();
  pre->add_option("--count", pre_count, "Images from the pool (0 = all)")->capture_default_str();
  pre->add_option("--out", pre_out, "Checkpoint path")->required();
  pre->add_option("--log", pre_log, "Training-log CSV (default: <out>.log.csv)");

  auto* inc = app.add_subcommand("incremental", "Train a student from a frozen teacher on a mixed dataset");
  inc_train.add_to(*inc);
  inc_data.add_to(*inc);
  inc->add_option("--teacher", inc_teacher, "Teacher checkpoint")->required();
  inc->add_option("--mix", inc_mix, "nS,nT replayed and new-domain image counts");
  inc->add_option("--direction", inc_direction, "forward: replay source; reverse: replay target")
      ->capture_default_str();
  inc->add_option("--out", inc_out, "Student checkpoint path")->required();
  inc->add_option("--log", inc_log, "Training-log CSV (default: <out>.log.csv)");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on held-out test sets");
  ev->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  ev->add_option("--domains", eval_domains, "Comma-separated test domains")->capture_default_str();
  ev->add_option("--out", eval_out, "Metrics CSV")->required();
  ev->add_option("--images", eval_images, "Write LR|SR|HR PPM grids for the first 8 test images here");
  ev->add_option("--name", eval_name, "Experiment column value")->capture_default_str();
  eval_data.add_to(*ev);

  auto* grid = app.add_subcommand("grid", "Pretrain once, then run every setting of a grid spec");
  grid->add_option("--spec", grid_spec, "Grid spec file")->required();
  grid->add_option("--out", grid_out, "Output directory")->required();

  auto* gen = app.add_subcommand("gen-data", "Write generated pools and test sets as PPM directories");
  gen->add_option("--out", gen_out, "Output directory (train/ and test/)")->required();
  gen->add_option("--seed", gen_data.data_seed, "Data seed")->capture_default_str();
  gen->add_option("--pool-size", gen_data.pool_size, "Training images per domain")->capture_default_str();
  gen->add_option("--test-size", gen_data.test_size, "Held-out images per domain")->capture_default_str();

  auto* exp = app.add_subcommand("export-samples", "Write HR, LR and edge images of a few samples per domain");
  exp->add_option("--out", export_out, "Output directory")->required();
  exp->add_option("--seed", export_seed, "Generator seed")->capture_default_str();
  exp->add_option("--count", export_count, "Samples per domain")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(pre_train, pre_data, pre_domain, pre_count, pre_out, pre_log, err);
    if (inc->parsed()) {
      return cmd_incremental(inc_train, inc_data, inc_teacher, inc_mix, inc_direction, inc_out, inc_log, err);
    }
    if (ev->parsed()) return cmd_eval(eval_ckpt, eval_domains, eval_data, eval_out, eval_images, eval_name);
    if (grid->parsed()) return cmd_grid(grid_spec, grid_out, err);
    if (gen->parsed()) return cmd_gen_data(gen_data, gen_out);
    if (exp->parsed()) return cmd_export_samples(export_seed, export_count, export_out);
  } catch (const TrainingAborted& e) {
    err << "error: " << e.what() << "\n" << e.dump();
    return kExitNumerical;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace isrkd::cli
