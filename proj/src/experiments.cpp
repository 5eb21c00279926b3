#include "isrkd/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "isrkd/error.hpp"

namespace isrkd {

namespace {

std::uint64_t grid_count(const std::string& key, const std::string& text) {
  const auto first = text.find_first_not_of(' ');
  const auto last = text.find_last_not_of(' ');
  std::uint64_t v = 0;
  if (first != std::string::npos) {
    const char* begin = text.data() + first;
    const char* end = text.data() + last + 1;
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec == std::errc() && ptr == end) return v;
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& value) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) seeds.push_back(grid_count("seeds", item));
  if (seeds.empty()) throw ConfigError("seeds: expected a comma-separated list");
  return seeds;
}

}  // namespace

ExperimentData make_experiment_data(std::uint64_t data_seed, std::size_t pool_size, std::size_t test_size) {
  if (pool_size == 0 || test_size == 0) throw ConfigError("pool_size and test_size must be positive");
  ExperimentData data;
  for (Domain d : {Domain::source, Domain::target}) {
    auto [pool, test] = split(gen_domain(d, data_seed, pool_size + test_size),
                              double(pool_size) / double(pool_size + test_size), data_seed);
    data.pool[std::size_t(d)] = std::move(pool);
    data.test[std::size_t(d)] = std::move(test);
  }
  return data;
}

void GridSpec::validate() const {
  if (settings.empty()) throw ConfigError("grid spec lists no settings");
  if (seeds.empty()) throw ConfigError("grid spec lists no seeds");
  if (pool_size == 0 || test_size == 0) throw ConfigError("pool_size and test_size must be positive");
  if (pretrain_epochs == 0) throw ConfigError("pretrain_epochs must be positive");
  if (pretrain_count > pool_size) throw ConfigError("pretrain_count exceeds pool_size");
  base.validate();
  std::set<std::string> names;
  for (const auto& s : settings) {
    if (s.name.empty()) throw ConfigError("setting without a name");
    if (!names.insert(s.name).second) throw ConfigError("duplicate setting name '" + s.name + "'");
    s.mix.validate();
    s.weights.validate();
    if (s.mix.n_source > pool_size || s.mix.n_target > pool_size) {
      throw ConfigError("setting '" + s.name + "' asks for more images than pool_size");
    }
  }
}

GridSpec parse_grid_spec(const std::string& text, const std::string& origin) {
  GridSpec spec;
  std::map<std::size_t, std::vector<std::pair<std::string, std::string>>> blocks;
  std::istringstream in(text);
  std::string line, key, value;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    try {
      if (!split_key_value(line, key, value)) continue;
      if (key.rfind("setting.", 0) == 0) {
        const auto dot = key.find('.', 8);
        if (dot == std::string::npos) throw ConfigError("expected setting.N.key, got '" + key + "'");
        const auto index = grid_count(key, key.substr(8, dot - 8));
        blocks[index].emplace_back(key.substr(dot + 1), value);
      } else if (key == "direction") {
        if (value == "forward") spec.pretrained = Domain::source;
        else if (value == "reverse") spec.pretrained = Domain::target;
        else throw ConfigError("direction: expected forward or reverse, got '" + value + "'");
      } else if (key == "pool_size") spec.pool_size = grid_count(key, value);
      else if (key == "test_size") spec.test_size = grid_count(key, value);
      else if (key == "pretrain_epochs") spec.pretrain_epochs = grid_count(key, value);
      else if (key == "pretrain_count") spec.pretrain_count = grid_count(key, value);
      else if (key == "data_seed") spec.data_seed = grid_count(key, value);
      else if (key == "seeds") spec.seeds = parse_seeds(value);
      else if (!apply_config_key(spec.base, key, value)) throw ConfigError("unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& [index, entries] : blocks) {
    GridSetting s;
    s.name = "setting" + std::to_string(index);
    s.weights = spec.base.weights;
    bool has_mix = false;
    for (const auto& [k, v] : entries) {
      const std::string where = origin + ": setting." + std::to_string(index) + "." + k + ": ";
      try {
        if (k == "name") {
          s.name = v;
        } else if (k == "mix") {
          s.mix = parse_mix(v);
          has_mix = true;
        } else if (k.rfind("lambda_", 0) == 0) {
          TrainConfig scratch;
          scratch.weights = s.weights;
          if (!apply_config_key(scratch, k, v)) throw ConfigError("unknown setting key");
          s.weights = scratch.weights;
        } else {
          throw ConfigError("unknown setting key");
        }
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
    }
    if (!has_mix) throw ConfigError(origin + ": setting." + std::to_string(index) + " has no mix");
    spec.settings.push_back(std::move(s));
  }
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return spec;
}

GridSpec load_grid_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read grid spec " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_grid_spec(text, path);
}

std::string experiment_id(const GridSpec& spec, const GridSetting& setting, std::uint64_t seed) {
  if (spec.seeds.size() == 1) return setting.name;
  return setting.name + "_s" + std::to_string(seed);
}

std::vector<MetricsRow> evaluate_domains(const Generator<float>& generator, const ExperimentData& data,
                                         const std::vector<Domain>& domains, const std::string& experiment) {
  const IdentityEmbedder<float> embedder;
  std::vector<MetricsRow> rows;
  for (Domain d : domains) {
    const auto& test = data.test_of(d);
    auto row = evaluate(generator, lr_images(test), hr_images(test), embedder);
    row.experiment = experiment;
    row.test_domain = domain_name(d);
    rows.push_back(std::move(row));
  }
  return rows;
}

GridResult run_experiment_grid(const GridSpec& spec, const GridCallbacks& callbacks) {
  spec.validate();
  const auto say = [&](const std::string& msg) {
    if (callbacks.progress) callbacks.progress(msg);
  };
  const auto data = make_experiment_data(spec.data_seed, spec.pool_size, spec.test_size);
  const Domain first = spec.pretrained, second = spec.incremental();
  const std::vector<Domain> order{first, second};

  TrainConfig pre = spec.base;
  pre.epochs = spec.pretrain_epochs;
  pre.seed = spec.data_seed;
  const auto& pool = data.pool_of(first);
  const std::size_t count = spec.pretrain_count == 0 ? pool.size() : spec.pretrain_count;
  say("pretraining on " + std::to_string(count) + " " + domain_name(first) + " images for " +
      std::to_string(pre.epochs) + " epochs");
  const auto teacher_run = pretrain(pre, std::span(pool).first(count));
  const auto teacher =
      make_checkpoint(teacher_run.generator, &teacher_run.discriminator, config_hash(pre), pre.epochs);

  GridResult result;
  result.baseline = evaluate_domains(teacher_run.generator, data, order, "pretrained");
  if (callbacks.pretrained) callbacks.pretrained(teacher, teacher_run.log, result.baseline);

  for (const auto& setting : spec.settings) {
    for (std::uint64_t seed : spec.seeds) {
      TrainConfig config = spec.base;
      config.mix = setting.mix;
      config.weights = setting.weights;
      config.seed = seed;
      const auto id = experiment_id(spec, setting, seed);
      say("running " + id + " (mix " + std::to_string(setting.mix.n_source) + "," +
          std::to_string(setting.mix.n_target) + ")");
      const auto run = incremental_train(teacher, data.pool_of(first), data.pool_of(second), config);
      auto rows = evaluate_domains(run.generator, data, order, id);
      if (callbacks.run_finished) {
        callbacks.run_finished(id, make_checkpoint(run.generator, &run.discriminator, config_hash(config), config.epochs),
                               run.log, rows);
      }
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    }
  }
  return result;
}

}  // namespace isrkd
