#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "isrkd/metrics.hpp"
#include "isrkd/training.hpp"

namespace isrkd {

// Held-out evaluation data and training pools for both domains, indexed by Domain.
struct ExperimentData {
  std::array<std::vector<DomainSample>, 2> pool;
  std::array<std::vector<DomainSample>, 2> test;

  const std::vector<DomainSample>& pool_of(Domain d) const { return pool[std::size_t(d)]; }
  const std::vector<DomainSample>& test_of(Domain d) const { return test[std::size_t(d)]; }
};

// Each domain draws pool_size + test_size images from its generator and splits
// them; the same data_seed always yields the same pools and test sets.
ExperimentData make_experiment_data(std::uint64_t data_seed, std::size_t pool_size, std::size_t test_size);

struct GridSetting {
  std::string name;
  MixSpec mix;
  LossWeights weights;
};

// Grid spec file: TrainConfig keys form the base config for every
// incremental run; the keys below are grid-level; `setting.N.<key>` blocks
// (name, mix, lambda_*) define one setting each, ordered by N.
struct GridSpec {
  TrainConfig base;
  Domain pretrained = Domain::source;  // `direction = reverse` pretrains on the target domain
  std::size_t pool_size = 256;
  std::size_t test_size = 32;
  std::size_t pretrain_epochs = 60;
  std::size_t pretrain_count = 0;  // images from the pretrained pool; 0 = all
  std::uint64_t data_seed = 0;
  std::vector<std::uint64_t> seeds{0};
  std::vector<GridSetting> settings;

  Domain incremental() const { return other_domain(pretrained); }
  void validate() const;
};

GridSpec parse_grid_spec(const std::string& text, const std::string& origin = "grid");
GridSpec load_grid_spec(const std::string& path);

// "name" for a single seed, "name_s<seed>" otherwise.
std::string experiment_id(const GridSpec& spec, const GridSetting& setting, std::uint64_t seed);

// One row per test domain, pretrained domain first.
std::vector<MetricsRow> evaluate_domains(const Generator<float>& generator, const ExperimentData& data,
                                         const std::vector<Domain>& domains, const std::string& experiment);

struct GridCallbacks {
  // Status text for long runs.
  std::function<void(const std::string&)> progress;
  // After pretraining: the teacher, its log and its rows ("pretrained").
  std::function<void(const Checkpoint&, const std::vector<EpochLog>&, const std::vector<MetricsRow>&)> pretrained;
  // After each incremental run.
  std::function<void(const std::string& experiment, const Checkpoint&, const std::vector<EpochLog>&,
                     const std::vector<MetricsRow>&)>
      run_finished;
};

struct GridResult {
  std::vector<MetricsRow> baseline;
  std::vector<MetricsRow> rows;  // settings x seeds x test domains
};

// Pretrains once on the pretrained domain, then runs every setting for
// every seed from that teacher and evaluates on both held-out test sets.
GridResult run_experiment_grid(const GridSpec& spec, const GridCallbacks& callbacks = {});

}  // namespace isrkd
