#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "isrkd/datagen.hpp"
#include "isrkd/losses.hpp"
#include "isrkd/networks.hpp"

namespace isrkd {

enum class EdgeLossMode { final_scale, all_scales };

struct MixSpec {
  std::size_t n_source = 0;  // replayed images from the pretrained domain
  std::size_t n_target = 64;
  void validate() const;
  friend bool operator==(const MixSpec&, const MixSpec&) = default;
};
MixSpec parse_mix(const std::string& text);  // "nS,nT"

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double adam_eps = 1e-8;
  double g_beta1 = 0.9, g_beta2 = 0.999;
  double d_beta1 = 0.5, d_beta2 = 0.9;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::size_t features = 64;
  bool extended_tail = false;
  EdgeLossMode edge_mode = EdgeLossMode::final_scale;
  MixSpec mix;
  std::size_t disc_base_width = 128;
  std::size_t disc_hidden = 1024;
  GeneratorAdversarialForm adversarial_form = GeneratorAdversarialForm::saturating;
  bool reinit_discriminator = false;
  bool augment = true;  // horizontal flip (p=0.5) and 0/90/270 degree rotation

  void validate() const;
  GeneratorConfig generator_config() const { return {features, extended_tail}; }
  DiscriminatorConfig discriminator_config() const { return {disc_base_width, disc_hidden}; }
};

// Sets one `key = value` entry; returns false for an unknown key. Throws
// ConfigError on a malformed value.
bool apply_config_key(TrainConfig& config, const std::string& key, const std::string& value);
// Line-oriented `key = value` text; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_config(const std::string& text, const std::string& origin = "config");
TrainConfig load_config(const std::string& path);
// Every key with its current value, one per line, in a fixed order.
std::string format_config(const TrainConfig& config);
std::uint64_t config_hash(const TrainConfig& config);

// Splits "a = b" into trimmed key/value; false for blank or comment lines.
bool split_key_value(const std::string& line, std::string& key, std::string& value);

// ---- checkpoints ----

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  ParameterSet<float> generator_params;
  ParameterSet<float> discriminator_params;  // empty when not stored
  std::uint64_t config_hash = 0;
  std::uint64_t epoch = 0;
};

Checkpoint make_checkpoint(const Generator<float>& generator, const Discriminator<float>* discriminator,
                           std::uint64_t config_hash, std::uint64_t epoch);
Generator<float> generator_from_checkpoint(const Checkpoint& checkpoint);
bool has_discriminator(const Checkpoint& checkpoint);
Discriminator<float> discriminator_from_checkpoint(const Checkpoint& checkpoint);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Hex SHA-256 over parameter names, shapes and values.
std::string parameter_sha256(const ParameterSet<float>& params);
std::string file_sha256(const std::string& path);

// ---- datasets and batches ----

enum class Role { task, replay };

struct MixedEntry {
  const DomainSample* sample = nullptr;
  Role role = Role::task;
};

struct MixedDataset {
  std::vector<MixedEntry> entries;
  std::size_t count(Role role) const;
};

// Random subsets without replacement (n_source from the replay pool, n_target
// from the task pool), interleaved in shuffled order. The pools must outlive
// the dataset.
MixedDataset build_mixed_dataset(std::span<const DomainSample> replay_pool,
                                 std::span<const DomainSample> task_pool, MixSpec mix, std::uint64_t seed);
MixedDataset task_dataset(std::span<const DomainSample> samples);

struct Batch {
  std::vector<const DomainSample*> task;
  std::vector<const DomainSample*> replay;
};

// One epoch: task samples in shuffled order, ceil(n_task / bt) batches of bt
// task samples; replay samples are drawn cyclically, bs per batch, where
// bs = round(batch * nR / (nR + nT)) (at least 1 when nR > 0) and bt = batch - bs.
std::vector<Batch> epoch_batches(const MixedDataset& dataset, std::size_t batch_size, std::uint64_t seed,
                                 std::size_t epoch);

// ---- training ----

// Counts of samples feeding each loss family, by role.
struct RoutingCounters {
  std::size_t task_terms_from_task = 0;
  std::size_t task_terms_from_replay = 0;
  std::size_t kd_terms_from_task = 0;
  std::size_t kd_terms_from_replay = 0;
  std::size_t discriminator_from_task = 0;
  std::size_t discriminator_from_replay = 0;
};

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;
  const LossBreakdown<float>* generator_losses = nullptr;
  double discriminator_loss = 0;
  const Generator<float>* generator = nullptr;
};
using StepObserver = std::function<void(const StepInfo&)>;

struct EpochLog {
  std::size_t epoch = 0;
  std::array<double, 7> terms{};  // unweighted, kLossTermNames order
  double total = 0;
  double discriminator_loss = 0;
};

struct TrainResult {
  Generator<float> generator;
  Discriminator<float> discriminator;
  std::vector<EpochLog> log;
  RoutingCounters routing;
};

// Thrown when a loss turns non-finite. Carries the state at the end of the
// last completed epoch (or the initial state) and a per-term dump.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& message, Checkpoint last_good, std::string dump)
      : NumericalError(message), last_good_(std::move(last_good)), dump_(std::move(dump)) {}
  const Checkpoint& last_good() const { return last_good_; }
  const std::string& dump() const { return dump_; }

 private:
  Checkpoint last_good_;
  std::string dump_;
};

// Trains G and D from scratch on one domain; the KD terms are absent.
TrainResult pretrain(const TrainConfig& config, std::span<const DomainSample> data,
                     const StepObserver& observer = {});

// Student initialised from the teacher; task samples drive every non-KD term,
// replayed samples go through both the frozen teacher and the student for the
// KD terms. D trains on task samples only.
TrainResult incremental_train(const Checkpoint& teacher, std::span<const DomainSample> replay_pool,
                              std::span<const DomainSample> task_pool, const TrainConfig& config,
                              const StepObserver& observer = {});

// Header: epoch, the seven terms, total, d_loss.
std::string training_log_csv(const std::vector<EpochLog>& log);

}  // namespace isrkd
