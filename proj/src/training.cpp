#include "isrkd/training.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "isrkd/adam.hpp"
#include "isrkd/ops.hpp"

namespace isrkd {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    if (!value.empty() && value[0] == '-') throw std::invalid_argument(value);
    const auto v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return std::size_t(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::array<unsigned char, 32> sha256(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, 32> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  return digest;
}

std::string hex(std::span<const unsigned char> digest) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) + index);
}

// Seed streams.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kGeneratorInitStream = 3;
constexpr std::uint64_t kDiscriminatorInitStream = 4;
constexpr std::uint64_t kMixStream = 5;

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void MixSpec::validate() const {
  if (n_target == 0) throw ConfigError("mix: n_target must be positive");
}

MixSpec parse_mix(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError("mix: expected 'nS,nT', got '" + text + "'");
  MixSpec mix{parse_count("mix", trim(text.substr(0, comma))), parse_count("mix", trim(text.substr(comma + 1)))};
  mix.validate();
  return mix;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (features == 0) throw ConfigError("features must be positive");
  if (disc_base_width == 0 || disc_hidden == 0) throw ConfigError("discriminator widths must be positive");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  for (double b : {g_beta1, g_beta2, d_beta1, d_beta2}) {
    if (!(b > 0 && b < 1)) throw ConfigError("Adam betas must lie in (0, 1)");
  }
  weights.validate();
  mix.validate();
}

bool apply_config_key(TrainConfig& c, const std::string& key, const std::string& value) {
  const auto betas = [&](double& b1, double& b2) {
    const auto comma = value.find(',');
    if (comma == std::string::npos) throw ConfigError(key + ": expected 'beta1,beta2'");
    b1 = parse_real(key, trim(value.substr(0, comma)));
    b2 = parse_real(key, trim(value.substr(comma + 1)));
  };
  if (key == "epochs") c.epochs = parse_count(key, value);
  else if (key == "batch_size") c.batch_size = parse_count(key, value);
  else if (key == "lr") c.lr = parse_real(key, value);
  else if (key == "adam_eps") c.adam_eps = parse_real(key, value);
  else if (key == "g_betas") betas(c.g_beta1, c.g_beta2);
  else if (key == "d_betas") betas(c.d_beta1, c.d_beta2);
  else if (key == "lambda_kd_response") c.weights.kd_response = parse_real(key, value);
  else if (key == "lambda_kd_feature") c.weights.kd_feature = parse_real(key, value);
  else if (key == "lambda_edge") c.weights.edge = parse_real(key, value);
  else if (key == "lambda_ad") c.weights.adversarial = parse_real(key, value);
  else if (key == "lambda_lce") c.weights.lce = parse_real(key, value);
  else if (key == "lambda_id") c.weights.identity = parse_real(key, value);
  else if (key == "lambda_rl") c.weights.reconstruction = parse_real(key, value);
  else if (key == "seed") c.seed = parse_count(key, value);
  else if (key == "features") c.features = parse_count(key, value);
  else if (key == "extended_tail") c.extended_tail = parse_bool(key, value);
  else if (key == "edge_loss_mode") {
    if (value == "final") c.edge_mode = EdgeLossMode::final_scale;
    else if (value == "all") c.edge_mode = EdgeLossMode::all_scales;
    else throw ConfigError(key + ": expected final or all, got '" + value + "'");
  } else if (key == "mix") c.mix = parse_mix(value);
  else if (key == "disc_base_width") c.disc_base_width = parse_count(key, value);
  else if (key == "disc_hidden") c.disc_hidden = parse_count(key, value);
  else if (key == "adversarial_form") {
    if (value == "saturating") c.adversarial_form = GeneratorAdversarialForm::saturating;
    else if (value == "non_saturating") c.adversarial_form = GeneratorAdversarialForm::non_saturating;
    else throw ConfigError(key + ": expected saturating or non_saturating, got '" + value + "'");
  } else if (key == "reinit_discriminator") c.reinit_discriminator = parse_bool(key, value);
  else if (key == "augment") c.augment = parse_bool(key, value);
  else return false;
  return true;
}

bool split_key_value(const std::string& raw, std::string& key, std::string& value) {
  std::string line = raw;
  if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
  line = trim(line);
  if (line.empty()) return false;
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'");
  key = trim(line.substr(0, eq));
  value = trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError("missing key in '" + line + "'");
  return true;
}

TrainConfig parse_config(const std::string& text, const std::string& origin) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line, key, value;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    try {
      if (!split_key_value(line, key, value)) continue;
      if (!apply_config_key(config, key, value)) throw ConfigError("unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return config;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, path);
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "epochs = " << c.epochs << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "lr = " << real_text(c.lr) << "\n"
      << "adam_eps = " << real_text(c.adam_eps) << "\n"
      << "g_betas = " << real_text(c.g_beta1) << "," << real_text(c.g_beta2) << "\n"
      << "d_betas = " << real_text(c.d_beta1) << "," << real_text(c.d_beta2) << "\n"
      << "lambda_kd_response = " << real_text(c.weights.kd_response) << "\n"
      << "lambda_kd_feature = " << real_text(c.weights.kd_feature) << "\n"
      << "lambda_edge = " << real_text(c.weights.edge) << "\n"
      << "lambda_ad = " << real_text(c.weights.adversarial) << "\n"
      << "lambda_lce = " << real_text(c.weights.lce) << "\n"
      << "lambda_id = " << real_text(c.weights.identity) << "\n"
      << "lambda_rl = " << real_text(c.weights.reconstruction) << "\n"
      << "seed = " << c.seed << "\n"
      << "features = " << c.features << "\n"
      << "extended_tail = " << (c.extended_tail ? "true" : "false") << "\n"
      << "edge_loss_mode = " << (c.edge_mode == EdgeLossMode::final_scale ? "final" : "all") << "\n"
      << "mix = " << c.mix.n_source << "," << c.mix.n_target << "\n"
      << "disc_base_width = " << c.disc_base_width << "\n"
      << "disc_hidden = " << c.disc_hidden << "\n"
      << "adversarial_form = "
      << (c.adversarial_form == GeneratorAdversarialForm::saturating ? "saturating" : "non_saturating") << "\n"
      << "reinit_discriminator = " << (c.reinit_discriminator ? "true" : "false") << "\n"
      << "augment = " << (c.augment ? "true" : "false") << "\n";
  return out.str();
}

std::uint64_t config_hash(const TrainConfig& config) {
  const auto text = format_config(config);
  const auto digest = sha256({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h = (h << 8) | digest[i];
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'I', 'S', 'R', 'K'};

// 64-bit values are stored as four exact 16-bit chunks in a float tensor.
Tensor<float> u64_tensor(std::uint64_t v) {
  std::vector<float> chunks(4);
  for (int i = 0; i < 4; ++i) chunks[i] = float((v >> (16 * i)) & 0xFFFF);
  return Tensor<float>::from({4}, std::move(chunks));
}

std::uint64_t tensor_u64(const Tensor<float>& t, const std::string& name) {
  if (t.shape() != Shape{4}) throw FormatError("checkpoint: metadata " + name + " has shape " + shape_str(t.shape()));
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const float c = t.data()[i];
    if (!(c >= 0 && c <= 65535 && c == std::floor(c))) throw FormatError("checkpoint: corrupt metadata " + name);
    v |= std::uint64_t(c) << (16 * i);
  }
  return v;
}

struct Writer {
  std::vector<std::uint8_t> bytes;
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(std::uint8_t((std::uint64_t(v) >> (8 * i)) & 0xFF));
  }
  void put_f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put(bits);
  }
};

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
  void need(std::size_t n, const char* what) {
    if (bytes.size() - pos < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(bytes[pos + i]) << (8 * i);
    pos += sizeof(U);
    return U(v);
  }
};

void write_tensor(Writer& w, const std::string& name, const Tensor<float>& t) {
  if (name.size() > 0xFFFF) throw Error("checkpoint: tensor name too long");
  if (t.rank() > 0xFF) throw Error("checkpoint: tensor rank too large");
  w.put(std::uint16_t(name.size()));
  w.bytes.insert(w.bytes.end(), name.begin(), name.end());
  w.put(std::uint8_t(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xFFFFFFFFull) throw Error("checkpoint: dimension too large");
    w.put(std::uint32_t(d));
  }
  for (float v : t.data()) w.put_f32(v);
}

ParameterSet<float> strip_prefix(const std::vector<std::pair<std::string, Tensor<float>>>& all,
                                 const std::string& prefix) {
  ParameterSet<float> out;
  for (const auto& [name, t] : all) {
    if (name.rfind(prefix, 0) == 0) {
      out.add(name.substr(prefix.size()), t.shape()) = t;
    }
  }
  return out;
}

void copy_into(ParameterSet<float>& dst, const ParameterSet<float>& src, const char* what) {
  if (dst.entries().size() != src.entries().size()) {
    throw FormatError(std::string("checkpoint: ") + what + " tensor count " + std::to_string(src.entries().size()) +
                      " does not match the architecture's " + std::to_string(dst.entries().size()));
  }
  for (const auto& [name, t] : src.entries()) {
    if (!dst.contains(name)) throw FormatError(std::string("checkpoint: unexpected ") + what + " tensor " + name);
    auto& d = dst.get(name);
    if (d.shape() != t.shape()) {
      throw FormatError("checkpoint: " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(d.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), d.mutable_data().begin());
  }
}

}  // namespace

Checkpoint make_checkpoint(const Generator<float>& generator, const Discriminator<float>* discriminator,
                           std::uint64_t hash, std::uint64_t epoch) {
  Checkpoint c;
  c.generator = generator.config();
  c.generator_params = generator.params().clone();
  c.generator_params.set_trainable(false);
  if (discriminator) {
    c.discriminator = discriminator->config();
    c.discriminator_params = discriminator->params().clone();
    c.discriminator_params.set_trainable(false);
  }
  c.config_hash = hash;
  c.epoch = epoch;
  return c;
}

Generator<float> generator_from_checkpoint(const Checkpoint& checkpoint) {
  auto g = Generator<float>::zeros(checkpoint.generator);
  copy_into(g.params(), checkpoint.generator_params, "generator");
  return g;
}

bool has_discriminator(const Checkpoint& checkpoint) { return !checkpoint.discriminator_params.entries().empty(); }

Discriminator<float> discriminator_from_checkpoint(const Checkpoint& checkpoint) {
  if (!has_discriminator(checkpoint)) throw FormatError("checkpoint holds no discriminator");
  auto d = Discriminator<float>::zeros(checkpoint.discriminator);
  copy_into(d.params(), checkpoint.discriminator_params, "discriminator");
  return d;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  tensors.emplace_back("meta.features", u64_tensor(c.generator.features));
  tensors.emplace_back("meta.extended_tail", u64_tensor(c.generator.extended_tail ? 1 : 0));
  tensors.emplace_back("meta.config_hash", u64_tensor(c.config_hash));
  tensors.emplace_back("meta.epoch", u64_tensor(c.epoch));
  if (has_discriminator(c)) {
    tensors.emplace_back("meta.disc_base_width", u64_tensor(c.discriminator.base_width));
    tensors.emplace_back("meta.disc_hidden", u64_tensor(c.discriminator.hidden));
  }
  for (const auto& [name, t] : c.generator_params.entries()) tensors.emplace_back("g." + name, t);
  for (const auto& [name, t] : c.discriminator_params.entries()) tensors.emplace_back("d." + name, t);

  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.put(kCheckpointVersion);
  w.put(std::uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) write_tensor(w, name, t);
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) throw FormatError("checkpoint: bad magic bytes");
  r.pos = 4;
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<std::pair<std::string, Tensor<float>>> all;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>("name length");
    r.need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
    r.pos += name_len;
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>("dims");
      numel *= d;
    }
    if (numel > (bytes.size() - r.pos) / 4) throw FormatError("checkpoint truncated in tensor " + name);
    std::vector<float> values(numel);
    for (auto& v : values) {
      const auto bits = r.get<std::uint32_t>("values");
      std::memcpy(&v, &bits, 4);
    }
    all.emplace_back(std::move(name), Tensor<float>::from(std::move(shape), std::move(values)));
  }
  if (r.pos != bytes.size()) throw FormatError("checkpoint: trailing bytes after the declared tensor count");

  const auto meta = strip_prefix(all, "meta.");
  const auto meta_u64 = [&](const std::string& key) {
    if (!meta.contains(key)) throw FormatError("checkpoint: missing metadata " + key);
    return tensor_u64(meta.get(key), key);
  };
  Checkpoint c;
  c.generator.features = meta_u64("features");
  c.generator.extended_tail = meta_u64("extended_tail") != 0;
  c.config_hash = meta_u64("config_hash");
  c.epoch = meta_u64("epoch");
  auto g = Generator<float>::zeros(c.generator);
  copy_into(g.params(), strip_prefix(all, "g."), "generator");
  c.generator_params = g.params().clone();
  const auto d_params = strip_prefix(all, "d.");
  if (!d_params.entries().empty()) {
    c.discriminator.base_width = meta_u64("disc_base_width");
    c.discriminator.hidden = meta_u64("disc_hidden");
    auto d = Discriminator<float>::zeros(c.discriminator);
    copy_into(d.params(), d_params, "discriminator");
    c.discriminator_params = d.params().clone();
  }
  c.generator_params.set_trainable(false);
  c.discriminator_params.set_trainable(false);
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::string parameter_sha256(const ParameterSet<float>& params) {
  Writer w;
  for (const auto& [name, t] : params.entries()) write_tensor(w, name, t);
  const auto digest = sha256(w.bytes);
  return hex(digest);
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto digest = sha256(bytes);
  return hex(digest);
}

// ---------------------------------------------------------------------------
// Datasets

std::size_t MixedDataset::count(Role role) const {
  return std::size_t(std::count_if(entries.begin(), entries.end(), [role](const MixedEntry& e) { return e.role == role; }));
}

MixedDataset build_mixed_dataset(std::span<const DomainSample> replay_pool, std::span<const DomainSample> task_pool,
                                 MixSpec mix, std::uint64_t seed) {
  mix.validate();
  if (mix.n_source > replay_pool.size()) {
    throw ConfigError("mix requests " + std::to_string(mix.n_source) + " replay images but the pool holds " +
                      std::to_string(replay_pool.size()));
  }
  if (mix.n_target > task_pool.size()) {
    throw ConfigError("mix requests " + std::to_string(mix.n_target) + " task images but the pool holds " +
                      std::to_string(task_pool.size()));
  }
  std::mt19937_64 rng(derive_seed(seed, kMixStream));
  const auto pick = [&rng](std::size_t pool, std::size_t k) {
    std::vector<std::size_t> idx(pool);
    for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    return idx;
  };
  MixedDataset out;
  for (std::size_t i : pick(replay_pool.size(), mix.n_source)) out.entries.push_back({&replay_pool[i], Role::replay});
  for (std::size_t i : pick(task_pool.size(), mix.n_target)) out.entries.push_back({&task_pool[i], Role::task});
  std::shuffle(out.entries.begin(), out.entries.end(), rng);
  return out;
}

MixedDataset task_dataset(std::span<const DomainSample> samples) {
  MixedDataset out;
  for (const auto& s : samples) out.entries.push_back({&s, Role::task});
  return out;
}

std::vector<Batch> epoch_batches(const MixedDataset& dataset, std::size_t batch_size, std::uint64_t seed,
                                 std::size_t epoch) {
  std::vector<const DomainSample*> task, replay;
  for (const auto& e : dataset.entries) (e.role == Role::task ? task : replay).push_back(e.sample);
  if (task.empty()) throw ConfigError("dataset has no task samples");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");

  std::mt19937_64 rng(derive_seed(seed, kShuffleStream, epoch));
  std::shuffle(task.begin(), task.end(), rng);
  std::shuffle(replay.begin(), replay.end(), rng);

  std::size_t bs = 0;
  if (!replay.empty()) {
    bs = std::size_t(std::llround(double(batch_size) * double(replay.size()) / double(replay.size() + task.size())));
    bs = std::clamp<std::size_t>(bs, 1, batch_size > 1 ? batch_size - 1 : 1);
  }
  const std::size_t bt = std::max<std::size_t>(1, batch_size - bs);

  std::vector<Batch> batches;
  std::size_t next_replay = 0;
  for (std::size_t start = 0; start < task.size(); start += bt) {
    Batch b;
    b.task.assign(task.begin() + std::ptrdiff_t(start), task.begin() + std::ptrdiff_t(std::min(task.size(), start + bt)));
    for (std::size_t k = 0; k < bs; ++k) {
      b.replay.push_back(replay[next_replay]);
      next_replay = (next_replay + 1) % replay.size();
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct BatchTensors {
  Tensor32 lr, hr, edges;
};

BatchTensors load_batch(const std::vector<const DomainSample*>& samples, const TrainConfig& config, std::size_t epoch,
                        std::size_t step, std::uint64_t stream_offset) {
  std::vector<Image> lr, hr;
  std::vector<EdgeMap> edges;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const DomainSample& s = *samples[i];
    if (config.augment) {
      const auto draw = draw_augment(derive_seed(config.seed, kAugmentStream,
                                                 (std::uint64_t(epoch) << 32) ^ (std::uint64_t(step) << 12) ^
                                                     (stream_offset + i)));
      lr.push_back(apply_augment(s.lr, draw));
      hr.push_back(apply_augment(s.hr, draw));
      edges.push_back(apply_augment(s.hr_edges, draw));
    } else {
      lr.push_back(s.lr);
      hr.push_back(s.hr);
      edges.push_back(s.hr_edges);
    }
  }
  return {images_to_tensor<float>(lr), images_to_tensor<float>(hr), edges_to_tensor<float>(edges)};
}

// Box-averages a [B,1,H,W] map by an integer factor.
Tensor32 box_downsample(const Tensor32& edges, std::size_t factor) {
  const std::size_t b = edges.dim(0), h = edges.dim(2), w = edges.dim(3), oh = h / factor, ow = w / factor;
  std::vector<float> out(b * oh * ow, 0.0f);
  const float inv = 1.0f / float(factor * factor);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        out[(n * oh + y / factor) * ow + x / factor] += inv * edges.data()[(n * h + y) * w + x];
      }
  return Tensor32::from({b, 1, oh, ow}, std::move(out));
}

std::string loss_dump(const LossBreakdown<float>* g, double d_loss) {
  std::ostringstream out;
  if (g) {
    for (std::size_t i = 0; i < kLossTermNames.size(); ++i) {
      out << kLossTermNames[i] << "=" << real_text(g->terms[i]) << "\n";
    }
  }
  out << "d_loss=" << real_text(d_loss) << "\n";
  return out.str();
}

struct Teacher {
  const Generator<float>* generator = nullptr;
};

TrainResult run_training(Generator<float> generator, Discriminator<float> discriminator, const Teacher& teacher,
                         const MixedDataset& dataset, const TrainConfig& config, const StepObserver& observer) {
  config.validate();
  const auto hash = config_hash(config);
  Adam<float> g_opt(generator.params().tensors(),
                    {.learning_rate = config.lr, .beta1 = config.g_beta1, .beta2 = config.g_beta2, .epsilon = config.adam_eps});
  Adam<float> d_opt(discriminator.params().tensors(),
                    {.learning_rate = config.lr, .beta1 = config.d_beta1, .beta2 = config.d_beta2, .epsilon = config.adam_eps});
  const IdentityEmbedder<float> embedder;

  TrainResult result{generator, discriminator, {}, {}};
  Checkpoint last_good = make_checkpoint(generator, &discriminator, hash, 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    const auto batches = epoch_batches(dataset, config.batch_size, config.seed, epoch);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const Batch& batch = batches[step];
      const auto task = load_batch(batch.task, config, epoch, step, 0);
      auto out = generator.forward(task.lr);

      // Discriminator step on task samples only.
      discriminator.params().set_trainable(true);
      d_opt.zero_grad();
      const auto d_loss = adversarial_loss_d(discriminator.forward(task.hr), discriminator.forward(out.sr.detach()));
      const double d_value = d_loss.item();
      if (!std::isfinite(d_value)) {
        throw TrainingAborted("discriminator loss is not finite at epoch " + std::to_string(epoch) + " step " +
                                  std::to_string(step),
                              last_good, loss_dump(nullptr, d_value));
      }
      d_loss.backward();
      d_opt.step();
      result.routing.discriminator_from_task += batch.task.size();

      // Generator step.
      discriminator.params().set_trainable(false);
      LossTerms<float> terms;
      terms.adversarial = adversarial_loss_g(discriminator.forward(out.sr), config.adversarial_form);
      terms.lce = lce_loss(out.sr, task.hr);
      terms.reconstruction = reconstruction_loss(out.sr, task.hr);
      {
        Tensor32 hr_probs;
        {
          NoGradGuard no_grad;
          hr_probs = embedder.probabilities(task.hr);
        }
        terms.identity = identity_loss(embedder.probabilities(out.sr), hr_probs);
      }
      terms.edge = edge_loss(out.edge_maps[2], task.edges);
      if (config.edge_mode == EdgeLossMode::all_scales) {
        const auto e64 = edge_loss(out.edge_maps[1], box_downsample(task.edges, 2));
        const auto e32 = edge_loss(out.edge_maps[0], box_downsample(task.edges, 4));
        terms.edge = scale(add(add(terms.edge, e64), e32), 1.0f / 3.0f);
      }
      result.routing.task_terms_from_task += batch.task.size();

      if (teacher.generator && !batch.replay.empty()) {
        const auto replay = load_batch(batch.replay, config, epoch, step, 1u << 11);
        GeneratorOutput<float> reference;
        {
          NoGradGuard no_grad;
          reference = teacher.generator->forward(replay.lr);
        }
        const auto student = generator.forward(replay.lr);
        terms.kd_response = mse(student.sr, reference.sr);
        terms.kd_feature = mse(student.bottleneck, reference.bottleneck);
        result.routing.kd_terms_from_replay += batch.replay.size();
      }

      g_opt.zero_grad();
      LossBreakdown<float> losses;
      try {
        losses = total_loss(terms, config.weights);
      } catch (const NumericalError& e) {
        LossBreakdown<float> partial;
        const std::array<const Tensor32*, 7> parts = {&terms.kd_response, &terms.kd_feature, &terms.edge,
                                                      &terms.adversarial, &terms.lce, &terms.identity,
                                                      &terms.reconstruction};
        for (std::size_t i = 0; i < 7; ++i) partial.terms[i] = parts[i]->numel() ? double(parts[i]->item()) : 0.0;
        throw TrainingAborted(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                                  std::to_string(step),
                              last_good, loss_dump(&partial, d_value));
      }
      losses.total.backward();
      g_opt.step();

      for (std::size_t i = 0; i < 7; ++i) log.terms[i] += losses.terms[i];
      log.total += double(losses.total.item());
      log.discriminator_loss += d_value;
      if (observer) observer(StepInfo{epoch, step, &losses, d_value, &generator});
    }
    const double n = double(batches.size());
    for (auto& t : log.terms) t /= n;
    log.total /= n;
    log.discriminator_loss /= n;
    result.log.push_back(log);
    last_good = make_checkpoint(generator, &discriminator, hash, epoch);
  }
  discriminator.params().set_trainable(true);
  result.generator = std::move(generator);
  result.discriminator = std::move(discriminator);
  return result;
}

}  // namespace

TrainResult pretrain(const TrainConfig& config, std::span<const DomainSample> data, const StepObserver& observer) {
  config.validate();
  if (data.empty()) throw ConfigError("pretraining dataset is empty");
  Generator<float> g(config.generator_config(), derive_seed(config.seed, kGeneratorInitStream));
  Discriminator<float> d(config.discriminator_config(), derive_seed(config.seed, kDiscriminatorInitStream));
  return run_training(std::move(g), std::move(d), Teacher{}, task_dataset(data), config, observer);
}

TrainResult incremental_train(const Checkpoint& teacher_checkpoint, std::span<const DomainSample> replay_pool,
                              std::span<const DomainSample> task_pool, const TrainConfig& config,
                              const StepObserver& observer) {
  config.validate();
  auto teacher = generator_from_checkpoint(teacher_checkpoint);
  auto student = init_student_from_teacher(teacher, config.generator_config(),
                                           derive_seed(config.seed, kGeneratorInitStream));
  Discriminator<float> d = (!config.reinit_discriminator && has_discriminator(teacher_checkpoint))
                               ? discriminator_from_checkpoint(teacher_checkpoint)
                               : Discriminator<float>(config.discriminator_config(),
                                                      derive_seed(config.seed, kDiscriminatorInitStream));
  if (d.config() != config.discriminator_config()) {
    throw ConfigError("teacher discriminator widths differ from the config; set reinit_discriminator = true");
  }
  d.params().set_trainable(true);
  const auto dataset = build_mixed_dataset(replay_pool, task_pool, config.mix, config.seed);
  return run_training(std::move(student), std::move(d), Teacher{&teacher}, dataset, config, observer);
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch";
  for (auto name : kLossTermNames) out += "," + std::string(name);
  out += ",total,d_loss\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch);
    for (double t : e.terms) out += "," + real_text(t);
    out += "," + real_text(e.total) + "," + real_text(e.discriminator_loss) + "\n";
  }
  return out;
}

}  // namespace isrkd
