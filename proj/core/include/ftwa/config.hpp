#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ftwa/backbone.hpp"
#include "ftwa/dataset.hpp"
#include "ftwa/raft.hpp"
#include "ftwa/swa.hpp"

namespace ftwa {

/// Rows of the ablation ladder.
enum class Variant { kBaseline, kFtwaB, kFtwaR, kFtwa };

/// "baseline", "ftwa_b", "ftwa_r", "ftwa".
std::string to_string(Variant v);
/// Report label: "Baseline", "FTWA_B", "FTWA_R", "FTWA".
std::string display_name(Variant v);
Variant parse_variant(std::string_view s);
const std::vector<Variant>& all_variants();

bool uses_two_streams(Variant v);
bool uses_raft(Variant v);
bool uses_evaluators(Variant v);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t v);

/// Flat `key = value` document. `[section]` headers prefix the keys that
/// follow with "section."; `#` starts a comment. Values are bare words,
/// numbers, quoted strings or `[a, b, ...]` lists.
class KeyValueDocument {
 public:
  static KeyValueDocument parse(std::string_view text);
  static KeyValueDocument load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<long long> get_int_list(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

struct TrainConfig {
  Variant variant = Variant::kFtwa;
  std::uint64_t seed = 0;

  int epochs = 120;
  /// Sampler batches per epoch; 0 means one pass over the training identities.
  int iters_per_epoch = 0;
  double base_lr = 7e-4;
  std::vector<int> decay_epochs{40, 70};
  double decay_factor = 0.2;
  int warmup_epochs = 10;
  double weight_decay = 5e-4;
  /// Learning-rate multiplier for the quality evaluators (swa.w_*).
  double evaluator_lr_scale = 1.0;
  /// Evaluators see detached embeddings, so their gradient stops at the head.
  bool evaluator_detach_input = false;
  int identities_per_batch = 16;
  int instances_per_identity = 4;

  LossWeights loss;
  TripletMining mining = TripletMining::kBatchAll;

  BackboneVariant backbone = BackboneVariant::kPaperScale;
  int last_stage_stride = 1;
  ImageSize input_size{256, 128};
  /// RAFT working width; 0 picks the backbone default.
  int raft_width = 0;

  // Synthetic corpus and split used when no split manifest is supplied.
  SyntheticCorpusConfig corpus;
  std::set<int> rate_set{2, 3, 4};
  std::set<int> lr_camera_ids{1};
  std::uint64_t split_seed = 0;

  bool deterministic = false;

  static TrainConfig paper();
  /// 30 epochs, decays at 15 and 22, P = K = 4, TINY backbone at 64x32.
  static TrainConfig desk();
  static TrainConfig preset(std::string_view name);

  /// Overlay every key of `doc`; unknown keys raise ConfigError.
  void apply(const KeyValueDocument& doc);
  /// Canonical `key = value` text, one key per line in sorted order.
  std::string to_text() const;
  std::uint64_t hash() const { return fnv1a(to_text()); }
  void validate() const;

  BackboneConfig backbone_config() const;
  RaftConfig raft_config() const;
  MLRConfig mlr_config() const;
  PkConfig pk_config() const;
};

/// Learning rate for an epoch: linear warmup from base/10 to base over the
/// warmup epochs, then base * factor^(decay epochs <= epoch).
double lr_at(const TrainConfig& config, int epoch);

}  // namespace ftwa
