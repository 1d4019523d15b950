#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ftwa/checkpoint.hpp"
#include "ftwa/config.hpp"
#include "ftwa/network.hpp"

namespace ftwa {

/// Adam with L2 weight decay added to the gradient. Parameters that received
/// no gradient in a step are left untouched (including their moments).
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedParameter<T>> parameters, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void step(double lr);
  void zero_grad();
  /// Multiply the learning rate of every parameter whose name starts with `prefix`.
  void scale_lr(const std::string& prefix, double scale);
  std::size_t steps() const { return steps_; }

 private:
  struct Slot {
    NamedParameter<T> param;
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
    double lr_scale = 1.0;
  };
  std::vector<Slot> slots_;
  double weight_decay_, beta1_, beta2_, eps_;
  std::size_t steps_ = 0;
};

struct MetricsRow {
  long step = 0;
  int epoch = 0;
  double lr = 0;
  double loss_total = 0;
  double loss_cls = 0;
  double loss_tri = 0;
  double loss_raft = 0;
  double w_hr = 1;
  double w_lr = 1;
  double w_synth_hr = 1;
  double w_synth_lr = 1;
};

std::string metrics_csv_header();
std::string format_metrics_row(const MetricsRow& row);

struct TrainOptions {
  /// Where checkpoints and metrics go; nothing is written when empty.
  std::filesystem::path run_dir;
  std::function<void(const MetricsRow&)> on_step;
  /// Stop after this many optimizer steps (negative: run the full schedule).
  long max_steps = -1;
};

struct TrainResult {
  std::vector<MetricsRow> history;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  double seconds = 0;
};

/// Identity vocabulary of a training set: sorted person ids -> classifier slot.
std::map<int, int> label_index(const std::vector<ImageRecord>& train_set);

template <typename T>
class Trainer {
 public:
  Trainer(const TrainConfig& config, const MlrSplit& split);

  /// Full schedule. On a non-finite loss the state of the last finite step is
  /// written to `last_finite.ckpt` in the run directory and the
  /// DivergenceError is rethrown.
  TrainResult run(const TrainOptions& options = {});

  /// One optimizer step on `inputs` at learning rate `lr`.
  LossBreakdown<T> step(const BatchInputs<T>& inputs, double lr);

  BatchInputs<T> batch_inputs(long step_index) const;
  int epoch_of(long step_index) const;
  long total_steps() const;

  const TrainConfig& config() const { return config_; }
  FtwaModel<T>& model() { return *model_; }
  const std::vector<int>& identities() const { return identities_; }
  Checkpoint checkpoint();

 private:
  TrainConfig config_;
  std::map<int, int> labels_;
  std::vector<int> identities_;
  PkSampler sampler_;
  std::unique_ptr<FtwaModel<T>> model_;
  std::unique_ptr<Adam<T>> optimizer_;
  int iters_per_epoch_;
};

/// A model restored from a checkpoint together with the config it was trained with.
template <typename T>
struct LoadedModel {
  TrainConfig config;
  std::vector<int> identities;
  std::unique_ptr<FtwaModel<T>> model;
  std::string digest;
};

template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& checkpoint_path);

// ---------------------------------------------------------------------------
// Run directories

/// `<root>/<config-hash>-<timestamp>`; root defaults to $FTWA_RUNS_ROOT or ./runs.
std::filesystem::path default_run_dir(const TrainConfig& config);
std::filesystem::path runs_root();

/// Create `dir`. An existing non-empty directory is refused unless `force`
/// is set, in which case its contents are removed.
void prepare_run_dir(const std::filesystem::path& dir, bool force);

/// manifest.json: config snapshot, seed, variant, content hash and artifact paths.
void write_run_manifest(const std::filesystem::path& dir, const TrainConfig& config,
                        const std::map<std::string, std::string>& artifacts);

}  // namespace ftwa
