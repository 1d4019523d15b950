#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ftwa/config.hpp"
#include "ftwa/eval.hpp"

namespace ftwa::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailed = 1,       // the command ran but its check did not pass
  kIoError = 2,      // missing or unreadable path
  kConfigError = 3,  // bad flags, config keys or values
  kRuntimeError = 4,
  kDiverged = 5,
};

/// Entry point of the `ftwa` binary; never throws.
int run(int argc, char** argv);

struct AblationCell {
  Variant variant = Variant::kBaseline;
  std::uint64_t seed = 0;
  double rank1 = 0;
  double rank5 = 0;
  double train_seconds = 0;
  std::filesystem::path run_dir;
};

struct AblationSummary {
  Variant variant = Variant::kBaseline;
  double rank1_mean = 0, rank1_std = 0;
  double rank5_mean = 0, rank5_std = 0;
  int runs = 0;
};

struct AblationReport {
  std::vector<AblationCell> cells;
  /// One row per variant, in ladder order; std is the sample deviation (0 for one run).
  std::vector<AblationSummary> summary() const;
  std::optional<AblationSummary> find(Variant v) const;
  std::string markdown() const;
  std::string csv() const;
};

struct AblationOptions {
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  /// Each run gets `<out_dir>/<variant>-seed<k>`; nothing is written when empty.
  std::filesystem::path out_dir;
  EvalOptions eval;
  CmcOptions cmc;
  std::function<void(const AblationCell&)> on_run;
};

/// Train and evaluate every (variant, seed) on the split described by `base`.
/// The corpus and split stay fixed; only the training seed varies.
AblationReport run_ablation(const TrainConfig& base, const AblationOptions& options);

}  // namespace ftwa::cli
