#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ftwa/layers.hpp"

namespace ftwa {

struct GradcheckOptions {
  /// Subset of gradcheck_losses(); empty checks all of them.
  std::vector<std::string> losses;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Added to every analytic gradient entry (negative control).
  double perturb = 0.0;
  std::uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string loss;
  std::size_t checked = 0;
  double max_rel_error = 0;
  std::string worst;  // "<input>[<index>]"
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool pass() const;
};

/// "raft", "cls", "tri", "swa_cls", "swa_tri", "total".
const std::vector<std::string>& gradcheck_losses();

/// Central differences on every element of `inputs` against the reverse-mode
/// gradient of `loss`. Error metric: |a - n| / max(|a|, |n|, 1e-3).
GradcheckEntry check_gradients(const std::string& name, const std::function<Var<double>()>& loss,
                               const std::vector<NamedParameter<double>>& inputs,
                               const GradcheckOptions& options);

/// Toy problems at D = C = 8 with 4 identities, in 64-bit precision.
/// Throws ConfigError for an unknown loss name.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace ftwa
