#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftwa/dataset.hpp"
#include "ftwa/network.hpp"

namespace ftwa {

enum class Role { kQuery, kGallery };
enum class FeatureSpace { kHr, kLr };

/// Matching unit. The primary vector comes from the image's native path; the
/// auxiliary one from its counterpart path (RAFT output for queries, the
/// down-sampled view through E_L for gallery images).
struct Descriptor {
  std::vector<double> primary;    // unit L2 norm
  std::vector<double> auxiliary;  // unit L2 norm, or empty
  FeatureSpace primary_space = FeatureSpace::kHr;
  double w_primary = 1.0;
  double w_auxiliary = 0.0;
  int person_id = 0;
  int camera_id = 0;

  bool has_auxiliary() const { return !auxiliary.empty() && w_auxiliary > 0; }
  FeatureSpace auxiliary_space() const {
    return primary_space == FeatureSpace::kHr ? FeatureSpace::kLr : FeatureSpace::kHr;
  }
};

struct EvalOptions {
  /// Off: primary vectors only with weights (1, 0).
  bool fusion = true;
  /// Down-sampling rate of the gallery's auxiliary view.
  int gallery_rate = 2;
  int batch_size = 32;
};

/// Descriptors for queries (LR path) or gallery images (HR path), in order.
template <typename T>
std::vector<Descriptor> extract_descriptors(FtwaModel<T>& model, const std::vector<ImageRecord>& records,
                                            Role role, const EvalOptions& options = {});

template <typename T>
Descriptor extract_descriptor(FtwaModel<T>& model, const ImageRecord& record, Role role,
                              const EvalOptions& options = {});

/// Weighted two-term distance. Components are paired by feature space, so a
/// query's RAFT vector meets the gallery's HR vector and the query's LR
/// vector meets the gallery's down-sampled view; descriptors of the same
/// role pair slot by slot. Without auxiliaries on both sides only the
/// primaries are compared. Throws ShapeError on a dimension mismatch.
double distance(const Descriptor& q, const Descriptor& g);

/// Row-major |q| x |g| matrix.
std::vector<double> distance_matrix(const std::vector<Descriptor>& queries,
                                    const std::vector<Descriptor>& gallery);

struct CmcOptions {
  int trials = 10;
  std::uint64_t seed = 0;
  std::vector<int> ranks{1, 5, 10, 20};
};

struct CMCResult {
  std::vector<int> ranks;
  std::vector<double> accuracy;                 // averaged over trials
  std::vector<std::vector<double>> per_trial;   // [trial][rank index]
  int trials = 0;

  /// Accuracy at rank k (must be one of `ranks`).
  double at(int k) const;
};

/// Gallery indices kept in single-shot trial `trial`: one seeded pick per
/// identity, returned in ascending index order.
std::vector<std::size_t> single_shot_selection(const std::vector<int>& gallery_labels, std::uint64_t seed,
                                               int trial);

/// Single-shot CMC: each trial keeps one seeded gallery entry per identity;
/// ties in distance are broken by gallery order. Throws ProtocolError listing
/// query identities missing from the gallery.
CMCResult cmc_from_distances(const std::vector<double>& distances, const std::vector<int>& query_labels,
                             const std::vector<int>& gallery_labels, const CmcOptions& options = {});

CMCResult cmc(const std::vector<Descriptor>& queries, const std::vector<Descriptor>& gallery,
              const CmcOptions& options = {});

struct EvaluationResult {
  CMCResult cmc;
  std::vector<double> distances;
  std::vector<int> query_labels;
  std::vector<int> gallery_labels;
};

template <typename T>
EvaluationResult evaluate_split(FtwaModel<T>& model, const MlrSplit& split, const EvalOptions& eval = {},
                                const CmcOptions& cmc_options = {});

}  // namespace ftwa
