#include "ftwa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"
#include "ftwa/random.hpp"

namespace ftwa {

namespace {

template <typename T>
std::vector<std::vector<double>> rows_of(const Var<T>& v) {
  const Shape s = v.shape();
  std::vector<std::vector<double>> out(s.n, std::vector<double>(s.c));
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) out[n][c] = v.value()[static_cast<std::size_t>(n) * s.c + c];
  }
  return out;
}

void normalize(std::vector<double>& v) {
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 1e-12) {
    for (double& x : v) x /= norm;
  }
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("descriptor dimensions differ: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

template <typename T>
std::vector<Descriptor> extract_descriptors(FtwaModel<T>& model, const std::vector<ImageRecord>& records,
                                            Role role, const EvalOptions& options) {
  NoGradGuard no_grad;
  const ImageSize canonical = model.backbone().config().input_size;
  const Variant variant = model.config().variant;
  const bool aux = options.fusion && uses_raft(variant);
  const bool learned_weights = uses_evaluators(variant);
  std::vector<Descriptor> out;
  out.reserve(records.size());

  for (std::size_t begin = 0; begin < records.size(); begin += options.batch_size) {
    const std::size_t end = std::min(records.size(), begin + static_cast<std::size_t>(options.batch_size));
    std::vector<ImageRecord> native;
    std::vector<ImageRecord> counterpart;
    for (std::size_t i = begin; i < end; ++i) {
      native.push_back(upsample_to_canonical(records[i], canonical));
      if (role == Role::kGallery && aux) {
        ImageRecord view = downsample(native.back(), options.gallery_rate);
        view.paired_view = true;
        counterpart.push_back(upsample_to_canonical(view, canonical));
      }
    }
    auto to_input = [&](const std::vector<ImageRecord>& rs) {
      std::vector<const ImageRecord*> ptrs;
      for (const auto& r : rs) ptrs.push_back(&r);
      return Var<T>::constant(to_network_input<T>(ptrs, canonical));
    };

    const Stream stream = role == Role::kQuery ? Stream::kLr : Stream::kHr;
    const StreamTag tag = role == Role::kQuery ? StreamTag::kLr : StreamTag::kHr;
    const FeatureMap<T> f = model.backbone().forward(to_input(native), stream, tag, false);
    const ReidVectors<T> v = gap_flatten(f);
    ReidVectors<T> v_aux;
    if (aux) {
      if (role == Role::kQuery) {
        v_aux = gap_flatten((*model.raft())(f));
      } else {
        v_aux = gap_flatten(model.backbone().forward(to_input(counterpart), Stream::kLr, StreamTag::kSynthLr, false));
      }
    }
    auto prim_rows = rows_of(v.values);
    std::vector<std::vector<double>> aux_rows;
    std::vector<double> w_prim(prim_rows.size(), 1.0), w_aux(prim_rows.size(), 0.0);
    if (aux) {
      aux_rows = rows_of(v_aux.values);
      if (learned_weights) {
        const Var<T> wp = model.heads().evaluate(v);
        const Var<T> wa = model.heads().evaluate(v_aux);
        for (std::size_t i = 0; i < prim_rows.size(); ++i) {
          const double a = wp.value()[i], b = wa.value()[i];
          w_prim[i] = a / (a + b);
          w_aux[i] = b / (a + b);
        }
      } else {
        std::fill(w_prim.begin(), w_prim.end(), 0.5);
        std::fill(w_aux.begin(), w_aux.end(), 0.5);
      }
    }
    for (std::size_t i = 0; i < prim_rows.size(); ++i) {
      Descriptor d;
      d.primary = std::move(prim_rows[i]);
      normalize(d.primary);
      if (aux) {
        d.auxiliary = std::move(aux_rows[i]);
        normalize(d.auxiliary);
      }
      d.primary_space = role == Role::kQuery ? FeatureSpace::kLr : FeatureSpace::kHr;
      d.w_primary = w_prim[i];
      d.w_auxiliary = w_aux[i];
      d.person_id = records[begin + i].person_id;
      d.camera_id = records[begin + i].camera_id;
      out.push_back(std::move(d));
    }
  }
  return out;
}

template <typename T>
Descriptor extract_descriptor(FtwaModel<T>& model, const ImageRecord& record, Role role,
                              const EvalOptions& options) {
  return extract_descriptors(model, std::vector<ImageRecord>{record}, role, options).front();
}

double distance(const Descriptor& q, const Descriptor& g) {
  if (!(q.has_auxiliary() && g.has_auxiliary())) {
    return std::sqrt(q.w_primary * g.w_primary) * euclidean(q.primary, g.primary);
  }
  if (q.primary_space == g.primary_space) {
    return std::sqrt(q.w_primary * g.w_primary) * euclidean(q.primary, g.primary) +
           std::sqrt(q.w_auxiliary * g.w_auxiliary) * euclidean(q.auxiliary, g.auxiliary);
  }
  return std::sqrt(q.w_auxiliary * g.w_primary) * euclidean(q.auxiliary, g.primary) +
         std::sqrt(q.w_primary * g.w_auxiliary) * euclidean(q.primary, g.auxiliary);
}

std::vector<double> distance_matrix(const std::vector<Descriptor>& queries,
                                    const std::vector<Descriptor>& gallery) {
  std::vector<double> d(queries.size() * gallery.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t j = 0; j < gallery.size(); ++j) d[i * gallery.size() + j] = distance(queries[i], gallery[j]);
  }
  return d;
}

double CMCResult::at(int k) const {
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (ranks[i] == k) return accuracy[i];
  }
  throw ContractError("rank " + std::to_string(k) + " was not computed");
}

std::vector<std::size_t> single_shot_selection(const std::vector<int>& gallery_labels, std::uint64_t seed,
                                               int trial) {
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t j = 0; j < gallery_labels.size(); ++j) by_id[gallery_labels[j]].push_back(j);
  Rng rng(derive_seed(seed, {31, static_cast<std::uint64_t>(trial)}));
  std::vector<std::size_t> chosen;
  for (const auto& [id, idx] : by_id) chosen.push_back(idx[uniform_int(rng, 0, static_cast<int>(idx.size()) - 1)]);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

CMCResult cmc_from_distances(const std::vector<double>& distances, const std::vector<int>& query_labels,
                             const std::vector<int>& gallery_labels, const CmcOptions& options) {
  const std::size_t nq = query_labels.size();
  const std::size_t ng = gallery_labels.size();
  if (distances.size() != nq * ng) {
    throw ShapeError("distance matrix has " + std::to_string(distances.size()) + " entries, expected " +
                     std::to_string(nq) + "x" + std::to_string(ng));
  }
  if (options.trials < 1) throw ConfigError("CMC needs at least one trial");
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t j = 0; j < ng; ++j) by_id[gallery_labels[j]].push_back(j);
  std::set<int> missing;
  for (int q : query_labels) {
    if (!by_id.count(q)) missing.insert(q);
  }
  if (!missing.empty()) {
    std::string ids;
    for (int m : missing) ids += (ids.empty() ? "" : ", ") + std::to_string(m);
    throw ProtocolError("query identities absent from the gallery: " + ids);
  }

  CMCResult result;
  result.ranks = options.ranks;
  result.trials = options.trials;
  result.accuracy.assign(options.ranks.size(), 0.0);
  for (int t = 0; t < options.trials; ++t) {
    const std::vector<std::size_t> chosen = single_shot_selection(gallery_labels, options.seed, t);
    std::vector<double> hits(options.ranks.size(), 0.0);
    for (std::size_t i = 0; i < nq; ++i) {
      const double* row = distances.data() + i * ng;
      std::size_t match = ng;
      for (std::size_t j : chosen) {
        if (gallery_labels[j] == query_labels[i]) match = j;
      }
      // Position of the true match after a stable sort by distance.
      std::size_t position = 0;
      for (std::size_t j : chosen) {
        if (row[j] < row[match] || (row[j] == row[match] && j < match)) ++position;
      }
      for (std::size_t r = 0; r < options.ranks.size(); ++r) {
        if (position < static_cast<std::size_t>(options.ranks[r])) hits[r] += 1.0;
      }
    }
    std::vector<double> trial(options.ranks.size());
    for (std::size_t r = 0; r < options.ranks.size(); ++r) {
      trial[r] = nq ? hits[r] / static_cast<double>(nq) : 0.0;
      result.accuracy[r] += trial[r] / options.trials;
    }
    result.per_trial.push_back(std::move(trial));
  }
  return result;
}

CMCResult cmc(const std::vector<Descriptor>& queries, const std::vector<Descriptor>& gallery,
              const CmcOptions& options) {
  std::vector<int> ql, gl;
  for (const auto& q : queries) ql.push_back(q.person_id);
  for (const auto& g : gallery) gl.push_back(g.person_id);
  return cmc_from_distances(distance_matrix(queries, gallery), ql, gl, options);
}

template <typename T>
EvaluationResult evaluate_split(FtwaModel<T>& model, const MlrSplit& split, const EvalOptions& eval,
                                const CmcOptions& cmc_options) {
  const auto q = extract_descriptors(model, split.query, Role::kQuery, eval);
  const auto g = extract_descriptors(model, split.gallery, Role::kGallery, eval);
  EvaluationResult out;
  for (const auto& d : q) out.query_labels.push_back(d.person_id);
  for (const auto& d : g) out.gallery_labels.push_back(d.person_id);
  out.distances = distance_matrix(q, g);
  out.cmc = cmc_from_distances(out.distances, out.query_labels, out.gallery_labels, cmc_options);
  return out;
}

#define FTWA_INSTANTIATE_EVAL(T)                                                                   \
  template std::vector<Descriptor> extract_descriptors<T>(FtwaModel<T>&, const std::vector<ImageRecord>&, \
                                                          Role, const EvalOptions&);               \
  template Descriptor extract_descriptor<T>(FtwaModel<T>&, const ImageRecord&, Role, const EvalOptions&); \
  template EvaluationResult evaluate_split<T>(FtwaModel<T>&, const MlrSplit&, const EvalOptions&,   \
                                              const CmcOptions&);

FTWA_INSTANTIATE_EVAL(float)
FTWA_INSTANTIATE_EVAL(double)

}  // namespace ftwa
