#include "ftwa/network.hpp"

#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"

namespace ftwa {

ModelConfig ModelConfig::from_train(const TrainConfig& config, int num_identities) {
  ModelConfig m;
  m.variant = config.variant;
  m.backbone = config.backbone_config();
  m.raft = config.raft_config();
  m.num_identities = num_identities;
  m.loss = config.loss;
  m.mining = config.mining;
  m.seed = config.seed;
  m.evaluator_detach_input = config.evaluator_detach_input;
  return m;
}

template <typename T>
BatchInputs<T> make_batch_inputs(const TrainingBatch& batch, const std::map<int, int>& label_index,
                                 ImageSize canonical, bool include_synthetic) {
  auto to_canonical = [&](const std::vector<ImageRecord>& records) {
    std::vector<ImageRecord> resized;
    resized.reserve(records.size());
    for (const auto& r : records) resized.push_back(upsample_to_canonical(r, canonical));
    std::vector<const ImageRecord*> ptrs;
    for (const auto& r : resized) ptrs.push_back(&r);
    return to_network_input<T>(ptrs, canonical);
  };
  BatchInputs<T> in;
  std::vector<int> labels;
  for (int id : batch.labels) {
    const auto it = label_index.find(id);
    if (it == label_index.end()) throw LabelError("identity " + std::to_string(id) + " has no classifier slot");
    labels.push_back(it->second);
  }
  in.hr = to_canonical(batch.hr_images);
  in.lr = to_canonical(batch.lr_images);
  if (include_synthetic) in.synth_lr = to_canonical(batch.synth_lr_views);
  in.hr_labels = labels;
  in.lr_labels = labels;
  return in;
}

template <typename T>
FtwaModel<T>::FtwaModel(const ModelConfig& config)
    : config_(config),
      backbone_([&] {
        BackboneConfig b = config.backbone;
        b.two_stream = uses_two_streams(config.variant);
        return b;
      }(), derive_seed(config.seed, {1})),
      heads_([&] {
        Rng rng(derive_seed(config.seed, {3}));
        return SwaHeads<T>(config.backbone.embedding_dim(), config.num_identities,
                           uses_evaluators(config.variant), rng);
      }()) {
  config_.backbone = backbone_.config();
  config_.loss.validate();
  if (uses_raft(config_.variant)) {
    if (config_.raft.channels != config_.backbone.embedding_dim()) {
      throw ConfigError("RAFT channels must equal the backbone embedding dimension");
    }
    Rng rng(derive_seed(config.seed, {2}));
    raft_.emplace(config_.raft, rng);
  }
}

template <typename T>
ParameterSet<T> FtwaModel<T>::parameters() {
  ParameterSet<T> set;
  backbone_.collect("backbone", set);
  if (raft_) raft_->collect("raft", set);
  heads_.collect("swa", set);
  return set;
}

namespace {

template <typename T>
Var<T> ones(int n) {
  return Var<T>::constant(Tensor<T>(Shape{n, 1, 1, 1}, T(1)));
}

template <typename T>
double mean_value(const Var<T>& w) {
  double s = 0;
  for (T v : w.value().values()) s += v;
  return s / static_cast<double>(w.value().size());
}

std::vector<int> join(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

template <typename T>
LossBreakdown<T> FtwaModel<T>::losses(const BatchInputs<T>& batch, bool training) {
  const bool has_hr = !batch.hr.empty();
  const bool has_lr = !batch.lr.empty();
  const bool two_stream = uses_two_streams(config_.variant);
  const bool has_slr = two_stream && has_hr && !batch.synth_lr.empty();
  if (!has_hr && !has_lr) throw ContractError("empty training batch");
  const int n_hr = has_hr ? batch.hr.shape().n : 0;
  const int n_lr = has_lr ? batch.lr.shape().n : 0;
  const int n_slr = has_slr ? batch.synth_lr.shape().n : 0;
  if (has_hr && static_cast<int>(batch.hr_labels.size()) != n_hr) throw ShapeError("hr labels do not match the batch");
  if (has_lr && static_cast<int>(batch.lr_labels.size()) != n_lr) throw ShapeError("lr labels do not match the batch");
  if (has_slr && n_slr != n_hr) throw ShapeError("paired views must match the hr batch");

  // Shallow encoders, then one shared E_ID pass over every stream.
  std::vector<Var<T>> shallow;
  std::vector<Var<T>> lr_images;
  if (has_lr) lr_images.push_back(Var<T>::constant(batch.lr));
  if (has_slr) lr_images.push_back(Var<T>::constant(batch.synth_lr));
  if (two_stream) {
    if (has_hr) shallow.push_back(backbone_.shallow(Var<T>::constant(batch.hr), Stream::kHr, training));
    if (!lr_images.empty()) shallow.push_back(backbone_.shallow(ops::concat_batch(lr_images), Stream::kLr, training));
  } else {
    std::vector<Var<T>> all;
    if (has_hr) all.push_back(Var<T>::constant(batch.hr));
    if (has_lr) all.push_back(Var<T>::constant(batch.lr));
    shallow.push_back(backbone_.shallow(ops::concat_batch(all), Stream::kHr, training));
  }
  const Var<T> deep = backbone_.deep(shallow.size() == 1 ? shallow[0] : ops::concat_batch(shallow), training);
  int offset = 0;
  auto take = [&](int n) {
    Var<T> v = ops::slice_batch(deep, offset, n);
    offset += n;
    return v;
  };
  FeatureMap<T> f_hr{has_hr ? take(n_hr) : Var<T>(), StreamTag::kHr};
  FeatureMap<T> f_lr{has_lr ? take(n_lr) : Var<T>(), StreamTag::kLr};
  FeatureMap<T> f_slr{has_slr ? take(n_slr) : Var<T>(), StreamTag::kSynthLr};

  LossBreakdown<T> out;
  const T margin = static_cast<T>(config_.loss.margin);
  auto tri = [&](const Var<T>& v, const std::vector<int>& labels) {
    TripletResult<T> r = triplet_loss<T>(v, labels, margin, config_.mining);
    out.degenerate_triplets = out.degenerate_triplets || r.degenerate;
    return r.loss;
  };

  if (config_.variant == Variant::kBaseline) {
    std::vector<Var<T>> vs;
    if (has_hr) vs.push_back(gap_flatten(f_hr).values);
    if (has_lr) vs.push_back(gap_flatten(f_lr).values);
    const Var<T> v = ops::concat_batch(vs);
    const std::vector<int> labels = join(has_hr ? batch.hr_labels : std::vector<int>{},
                                         has_lr ? batch.lr_labels : std::vector<int>{});
    out.cls = ops::mean(cls_loss(heads_.classifier(Stream::kHr)(v), std::span<const int>(labels)));
    out.tri = tri(v, labels);
    out.total = total_loss(out.cls, out.tri, Var<T>(), config_.loss);
    return out;
  }

  // RAFT over the real and paired LR maps in one pass.
  FeatureMap<T> f_shr{Var<T>(), StreamTag::kSynthHr};
  FeatureMap<T> t_slr{Var<T>(), StreamTag::kSynthHr};
  if (raft_ && (has_lr || has_slr)) {
    std::vector<Var<T>> maps;
    if (has_lr) maps.push_back(f_lr.values);
    if (has_slr) maps.push_back(f_slr.values);
    const Var<T> t = raft_->transform(maps.size() == 1 ? maps[0] : ops::concat_batch(maps));
    if (has_lr) f_shr.values = ops::slice_batch(t, 0, n_lr);
    if (has_slr) t_slr.values = ops::slice_batch(t, n_lr, n_slr);
  }
  const bool has_shr = f_shr.values.defined();
  if (has_hr && has_slr && raft_) out.raft = raft_loss(f_hr, t_slr);

  StreamQuad<ReidVectors<T>> v;
  if (has_hr) v.hr = gap_flatten(f_hr);
  if (has_lr) v.lr = gap_flatten(f_lr);
  if (has_slr) v.synth_lr = gap_flatten(f_slr);
  if (has_shr) v.synth_hr = gap_flatten(f_shr);

  // Per-sample quality weights; constant 1 where the variant has no evaluators.
  StreamQuad<Var<T>> w;
  auto weight = [&](const ReidVectors<T>& x, int n) {
    if (!heads_.has_evaluators()) return ones<T>(n);
    return config_.evaluator_detach_input ? heads_.evaluate(ReidVectors<T>{x.values.detach(), x.tag})
                                          : heads_.evaluate(x);
  };
  if (has_hr) w.hr = weight(v.hr, n_hr);
  if (has_lr) w.lr = weight(v.lr, n_lr);
  if (has_slr) w.synth_lr = weight(v.synth_lr, n_slr);
  if (has_shr) w.synth_hr = weight(v.synth_hr, n_lr);
  if (w.hr.defined()) out.w_hr = mean_value(w.hr);
  if (w.lr.defined()) out.w_lr = mean_value(w.lr);
  if (w.synth_hr.defined()) out.w_synth_hr = mean_value(w.synth_hr);
  if (w.synth_lr.defined()) out.w_synth_lr = mean_value(w.synth_lr);

  auto ce = [&](const ReidVectors<T>& x, const std::vector<int>& labels) {
    return cls_loss(heads_.classify(x), std::span<const int>(labels));
  };
  std::vector<Var<T>> cls_terms;
  if (has_hr) {
    const Var<T> l_hr = ce(v.hr, batch.hr_labels);
    cls_terms.push_back(has_slr ? weighted_pair(w.hr, l_hr, w.synth_lr, ce(v.synth_lr, batch.hr_labels)) : l_hr);
  }
  if (has_lr) {
    const Var<T> l_lr = ce(v.lr, batch.lr_labels);
    cls_terms.push_back(has_shr ? weighted_pair(w.lr, l_lr, w.synth_hr, ce(v.synth_hr, batch.lr_labels)) : l_lr);
  }
  out.cls = ops::mean(cls_terms[0]);
  for (std::size_t i = 1; i < cls_terms.size(); ++i) out.cls = ops::add(out.cls, ops::mean(cls_terms[i]));

  // Triplet terms: HR-resolution vectors and LR-resolution vectors are mined separately.
  auto union_of = [&](const ReidVectors<T>* a, const std::vector<int>* la, const ReidVectors<T>* b,
                      const std::vector<int>* lb) -> std::optional<Var<T>> {
    std::vector<Var<T>> parts;
    std::vector<int> labels;
    if (a) {
      parts.push_back(a->values);
      labels = join(labels, *la);
    }
    if (b) {
      parts.push_back(b->values);
      labels = join(labels, *lb);
    }
    if (parts.empty()) return std::nullopt;
    return tri(parts.size() == 1 ? parts[0] : ops::concat_batch(parts), labels);
  };
  const auto hr_term = union_of(has_hr ? &v.hr : nullptr, &batch.hr_labels,
                                has_shr ? &v.synth_hr : nullptr, &batch.lr_labels);
  const auto lr_term = union_of(has_lr ? &v.lr : nullptr, &batch.lr_labels,
                                has_slr ? &v.synth_lr : nullptr, &batch.hr_labels);
  if (hr_term && lr_term) {
    if (config_.variant == Variant::kFtwaB) {
      out.tri = ops::scale(ops::add(*hr_term, *lr_term), T(0.5));
    } else {
      auto batch_weight = [&](const Var<T>& x) { return x.defined() ? ops::mean(x) : ones<T>(1); };
      const StreamQuad<Var<T>> bw{batch_weight(w.hr), batch_weight(w.lr), batch_weight(w.synth_hr),
                                  batch_weight(w.synth_lr)};
      out.tri = swa_triplet_combine(bw, *hr_term, *lr_term);
    }
  } else {
    out.tri = hr_term ? *hr_term : *lr_term;
  }

  out.total = total_loss(out.cls, out.tri, out.raft, config_.loss);
  return out;
}

template BatchInputs<float> make_batch_inputs<float>(const TrainingBatch&, const std::map<int, int>&, ImageSize, bool);
template BatchInputs<double> make_batch_inputs<double>(const TrainingBatch&, const std::map<int, int>&, ImageSize, bool);
template class FtwaModel<float>;
template class FtwaModel<double>;

}  // namespace ftwa
