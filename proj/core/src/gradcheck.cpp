#include "ftwa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"
#include "ftwa/raft.hpp"
#include "ftwa/random.hpp"
#include "ftwa/swa.hpp"

namespace ftwa {

bool GradcheckReport::pass() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.pass; });
}

const std::vector<std::string>& gradcheck_losses() {
  static const std::vector<std::string> names{"raft", "cls", "tri", "swa_cls", "swa_tri", "total"};
  return names;
}

GradcheckEntry check_gradients(const std::string& name, const std::function<Var<double>()>& loss,
                               const std::vector<NamedParameter<double>>& inputs,
                               const GradcheckOptions& options) {
  for (const auto& in : inputs) {
    Var<double> v = in.var;
    v.zero_grad();
  }
  backward(loss());
  std::vector<Tensor<double>> analytic;
  for (const auto& in : inputs) {
    analytic.push_back(in.var.has_grad() ? in.var.grad() : Tensor<double>(in.var.shape()));
  }

  GradcheckEntry entry;
  entry.loss = name;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Var<double> v = inputs[k].var;
    Tensor<double>& value = v.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + options.step;
      const double up = loss().value()[0];
      value[i] = saved - options.step;
      const double down = loss().value()[0];
      value[i] = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double a = analytic[k][i] + options.perturb;
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
      ++entry.checked;
      if (rel > entry.max_rel_error || entry.worst.empty()) {
        entry.max_rel_error = rel;
        entry.worst = inputs[k].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  entry.pass = entry.max_rel_error < options.tolerance;
  return entry;
}

namespace {

constexpr int kDim = 8;
constexpr int kIds = 4;
constexpr int kPerId = 2;
constexpr int kBatch = kIds * kPerId;

Var<double> random_leaf(Shape shape, Rng& rng, const std::string& name, double std = 1.0) {
  Tensor<double> t(shape);
  for (auto& x : t.values()) x = std * normal01(rng);
  return Var<double>::leaf(std::move(t), name);
}

std::vector<int> toy_labels() {
  std::vector<int> labels;
  for (int i = 0; i < kBatch; ++i) labels.push_back(i / kPerId);
  return labels;
}

/// Heads with evaluator outputs spread away from 0.5 so the weights matter.
SwaHeads<double> toy_heads(Rng& rng) {
  SwaHeads<double> heads(kDim, kIds, true, rng);
  ParameterSet<double> set;
  heads.collect("swa", set);
  for (auto& p : set.parameters) {
    Var<double> v = p.var;
    const double s = p.name.find(".output.") != std::string::npos ? 80.0 : 30.0;
    for (auto& x : v.mutable_value().values()) x *= s;
  }
  return heads;
}

RaftConfig toy_raft_config() {
  RaftConfig c;
  c.channels = kDim;
  c.width = kDim;
  return c;
}

void add_all(std::vector<NamedParameter<double>>& out, const ParameterSet<double>& set) {
  for (const auto& p : set.parameters) out.push_back(p);
}

GradcheckEntry check_raft(const GradcheckOptions& o) {
  Rng rng(derive_seed(o.seed, {1}));
  Raft<double> raft(toy_raft_config(), rng);
  const Var<double> x = random_leaf(Shape{2, kDim, 4, 2}, rng, "F_lr");
  const Var<double> target = random_leaf(Shape{2, kDim, 4, 2}, rng, "F_hr");
  std::vector<NamedParameter<double>> inputs{{"F_lr", x}};
  ParameterSet<double> set;
  raft.collect("raft", set);
  add_all(inputs, set);
  auto loss = [&] {
    return raft_loss(FeatureMap<double>{target, StreamTag::kHr}, raft(FeatureMap<double>{x, StreamTag::kSynthLr}));
  };
  return check_gradients("raft", loss, inputs, o);
}

GradcheckEntry check_cls(const GradcheckOptions& o) {
  Rng rng(derive_seed(o.seed, {2}));
  IdentityClassifier<double> classifier(kDim, kIds, rng);
  ParameterSet<double> set;
  classifier.collect("c", set);
  for (auto& p : set.parameters) {
    Var<double> v = p.var;
    for (auto& x : v.mutable_value().values()) x = normal01(rng);
  }
  const Var<double> v = random_leaf(Shape{kBatch, kDim, 1, 1}, rng, "v");
  const auto labels = toy_labels();
  std::vector<NamedParameter<double>> inputs{{"v", v}};
  add_all(inputs, set);
  auto loss = [&] { return ops::mean(cls_loss(classifier(v), std::span<const int>(labels))); };
  return check_gradients("cls", loss, inputs, o);
}

GradcheckEntry check_tri(const GradcheckOptions& o) {
  Rng rng(derive_seed(o.seed, {3}));
  const Var<double> v = random_leaf(Shape{kBatch, kDim, 1, 1}, rng, "v", 0.15);
  const auto labels = toy_labels();
  auto loss = [&] { return triplet_loss<double>(v, labels, 0.3).loss; };
  return check_gradients("tri", loss, {{"v", v}}, o);
}

struct ToyStreams {
  StreamQuad<Var<double>> v;
  std::vector<NamedParameter<double>> inputs;

  explicit ToyStreams(Rng& rng, double std) {
    v.hr = random_leaf(Shape{kBatch, kDim, 1, 1}, rng, "v_hr", std);
    v.lr = random_leaf(Shape{kBatch, kDim, 1, 1}, rng, "v_lr", std);
    v.synth_hr = random_leaf(Shape{kBatch, kDim, 1, 1}, rng, "v_synth_hr", std);
    v.synth_lr = random_leaf(Shape{kBatch, kDim, 1, 1}, rng, "v_synth_lr", std);
    inputs = {{"v_hr", v.hr}, {"v_lr", v.lr}, {"v_synth_hr", v.synth_hr}, {"v_synth_lr", v.synth_lr}};
  }
};

StreamQuad<Var<double>> weights_of(const SwaHeads<double>& heads, const StreamQuad<Var<double>>& v) {
  return {heads.evaluate({v.hr, StreamTag::kHr}), heads.evaluate({v.lr, StreamTag::kLr}),
          heads.evaluate({v.synth_hr, StreamTag::kSynthHr}), heads.evaluate({v.synth_lr, StreamTag::kSynthLr})};
}

Var<double> swa_cls_of(const SwaHeads<double>& heads, const StreamQuad<Var<double>>& v,
                       const std::vector<int>& labels) {
  const std::span<const int> y(labels);
  const StreamQuad<Var<double>> losses{
      cls_loss(heads.classify({v.hr, StreamTag::kHr}), y), cls_loss(heads.classify({v.lr, StreamTag::kLr}), y),
      cls_loss(heads.classify({v.synth_hr, StreamTag::kSynthHr}), y),
      cls_loss(heads.classify({v.synth_lr, StreamTag::kSynthLr}), y)};
  return swa_cls_loss(weights_of(heads, v), losses);
}

Var<double> swa_tri_of(const SwaHeads<double>& heads, const StreamQuad<Var<double>>& v,
                       const std::vector<int>& labels) {
  const StreamQuad<std::vector<int>> l{labels, labels, labels, labels};
  return swa_triplet_loss<double>(weights_of(heads, v), v, l, 0.3);
}

GradcheckEntry check_swa_cls(const GradcheckOptions& o) {
  Rng rng(derive_seed(o.seed, {4}));
  SwaHeads<double> heads = toy_heads(rng);
  ToyStreams s(rng, 0.1);
  ParameterSet<double> set;
  heads.collect("swa", set);
  add_all(s.inputs, set);
  const auto labels = toy_labels();
  return check_gradients("swa_cls", [&] { return swa_cls_of(heads, s.v, labels); }, s.inputs, o);
}

GradcheckEntry check_swa_tri(const GradcheckOptions& o) {
  Rng rng(derive_seed(o.seed, {5}));
  SwaHeads<double> heads = toy_heads(rng);
  ToyStreams s(rng, 0.1);
  ParameterSet<double> set;
  heads.collect("swa", set);
  for (const auto& p : set.parameters) {
    if (p.name.rfind("swa.w_", 0) == 0) s.inputs.push_back(p);
  }
  const auto labels = toy_labels();
  return check_gradients("swa_tri", [&] { return swa_tri_of(heads, s.v, labels); }, s.inputs, o);
}

GradcheckEntry check_total(const GradcheckOptions& o) {
  Rng rng(derive_seed(o.seed, {6}));
  Raft<double> raft(toy_raft_config(), rng);
  SwaHeads<double> heads = toy_heads(rng);
  const Var<double> f_hr = random_leaf(Shape{kBatch, kDim, 2, 2}, rng, "F_hr", 0.1);
  const Var<double> f_lr = random_leaf(Shape{kBatch, kDim, 2, 2}, rng, "F_lr", 0.1);
  const Var<double> f_slr = random_leaf(Shape{kBatch, kDim, 2, 2}, rng, "F_synth_lr", 0.1);
  std::vector<NamedParameter<double>> inputs{{"F_hr", f_hr}, {"F_lr", f_lr}, {"F_synth_lr", f_slr}};
  ParameterSet<double> set;
  raft.collect("raft", set);
  heads.collect("swa", set);
  add_all(inputs, set);
  const auto labels = toy_labels();
  const LossWeights lambdas;
  auto loss = [&] {
    const FeatureMap<double> t_lr = raft(FeatureMap<double>{f_lr, StreamTag::kLr});
    const FeatureMap<double> t_slr = raft(FeatureMap<double>{f_slr, StreamTag::kSynthLr});
    const StreamQuad<Var<double>> v{ops::global_avg_pool(f_hr), ops::global_avg_pool(f_lr),
                                    ops::global_avg_pool(t_lr.values), ops::global_avg_pool(f_slr)};
    // F_HR is a perturbed input here, so the target must stay attached for the
    // finite differences to see the same function.
    const Var<double> raft_term = raft_loss(FeatureMap<double>{f_hr, StreamTag::kHr}, t_slr, false);
    return total_loss(swa_cls_of(heads, v, labels), swa_tri_of(heads, v, labels), raft_term, lambdas);
  };
  return check_gradients("total", loss, inputs, o);
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const auto& known = gradcheck_losses();
  const std::vector<std::string> selected = options.losses.empty() ? known : options.losses;
  GradcheckReport report;
  for (const auto& name : selected) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ConfigError("unknown gradcheck loss '" + name + "'");
    }
    if (name == "raft") report.entries.push_back(check_raft(options));
    if (name == "cls") report.entries.push_back(check_cls(options));
    if (name == "tri") report.entries.push_back(check_tri(options));
    if (name == "swa_cls") report.entries.push_back(check_swa_cls(options));
    if (name == "swa_tri") report.entries.push_back(check_swa_tri(options));
    if (name == "total") report.entries.push_back(check_total(options));
  }
  return report;
}

}  // namespace ftwa
