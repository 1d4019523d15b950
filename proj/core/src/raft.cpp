#include "ftwa/raft.hpp"

#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"

namespace ftwa {

void RaftBlockConfig::validate() const {
  if (channels <= 0 || channels % 2 != 0) {
    throw ShapeError("RAFT block channels must be positive and even, got " + std::to_string(channels));
  }
  if (num_inner_steps < 1) throw ConfigError("RAFT block needs at least one distillation step");
  if (attention_reduction < 1 || channels / attention_reduction < 1) {
    throw ConfigError("attention reduction leaves no gate channels");
  }
}

RaftConfig RaftConfig::for_backbone(const BackboneConfig& backbone) {
  RaftConfig c;
  c.channels = backbone.embedding_dim();
  c.width = backbone.variant == BackboneVariant::kPaperScale ? 64 : 16;
  return c;
}

void RaftConfig::validate() const {
  if (channels <= 0) throw ConfigError("RAFT channels must be positive");
  if (num_blocks < 1) throw ConfigError("RAFT needs at least one block");
  block().validate();
}

template <typename T>
std::pair<Var<T>, Var<T>> channel_split(const Var<T>& x) {
  const int c = x.shape().c;
  if (c % 2 != 0) throw ShapeError("channel_split needs an even channel count, got " + x.shape().str());
  return {ops::slice_channels(x, 0, c / 2), ops::slice_channels(x, c / 2, c / 2)};
}

template <typename T>
RaftBlock<T>::RaftBlock(const RaftBlockConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int w = config_.channels;
  const int half = w / 2;
  for (int s = 0; s < config_.num_inner_steps; ++s) {
    distill_.emplace_back(s == 0 ? w : half, w, 3, 1, 1, true, rng);
  }
  refine_ = Conv2d<T>(half, half, 3, 1, 1, true, rng);
  fuse_ = Conv2d<T>((config_.num_inner_steps + 1) * half, w, 1, 1, 0, true, rng);
  gate_down_ = Conv2d<T>(w, w / config_.attention_reduction, 1, 1, 0, true, rng);
  gate_up_ = Conv2d<T>(w / config_.attention_reduction, w, 1, 1, 0, true, rng);
}

template <typename T>
Var<T> RaftBlock<T>::features(const Var<T>& x) const {
  if (x.shape().c != config_.channels) {
    throw ShapeError("RAFT block expects " + std::to_string(config_.channels) + " channels, got " +
                     x.shape().str());
  }
  const T slope = static_cast<T>(kRaftLeakySlope);
  std::vector<Var<T>> branches;
  Var<T> rest = x;
  for (const auto& conv : distill_) {
    auto [kept, refined] = channel_split(ops::leaky_relu(conv(rest), slope));
    branches.push_back(kept);
    rest = refined;
  }
  branches.push_back(ops::leaky_relu(refine_(rest), slope));
  return fuse_(ops::concat_channels(branches));
}

template <typename T>
Var<T> RaftBlock<T>::gate(const Var<T>& x) const {
  const T slope = static_cast<T>(kRaftLeakySlope);
  return ops::sigmoid(gate_up_(ops::leaky_relu(gate_down_(ops::global_avg_pool(x)), slope)));
}

template <typename T>
Var<T> RaftBlock<T>::operator()(const Var<T>& x) const {
  const Var<T> f = features(x);
  return ops::add(ops::mul_channelwise(f, gate(f)), x);
}

template <typename T>
void RaftBlock<T>::collect(const std::string& prefix, ParameterSet<T>& out) const {
  for (std::size_t i = 0; i < distill_.size(); ++i) {
    distill_[i].collect(prefix + ".distill" + std::to_string(i), out);
  }
  refine_.collect(prefix + ".refine", out);
  fuse_.collect(prefix + ".fuse", out);
  gate_down_.collect(prefix + ".gate_down", out);
  gate_up_.collect(prefix + ".gate_up", out);
}

template <typename T>
Raft<T>::Raft(const RaftConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int c = config_.channels;
  const int w = config_.width;
  head_ = Conv2d<T>(c, w, 3, 1, 1, true, rng);
  for (int b = 0; b < config_.num_blocks; ++b) blocks_.emplace_back(config_.block(), rng);
  tail_fuse_ = Conv2d<T>(config_.num_blocks * w, w, 1, 1, 0, true, rng);
  tail_out_ = Conv2d<T>(w, w, 3, 1, 1, true, rng);
  project_ = Conv2d<T>(w, c, 1, 1, 0, true, rng);
}

template <typename T>
Var<T> Raft<T>::transform(const Var<T>& x) const {
  if (x.shape().c != config_.channels) {
    throw ShapeError("RAFT expects " + std::to_string(config_.channels) + " channels, got " +
                     x.shape().str());
  }
  const T slope = static_cast<T>(kRaftLeakySlope);
  const Var<T> head = head_(x);
  std::vector<Var<T>> outputs;
  Var<T> h = head;
  for (const auto& block : blocks_) {
    h = block(h);
    outputs.push_back(h);
  }
  const Var<T> body = tail_out_(ops::leaky_relu(tail_fuse_(ops::concat_channels(outputs)), slope));
  return ops::add(project_(ops::add(body, head)), x);
}

template <typename T>
Var<T> Raft<T>::global_residual(const Var<T>& x) const {
  return ops::add(project_(head_(x)), x);
}

template <typename T>
FeatureMap<T> Raft<T>::operator()(const FeatureMap<T>& f) const {
  if (f.tag != StreamTag::kLr && f.tag != StreamTag::kSynthLr) {
    throw ContractError("RAFT only transforms F_LR or F_SYNTH_LR maps, got " + to_string(f.tag));
  }
  return {transform(f.values), StreamTag::kSynthHr};
}

template <typename T>
void Raft<T>::collect(const std::string& prefix, ParameterSet<T>& out) const {
  head_.collect(prefix + ".head", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  }
  tail_fuse_.collect(prefix + ".tail_fuse", out);
  tail_out_.collect(prefix + ".tail_out", out);
  project_.collect(prefix + ".project", out);
}

template <typename T>
std::size_t Raft<T>::parameter_count() const {
  ParameterSet<T> set;
  collect("raft", set);
  return set.parameter_count();
}

template <typename T>
Var<T> raft_loss(const FeatureMap<T>& f_hr, const FeatureMap<T>& t_out, bool detach_target) {
  require_same_shape(f_hr.values.shape(), t_out.values.shape(), "raft_loss");
  return ops::l1_mean(detach_target ? f_hr.values.detach() : f_hr.values, t_out.values);
}

#define FTWA_INSTANTIATE_RAFT(T)                                                        \
  template std::pair<Var<T>, Var<T>> channel_split<T>(const Var<T>&);                   \
  template class RaftBlock<T>;                                                          \
  template class Raft<T>;                                                               \
  template Var<T> raft_loss<T>(const FeatureMap<T>&, const FeatureMap<T>&, bool);

FTWA_INSTANTIATE_RAFT(float)
FTWA_INSTANTIATE_RAFT(double)

}  // namespace ftwa
