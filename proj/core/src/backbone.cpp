#include "ftwa/backbone.hpp"

#include "ftwa/errors.hpp"
#include "ftwa/ops.hpp"
#include "ftwa/random.hpp"

namespace ftwa {

std::string to_string(StreamTag tag) {
  switch (tag) {
    case StreamTag::kHr:
      return "F_HR";
    case StreamTag::kLr:
      return "F_LR";
    case StreamTag::kSynthLr:
      return "F_SYNTH_LR";
    case StreamTag::kSynthHr:
      return "F_SYNTH_HR";
  }
  return "?";
}

BackboneConfig BackboneConfig::tiny() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::paper_scale() {
  BackboneConfig c;
  c.variant = BackboneVariant::kPaperScale;
  c.stage_channels = {256, 512, 1024, 2048};
  c.blocks_per_stage = {3, 4, 6, 3};
  c.input_size = {256, 128};
  return c;
}

void BackboneConfig::validate() const {
  if (stage_channels.size() != 4 || blocks_per_stage.size() != 4) {
    throw ConfigError("backbone needs exactly four stages");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (stage_channels[i] <= 0 || blocks_per_stage[i] <= 0) {
      throw ConfigError("stage channels and block counts must be positive");
    }
    if (variant == BackboneVariant::kPaperScale && stage_channels[i] % 4 != 0) {
      throw ConfigError("bottleneck stage channels must be divisible by 4");
    }
  }
  if (last_stage_stride != 1 && last_stage_stride != 2) {
    throw ConfigError("last stage stride must be 1 or 2");
  }
  if (input_size.height <= 0 || input_size.width <= 0) throw ConfigError("input size must be positive");
}

namespace {

int conv_out(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

}  // namespace

Shape BackboneConfig::feature_shape() const {
  int h = input_size.height, w = input_size.width;
  if (variant == BackboneVariant::kPaperScale) {
    h = conv_out(conv_out(h, 7, 2, 3), 3, 2, 1);
    w = conv_out(conv_out(w, 7, 2, 3), 3, 2, 1);
  } else {
    h = conv_out(h, 3, 2, 1);
    w = conv_out(w, 3, 2, 1);
  }
  for (int stride : {2, 2, last_stage_stride}) {
    h = conv_out(h, 3, stride, 1);
    w = conv_out(w, 3, stride, 1);
  }
  return Shape{1, embedding_dim(), h, w};
}

template <typename T>
ResidualBlock<T>::ResidualBlock(int in_channels, int mid_channels, int out_channels, int stride,
                                bool bottleneck, Rng& rng)
    : bottleneck_(bottleneck) {
  if (bottleneck) {
    convs_.emplace_back(in_channels, mid_channels, 1, 1, 0, false, rng);
    convs_.emplace_back(mid_channels, mid_channels, 3, stride, 1, false, rng);
    convs_.emplace_back(mid_channels, out_channels, 1, 1, 0, false, rng);
    norms_.emplace_back(mid_channels);
    norms_.emplace_back(mid_channels);
    norms_.emplace_back(out_channels, true);
  } else {
    convs_.emplace_back(in_channels, out_channels, 3, stride, 1, false, rng);
    convs_.emplace_back(out_channels, out_channels, 3, 1, 1, false, rng);
    norms_.emplace_back(out_channels);
    norms_.emplace_back(out_channels, true);
  }
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.emplace(in_channels, out_channels, 1, stride, 0, false, rng);
    shortcut_norm_.emplace(out_channels);
  }
}

template <typename T>
Var<T> ResidualBlock<T>::operator()(const Var<T>& x, bool training) {
  Var<T> h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = norms_[i](convs_[i](h), training);
    if (i + 1 < convs_.size()) h = ops::relu(h);
  }
  const Var<T> identity = shortcut_ ? (*shortcut_norm_)((*shortcut_)(x), training) : x;
  return ops::relu(ops::add(h, identity));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(prefix + ".conv" + std::to_string(i + 1), out);
    norms_[i].collect(prefix + ".bn" + std::to_string(i + 1), out);
  }
  if (shortcut_) {
    shortcut_->collect(prefix + ".shortcut.conv", out);
    shortcut_norm_->collect(prefix + ".shortcut.bn", out);
  }
}

namespace {

template <typename T>
void build_stage(std::vector<ResidualBlock<T>>& blocks, const BackboneConfig& c, int stage,
                 int in_channels, int stride, Rng& rng) {
  const bool bottleneck = c.variant == BackboneVariant::kPaperScale;
  const int out = c.stage_channels[stage];
  const int mid = bottleneck ? out / 4 : out;
  for (int b = 0; b < c.blocks_per_stage[stage]; ++b) {
    blocks.emplace_back(b == 0 ? in_channels : out, mid, out, b == 0 ? stride : 1, bottleneck, rng);
  }
}

}  // namespace

template <typename T>
ShallowEncoder<T>::ShallowEncoder(const BackboneConfig& config, Rng& rng)
    : max_pool_(config.variant == BackboneVariant::kPaperScale) {
  const int stem_channels = max_pool_ ? 64 : config.stage_channels[0];
  stem_ = max_pool_ ? Conv2d<T>(3, stem_channels, 7, 2, 3, false, rng)
                    : Conv2d<T>(3, stem_channels, 3, 2, 1, false, rng);
  stem_norm_ = BatchNorm2d<T>(stem_channels);
  build_stage(blocks_, config, 0, stem_channels, 1, rng);
}

template <typename T>
Var<T> ShallowEncoder<T>::operator()(const Var<T>& images, bool training) {
  Var<T> h = ops::relu(stem_norm_(stem_(images), training));
  if (max_pool_) h = ops::max_pool2d(h, 3, 2, 1);
  for (auto& b : blocks_) h = b(h, training);
  return h;
}

template <typename T>
void ShallowEncoder<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  stem_.collect(prefix + ".stem.conv", out);
  stem_norm_.collect(prefix + ".stem.bn", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(prefix + ".stage1." + std::to_string(i), out);
  }
}

template <typename T>
DeepEncoder<T>::DeepEncoder(const BackboneConfig& config, Rng& rng) {
  build_stage(blocks_, config, 1, config.stage_channels[0], 2, rng);
  build_stage(blocks_, config, 2, config.stage_channels[1], 2, rng);
  build_stage(blocks_, config, 3, config.stage_channels[2], config.last_stage_stride, rng);
}

template <typename T>
Var<T> DeepEncoder<T>::operator()(const Var<T>& x, bool training) {
  Var<T> h = x;
  for (auto& b : blocks_) h = b(h, training);
  return h;
}

template <typename T>
void DeepEncoder<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  }
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng_h(derive_seed(seed, {100}));
  Rng rng_l(derive_seed(seed, {101}));
  Rng rng_id(derive_seed(seed, {102}));
  e_h_ = std::make_unique<ShallowEncoder<T>>(config_, rng_h);
  if (config_.two_stream) e_l_ = std::make_unique<ShallowEncoder<T>>(config_, rng_l);
  e_id_ = std::make_unique<DeepEncoder<T>>(config_, rng_id);
}

template <typename T>
ShallowEncoder<T>& Backbone<T>::encoder_for(Stream stream) {
  return (stream == Stream::kLr && e_l_) ? *e_l_ : *e_h_;
}

template <typename T>
Var<T> Backbone<T>::shallow(const Var<T>& images, Stream stream, bool training) {
  const Shape s = images.shape();
  if (s.c != 3 || s.h != config_.input_size.height || s.w != config_.input_size.width) {
    throw ShapeError("backbone input must be (N,3," + std::to_string(config_.input_size.height) +
                     "," + std::to_string(config_.input_size.width) + "), got " + s.str());
  }
  return encoder_for(stream)(images, training);
}

template <typename T>
Var<T> Backbone<T>::deep(const Var<T>& shallow_features, bool training) {
  return (*e_id_)(shallow_features, training);
}

template <typename T>
FeatureMap<T> Backbone<T>::forward(const Var<T>& images, Stream stream, StreamTag tag,
                                   bool training) {
  return {deep(shallow(images, stream, training), training), tag};
}

template <typename T>
FeatureMap<T> Backbone<T>::encode(const ImageRecord& image, Stream stream) {
  if (!(image.image.size() == config_.input_size)) {
    throw ShapeError("encode expects a " + config_.input_size.str() + " image, got " +
                     image.image.size().str());
  }
  StreamTag tag = StreamTag::kHr;
  if (stream == Stream::kLr) tag = image.paired_view ? StreamTag::kSynthLr : StreamTag::kLr;
  const Var<T> x = Var<T>::constant(to_network_input<T>({&image}, config_.input_size));
  return forward(x, stream, tag, false);
}

template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> Backbone<T>::forward_pair(const ImageRecord& hr_image,
                                                                  const std::set<int>& rates,
                                                                  std::uint64_t seed) {
  if (hr_image.tag != ResolutionTag::kRealHr) {
    throw ContractError("forward_pair needs a REAL_HR record, got " + to_string(hr_image.tag));
  }
  if (rates.empty()) throw ContractError("forward_pair needs a non-empty rate set");
  Rng rng(seed);
  const std::vector<int> choices(rates.begin(), rates.end());
  const int rate = choices[uniform_int(rng, 0, static_cast<int>(choices.size()) - 1)];
  ImageRecord view = upsample_to_canonical(downsample(hr_image, rate), config_.input_size);
  view.paired_view = true;
  return {encode(hr_image, Stream::kHr), encode(view, Stream::kLr)};
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  e_h_->collect(prefix + ".e_h", out);
  if (e_l_) e_l_->collect(prefix + ".e_l", out);
  e_id_->collect(prefix + ".e_id", out);
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class ShallowEncoder<float>;
template class ShallowEncoder<double>;
template class DeepEncoder<float>;
template class DeepEncoder<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace ftwa
