#include "ftwa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ftwa/errors.hpp"
#include "ftwa/random.hpp"

namespace ftwa {

std::string to_string(ResolutionTag tag) {
  switch (tag) {
    case ResolutionTag::kRealHr:
      return "REAL_HR";
    case ResolutionTag::kRealLr:
      return "REAL_LR";
    case ResolutionTag::kSynthLr:
      return "SYNTH_LR";
  }
  return "?";
}

ResolutionTag parse_resolution_tag(const std::string& s) {
  if (s == "REAL_HR") return ResolutionTag::kRealHr;
  if (s == "REAL_LR") return ResolutionTag::kRealLr;
  if (s == "SYNTH_LR") return ResolutionTag::kSynthLr;
  throw ConfigError("unknown resolution tag '" + s + "'");
}

Image::Image(int height, int width, float fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0) * 3, fill) {}

Image::Image(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (pixels_.size() != static_cast<std::size_t>(height) * width * 3) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) + " given " +
                     std::to_string(pixels_.size()) + " values");
  }
}

void ImageRecord::validate() const {
  if (image.height() <= 0 || image.width() <= 0) {
    throw ContractError("image record with empty pixels (" + image.size().str() + ")");
  }
  for (float v : image.pixels()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("pixel intensity outside [0,1]");
  }
  if (tag == ResolutionTag::kSynthLr && (!rate || *rate < 2)) {
    throw ContractError("SYNTH_LR record without a down-sampling rate >= 2");
  }
}

namespace {

struct Tap {
  int index;
  float weight;
};

// Triangle-filter taps for one output coordinate; support grows with the
// down-scaling factor.
std::vector<std::vector<Tap>> resample_taps(int in, int out) {
  const double scale = static_cast<double>(in) / out;
  const double support = std::max(1.0, scale);
  std::vector<std::vector<Tap>> taps(out);
  for (int o = 0; o < out; ++o) {
    const double center = (o + 0.5) * scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    double total = 0;
    for (int i = std::max(lo, 0); i <= std::min(hi, in - 1); ++i) {
      const double w = 1.0 - std::abs(i - center) / support;
      if (w > 0) {
        taps[o].push_back({i, static_cast<float>(w)});
        total += w;
      }
    }
    for (auto& t : taps[o]) t.weight = static_cast<float>(t.weight / total);
  }
  return taps;
}

}  // namespace

Image resize_bilinear(const Image& image, ImageSize size) {
  if (size.height <= 0 || size.width <= 0) {
    throw ContractError("resize target must be positive, got " + size.str());
  }
  if (image.size() == size) return image;
  const auto row_taps = resample_taps(image.height(), size.height);
  const auto col_taps = resample_taps(image.width(), size.width);

  Image horizontal(image.height(), size.width);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < size.width; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        float acc = 0;
        for (const auto& t : col_taps[x]) acc += t.weight * image.at(y, t.index, ch);
        horizontal.at(y, x, ch) = acc;
      }
    }
  }
  Image out(size.height, size.width);
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        float acc = 0;
        for (const auto& t : row_taps[y]) acc += t.weight * horizontal.at(t.index, x, ch);
        out.at(y, x, ch) = std::clamp(acc, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

ImageRecord downsample(const ImageRecord& record, int rate) {
  if (rate < 2) throw ContractError("down-sampling rate must be >= 2, got " + std::to_string(rate));
  const int h = record.image.height();
  const int w = record.image.width();
  if (rate > h || rate > w) {
    throw DegenerateInputError("rate " + std::to_string(rate) + " exceeds image size " +
                               record.image.size().str());
  }
  ImageRecord out = record;
  out.image = resize_bilinear(record.image, ImageSize{h / rate, w / rate});
  out.tag = ResolutionTag::kSynthLr;
  out.rate = rate;
  return out;
}

ImageRecord upsample_to_canonical(const ImageRecord& record, ImageSize canonical) {
  ImageRecord out = record;
  out.image = resize_bilinear(record.image, canonical);
  return out;
}

template <typename T>
Tensor<T> to_network_input(const std::vector<const ImageRecord*>& records, ImageSize canonical) {
  const int n = static_cast<int>(records.size());
  Tensor<T> out(Shape{n, 3, canonical.height, canonical.width});
  for (int i = 0; i < n; ++i) {
    const Image& img = records[i]->image;
    if (!(img.size() == canonical)) {
      throw ShapeError("network input must be " + canonical.str() + ", got " + img.size().str());
    }
    for (int ch = 0; ch < 3; ++ch) {
      for (int y = 0; y < canonical.height; ++y) {
        for (int x = 0; x < canonical.width; ++x) {
          out.at(i, ch, y, x) = static_cast<T>((img.at(y, x, ch) - 0.5f) / 0.25f);
        }
      }
    }
  }
  return out;
}

template Tensor<float> to_network_input(const std::vector<const ImageRecord*>&, ImageSize);
template Tensor<double> to_network_input(const std::vector<const ImageRecord*>&, ImageSize);

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct Rgb {
  float r = 0, g = 0, b = 0;
};

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
    default: break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

Rgb random_garment_color(Rng& rng) {
  return hsv(uniform01(rng), uniform(rng, 0.35, 0.95), uniform(rng, 0.3, 0.95));
}

enum class Pattern { kSolid, kHorizontalStripes, kVerticalStripes, kChecker };

struct Identity {
  Rgb upper, lower, accent, hair, skin, shoes, bag_color;
  Pattern pattern;
  double period;  // pattern period as a fraction of image height
  int bag;        // 0 none, 1 left, 2 right
  double build;   // torso half-width
};

struct Camera {
  Rgb gain, offset, background;
  double gradient;
};

Identity make_identity(std::uint64_t seed, int person) {
  Rng rng(derive_seed(seed, {1, static_cast<std::uint64_t>(person)}));
  Identity id;
  id.upper = random_garment_color(rng);
  id.lower = random_garment_color(rng);
  id.accent = random_garment_color(rng);
  id.hair = hsv(uniform(rng, 0.02, 0.12), uniform(rng, 0.2, 0.7), uniform(rng, 0.08, 0.45));
  id.skin = hsv(uniform(rng, 0.03, 0.09), uniform(rng, 0.25, 0.55), uniform(rng, 0.45, 0.9));
  id.shoes = hsv(uniform01(rng), uniform(rng, 0.0, 0.4), uniform(rng, 0.1, 0.6));
  id.bag_color = random_garment_color(rng);
  id.pattern = static_cast<Pattern>(uniform_int(rng, 0, 3));
  id.period = uniform(rng, 0.05, 0.09);
  id.bag = uniform_int(rng, 0, 2);
  id.build = uniform(rng, 0.2, 0.3);
  return id;
}

Camera make_camera(std::uint64_t seed, int camera) {
  Rng rng(derive_seed(seed, {2, static_cast<std::uint64_t>(camera)}));
  Camera cam;
  cam.gain = {static_cast<float>(uniform(rng, 0.85, 1.15)), static_cast<float>(uniform(rng, 0.85, 1.15)),
              static_cast<float>(uniform(rng, 0.85, 1.15))};
  cam.offset = {static_cast<float>(uniform(rng, -0.04, 0.04)), static_cast<float>(uniform(rng, -0.04, 0.04)),
                static_cast<float>(uniform(rng, -0.04, 0.04))};
  cam.background = hsv(uniform01(rng), uniform(rng, 0.05, 0.25), uniform(rng, 0.35, 0.75));
  cam.gradient = uniform(rng, -0.15, 0.15);
  return cam;
}

bool in_box(double v, double u, double v0, double v1, double u0, double u1) {
  return v >= v0 && v < v1 && u >= u0 && u < u1;
}

Image render_person(const Identity& id, const Camera& cam, ImageSize size, Rng& rng) {
  const double dx = uniform(rng, -0.06, 0.06);
  const double dy = uniform(rng, -0.03, 0.03);
  const double zoom = uniform(rng, 0.92, 1.08);
  const double brightness = uniform(rng, 0.9, 1.1);
  const double stride = uniform(rng, -0.04, 0.04);
  const double phase = uniform01(rng);

  Image img(size.height, size.width);
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      // Person-centered coordinates: v down the body, u across, 0.5 = center line.
      const double v = ((y + 0.5) / size.height - 0.5 - dy) / zoom + 0.5;
      const double u = ((x + 0.5) / size.width - 0.5 - dx) / zoom + 0.5;
      const double bg_shade = 1.0 + cam.gradient * (v - 0.5);
      Rgb c{static_cast<float>(cam.background.r * bg_shade), static_cast<float>(cam.background.g * bg_shade),
            static_cast<float>(cam.background.b * bg_shade)};

      const double torso_l = 0.5 - id.build, torso_r = 0.5 + id.build;
      const double hv = (v - 0.12) / 0.085, hu = (u - 0.5) / 0.17;
      if (hv * hv + hu * hu <= 1.0) c = v < 0.09 ? id.hair : id.skin;
      if (in_box(v, u, 0.21, 0.55, torso_l, torso_r) ||
          in_box(v, u, 0.22, 0.5, torso_l - 0.1, torso_l) ||
          in_box(v, u, 0.22, 0.5, torso_r, torso_r + 0.1)) {
        c = id.upper;
        const double pv = (v - 0.21) / id.period + phase;
        const double pu = (u - 0.5) * (static_cast<double>(size.width) / size.height) / id.period;
        const bool hs = std::fmod(pv, 1.0) < 0.5;
        const bool vs = std::fmod(pu + 10.0, 1.0) < 0.5;
        switch (id.pattern) {
          case Pattern::kHorizontalStripes:
            if (hs) c = id.accent;
            break;
          case Pattern::kVerticalStripes:
            if (vs) c = id.accent;
            break;
          case Pattern::kChecker:
            if (hs != vs) c = id.accent;
            break;
          case Pattern::kSolid:
            break;
        }
      }
      if (in_box(v, u, 0.55, 0.92, 0.3 - stride, 0.48 - stride) ||
          in_box(v, u, 0.55, 0.92, 0.52 + stride, 0.7 + stride)) {
        c = id.lower;
      }
      if (in_box(v, u, 0.92, 0.97, 0.28 - stride, 0.48 - stride) ||
          in_box(v, u, 0.92, 0.97, 0.52 + stride, 0.72 + stride)) {
        c = id.shoes;
      }
      if (id.bag == 1 && in_box(v, u, 0.35, 0.58, torso_l - 0.16, torso_l - 0.02)) c = id.bag_color;
      if (id.bag == 2 && in_box(v, u, 0.35, 0.58, torso_r + 0.02, torso_r + 0.16)) c = id.bag_color;

      const float px[3] = {c.r, c.g, c.b};
      const float gain[3] = {cam.gain.r, cam.gain.g, cam.gain.b};
      const float off[3] = {cam.offset.r, cam.offset.g, cam.offset.b};
      for (int ch = 0; ch < 3; ++ch) {
        const double value = px[ch] * gain[ch] * brightness + off[ch] + 0.02 * normal01(rng);
        img.at(y, x, ch) = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

std::string synthetic_path(int person_id, int camera_id, int index) {
  return "synthetic://" + std::to_string(person_id) + "/" + std::to_string(camera_id) + "/" +
         std::to_string(index);
}

std::vector<ImageRecord> generate_synthetic_corpus(const SyntheticCorpusConfig& config) {
  if (config.identities < 1 || config.cameras < 1 || config.images_per_id_per_camera < 1) {
    throw ConfigError("synthetic corpus counts must all be >= 1");
  }
  if (config.size.height < 8 || config.size.width < 4) {
    throw ConfigError("synthetic corpus image size too small: " + config.size.str());
  }
  std::vector<Camera> cameras;
  for (int c = 0; c < config.cameras; ++c) cameras.push_back(make_camera(config.seed, c));
  std::vector<ImageRecord> records;
  records.reserve(static_cast<std::size_t>(config.identities) * config.cameras *
                  config.images_per_id_per_camera);
  for (int p = 0; p < config.identities; ++p) {
    const Identity id = make_identity(config.seed, p);
    for (int c = 0; c < config.cameras; ++c) {
      for (int i = 0; i < config.images_per_id_per_camera; ++i) {
        Rng rng(derive_seed(config.seed, {3, static_cast<std::uint64_t>(p),
                                          static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}));
        ImageRecord r;
        r.image = render_person(id, cameras[c], config.size, rng);
        r.person_id = p;
        r.camera_id = c;
        r.tag = ResolutionTag::kRealHr;
        r.source_path = synthetic_path(p, c, i);
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// MLR split

void MLRConfig::validate() const {
  if (rate_set.empty()) throw ConfigError("rate set is empty");
  for (int r : rate_set) {
    if (r < 2) throw ConfigError("down-sampling rates must be >= 2, got " + std::to_string(r));
  }
  if (lr_camera_ids.empty()) throw ConfigError("no low-resolution camera selected");
  if (canonical_size.height <= 0 || canonical_size.width <= 0) {
    throw ConfigError("canonical size must be positive");
  }
  if (!test_identities && !(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie in (0,1)");
  }
}

MlrSplit build_mlr_split(const std::vector<ImageRecord>& records, const MLRConfig& config) {
  config.validate();
  std::set<int> cameras, identities;
  for (const auto& r : records) {
    cameras.insert(r.camera_id);
    identities.insert(r.person_id);
  }
  if (cameras.size() < 2) throw ConfigError("MLR split needs records from at least two cameras");
  for (int c : config.lr_camera_ids) {
    if (!cameras.contains(c)) throw ConfigError("LR camera " + std::to_string(c) + " has no images");
  }
  if (config.lr_camera_ids.size() >= cameras.size()) {
    throw ConfigError("LR cameras must be a proper subset of all cameras");
  }

  std::set<int> test_ids;
  if (config.test_identities) {
    test_ids = *config.test_identities;
  } else {
    std::vector<int> ids(identities.begin(), identities.end());
    Rng rng(derive_seed(config.rng_seed, {10}));
    shuffle(ids.begin(), ids.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(config.test_fraction * ids.size()));
    test_ids.insert(ids.begin(), ids.begin() + std::min(n_test, ids.size()));
  }

  const std::vector<int> rates(config.rate_set.begin(), config.rate_set.end());
  std::map<int, std::pair<bool, bool>> seen;  // id -> (has HR, has LR)
  std::vector<ImageRecord> degraded;
  degraded.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ImageRecord& r = records[i];
    const bool low = config.lr_camera_ids.contains(r.camera_id);
    if (low && config.degrade_lr_cameras) {
      Rng rng(derive_seed(config.rng_seed, {11, i}));
      degraded.push_back(downsample(r, rates[uniform_int(rng, 0, static_cast<int>(rates.size()) - 1)]));
    } else {
      degraded.push_back(r);
      degraded.back().tag = low ? ResolutionTag::kRealLr : ResolutionTag::kRealHr;
    }
    auto& flags = seen[r.person_id];
    (low ? flags.second : flags.first) = true;
  }

  MlrSplit split;
  for (int id : identities) {
    if (!test_ids.contains(id)) {
      split.train_identities.push_back(id);
    } else if (seen[id].first && seen[id].second) {
      split.test_identities.push_back(id);
    } else {
      ++split.excluded_identities;
    }
  }
  const std::set<int> kept(split.test_identities.begin(), split.test_identities.end());
  for (auto& r : degraded) {
    if (!test_ids.contains(r.person_id)) {
      split.train.push_back(std::move(r));
    } else if (kept.contains(r.person_id)) {
      const bool low = config.lr_camera_ids.contains(r.camera_id);
      (low ? split.query : split.gallery).push_back(std::move(r));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// PK sampling

PkSampler::PkSampler(const std::vector<ImageRecord>& train_set, PkConfig config)
    : records_(train_set), config_(std::move(config)) {
  const int p = config_.identities_per_batch;
  const int k = config_.instances_per_identity;
  if (p < 2 || k < 2) {
    throw ConfigError("PK sampling needs P >= 2 and K >= 2, got P=" + std::to_string(p) +
                      " K=" + std::to_string(k));
  }
  if (config_.rate_set.empty()) throw ConfigError("PK sampler rate set is empty");
  std::map<int, Pool> by_id;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    auto& pool = by_id[r.person_id];
    (r.tag == ResolutionTag::kRealHr ? pool.hr : pool.lr).push_back(i);
  }
  for (auto& [id, pool] : by_id) {
    if (pool.hr.empty() || pool.lr.empty()) continue;
    if (pool.hr.size() + pool.lr.size() < static_cast<std::size_t>(k)) continue;
    identities_.push_back(id);
    pools_.push_back(std::move(pool));
  }
  if (identities_.size() < static_cast<std::size_t>(p)) {
    throw ConfigError("PK sampling needs " + std::to_string(p) +
                      " identities with HR and LR images, found " +
                      std::to_string(identities_.size()));
  }
}

std::size_t PkSampler::batches_per_epoch() const {
  return std::max<std::size_t>(1, identities_.size() / config_.identities_per_batch);
}

namespace {

std::vector<std::size_t> draw_instances(const std::vector<std::size_t>& pool, int k, Rng& rng) {
  std::vector<std::size_t> order = pool;
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> picked;
  for (int i = 0; i < k; ++i) {
    if (static_cast<std::size_t>(i) < order.size()) {
      picked.push_back(order[i]);
    } else {
      picked.push_back(pool[uniform_int(rng, 0, static_cast<int>(pool.size()) - 1)]);
    }
  }
  return picked;
}

void flip_horizontal(Image& img) {
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width() / 2; ++x) {
      for (int ch = 0; ch < 3; ++ch) std::swap(img.at(y, x, ch), img.at(y, img.width() - 1 - x, ch));
    }
  }
}

}  // namespace

TrainingBatch PkSampler::batch(std::size_t epoch, std::size_t index) const {
  const int p = config_.identities_per_batch;
  const int k = config_.instances_per_identity;
  const std::size_t per_epoch = batches_per_epoch();
  // Every epoch walks a fresh permutation of identities; batches take
  // consecutive P-sized windows (wrapping when identities < P * per_epoch).
  std::vector<std::size_t> order(identities_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng perm_rng(derive_seed(config_.seed, {20, epoch}));
  shuffle(order.begin(), order.end(), perm_rng);

  Rng rng(derive_seed(config_.seed, {21, epoch, index}));
  const std::vector<int> rates(config_.rate_set.begin(), config_.rate_set.end());
  TrainingBatch batch;
  batch.identities_per_batch = p;
  batch.instances_per_identity = k;
  for (int j = 0; j < p; ++j) {
    const std::size_t slot = ((index % per_epoch) * p + j) % order.size();
    const Pool& pool = pools_[order[slot]];
    const int id = identities_[order[slot]];
    const auto hr = draw_instances(pool.hr, k, rng);
    const auto lr = draw_instances(pool.lr, k, rng);
    for (int i = 0; i < k; ++i) {
      ImageRecord h = records_[hr[i]];
      ImageRecord l = records_[lr[i]];
      if (config_.horizontal_flip) {
        if (uniform01(rng) < 0.5) flip_horizontal(h.image);
        if (uniform01(rng) < 0.5) flip_horizontal(l.image);
      }
      const int rate = rates[uniform_int(rng, 0, static_cast<int>(rates.size()) - 1)];
      ImageRecord view = downsample(h, rate);
      view.paired_view = true;
      batch.hr_images.push_back(std::move(h));
      batch.lr_images.push_back(std::move(l));
      batch.synth_lr_views.push_back(std::move(view));
      batch.labels.push_back(id);
    }
  }
  return batch;
}

}  // namespace ftwa
