#include "ftwa/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ftwa/errors.hpp"

namespace ftwa {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline:
      return "baseline";
    case Variant::kFtwaB:
      return "ftwa_b";
    case Variant::kFtwaR:
      return "ftwa_r";
    case Variant::kFtwa:
      return "ftwa";
  }
  return "?";
}

std::string display_name(Variant v) {
  switch (v) {
    case Variant::kBaseline:
      return "Baseline";
    case Variant::kFtwaB:
      return "FTWA_B";
    case Variant::kFtwaR:
      return "FTWA_R";
    case Variant::kFtwa:
      return "FTWA";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (Variant v : all_variants()) {
    if (lower == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected baseline, ftwa_b, ftwa_r or ftwa)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::kBaseline, Variant::kFtwaB, Variant::kFtwaR,
                                      Variant::kFtwa};
  return v;
}

bool uses_two_streams(Variant v) { return v != Variant::kBaseline; }
bool uses_raft(Variant v) { return v == Variant::kFtwaR || v == Variant::kFtwa; }
bool uses_evaluators(Variant v) { return v == Variant::kFtwa; }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

}  // namespace

KeyValueDocument KeyValueDocument::parse(std::string_view text) {
  KeyValueDocument doc;
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string content = trim(strip_comment(line));
    if (content.empty()) continue;
    if (content.front() == '[' && content.back() == ']' && content.find('=') == std::string::npos) {
      section = trim(std::string_view(content).substr(1, content.size() - 2));
      continue;
    }
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    doc.values_[section.empty() ? key : section + "." + key] = unquote(value);
  }
  return doc;
}

KeyValueDocument KeyValueDocument::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KeyValueDocument::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

long long KeyValueDocument::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

double KeyValueDocument::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool KeyValueDocument::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<long long> KeyValueDocument::get_int_list(const std::string& key) const {
  std::string v = get_string(key);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw ConfigError("config key '" + key + "' expects a list like [1, 2], got '" + v + "'");
  }
  std::vector<long long> out;
  std::stringstream ss(v.substr(1, v.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    KeyValueDocument tmp;
    tmp.set(key, item);
    out.push_back(tmp.get_int(key));
  }
  return out;
}

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 30;
  c.decay_epochs = {15, 22};
  c.identities_per_batch = 4;
  c.instances_per_identity = 4;
  c.backbone = BackboneVariant::kTiny;
  c.input_size = {64, 32};
  c.corpus.size = {64, 32};
  c.warmup_epochs = 3;
  c.iters_per_epoch = 16;
  c.base_lr = 2e-3;
  c.evaluator_lr_scale = 0.1;
  return c;
}

TrainConfig TrainConfig::preset(std::string_view name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename C>
std::string fmt_list(const C& xs) {
  std::string s = "[";
  bool first = true;
  for (auto x : xs) {
    if (!first) s += ", ";
    s += std::to_string(x);
    first = false;
  }
  return s + "]";
}

std::string mining_name(TripletMining m) {
  return m == TripletMining::kBatchAll ? "batch_all" : "batch_hard";
}

std::string backbone_name(BackboneVariant b) {
  return b == BackboneVariant::kTiny ? "tiny" : "paper_scale";
}

}  // namespace

std::string TrainConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["variant"] = to_string(variant);
  kv["seed"] = std::to_string(seed);
  kv["epochs"] = std::to_string(epochs);
  kv["iters_per_epoch"] = std::to_string(iters_per_epoch);
  kv["base_lr"] = fmt_double(base_lr);
  kv["decay_epochs"] = fmt_list(decay_epochs);
  kv["decay_factor"] = fmt_double(decay_factor);
  kv["warmup_epochs"] = std::to_string(warmup_epochs);
  kv["weight_decay"] = fmt_double(weight_decay);
  kv["evaluator_lr_scale"] = fmt_double(evaluator_lr_scale);
  kv["evaluator_detach_input"] = evaluator_detach_input ? "true" : "false";
  kv["identities_per_batch"] = std::to_string(identities_per_batch);
  kv["instances_per_identity"] = std::to_string(instances_per_identity);
  kv["loss.lambda_cls"] = fmt_double(loss.lambda_cls);
  kv["loss.lambda_tri"] = fmt_double(loss.lambda_tri);
  kv["loss.lambda_raft"] = fmt_double(loss.lambda_raft);
  kv["loss.margin"] = fmt_double(loss.margin);
  kv["loss.mining"] = mining_name(mining);
  kv["model.backbone"] = backbone_name(backbone);
  kv["model.last_stage_stride"] = std::to_string(last_stage_stride);
  kv["model.input_height"] = std::to_string(input_size.height);
  kv["model.input_width"] = std::to_string(input_size.width);
  kv["model.raft_width"] = std::to_string(raft_width);
  kv["corpus.identities"] = std::to_string(corpus.identities);
  kv["corpus.cameras"] = std::to_string(corpus.cameras);
  kv["corpus.images_per_id_per_camera"] = std::to_string(corpus.images_per_id_per_camera);
  kv["corpus.seed"] = std::to_string(corpus.seed);
  kv["corpus.height"] = std::to_string(corpus.size.height);
  kv["corpus.width"] = std::to_string(corpus.size.width);
  kv["split.rates"] = fmt_list(rate_set);
  kv["split.lr_cameras"] = fmt_list(lr_camera_ids);
  kv["split.seed"] = std::to_string(split_seed);
  kv["deterministic"] = deterministic ? "true" : "false";
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

void TrainConfig::apply(const KeyValueDocument& doc) {
  using Setter = std::function<void(const KeyValueDocument&, const std::string&)>;
  auto int_list = [](const KeyValueDocument& d, const std::string& k) {
    std::vector<int> out;
    for (long long v : d.get_int_list(k)) out.push_back(static_cast<int>(v));
    return out;
  };
  const std::map<std::string, Setter> setters{
      {"variant", [&](auto& d, auto& k) { variant = parse_variant(d.get_string(k)); }},
      {"seed", [&](auto& d, auto& k) { seed = static_cast<std::uint64_t>(d.get_int(k)); }},
      {"epochs", [&](auto& d, auto& k) { epochs = static_cast<int>(d.get_int(k)); }},
      {"iters_per_epoch", [&](auto& d, auto& k) { iters_per_epoch = static_cast<int>(d.get_int(k)); }},
      {"base_lr", [&](auto& d, auto& k) { base_lr = d.get_double(k); }},
      {"decay_epochs", [&](auto& d, auto& k) { decay_epochs = int_list(d, k); }},
      {"decay_factor", [&](auto& d, auto& k) { decay_factor = d.get_double(k); }},
      {"warmup_epochs", [&](auto& d, auto& k) { warmup_epochs = static_cast<int>(d.get_int(k)); }},
      {"weight_decay", [&](auto& d, auto& k) { weight_decay = d.get_double(k); }},
      {"evaluator_lr_scale", [&](auto& d, auto& k) { evaluator_lr_scale = d.get_double(k); }},
      {"evaluator_detach_input", [&](auto& d, auto& k) { evaluator_detach_input = d.get_bool(k); }},
      {"identities_per_batch",
       [&](auto& d, auto& k) { identities_per_batch = static_cast<int>(d.get_int(k)); }},
      {"instances_per_identity",
       [&](auto& d, auto& k) { instances_per_identity = static_cast<int>(d.get_int(k)); }},
      {"loss.lambda_cls", [&](auto& d, auto& k) { loss.lambda_cls = d.get_double(k); }},
      {"loss.lambda_tri", [&](auto& d, auto& k) { loss.lambda_tri = d.get_double(k); }},
      {"loss.lambda_raft", [&](auto& d, auto& k) { loss.lambda_raft = d.get_double(k); }},
      {"loss.margin", [&](auto& d, auto& k) { loss.margin = d.get_double(k); }},
      {"loss.mining",
       [&](auto& d, auto& k) {
         const std::string v = d.get_string(k);
         if (v == "batch_all") {
           mining = TripletMining::kBatchAll;
         } else if (v == "batch_hard") {
           mining = TripletMining::kBatchHard;
         } else {
           throw ConfigError("loss.mining must be batch_all or batch_hard, got '" + v + "'");
         }
       }},
      {"model.backbone",
       [&](auto& d, auto& k) {
         const std::string v = d.get_string(k);
         if (v == "tiny") {
           backbone = BackboneVariant::kTiny;
         } else if (v == "paper_scale") {
           backbone = BackboneVariant::kPaperScale;
         } else {
           throw ConfigError("model.backbone must be tiny or paper_scale, got '" + v + "'");
         }
       }},
      {"model.last_stage_stride",
       [&](auto& d, auto& k) { last_stage_stride = static_cast<int>(d.get_int(k)); }},
      {"model.input_height", [&](auto& d, auto& k) { input_size.height = static_cast<int>(d.get_int(k)); }},
      {"model.input_width", [&](auto& d, auto& k) { input_size.width = static_cast<int>(d.get_int(k)); }},
      {"model.raft_width", [&](auto& d, auto& k) { raft_width = static_cast<int>(d.get_int(k)); }},
      {"corpus.identities", [&](auto& d, auto& k) { corpus.identities = static_cast<int>(d.get_int(k)); }},
      {"corpus.cameras", [&](auto& d, auto& k) { corpus.cameras = static_cast<int>(d.get_int(k)); }},
      {"corpus.images_per_id_per_camera",
       [&](auto& d, auto& k) { corpus.images_per_id_per_camera = static_cast<int>(d.get_int(k)); }},
      {"corpus.seed", [&](auto& d, auto& k) { corpus.seed = static_cast<std::uint64_t>(d.get_int(k)); }},
      {"corpus.height", [&](auto& d, auto& k) { corpus.size.height = static_cast<int>(d.get_int(k)); }},
      {"corpus.width", [&](auto& d, auto& k) { corpus.size.width = static_cast<int>(d.get_int(k)); }},
      {"split.rates",
       [&](auto& d, auto& k) {
         const auto v = int_list(d, k);
         rate_set = std::set<int>(v.begin(), v.end());
       }},
      {"split.lr_cameras",
       [&](auto& d, auto& k) {
         const auto v = int_list(d, k);
         lr_camera_ids = std::set<int>(v.begin(), v.end());
       }},
      {"split.seed", [&](auto& d, auto& k) { split_seed = static_cast<std::uint64_t>(d.get_int(k)); }},
      {"deterministic", [&](auto& d, auto& k) { deterministic = d.get_bool(k); }},
  };
  for (const auto& [key, value] : doc.values()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(doc, key);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (iters_per_epoch < 0) throw ConfigError("iters_per_epoch must be >= 0");
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] >= epochs || decay_epochs[i] < 0 || (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])) {
      throw ConfigError("decay_epochs must be strictly increasing and < epochs");
    }
  }
  if (!(decay_factor > 0 && decay_factor <= 1)) throw ConfigError("decay_factor must be in (0, 1]");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (!(evaluator_lr_scale >= 0)) throw ConfigError("evaluator_lr_scale must be >= 0");
  if (identities_per_batch < 2 || instances_per_identity < 2) {
    throw ConfigError("batches need P >= 2 and K >= 2");
  }
  loss.validate();
  backbone_config().validate();
  if (uses_raft(variant)) raft_config().validate();
  mlr_config().validate();
}

BackboneConfig TrainConfig::backbone_config() const {
  BackboneConfig b = backbone == BackboneVariant::kTiny ? BackboneConfig::tiny()
                                                        : BackboneConfig::paper_scale();
  b.last_stage_stride = last_stage_stride;
  b.input_size = input_size;
  b.two_stream = uses_two_streams(variant);
  return b;
}

RaftConfig TrainConfig::raft_config() const {
  RaftConfig r = RaftConfig::for_backbone(backbone_config());
  if (raft_width > 0) r.width = raft_width;
  return r;
}

MLRConfig TrainConfig::mlr_config() const {
  MLRConfig m;
  m.rate_set = rate_set;
  m.lr_camera_ids = lr_camera_ids;
  m.canonical_size = input_size;
  m.rng_seed = split_seed;
  return m;
}

PkConfig TrainConfig::pk_config() const {
  PkConfig p;
  p.identities_per_batch = identities_per_batch;
  p.instances_per_identity = instances_per_identity;
  p.seed = derive_seed(seed, {7});
  p.rate_set = rate_set;
  return p;
}

double lr_at(const TrainConfig& config, int epoch) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(config.epochs) + ")");
  }
  if (epoch < config.warmup_epochs) {
    return config.base_lr * (0.1 + 0.9 * static_cast<double>(epoch) / config.warmup_epochs);
  }
  int decays = 0;
  for (int d : config.decay_epochs) {
    if (d <= epoch) ++decays;
  }
  return config.base_lr * std::pow(config.decay_factor, decays);
}

}  // namespace ftwa
