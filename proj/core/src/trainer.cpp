#include "ftwa/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include "ftwa/errors.hpp"
#include "json.hpp"

namespace ftwa {

namespace fs = std::filesystem;

template <typename T>
Adam<T>::Adam(std::vector<NamedParameter<T>> parameters, double weight_decay, double beta1,
              double beta2, double eps)
    : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : parameters) {
    const std::size_t n = p.var.value().size();
    slots_.push_back({std::move(p), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0});
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& s : slots_) s.param.var.zero_grad();
}

template <typename T>
void Adam<T>::scale_lr(const std::string& prefix, double scale) {
  for (auto& s : slots_) {
    if (s.param.name.starts_with(prefix)) s.lr_scale = scale;
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++steps_;
  for (auto& s : slots_) {
    Var<T>& var = s.param.var;
    if (!var.has_grad()) continue;
    ++s.t;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    Tensor<T>& value = var.mutable_value();
    const Tensor<T>& grad = var.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]) + weight_decay_ * static_cast<double>(value[i]);
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
      const double update = lr * s.lr_scale * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
      value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
    }
  }
}

std::string metrics_csv_header() {
  return "step,epoch,lr,loss_total,loss_cls,loss_tri,loss_raft,w_hr,w_lr,w_synth_hr,w_synth_lr";
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%ld,%d,%.9f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.step, r.epoch,
                r.lr, r.loss_total, r.loss_cls, r.loss_tri, r.loss_raft, r.w_hr, r.w_lr, r.w_synth_hr,
                r.w_synth_lr);
  return buf;
}

std::map<int, int> label_index(const std::vector<ImageRecord>& train_set) {
  std::map<int, int> index;
  for (const auto& r : train_set) index.emplace(r.person_id, 0);
  int next = 0;
  for (auto& [id, slot] : index) slot = next++;
  return index;
}

template <typename T>
Trainer<T>::Trainer(const TrainConfig& config, const MlrSplit& split)
    : config_(config), labels_(label_index(split.train)), sampler_(split.train, config.pk_config()) {
  config_.validate();
  for (const auto& [id, slot] : labels_) identities_.push_back(id);
  model_ = std::make_unique<FtwaModel<T>>(ModelConfig::from_train(config_, static_cast<int>(identities_.size())));
  optimizer_ = std::make_unique<Adam<T>>(model_->parameters().parameters, config_.weight_decay);
  optimizer_->scale_lr("swa.w_", config_.evaluator_lr_scale);
  iters_per_epoch_ = config_.iters_per_epoch > 0 ? config_.iters_per_epoch
                                                 : static_cast<int>(sampler_.batches_per_epoch());
}

template <typename T>
long Trainer<T>::total_steps() const {
  return static_cast<long>(config_.epochs) * iters_per_epoch_;
}

template <typename T>
int Trainer<T>::epoch_of(long step_index) const {
  return static_cast<int>(step_index / iters_per_epoch_);
}

template <typename T>
BatchInputs<T> Trainer<T>::batch_inputs(long step_index) const {
  const long epoch = step_index / iters_per_epoch_;
  const long i = step_index % iters_per_epoch_;
  const long per = static_cast<long>(sampler_.batches_per_epoch());
  const long passes = (iters_per_epoch_ + per - 1) / per;
  const TrainingBatch b = sampler_.batch(static_cast<std::size_t>(epoch * passes + i / per),
                                         static_cast<std::size_t>(i % per));
  return make_batch_inputs<T>(b, labels_, config_.input_size, uses_two_streams(config_.variant));
}

template <typename T>
LossBreakdown<T> Trainer<T>::step(const BatchInputs<T>& inputs, double lr) {
  optimizer_->zero_grad();
  LossBreakdown<T> l = model_->losses(inputs, true);
  backward(l.total);
  optimizer_->step(lr);
  return l;
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() {
  return make_checkpoint(model_->parameters(), config_.to_text(), config_.hash(), identities_);
}

template <typename T>
TrainResult Trainer<T>::run(const TrainOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  std::ofstream csv;
  if (!options.run_dir.empty()) {
    fs::create_directories(options.run_dir);
    result.metrics = options.run_dir / "metrics.csv";
    result.checkpoint = options.run_dir / "model.ckpt";
    csv.open(result.metrics, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + result.metrics.string());
    csv << metrics_csv_header() << '\n';
  }
  const long steps = options.max_steps >= 0 ? std::min(options.max_steps, total_steps()) : total_steps();
  for (long s = 0; s < steps; ++s) {
    const int epoch = epoch_of(s);
    const double lr = lr_at(config_, epoch);
    LossBreakdown<T> l;
    try {
      l = step(batch_inputs(s), lr);
    } catch (const DivergenceError&) {
      if (!options.run_dir.empty()) write_checkpoint(options.run_dir / "last_finite.ckpt", checkpoint());
      throw;
    }
    MetricsRow row;
    row.step = s;
    row.epoch = epoch;
    row.lr = lr;
    row.loss_total = l.total.value()[0];
    row.loss_cls = l.cls.value()[0];
    row.loss_tri = l.tri.value()[0];
    row.loss_raft = l.raft.defined() ? static_cast<double>(l.raft.value()[0]) : 0.0;
    row.w_hr = l.w_hr;
    row.w_lr = l.w_lr;
    row.w_synth_hr = l.w_synth_hr;
    row.w_synth_lr = l.w_synth_lr;
    result.history.push_back(row);
    if (csv.is_open()) csv << format_metrics_row(row) << '\n';
    if (options.on_step) options.on_step(row);
  }
  if (!options.run_dir.empty()) {
    csv.close();
    write_checkpoint(result.checkpoint, checkpoint());
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

template <typename T>
LoadedModel<T> load_model(const fs::path& checkpoint_path) {
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  LoadedModel<T> out;
  out.config.apply(KeyValueDocument::parse(ckpt.config_text));
  out.config.validate();
  if (out.config.hash() != ckpt.config_hash) {
    throw CheckpointError("checkpoint config text does not reproduce its recorded hash");
  }
  if (ckpt.identities.size() < 2) throw CheckpointError("checkpoint has no identity vocabulary");
  out.identities = ckpt.identities;
  out.model = std::make_unique<FtwaModel<T>>(
      ModelConfig::from_train(out.config, static_cast<int>(out.identities.size())));
  ParameterSet<T> state = out.model->parameters();
  load_state(state, ckpt, out.config.hash());
  out.digest = file_digest(checkpoint_path);
  return out;
}

fs::path runs_root() {
  if (const char* env = std::getenv("FTWA_RUNS_ROOT"); env && *env) return fs::path(env);
  return fs::path("runs");
}

fs::path default_run_dir(const TrainConfig& config) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  return runs_root() / (hex64(config.hash()).substr(0, 12) + "-" + stamp);
}

void prepare_run_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) {
        throw IoError("run directory " + dir.string() + " already exists; pass --force to overwrite");
      }
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

void write_run_manifest(const fs::path& dir, const TrainConfig& config,
                        const std::map<std::string, std::string>& artifacts) {
  nlohmann::json j;
  j["config"] = config.to_text();
  j["config_hash"] = hex64(config.hash());
  j["seed"] = config.seed;
  j["variant"] = to_string(config.variant);
  j["content_hash"] = hex64(fnv1a(std::string("ftwa-0.1.0\n") + config.to_text()));
  j["artifacts"] = artifacts;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

template class Adam<float>;
template class Adam<double>;
template class Trainer<float>;
template class Trainer<double>;
template LoadedModel<float> load_model<float>(const fs::path&);
template LoadedModel<double> load_model<double>(const fs::path&);

}  // namespace ftwa
