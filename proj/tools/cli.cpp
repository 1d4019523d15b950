#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ftwa/checkpoint.hpp"
#include "ftwa/errors.hpp"
#include "ftwa/gradcheck.hpp"
#include "ftwa/trainer.hpp"
#include "json.hpp"

namespace ftwa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationSummary> AblationReport::summary() const {
  std::vector<AblationSummary> rows;
  for (Variant v : all_variants()) {
    std::vector<const AblationCell*> mine;
    for (const auto& c : cells) {
      if (c.variant == v) mine.push_back(&c);
    }
    if (mine.empty()) continue;
    AblationSummary s;
    s.variant = v;
    s.runs = static_cast<int>(mine.size());
    auto stats = [&](auto field, double& mean, double& sd) {
      mean = 0;
      for (const auto* c : mine) mean += field(*c);
      mean /= s.runs;
      sd = 0;
      if (s.runs > 1) {
        for (const auto* c : mine) sd += (field(*c) - mean) * (field(*c) - mean);
        sd = std::sqrt(sd / (s.runs - 1));
      }
    };
    stats([](const AblationCell& c) { return c.rank1; }, s.rank1_mean, s.rank1_std);
    stats([](const AblationCell& c) { return c.rank5; }, s.rank5_mean, s.rank5_std);
    rows.push_back(s);
  }
  return rows;
}

std::optional<AblationSummary> AblationReport::find(Variant v) const {
  for (const auto& s : summary()) {
    if (s.variant == v) return s;
  }
  return std::nullopt;
}

namespace {

std::string percent_cell(double mean, double sd, int runs) {
  char buf[64];
  if (runs > 1) {
    std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100 * mean, 100 * sd);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", 100 * mean);
  }
  return buf;
}

}  // namespace

std::string AblationReport::markdown() const {
  std::string out = "| Model | Rank-1 (%) | Rank-5 (%) | Runs |\n|---|---|---|---|\n";
  for (const auto& s : summary()) {
    out += "| " + display_name(s.variant) + " | " + percent_cell(s.rank1_mean, s.rank1_std, s.runs) + " | " +
           percent_cell(s.rank5_mean, s.rank5_std, s.runs) + " | " + std::to_string(s.runs) + " |\n";
  }
  return out;
}

std::string AblationReport::csv() const {
  std::string out = "model,rank1_mean,rank1_std,rank5_mean,rank5_std,runs\n";
  char buf[256];
  for (const auto& s : summary()) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%d\n", display_name(s.variant).c_str(), s.rank1_mean,
                  s.rank1_std, s.rank5_mean, s.rank5_std, s.runs);
    out += buf;
  }
  return out;
}

AblationReport run_ablation(const TrainConfig& base, const AblationOptions& options) {
  base.validate();
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(base.corpus), base.mlr_config());
  AblationReport report;
  for (Variant v : options.variants) {
    for (std::uint64_t seed : options.seeds) {
      TrainConfig config = base;
      config.variant = v;
      config.seed = seed;
      AblationCell cell;
      cell.variant = v;
      cell.seed = seed;
      TrainOptions train;
      if (!options.out_dir.empty()) {
        cell.run_dir = options.out_dir / (to_string(v) + "-seed" + std::to_string(seed));
        fs::create_directories(cell.run_dir);
        train.run_dir = cell.run_dir;
      }
      Trainer<float> trainer(config, split);
      cell.train_seconds = trainer.run(train).seconds;
      const EvaluationResult result = evaluate_split(trainer.model(), split, options.eval, options.cmc);
      cell.rank1 = result.cmc.at(1);
      cell.rank5 = result.cmc.at(5);
      if (!cell.run_dir.empty()) {
        write_run_manifest(cell.run_dir, config,
                           {{"checkpoint", "model.ckpt"}, {"metrics", "metrics.csv"}});
      }
      report.cells.push_back(cell);
      if (options.on_run) options.on_run(cell);
    }
  }
  return report;
}

namespace {

// ---------------------------------------------------------------------------
// Shared flag handling

struct ConfigFlags {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> overrides;
  std::string variant;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;

  void attach(CLI::App* app, bool with_variant) {
    app->add_option("--preset", preset, "Base preset: desk or paper")->capture_default_str();
    app->add_option("--config", config_file, "Key-value config file applied over the preset");
    app->add_option("--set", overrides, "key=value override, applied last (repeatable)");
    if (with_variant) app->add_option("--variant", variant, "baseline, ftwa_b, ftwa_r or ftwa");
    app->add_option("--seed", seed, "Training seed");
    app->add_flag("--deterministic", deterministic, "Deterministic mode, recorded in the run config");
  }

  // Precedence: preset < config file < --set < dedicated flags.
  TrainConfig resolve() const {
    TrainConfig c = TrainConfig::preset(preset);
    if (!config_file.empty()) c.apply(KeyValueDocument::load(config_file));
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      c.apply(KeyValueDocument::parse(kv.substr(0, eq) + " = " + kv.substr(eq + 1)));
    }
    if (!variant.empty()) c.variant = parse_variant(variant);
    if (seed) c.seed = *seed;
    if (deterministic) c.deterministic = true;
    c.validate();
    return c;
  }
};

bool parse_fusion(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw ConfigError("--fusion expects on or off, got '" + s + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

MlrSplit split_for(const TrainConfig& config, const std::string& manifest) {
  if (!manifest.empty()) return load_split_manifest(manifest).split;
  return build_mlr_split(generate_synthetic_corpus(config.corpus), config.mlr_config());
}

// ---------------------------------------------------------------------------
// prepare-mlr

struct PrepareArgs {
  bool synthetic = false;
  std::string root;
  int ids = 20;
  int cameras = 2;
  int images = 4;
  std::uint64_t seed = 7;
  int corpus_height = 64, corpus_width = 32;
  std::vector<int> lr_cams{1};
  std::vector<int> rates{2, 3, 4};
  int height = 64, width = 32;
  std::uint64_t split_seed = 0;
  double test_fraction = 0.5;
  std::string out = "split.json";
  bool force = false;
};

int cmd_prepare_mlr(const PrepareArgs& a) {
  if (a.synthetic == !a.root.empty()) throw ConfigError("pass exactly one of --synthetic or --root");
  CorpusSource source;
  std::vector<ImageRecord> records;
  if (a.synthetic) {
    source.kind = CorpusSource::Kind::kSynthetic;
    source.synthetic = {a.ids, a.cameras, a.images, a.seed, {a.corpus_height, a.corpus_width}};
    records = generate_synthetic_corpus(source.synthetic);
  } else {
    source.kind = CorpusSource::Kind::kDirectory;
    source.root = fs::absolute(a.root).string();
    IngestReport ingest = ingest_directory(a.root);
    for (const auto& r : ingest.rejected) std::cerr << "skipped " << r.path << ": " << r.reason << '\n';
    records = std::move(ingest.records);
  }
  MLRConfig mlr;
  mlr.rate_set = {a.rates.begin(), a.rates.end()};
  mlr.lr_camera_ids = {a.lr_cams.begin(), a.lr_cams.end()};
  mlr.canonical_size = {a.height, a.width};
  mlr.rng_seed = a.split_seed;
  mlr.test_fraction = a.test_fraction;
  const MlrSplit split = build_mlr_split(records, mlr);
  if (fs::exists(a.out) && !a.force) {
    throw IoError(a.out + " already exists; pass --force to overwrite");
  }
  write_split_manifest(a.out, split, source, mlr);
  std::cout << "wrote " << a.out << ": " << split.train_identities.size() << " train identities, "
            << split.test_identities.size() << " test identities (" << split.excluded_identities
            << " excluded), " << split.train.size() << " train / " << split.query.size() << " query / "
            << split.gallery.size() << " gallery images\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  ConfigFlags config;
  std::string split;
  std::string run_dir;
  bool force = false;
  long max_steps = -1;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const TrainConfig config = a.config.resolve();
  const MlrSplit split = split_for(config, a.split);
  const fs::path dir = a.run_dir.empty() ? default_run_dir(config) : fs::path(a.run_dir);
  prepare_run_dir(dir, a.force);
  write_text(dir / "config.toml", config.to_text());
  if (a.split.empty()) {
    CorpusSource source;
    source.synthetic = config.corpus;
    write_split_manifest(dir / "split.json", split, source, config.mlr_config());
  } else {
    fs::copy_file(a.split, dir / "split.json", fs::copy_options::overwrite_existing);
  }

  Trainer<float> trainer(config, split);
  TrainOptions options;
  options.run_dir = dir;
  options.max_steps = a.max_steps;
  int last_epoch = -1;
  MetricsRow last;
  options.on_step = [&](const MetricsRow& r) {
    if (!a.quiet && r.epoch != last_epoch && last_epoch >= 0) {
      std::printf("epoch %3d  lr %.6f  loss %.4f (cls %.4f tri %.4f raft %.4f)\n", last.epoch, last.lr,
                  last.loss_total, last.loss_cls, last.loss_tri, last.loss_raft);
      std::fflush(stdout);
    }
    last_epoch = r.epoch;
    last = r;
  };
  const TrainResult result = trainer.run(options);
  if (!a.quiet && last_epoch >= 0) {
    std::printf("epoch %3d  lr %.6f  loss %.4f (cls %.4f tri %.4f raft %.4f)\n", last.epoch, last.lr,
                last.loss_total, last.loss_cls, last.loss_tri, last.loss_raft);
  }
  write_run_manifest(dir, config,
                     {{"checkpoint", "model.ckpt"},
                      {"metrics", "metrics.csv"},
                      {"config", "config.toml"},
                      {"split", "split.json"}});
  std::printf("trained %s in %.1f s\nrun directory: %s\n", display_name(config.variant).c_str(), result.seconds,
              dir.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string run_dir;
  std::string checkpoint;
  std::string split;
  std::string fusion = "on";
  int trials = 10;
  std::uint64_t seed = 0;
  std::string out;
  std::string dump_distances;
  bool force = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  if (a.run_dir.empty() == a.checkpoint.empty()) throw ConfigError("pass exactly one of --run-dir or --checkpoint");
  const fs::path ckpt = a.checkpoint.empty() ? fs::path(a.run_dir) / "model.ckpt" : fs::path(a.checkpoint);
  if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt.string());
  std::string split_path = a.split;
  if (split_path.empty() && !a.run_dir.empty() && fs::exists(fs::path(a.run_dir) / "split.json")) {
    split_path = (fs::path(a.run_dir) / "split.json").string();
  }
  const fs::path out = !a.out.empty()        ? fs::path(a.out)
                       : !a.run_dir.empty() ? fs::path(a.run_dir) / "eval.json"
                                            : fs::path();
  if (!out.empty() && fs::exists(out) && !a.force) {
    throw IoError(out.string() + " already exists; pass --force to overwrite");
  }

  LoadedModel<float> loaded = load_model<float>(ckpt);
  const MlrSplit split = split_for(loaded.config, split_path);
  EvalOptions eval;
  eval.fusion = parse_fusion(a.fusion);
  CmcOptions cmc;
  cmc.trials = a.trials;
  cmc.seed = a.seed;
  const EvaluationResult result = evaluate_split(*loaded.model, split, eval, cmc);

  json j{{"rank1", result.cmc.at(1)},      {"rank5", result.cmc.at(5)},
         {"rank10", result.cmc.at(10)},    {"rank20", result.cmc.at(20)},
         {"trials", result.cmc.trials},    {"seed", a.seed},
         {"variant", to_string(loaded.config.variant)}, {"checkpoint_hash", loaded.digest},
         {"fusion", a.fusion}};
  if (!a.dump_distances.empty()) {
    std::ostringstream d;
    d << "query_id";
    for (int g : result.gallery_labels) d << ",g" << g;
    d << '\n';
    const std::size_t cols = result.gallery_labels.size();
    char buf[32];
    for (std::size_t q = 0; q < result.query_labels.size(); ++q) {
      d << result.query_labels[q];
      for (std::size_t g = 0; g < cols; ++g) {
        std::snprintf(buf, sizeof buf, ",%.9g", result.distances[q * cols + g]);
        d << buf;
      }
      d << '\n';
    }
    write_text(a.dump_distances, d.str());
    j["distances"] = a.dump_distances;
  }
  const std::string text = j.dump(2) + "\n";
  if (!out.empty()) write_text(out, text);
  std::cout << text;
  return kOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
  ConfigFlags config;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_dir;
  std::string fusion = "on";
  bool force = false;
};

int cmd_ablate(const AblateArgs& a) {
  const TrainConfig base = a.config.resolve();
  AblationOptions options;
  if (a.variants.empty()) {
    options.variants = all_variants();
  } else {
    for (const auto& v : a.variants) options.variants.push_back(parse_variant(v));
  }
  options.seeds = a.seeds;
  if (options.seeds.empty()) throw ConfigError("--seeds needs at least one value");
  options.eval.fusion = parse_fusion(a.fusion);
  options.out_dir = a.out_dir.empty() ? runs_root() / ("ablate-" + default_run_dir(base).filename().string())
                                      : fs::path(a.out_dir);
  prepare_run_dir(options.out_dir, a.force);
  options.on_run = [](const AblationCell& c) {
    std::printf("%-8s seed %llu  rank-1 %.3f  rank-5 %.3f  (%.0f s)\n", display_name(c.variant).c_str(),
                static_cast<unsigned long long>(c.seed), c.rank1, c.rank5, c.train_seconds);
    std::fflush(stdout);
  };
  const AblationReport report = run_ablation(base, options);
  write_text(options.out_dir / "ablation.md", report.markdown());
  write_text(options.out_dir / "ablation.csv", report.csv());
  std::cout << '\n' << report.markdown() << "\nreport: " << (options.out_dir / "ablation.md").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::vector<std::string> losses;
  double perturb = 0;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  GradcheckOptions options;
  options.losses = a.losses;
  options.perturb = a.perturb;
  options.tolerance = a.tolerance;
  options.seed = a.seed;
  const GradcheckReport report = run_gradcheck(options);
  for (const auto& e : report.entries) {
    std::printf("%-8s %s  max rel error %.3e over %zu entries (worst %s)\n", e.loss.c_str(),
                e.pass ? "PASS" : "FAIL", e.max_rel_error, e.checked, e.worst.c_str());
  }
  std::printf("%s\n", report.pass() ? "PASS" : "FAIL");
  return report.pass() ? kOk : kFailed;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Cross-resolution person re-identification: data preparation, training and evaluation"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare-mlr", "Build a multi-resolution split manifest");
  p->add_flag("--synthetic", prep.synthetic, "Use the procedural corpus");
  p->add_option("--root", prep.root, "Directory of <person>_<camera>_<index>.<png|jpg> images");
  p->add_option("--ids", prep.ids, "Synthetic identities")->capture_default_str();
  p->add_option("--cameras", prep.cameras, "Synthetic cameras")->capture_default_str();
  p->add_option("--images-per-id", prep.images, "Synthetic images per identity and camera")->capture_default_str();
  p->add_option("--seed", prep.seed, "Synthetic corpus seed")->capture_default_str();
  p->add_option("--corpus-height", prep.corpus_height, "Synthetic image height")->capture_default_str();
  p->add_option("--corpus-width", prep.corpus_width, "Synthetic image width")->capture_default_str();
  p->add_option("--lr-cams", prep.lr_cams, "Cameras whose images are down-sampled")->capture_default_str();
  p->add_option("--rates", prep.rates, "Down-sampling rates")->capture_default_str();
  p->add_option("--height", prep.height, "Canonical network input height")->capture_default_str();
  p->add_option("--width", prep.width, "Canonical network input width")->capture_default_str();
  p->add_option("--split-seed", prep.split_seed, "Seed for identity split and rate draws")->capture_default_str();
  p->add_option("--test-fraction", prep.test_fraction, "Held-out identity fraction")->capture_default_str();
  p->add_option("--out", prep.out, "Manifest path")->capture_default_str();
  p->add_flag("--force", prep.force, "Overwrite an existing manifest");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one variant and write a run directory");
  train.config.attach(t, true);
  t->add_option("--split", train.split, "Split manifest from prepare-mlr (default: synthetic corpus of the config)");
  t->add_option("--run-dir", train.run_dir, "Run directory (default: $FTWA_RUNS_ROOT/<hash>-<time>)");
  t->add_flag("--force", train.force, "Overwrite an existing run directory");
  t->add_option("--max-steps", train.max_steps, "Stop early after this many steps");
  t->add_flag("--quiet", train.quiet, "No per-epoch progress");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Single-shot CMC of a trained checkpoint");
  e->add_option("--run-dir", ev.run_dir, "Run directory written by train");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  e->add_option("--split", ev.split, "Split manifest (default: the run's split.json)");
  e->add_option("--fusion", ev.fusion, "Fuse auxiliary vectors: on or off")->capture_default_str();
  e->add_option("--trials", ev.trials, "Gallery sampling trials")->capture_default_str();
  e->add_option("--seed", ev.seed, "Gallery sampling seed")->capture_default_str();
  e->add_option("--out", ev.out, "JSON report path (default: <run-dir>/eval.json)");
  e->add_option("--dump-distances", ev.dump_distances, "Write the query x gallery distance matrix as CSV");
  e->add_flag("--force", ev.force, "Overwrite an existing report");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and evaluate the variant ladder over several seeds");
  ab.config.attach(a, false);
  a->add_option("--variants", ab.variants, "Subset of variants (default: all four)");
  a->add_option("--seeds", ab.seeds, "Training seeds")->capture_default_str();
  a->add_option("--out-dir", ab.out_dir, "Output directory (default: $FTWA_RUNS_ROOT/ablate-<hash>-<time>)");
  a->add_option("--fusion", ab.fusion, "Fuse auxiliary vectors: on or off")->capture_default_str();
  a->add_flag("--force", ab.force, "Overwrite an existing output directory");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradients");
  g->add_option("--loss", gc.losses, "raft, cls, tri, swa_cls, swa_tri or total (repeatable; default all)");
  g->add_option("--perturb", gc.perturb, "Offset added to analytic gradients (negative control)");
  g->add_option("--tolerance", gc.tolerance, "Relative error bound")->capture_default_str();
  g->add_option("--seed", gc.seed, "Toy problem seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*p) return cmd_prepare_mlr(prep);
    if (*t) return cmd_train(train);
    if (*e) return cmd_evaluate(ev);
    if (*a) return cmd_ablate(ab);
    if (*g) return cmd_gradcheck(gc);
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kIoError;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kConfigError;
  } catch (const DivergenceError& err) {
    std::cerr << "diverged: " << err.what() << '\n';
    return kDiverged;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kIoError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace ftwa::cli
