#include <algorithm>
#include <fstream>
#include <map>
#include <regex>

#include <opencv2/imgcodecs.hpp>

#include "ftwa/dataset.hpp"
#include "ftwa/errors.hpp"
#include "json.hpp"

namespace ftwa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ImageRecord load_image_file(const fs::path& path, int person, int camera) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  Image img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(y, x, 0) = row[x][2] / 255.0f;
      img.at(y, x, 1) = row[x][1] / 255.0f;
      img.at(y, x, 2) = row[x][0] / 255.0f;
    }
  }
  ImageRecord r;
  r.image = std::move(img);
  r.person_id = person;
  r.camera_id = camera;
  r.tag = ResolutionTag::kRealHr;
  r.source_path = path.string();
  return r;
}

}  // namespace

IngestReport ingest_directory(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  static const std::regex pattern(R"(^(\d+)_(\d+)_(\d+)\.(png|jpg|jpeg)$)", std::regex::icase);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  IngestReport report;
  for (const auto& file : files) {
    const std::string name = file.filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, pattern)) {
      report.rejected.push_back({file.string(), "name does not match <person>_<camera>_<index>.<png|jpg|jpeg>"});
      continue;
    }
    try {
      report.records.push_back(load_image_file(file, std::stoi(m[1]), std::stoi(m[2])));
    } catch (const std::exception& e) {
      report.rejected.push_back({file.string(), e.what()});
    }
  }
  return report;
}

namespace {

json record_json(const ImageRecord& r, const char* set) {
  json j{{"set", set},
         {"path", r.source_path.value_or("")},
         {"person_id", r.person_id},
         {"camera_id", r.camera_id},
         {"tag", to_string(r.tag)}};
  j["rate"] = r.rate ? json(*r.rate) : json(nullptr);
  return j;
}

}  // namespace

void write_split_manifest(const fs::path& path, const MlrSplit& split, const CorpusSource& source,
                          const MLRConfig& config) {
  json j;
  j["format"] = "ftwa-split/1";
  if (source.kind == CorpusSource::Kind::kSynthetic) {
    const auto& s = source.synthetic;
    j["source"] = {{"kind", "synthetic"},
                   {"identities", s.identities},
                   {"cameras", s.cameras},
                   {"images_per_id_per_camera", s.images_per_id_per_camera},
                   {"seed", s.seed},
                   {"height", s.size.height},
                   {"width", s.size.width}};
  } else {
    j["source"] = {{"kind", "directory"}, {"root", source.root}};
  }
  j["config"] = {{"rates", std::vector<int>(config.rate_set.begin(), config.rate_set.end())},
                 {"lr_cameras", std::vector<int>(config.lr_camera_ids.begin(), config.lr_camera_ids.end())},
                 {"canonical_height", config.canonical_size.height},
                 {"canonical_width", config.canonical_size.width},
                 {"seed", config.rng_seed},
                 {"test_fraction", config.test_fraction},
                 {"degrade_lr_cameras", config.degrade_lr_cameras}};
  j["train_identities"] = split.train_identities;
  j["test_identities"] = split.test_identities;
  j["excluded_identities"] = split.excluded_identities;
  json records = json::array();
  for (const auto& r : split.train) records.push_back(record_json(r, "train"));
  for (const auto& r : split.query) records.push_back(record_json(r, "query"));
  for (const auto& r : split.gallery) records.push_back(record_json(r, "gallery"));
  j["records"] = std::move(records);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(1) << '\n';
}

LoadedSplit load_split_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "ftwa-split/1") {
    throw IoError("unsupported manifest format in " + path.string());
  }

  LoadedSplit loaded;
  const auto& src = j.at("source");
  std::map<std::string, ImageRecord> originals;
  if (src.at("kind") == "synthetic") {
    auto& s = loaded.source.synthetic;
    loaded.source.kind = CorpusSource::Kind::kSynthetic;
    s.identities = src.at("identities");
    s.cameras = src.at("cameras");
    s.images_per_id_per_camera = src.at("images_per_id_per_camera");
    s.seed = src.at("seed");
    s.size = {src.at("height"), src.at("width")};
    for (auto& r : generate_synthetic_corpus(s)) originals.emplace(*r.source_path, std::move(r));
  } else {
    loaded.source.kind = CorpusSource::Kind::kDirectory;
    loaded.source.root = src.at("root");
  }

  const auto& cfg = j.at("config");
  loaded.config.rate_set = cfg.at("rates").get<std::set<int>>();
  loaded.config.lr_camera_ids = cfg.at("lr_cameras").get<std::set<int>>();
  loaded.config.canonical_size = {cfg.at("canonical_height"), cfg.at("canonical_width")};
  loaded.config.rng_seed = cfg.at("seed");
  loaded.config.test_fraction = cfg.at("test_fraction");
  loaded.config.degrade_lr_cameras = cfg.at("degrade_lr_cameras");

  MlrSplit& split = loaded.split;
  split.train_identities = j.at("train_identities").get<std::vector<int>>();
  split.test_identities = j.at("test_identities").get<std::vector<int>>();
  split.excluded_identities = j.at("excluded_identities");
  for (const auto& rj : j.at("records")) {
    const std::string p = rj.at("path");
    ImageRecord r;
    if (loaded.source.kind == CorpusSource::Kind::kSynthetic) {
      auto it = originals.find(p);
      if (it == originals.end()) throw IoError("manifest references unknown record " + p);
      r = it->second;
    } else {
      r = load_image_file(p, rj.at("person_id"), rj.at("camera_id"));
    }
    r.person_id = rj.at("person_id");
    r.camera_id = rj.at("camera_id");
    const ResolutionTag tag = parse_resolution_tag(rj.at("tag"));
    if (tag == ResolutionTag::kSynthLr) {
      r = downsample(r, rj.at("rate").get<int>());
    } else {
      r.tag = tag;
    }
    const std::string set = rj.at("set");
    if (set == "train") {
      split.train.push_back(std::move(r));
    } else if (set == "query") {
      split.query.push_back(std::move(r));
    } else if (set == "gallery") {
      split.gallery.push_back(std::move(r));
    } else {
      throw IoError("unknown record set '" + set + "' in manifest");
    }
  }
  return loaded;
}

}  // namespace ftwa
