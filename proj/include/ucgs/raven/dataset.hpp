#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ucgs/raven/generator.hpp"
#include "ucgs/util/digest.hpp"
#include "ucgs/util/png.hpp"

namespace ucgs::raven {

namespace fs = std::filesystem;

inline constexpr const char* kDatasetVersion = "ucgs-dataset/1";
inline constexpr const char* kManifestFile = "manifest.jsonl";
inline constexpr const char* kConfigFile = "config";
inline constexpr const char* kChecksumFile = "checksums";

struct DatasetHeader {
  std::string version = kDatasetVersion;
  TaskKind task = TaskKind::kRpm;
  std::string split;
  RenderConfig render;
  std::uint64_t seed = 0;
  std::string config_hash;

  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<ProblemRecord> records;

  bool operator==(const Dataset&) const = default;
};

/// Images of one dataset, as stored on disk.
class ImageTable {
 public:
  const Image& image(const Scene& s) const {
    const auto& slot = by_scene_.at(scene_index(s));
    if (!slot) throw ArgumentError("scene " + describe(s) + " has no stored image");
    return *slot;
  }
  bool contains(const Scene& s) const { return by_scene_.at(scene_index(s)).has_value(); }
  void put(const Scene& s, Image img) { by_scene_.at(scene_index(s)) = std::move(img); }
  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& s : by_scene_) n += s.has_value() ? 1 : 0;
    return n;
  }

 private:
  std::vector<std::optional<Image>> by_scene_ = std::vector<std::optional<Image>>(scene_count());
};

struct LoadedDataset {
  Dataset dataset;
  ImageTable images;
};

/// Image files are content addressed by scene, so each distinct scene is
/// stored once per dataset.
inline std::string image_path(const Scene& s) { return "images/" + describe(s) + ".png"; }

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson scene_json(const Scene& s) {
  return ojson{{"count", s.count},
               {"shape", to_string(s.shape)},
               {"size", s.size},
               {"shade", s.shade},
               {"layout", to_string(s.layout)},
               {"image", image_path(s)}};
}

inline ojson scenes_json(const std::vector<Scene>& v) {
  ojson a = ojson::array();
  for (const Scene& s : v) a.push_back(scene_json(s));
  return a;
}

inline ojson record_json(const ProblemRecord& r) {
  ojson j;
  j["id"] = r.id;
  j["task"] = to_string(r.task);
  j["seed"] = r.seed;
  if (r.source_id) j["source_id"] = *r.source_id;
  ojson rules;
  for (Attribute a : kAllAttributes) rules[to_string(a)] = to_string(r.rules[a]);
  j["rules"] = rules;
  switch (r.task) {
    case TaskKind::kRpm:
    case TaskKind::kVap:
      j["panel"] = scenes_json(r.panel);
      j["candidates"] = scenes_json(r.candidates);
      j["answer_index"] = r.answer;
      break;
    case TaskKind::kO3:
      j["panel"] = scenes_json(r.panel);
      j["odd_index"] = r.answer;
      break;
    case TaskKind::kSvrt: {
      j["left"] = scenes_json(r.panel);
      j["right"] = scenes_json(r.right);
      ojson q = ojson::array();
      for (const auto& [s, side] : r.queries) {
        ojson e = scene_json(s);
        e["label"] = to_string(side);
        q.push_back(e);
      }
      j["queries"] = q;
      break;
    }
  }
  return j;
}

[[noreturn]] inline void malformed(const fs::path& file, const std::string& what) {
  throw LoadError(LoadErrorKind::kMalformed, file.string(), what);
}

struct SceneReader {
  const fs::path& dir;
  const DatasetHeader& header;
  ImageTable& table;
  std::map<std::string, std::string> image_of;  // scene description -> path read

  Scene read(const nlohmann::json& j) {
    const fs::path manifest = dir / kManifestFile;
    Scene s;
    try {
      s.count = j.at("count").get<int>();
      s.shape = shape_from_string(j.at("shape").get<std::string>());
      s.size = j.at("size").get<int>();
      s.shade = j.at("shade").get<int>();
      s.layout = layout_from_string(j.at("layout").get<std::string>());
    } catch (const std::exception& e) {
      malformed(manifest, e.what());
    }
    if (!is_valid(s)) malformed(manifest, "invalid scene " + describe(s));
    const std::string rel = j.at("image").get<std::string>();
    const auto [it, fresh] = image_of.emplace(describe(s), rel);
    if (!fresh) {
      if (it->second != rel) malformed(manifest, "scene " + describe(s) + " maps to two image files");
      return s;
    }
    const fs::path file = dir / rel;
    png::Gray16 g;
    try {
      g = png::decode(read_file_bytes(file), file.string());
    } catch (const LoadError&) {
      throw;
    } catch (const std::exception& e) {
      malformed(file, e.what());
    }
    if (g.height != header.render.height || g.width != header.render.width) {
      malformed(file, "image size differs from dataset config");
    }
    table.put(s, Image::from_gray16(g));
    return s;
  }

  std::vector<Scene> read_all(const nlohmann::json& a) {
    std::vector<Scene> out;
    for (const auto& j : a) out.push_back(read(j));
    return out;
  }
};

inline std::string header_text(const DatasetHeader& h, std::size_t count) {
  std::ostringstream os;
  os << "version=" << h.version << "\n"
     << "task=" << to_string(h.task) << "\n"
     << "split=" << h.split << "\n"
     << "height=" << h.render.height << "\n"
     << "width=" << h.render.width << "\n"
     << "seed=" << h.seed << "\n"
     << "count=" << count << "\n"
     << "config_hash=" << h.config_hash << "\n";
  return os.str();
}

inline std::map<std::string, std::string> parse_flat(const std::string& text, const fs::path& file) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) malformed(file, "line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace detail

/// Writes manifest.jsonl, one PNG per distinct scene, the config snapshot and
/// the checksum list. Existing files of the same name are overwritten.
template <ImageSource Source>
void write_dataset(const Dataset& ds, const fs::path& dir, const Source& images) {
  fs::create_directories(dir / "images");
  std::set<std::string> written;
  std::vector<std::string> files;
  const auto store = [&](const Scene& s) {
    const std::string rel = image_path(s);
    if (!written.insert(rel).second) return;
    const Image& img = images.image(s);
    if (img.height() != ds.header.render.height || img.width() != ds.header.render.width) {
      throw ArgumentError("image for " + describe(s) + " does not match the dataset size");
    }
    write_file_bytes(dir / rel, png::encode(img.to_gray16()));
  };
  std::string manifest;
  for (const ProblemRecord& r : ds.records) {
    if (r.task != ds.header.task) throw ArgumentError("record task differs from dataset task");
    for (const Scene& s : r.panel) store(s);
    for (const Scene& s : r.candidates) store(s);
    for (const Scene& s : r.right) store(s);
    for (const auto& q : r.queries) store(q.first);
    manifest += detail::record_json(r).dump() + "\n";
  }
  write_file_bytes(dir / kManifestFile, manifest);
  write_file_bytes(dir / kConfigFile, detail::header_text(ds.header, ds.records.size()));

  std::string sums;
  const auto add_sum = [&](const std::string& rel) { sums += sha256_file(dir / rel) + "  " + rel + "\n"; };
  add_sum(kConfigFile);
  add_sum(kManifestFile);
  for (const std::string& rel : written) add_sum(rel);
  write_file_bytes(dir / kChecksumFile, sums);
}

inline DatasetHeader read_header(const fs::path& dir) {
  const fs::path file = dir / kConfigFile;
  const auto kv = detail::parse_flat(read_file_bytes(file), file);
  const auto get = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) detail::malformed(file, std::string("missing key ") + key);
    return it->second;
  };
  DatasetHeader h;
  h.version = get("version");
  if (h.version != kDatasetVersion) {
    throw LoadError(LoadErrorKind::kVersionMismatch, file.string(),
                    "found '" + h.version + "', expected '" + kDatasetVersion + "'");
  }
  try {
    h.task = task_from_string(get("task"));
    h.split = get("split");
    h.render.height = std::stoi(get("height"));
    h.render.width = std::stoi(get("width"));
    h.seed = std::stoull(get("seed"));
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    detail::malformed(file, e.what());
  }
  h.config_hash = get("config_hash");
  return h;
}

/// Checks every file listed in the checksum file. Throws LoadError naming the
/// first missing or corrupted file.
inline void verify_checksums(const fs::path& dir) {
  const fs::path list = dir / kChecksumFile;
  std::istringstream in(read_file_bytes(list));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto sep = line.find("  ");
    if (sep == std::string::npos) detail::malformed(list, "bad line: " + line);
    const std::string want = line.substr(0, sep);
    const fs::path file = dir / line.substr(sep + 2);
    if (!fs::exists(file)) throw LoadError(LoadErrorKind::kMissingFile, file.string(), "listed in checksums");
    const std::string got = sha256_file(file);
    if (got != want) throw LoadError(LoadErrorKind::kChecksumFailure, file.string(), "sha256 " + got);
  }
}

inline LoadedDataset read_dataset(const fs::path& dir) {
  LoadedDataset out;
  out.dataset.header = read_header(dir);
  verify_checksums(dir);
  const DatasetHeader& h = out.dataset.header;
  const fs::path manifest = dir / kManifestFile;
  detail::SceneReader reader{dir, h, out.images, {}};
  std::istringstream in(read_file_bytes(manifest));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ProblemRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.id = j.at("id").get<std::uint64_t>();
      r.task = task_from_string(j.at("task").get<std::string>());
      r.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("source_id")) r.source_id = j.at("source_id").get<std::uint64_t>();
      for (Attribute a : kAllAttributes) r.rules[a] = rule_from_string(j.at("rules").at(to_string(a)).get<std::string>());
      switch (r.task) {
        case TaskKind::kRpm:
        case TaskKind::kVap:
          r.panel = reader.read_all(j.at("panel"));
          r.candidates = reader.read_all(j.at("candidates"));
          r.answer = j.at("answer_index").get<std::size_t>();
          if (r.answer >= r.candidates.size()) detail::malformed(manifest, "answer_index out of range");
          break;
        case TaskKind::kO3:
          r.panel = reader.read_all(j.at("panel"));
          r.answer = j.at("odd_index").get<std::size_t>();
          if (r.answer >= r.panel.size()) detail::malformed(manifest, "odd_index out of range");
          break;
        case TaskKind::kSvrt:
          r.panel = reader.read_all(j.at("left"));
          r.right = reader.read_all(j.at("right"));
          for (const auto& q : j.at("queries")) {
            const std::string label = q.at("label").get<std::string>();
            if (label != "LEFT" && label != "RIGHT") detail::malformed(manifest, "bad label " + label);
            r.queries.emplace_back(reader.read(q), label == "LEFT" ? Side::kLeft : Side::kRight);
          }
          break;
      }
    } catch (const LoadError&) {
      throw;
    } catch (const std::exception& e) {
      detail::malformed(manifest, "line " + std::to_string(lineno) + ": " + e.what());
    }
    if (r.task != h.task) detail::malformed(manifest, "line " + std::to_string(lineno) + ": task differs from config");
    out.dataset.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace ucgs::raven
