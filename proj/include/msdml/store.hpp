#pragma once

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msdml/error.hpp"
#include "msdml/features.hpp"
#include "msdml/io.hpp"

namespace msdml {

struct ManifestRow {
  std::string example_id;
  std::filesystem::path audio_path;  // resolved against the manifest directory
  std::string class_label;
  std::optional<std::string> split;
  std::optional<double> duration_s;
};

struct Manifest {
  std::filesystem::path source;
  std::vector<ManifestRow> rows;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

}  // namespace detail

// Comma-separated manifest with a header row naming at least example_id,
// audio_path and class_label (split and duration_s are optional). Relative
// audio paths are taken relative to the manifest's directory.
inline Manifest read_manifest(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  require<DataError>(static_cast<bool>(std::getline(in, line)), "empty manifest ", path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::map<std::string, std::size_t> col;
  const auto header = detail::split_csv_line(line);
  for (std::size_t i = 0; i < header.size(); ++i) col[detail::trim(header[i])] = i;
  for (const char* need : {"example_id", "audio_path", "class_label"})
    require<DataError>(col.count(need) != 0, "manifest ", path.string(), " lacks column '", need, "'");

  Manifest m;
  m.source = path;
  const auto base = path.parent_path();
  std::set<std::string> ids;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    auto field = [&](const char* name) -> std::string {
      auto it = col.find(name);
      if (it == col.end() || it->second >= f.size()) return {};
      return detail::trim(f[it->second]);
    };
    ManifestRow r;
    r.example_id = field("example_id");
    r.class_label = field("class_label");
    const std::string audio = field("audio_path");
    const std::string where = path.string() + ":" + std::to_string(line_no);
    require<DataError>(!r.example_id.empty(), where, ": empty example_id");
    require<DataError>(!r.class_label.empty(), where, ": empty class_label");
    require<DataError>(!audio.empty(), where, ": empty audio_path");
    require<DataError>(ids.insert(r.example_id).second, where, ": duplicate example_id '", r.example_id, "'");
    r.audio_path = std::filesystem::path(audio).is_absolute() ? std::filesystem::path(audio) : base / audio;
    if (auto s = field("split"); !s.empty()) r.split = s;
    if (auto d = field("duration_s"); !d.empty()) {
      try {
        r.duration_s = std::stod(d);
      } catch (const std::exception&) {
        fail<DataError>(where, ": bad duration '", d, "'");
      }
    }
    m.rows.push_back(std::move(r));
  }
  return m;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& os) {
    os << "example_id,audio_path,class_label\n";
    const auto base = path.parent_path();
    for (const auto& r : m.rows) {
      auto rel = r.audio_path.lexically_relative(base);
      os << r.example_id << ',' << (rel.empty() ? r.audio_path : rel).generic_string() << ',' << r.class_label << '\n';
    }
  }, false);
}

struct StoreEntry {
  std::string file;  // relative to the store root
  std::string label;
  std::string split;  // empty when unassigned
  std::string source; // manifest example_id the segment came from
  int mel_bands = 40;
  int frames = 200;
  int channels = kMelChannels;

  std::size_t values() const { return static_cast<std::size_t>(mel_bands) * frames * channels; }
};

struct StoreCheck {
  std::vector<std::string> missing_files;
  std::vector<std::string> size_mismatches;
  std::vector<std::string> bad_shapes;
  std::vector<std::string> non_finite;

  bool ok() const { return missing_files.empty() && size_mismatches.empty() && bad_shapes.empty() && non_finite.empty(); }
};

// Directory of raw little-endian float32 tensors ([mel][frame][channel]) plus
// index.json mapping example ids to files, labels and splits. The index is
// replaced atomically on commit().
class FeatureStore {
 public:
  static constexpr const char* kIndexName = "index.json";

  FeatureStore() = default;

  static FeatureStore open(const std::filesystem::path& root, bool create = false) {
    FeatureStore s;
    s.root_ = root;
    const auto index = root / kIndexName;
    if (!std::filesystem::exists(index)) {
      require<DataError>(create, "no feature store at ", root.string(), " (missing ", kIndexName, ")");
      std::filesystem::create_directories(root / "features");
      return s;
    }
    try {
      const auto j = nlohmann::json::parse(io::read_file(index));
      for (const auto& [id, e] : j.at("examples").items()) {
        StoreEntry entry;
        entry.file = e.at("file").get<std::string>();
        entry.label = e.at("label").get<std::string>();
        entry.split = e.value("split", std::string());
        entry.source = e.value("source", id);
        const auto shape = e.at("shape").get<std::vector<int>>();
        require<DataError>(shape.size() == 3, "index entry '", id, "' has a shape of rank ", shape.size());
        entry.mel_bands = shape[0];
        entry.frames = shape[1];
        entry.channels = shape[2];
        s.entries_.emplace(id, std::move(entry));
      }
    } catch (const nlohmann::json::exception& e) {
      fail<DataError>("corrupt store: malformed index ", index.string(), ": ", e.what());
    }
    return s;
  }

  const std::filesystem::path& root() const { return root_; }
  const std::map<std::string, StoreEntry>& entries() const { return entries_; }
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  std::size_t size() const { return entries_.size(); }

  const StoreEntry& entry(const std::string& id) const {
    auto it = entries_.find(id);
    require<DataError>(it != entries_.end(), "example '", id, "' is not in the store");
    return it->second;
  }

  // Writes the tensor file (atomically) and records it in the in-memory index.
  void put(const MelExample& ex, const std::string& split = {}, const std::string& source = {}) {
    require<DataError>(!ex.example_id.empty(), "example without id");
    require<ShapeError>(ex.tensor.size() == static_cast<std::size_t>(ex.mel_bands) * ex.frames * kMelChannels,
                        "example '", ex.example_id, "' tensor size does not match its shape");
    StoreEntry e;
    auto existing = entries_.find(ex.example_id);
    e.file = existing != entries_.end() ? existing->second.file : unique_file(ex.example_id);
    e.label = ex.label;
    e.split = split;
    e.source = source.empty() ? ex.example_id : source;
    e.mel_bands = ex.mel_bands;
    e.frames = ex.frames;
    io::atomic_write(root_ / e.file, [&](std::ostream& os) {
      os.write(reinterpret_cast<const char*>(ex.tensor.data()), static_cast<std::streamsize>(ex.tensor.size() * 4));
    });
    entries_[ex.example_id] = std::move(e);
  }

  void set_split(const std::string& id, const std::string& split) {
    auto it = entries_.find(id);
    require<DataError>(it != entries_.end(), "example '", id, "' is not in the store");
    it->second.split = split;
  }

  MelExample get(const std::string& id) const {
    const StoreEntry& e = entry(id);
    const auto path = root_ / e.file;
    require<DataError>(std::filesystem::exists(path), "corrupt store: missing file ", path.string(), " for '", id, "'");
    const std::string raw = io::read_file(path);
    require<DataError>(raw.size() == e.values() * 4, "corrupt store: ", path.string(), " has ", raw.size(),
                       " bytes, index implies ", e.values() * 4);
    MelExample ex;
    ex.mel_bands = e.mel_bands;
    ex.frames = e.frames;
    ex.label = e.label;
    ex.example_id = id;
    ex.tensor.resize(e.values());
    std::memcpy(ex.tensor.data(), raw.data(), raw.size());
    return ex;
  }

  std::vector<std::string> ids(const std::string& split = {}) const {
    std::vector<std::string> out;
    for (const auto& [id, e] : entries_)
      if (split.empty() || e.split == split) out.push_back(id);
    return out;
  }

  void commit() const {
    nlohmann::json examples = nlohmann::json::object();
    for (const auto& [id, e] : entries_)
      examples[id] = {{"file", e.file}, {"label", e.label},   {"split", e.split},
                      {"source", e.source}, {"shape", {e.mel_bands, e.frames, e.channels}}};
    const nlohmann::json j = {{"version", 1}, {"layout", "f32le [mel][frame][channel]"}, {"examples", examples}};
    const std::string text = j.dump(1) + "\n";
    io::atomic_write(root_ / kIndexName, [&](std::ostream& os) { os << text; }, false);
  }

  StoreCheck verify() const {
    StoreCheck c;
    for (const auto& [id, e] : entries_) {
      if (e.mel_bands != 40 || e.frames != 200 || e.channels != kMelChannels) c.bad_shapes.push_back(id);
      const auto path = root_ / e.file;
      if (!std::filesystem::exists(path)) {
        c.missing_files.push_back(id);
        continue;
      }
      if (std::filesystem::file_size(path) != e.values() * 4) {
        c.size_mismatches.push_back(id);
        continue;
      }
      const MelExample ex = get(id);
      if (!std::all_of(ex.tensor.begin(), ex.tensor.end(), [](float v) { return std::isfinite(v); }))
        c.non_finite.push_back(id);
    }
    return c;
  }

 private:
  std::string unique_file(const std::string& id) const {
    std::string stem;
    for (unsigned char ch : id) stem += (std::isalnum(ch) || ch == '-' || ch == '_' || ch == '.') ? char(ch) : '_';
    std::set<std::string> used;
    for (const auto& [other, e] : entries_) used.insert(e.file);
    std::string file = "features/" + stem + ".f32";
    for (int k = 1; used.count(file) != 0; ++k) file = "features/" + stem + "~" + std::to_string(k) + ".f32";
    return file;
  }

  std::filesystem::path root_;
  std::map<std::string, StoreEntry> entries_;
};

}  // namespace msdml
