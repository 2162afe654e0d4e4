#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fattack/error.hpp"
#include "fattack/synthdata/pnm.hpp"
#include "fattack/synthdata/scene.hpp"
#include "fattack/text.hpp"

namespace fattack::synthdata {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.txt";
inline constexpr const char* kAnnotationsName = "annotations.txt";

/// Annotation text: per image, its filename on one line followed by one
/// "class_id,x_min,y_min,x_max,y_max" line per object; records separated by
/// a blank line.
inline std::string format_annotations(const std::vector<std::pair<std::string, Annotation>>& records) {
  std::string out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i) out += '\n';
    out += records[i].first + '\n';
    for (const auto& ob : records[i].second.boxes) {
      out += std::to_string(ob.class_id) + ',' + format_double(ob.box.x_min) + ',' + format_double(ob.box.y_min) +
             ',' + format_double(ob.box.x_max) + ',' + format_double(ob.box.y_max) + '\n';
    }
  }
  return out;
}

inline std::vector<std::pair<std::string, Annotation>> parse_annotations(const std::string& text) {
  std::vector<std::pair<std::string, Annotation>> out;
  std::istringstream in(text);
  std::string line;
  bool in_record = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty()) {
      in_record = false;
      continue;
    }
    if (!in_record) {
      out.push_back({std::string(t), {}});
      in_record = true;
      continue;
    }
    const auto f = split(t, ',');
    if (f.size() != 5) {
      throw FormatError("annotation line " + std::to_string(lineno) + ": expected 5 comma-separated fields");
    }
    ObjectBox ob;
    ob.class_id = static_cast<std::uint32_t>(parse_uint(trim(f[0]), "class id"));
    ob.box = Box{parse_double(trim(f[1]), "x_min"), parse_double(trim(f[2]), "y_min"),
                 parse_double(trim(f[3]), "x_max"), parse_double(trim(f[4]), "y_max")};
    if (!ob.box.valid()) throw FormatError("annotation line " + std::to_string(lineno) + ": empty box");
    out.back().second.boxes.push_back(ob);
  }
  return out;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw UsageError("failed writing '" + path.string() + "'");
}

/// Writes images/, annotations.txt and, last, manifest.txt. A directory
/// without a manifest is an incomplete dataset.
inline void write_dataset(const Dataset& ds, const fs::path& dir, bool force = false) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw UsageError("output directory '" + dir.string() + "' is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir / "images");
  fs::remove(dir / kManifestName);
  std::vector<std::pair<std::string, Annotation>> records;
  for (const auto& s : ds.samples) {
    write_image(dir / "images" / s.name, s.image);
    records.push_back({s.name, s.annotation});
  }
  write_text(dir / kAnnotationsName, format_annotations(records));

  const auto& c = ds.config;
  std::string m = "fattack-dataset 1\n";
  m += "seed " + std::to_string(ds.seed) + "\n";
  m += "count " + std::to_string(ds.samples.size()) + "\n";
  m += "input_size " + std::to_string(c.input_size) + "\n";
  m += "grid " + std::to_string(c.grid) + "\n";
  m += "anchors_per_cell " + std::to_string(c.anchors_per_cell) + "\n";
  m += "num_classes " + std::to_string(c.num_classes) + "\n";
  m += "anchor_scales";
  for (double s : c.anchor_scales) m += " " + format_double(s);
  m += "\nannotations " + std::string(kAnnotationsName) + "\n";
  for (const auto& s : ds.samples) m += "image images/" + s.name + "\n";
  write_text(dir / kManifestName, m);
}

/// Loads a dataset written by write_dataset. Backbone fields of the returned
/// config (widths, kernel) keep their defaults.
inline Dataset read_dataset(const fs::path& dir) {
  const std::string manifest = read_text(dir / kManifestName);
  std::istringstream in(manifest);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "fattack-dataset 1") {
    throw FormatError("'" + (dir / kManifestName).string() + "' is not a dataset manifest");
  }
  Dataset ds;
  std::string annotations;
  std::vector<std::string> images;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto sp = t.find(' ');
    const std::string_view key = t.substr(0, sp);
    const std::string_view val = sp == std::string_view::npos ? std::string_view{} : trim(t.substr(sp + 1));
    if (key == "seed") ds.seed = parse_uint(val, "seed");
    else if (key == "count") count = parse_uint(val, "count");
    else if (key == "input_size") ds.config.input_size = parse_uint(val, "input_size");
    else if (key == "grid") ds.config.grid = parse_uint(val, "grid");
    else if (key == "anchors_per_cell") ds.config.anchors_per_cell = parse_uint(val, "anchors_per_cell");
    else if (key == "num_classes") ds.config.num_classes = parse_uint(val, "num_classes");
    else if (key == "anchor_scales") {
      ds.config.anchor_scales.clear();
      for (auto f : split(val, ' ')) {
        if (!f.empty()) ds.config.anchor_scales.push_back(parse_double(f, "anchor scale"));
      }
    } else if (key == "annotations") annotations = std::string(val);
    else if (key == "image") images.emplace_back(val);
    else throw FormatError("unknown manifest key '" + std::string(key) + "'");
  }
  // Backbone depth follows the grid: input_size = grid * 2^stages.
  std::size_t stages = 0;
  while ((ds.config.grid << stages) < ds.config.input_size) ++stages;
  if (stages != ds.config.widths.size()) {
    ds.config.widths.resize(stages, ds.config.widths.empty() ? 8 : ds.config.widths.back());
  }
  ds.config.validate();
  if (images.size() != count) {
    throw FormatError("manifest lists " + std::to_string(images.size()) + " images but count is " +
                      std::to_string(count));
  }
  const auto records = parse_annotations(read_text(dir / annotations));
  if (records.size() != images.size()) {
    throw FormatError("annotation file has " + std::to_string(records.size()) + " records for " +
                      std::to_string(images.size()) + " images");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    Sample s;
    s.name = fs::path(images[i]).filename().string();
    if (records[i].first != s.name) {
      throw FormatError("annotation record " + std::to_string(i) + " is for '" + records[i].first +
                        "', expected '" + s.name + "'");
    }
    s.image = read_image(dir / images[i], ds.config.input_size, ds.config.input_size);
    s.annotation = records[i].second;
    s.label = annotation_to_grid(s.annotation, ds.config);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace fattack::synthdata
