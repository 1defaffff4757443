// SPDX-License-Identifier: Apache-2.0
#include "ocg/manifest.hpp"

#include <fstream>
#include <map>
#include <set>

#include "ocg/image_io.hpp"

namespace ocg::data {

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation" || s == "val") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw InvalidInput("unknown split '" + s + "' (expected train, validation or test)");
}

nlohmann::json to_json(const GeoSample& s) {
  return {{"sample_id", s.sample_id},
          {"query_path", s.query_path},
          {"query_kind", ocg::to_string(s.query_kind)},
          {"click", {{"x", s.click.x}, {"y", s.click.y}}},
          {"satellite_path", s.satellite_path},
          {"gt_box", {{"cx", s.gt_box.cx}, {"cy", s.gt_box.cy}, {"w", s.gt_box.w}, {"h", s.gt_box.h}}},
          {"class_label", s.class_label},
          {"split", to_string(s.split)}};
}

namespace {

const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) throw InvalidAnnotation(std::string("missing field '") + name + "'");
  return j.at(name);
}

template <typename V>
V get(const nlohmann::json& j, const char* name) {
  try {
    return field(j, name).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidAnnotation(std::string("field '") + name + "' has the wrong type");
  }
}

}  // namespace

GeoSample sample_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidAnnotation("row is not a JSON object");
  GeoSample s;
  s.sample_id = get<std::string>(j, "sample_id");
  if (s.sample_id.empty()) throw InvalidAnnotation("empty sample_id");
  s.query_path = get<std::string>(j, "query_path");
  try {
    s.query_kind = query_kind_from_string(get<std::string>(j, "query_kind"));
    s.split = split_from_string(get<std::string>(j, "split"));
  } catch (const InvalidInput& e) {
    throw InvalidAnnotation(e.what());
  }
  const auto& click = field(j, "click");
  s.click = {get<double>(click, "x"), get<double>(click, "y")};
  s.satellite_path = get<std::string>(j, "satellite_path");
  const auto& box = field(j, "gt_box");
  s.gt_box = {get<double>(box, "cx"), get<double>(box, "cy"), get<double>(box, "w"),
              get<double>(box, "h")};
  s.class_label = get<std::string>(j, "class_label");
  return s;
}

std::vector<GeoSample> Manifest::split(Split s) const {
  std::vector<GeoSample> out;
  for (const auto& x : samples)
    if (x.split == s) out.push_back(x);
  return out;
}

std::vector<std::string> Manifest::classes(Split s) const {
  std::set<std::string> names;
  for (const auto& x : samples)
    if (x.split == s) names.insert(x.class_label);
  return {names.begin(), names.end()};
}

const GeoSample* Manifest::find(const std::string& sample_id) const {
  for (const auto& x : samples)
    if (x.sample_id == sample_id) return &x;
  return nullptr;
}

Manifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::set<std::string> seen;
  std::map<std::filesystem::path, ImageSize> dims;
  auto image_size = [&](const std::string& rel) {
    const auto p = m.resolve(rel);
    auto it = dims.find(p);
    if (it == dims.end()) it = dims.emplace(p, image::read(p).size()).first;
    return it->second;
  };

  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string id;
    try {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw InvalidAnnotation("not valid JSON");
      }
      if (j.is_object() && j.contains("sample_id") && j["sample_id"].is_string()) {
        id = j["sample_id"].get<std::string>();
      }
      GeoSample s = sample_from_json(j);
      if (seen.contains(s.sample_id)) throw InvalidAnnotation("duplicate sample_id");
      if (!(s.gt_box.w > 0.0) || !(s.gt_box.h > 0.0)) throw InvalidAnnotation("zero-area gt_box");
      if (opts.check_images) {
        ImageSize q, sat;
        try {
          q = image_size(s.query_path);
          sat = image_size(s.satellite_path);
        } catch (const Error& e) {
          throw InvalidAnnotation(std::string("unreadable image: ") + e.what());
        }
        if (!(s.click.x >= 0.0 && s.click.x < static_cast<double>(q.width) && s.click.y >= 0.0 &&
              s.click.y < static_cast<double>(q.height))) {
          throw InvalidAnnotation("click out of bounds");
        }
        constexpr double kTol = 1.0;
        if (s.gt_box.x1() < -kTol || s.gt_box.y1() < -kTol ||
            s.gt_box.x2() > static_cast<double>(sat.width) + kTol ||
            s.gt_box.y2() > static_cast<double>(sat.height) + kTol) {
          throw InvalidAnnotation("gt_box out of bounds");
        }
      } else if (s.click.x < 0.0 || s.click.y < 0.0) {
        throw InvalidAnnotation("click out of bounds");
      }
      seen.insert(s.sample_id);
      m.samples.push_back(std::move(s));
    } catch (const InvalidAnnotation& e) {
      m.rejects.push_back({lineno, id, e.what()});
    }
  }
  return m;
}

std::string manifest_text(const std::vector<GeoSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<GeoSample>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_text(samples);
}

}  // namespace ocg::data
