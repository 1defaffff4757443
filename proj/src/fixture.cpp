// SPDX-License-Identifier: Apache-2.0
#include "ocg/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ocg/image_io.hpp"

namespace ocg::data {

std::vector<std::string> base_fixture_classes() { return {"circle", "square", "triangle"}; }
std::vector<std::string> fewshot_fixture_classes() {
  return {"cross", "diamond", "ring", "star"};
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

cv::Scalar random_color(Rng& rng) {
  return cv::Scalar(static_cast<double>(uniform_int(rng, 30, 255)),
                    static_cast<double>(uniform_int(rng, 30, 255)),
                    static_cast<double>(uniform_int(rng, 30, 255)));
}

// Smooth background from a few low-frequency waves per channel.
cv::Mat background(Rng& rng, int h, int w) {
  cv::Mat img(h, w, CV_8UC3);
  double base[3], amp[3][3], fx[3][3], fy[3][3], ph[3][3];
  for (int c = 0; c < 3; ++c) {
    base[c] = uniform(rng, 60, 140);
    for (int k = 0; k < 3; ++k) {
      amp[c][k] = uniform(rng, 5, 25);
      fx[c][k] = uniform(rng, 0.5, 3.0) * 2.0 * std::numbers::pi / w;
      fy[c][k] = uniform(rng, 0.5, 3.0) * 2.0 * std::numbers::pi / h;
      ph[c][k] = uniform(rng, 0, 2.0 * std::numbers::pi);
    }
  }
  for (int y = 0; y < h; ++y) {
    auto* row = img.ptr<uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = base[c];
        for (int k = 0; k < 3; ++k) v += amp[c][k] * std::sin(fx[c][k] * x + fy[c][k] * y + ph[c][k]);
        row[3 * x + c] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return img;
}

struct Placed {
  std::string cls;
  cv::Rect2d box;  // x, y, w, h in canvas pixels
  cv::Scalar color;
};

std::vector<cv::Point> polygon(const std::string& cls, const cv::Rect2d& b) {
  const double x0 = b.x, y0 = b.y, w = b.width, h = b.height;
  auto P = [&](double fx, double fy) {
    return cv::Point(static_cast<int>(std::lround(x0 + fx * w)),
                     static_cast<int>(std::lround(y0 + fy * h)));
  };
  if (cls == "triangle") return {P(0.5, 0), P(1, 1), P(0, 1)};
  if (cls == "diamond") return {P(0.5, 0), P(1, 0.5), P(0.5, 1), P(0, 0.5)};
  if (cls == "cross") {
    return {P(0.35, 0), P(0.65, 0), P(0.65, 0.35), P(1, 0.35), P(1, 0.65), P(0.65, 0.65),
            P(0.65, 1), P(0.35, 1), P(0.35, 0.65), P(0, 0.65), P(0, 0.35), P(0.35, 0.35)};
  }
  if (cls == "star") {
    std::vector<cv::Point> pts;
    for (int i = 0; i < 10; ++i) {
      const double r = i % 2 == 0 ? 0.5 : 0.22;
      const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
      pts.push_back(P(0.5 + r * std::cos(a), 0.5 + r * std::sin(a)));
    }
    return pts;
  }
  return {P(0, 0), P(1, 0), P(1, 1), P(0, 1)};
}

// Filled shape inside its box; rings are outlines.
void draw(cv::Mat& img, const Placed& s) {
  const cv::Point c(static_cast<int>(std::lround(s.box.x + s.box.width / 2)),
                    static_cast<int>(std::lround(s.box.y + s.box.height / 2)));
  const cv::Size axes(static_cast<int>(std::lround(s.box.width / 2)),
                      static_cast<int>(std::lround(s.box.height / 2)));
  if (s.cls == "circle") {
    cv::ellipse(img, c, axes, 0, 0, 360, s.color, cv::FILLED, cv::LINE_8);
  } else if (s.cls == "ring") {
    const int t = std::max(3, static_cast<int>(std::min(s.box.width, s.box.height) / 5));
    cv::ellipse(img, c, cv::Size(axes.width - t / 2, axes.height - t / 2), 0, 0, 360, s.color, t,
                cv::LINE_8);
  } else {
    const auto pts = polygon(s.cls, s.box);
    cv::fillPoly(img, std::vector<std::vector<cv::Point>>{pts}, s.color, cv::LINE_8);
  }
}

bool overlaps(const cv::Rect2d& a, const std::vector<Placed>& others, double margin) {
  for (const auto& o : others) {
    cv::Rect2d g(o.box.x - margin, o.box.y - margin, o.box.width + 2 * margin,
                 o.box.height + 2 * margin);
    if ((a & g).area() > 0) return true;
  }
  return false;
}

std::vector<uint8_t> png(const cv::Mat& bgr) {
  std::vector<uint8_t> out;
  if (!cv::imencode(".png", bgr, out)) throw IoError("png encoding failed");
  return out;
}

void write_bytes(const std::filesystem::path& p, const std::vector<uint8_t>& bytes) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string sample_name(const std::string& prefix, uint64_t seed, int64_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "-%llu-%04lld", static_cast<unsigned long long>(seed),
                static_cast<long long>(i));
  return prefix + buf;
}

QueryKind kind_for(const std::string& mode, int64_t i) {
  if (mode == "mixed") return i % 2 == 0 ? QueryKind::kDrone : QueryKind::kGround;
  return query_kind_from_string(mode);
}

}  // namespace

FixtureSample render_fixture_sample(uint64_t seed, int64_t index, const std::string& target_class,
                                    QueryKind kind, const FixtureOptions& opts) {
  if (opts.satellite_px < 128) throw InvalidConfig("fixture satellite canvas must be >= 128 px");
  // Independent stream per sample so samples do not depend on n.
  std::seed_seq seq{seed, static_cast<uint64_t>(index), uint64_t{0x6f6367}};
  Rng rng(seq);
  const int S = static_cast<int>(opts.satellite_px);
  cv::Mat sat = background(rng, S, S);

  const double lo = S * 0.08, hi = S * 0.2;
  std::vector<Placed> placed;
  auto place = [&](const std::string& cls) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double w = std::round(uniform(rng, lo, hi));
      const double h = cls == "circle" || cls == "ring" || cls == "square"
                           ? w
                           : std::round(w * uniform(rng, 0.7, 1.4));
      const double x = std::round(uniform(rng, 2, S - w - 2));
      const double y = std::round(uniform(rng, 2, S - h - 2));
      cv::Rect2d b(x, y, w, h);
      if (!overlaps(b, placed, S * 0.03)) {
        placed.push_back({cls, b, random_color(rng)});
        return true;
      }
    }
    return false;
  };
  if (!place(target_class)) throw InvalidConfig("fixture: could not place target");
  for (int64_t d = 0; d < opts.distractors; ++d) {
    const auto& cls = opts.classes[static_cast<size_t>(uniform_int(rng, 0, static_cast<int64_t>(opts.classes.size()) - 1))];
    place(cls);
  }
  for (const auto& p : placed) draw(sat, p);
  const Placed& target = placed.front();

  // Query: a crop around the target, target center kept away from the border.
  const double side = std::clamp(3.0 * std::max(target.box.width, target.box.height), S * 0.3,
                                 S * 0.6);
  const double crop_h = side;
  const double crop_w = kind == QueryKind::kGround ? std::min(2.0 * side, static_cast<double>(S)) : side;
  const double tcx = target.box.x + target.box.width / 2;
  const double tcy = target.box.y + target.box.height / 2;
  auto crop_origin = [&](double center, double extent) {
    const double lo_o = std::max(0.0, center - 0.8 * extent);
    const double hi_o = std::min(static_cast<double>(S) - extent, center - 0.2 * extent);
    return std::round(hi_o >= lo_o ? uniform(rng, lo_o, hi_o) : std::clamp(center - extent / 2, 0.0, S - extent));
  };
  const double cx0 = crop_origin(tcx, crop_w);
  const double cy0 = crop_origin(tcy, crop_h);
  cv::Mat crop = sat(cv::Rect(static_cast<int>(cx0), static_cast<int>(cy0),
                              static_cast<int>(std::round(crop_w)), static_cast<int>(std::round(crop_h))))
                     .clone();
  const cv::Size qsize = kind == QueryKind::kGround ? cv::Size(512, 256) : cv::Size(256, 256);
  cv::Mat query;
  cv::resize(crop, query, qsize, 0, 0, cv::INTER_LINEAR);

  FixtureSample out;
  GeoSample& g = out.sample;
  g.sample_id = sample_name(opts.id_prefix, seed, index);
  g.query_path = "images/" + g.sample_id + "_query.png";
  g.satellite_path = "images/" + g.sample_id + "_satellite.png";
  g.query_kind = kind;
  g.click = {std::min((tcx - cx0) * qsize.width / crop.cols, qsize.width - 1.0),
             std::min((tcy - cy0) * qsize.height / crop.rows, qsize.height - 1.0)};
  g.gt_box = {tcx, tcy, target.box.width, target.box.height};
  g.class_label = target.cls;
  g.split = Split::kTrain;
  out.query_png = png(query);
  out.satellite_png = png(sat);
  return out;
}

std::filesystem::path make_synthetic_fixture(const std::filesystem::path& out_dir,
                                             const FixtureOptions& opts) {
  if (opts.n < 1) throw InvalidConfig("fixture size must be >= 1");
  if (opts.classes.empty()) throw InvalidConfig("fixture needs at least one class");
  std::vector<GeoSample> samples;
  for (int64_t i = 0; i < opts.n; ++i) {
    const auto& cls = opts.classes[static_cast<size_t>(i) % opts.classes.size()];
    FixtureSample fs = render_fixture_sample(opts.seed, i, cls, kind_for(opts.query_kind, i), opts);
    if (!opts.all_train) {
      const int64_t r = i % 8;
      fs.sample.split = r == 6 ? Split::kValidation : r == 7 ? Split::kTest : Split::kTrain;
    }
    write_bytes(out_dir / fs.sample.query_path, fs.query_png);
    write_bytes(out_dir / fs.sample.satellite_path, fs.satellite_png);
    samples.push_back(std::move(fs.sample));
  }
  const auto path = out_dir / "manifest.jsonl";
  write_manifest(path, samples);
  return path;
}

void validate_fewshot(const FewShotSpec& spec) {
  if (spec.categories.empty()) throw InvalidConfig("few-shot spec has no categories");
  if (spec.shots_per_category < 1) throw InvalidConfig("shots_per_category must be >= 1");
  const Manifest train = load_manifest(spec.train_manifest, {.check_images = false});
  std::map<std::string, int64_t> counts;
  for (const auto& s : train.samples) ++counts[s.class_label];
  for (const auto& c : spec.categories) {
    if (counts[c] != spec.shots_per_category) {
      throw InvalidConfig("few-shot category '" + c + "' has " + std::to_string(counts[c]) +
                          " training samples, expected " + std::to_string(spec.shots_per_category));
    }
  }
  const int64_t expected = static_cast<int64_t>(spec.categories.size()) * spec.shots_per_category;
  if (static_cast<int64_t>(train.samples.size()) != expected) {
    throw InvalidConfig("few-shot train manifest has " + std::to_string(train.samples.size()) +
                        " samples, expected " + std::to_string(expected));
  }
}

FewShotSpec make_fewshot_fixture(const std::filesystem::path& out_dir, uint64_t seed,
                                 std::vector<std::string> categories, int64_t shots,
                                 int64_t test_per_category) {
  FixtureOptions opts;
  opts.seed = seed;
  opts.classes = categories;
  opts.id_prefix = "fewshot";
  std::vector<GeoSample> train, test;
  int64_t index = 0;
  auto emit = [&](const std::string& cls, Split split, std::vector<GeoSample>& dst) {
    FixtureSample fs = render_fixture_sample(seed, index, cls, QueryKind::kDrone, opts);
    ++index;
    fs.sample.split = split;
    write_bytes(out_dir / fs.sample.query_path, fs.query_png);
    write_bytes(out_dir / fs.sample.satellite_path, fs.satellite_png);
    dst.push_back(std::move(fs.sample));
  };
  for (const auto& c : categories)
    for (int64_t k = 0; k < shots; ++k) emit(c, Split::kTrain, train);
  for (const auto& c : categories)
    for (int64_t k = 0; k < test_per_category; ++k) emit(c, Split::kTest, test);

  FewShotSpec spec{std::move(categories), shots, out_dir / "fewshot_train.jsonl",
                   out_dir / "fewshot_test.jsonl"};
  write_manifest(spec.train_manifest, train);
  write_manifest(spec.test_manifest, test);
  return spec;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
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
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

ImportResult import_cvogl_csv(const std::filesystem::path& csv, const std::filesystem::path& out) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty CSV " + csv.string());
  const auto header = split_csv_line(line);
  std::map<std::string, size_t> col;
  for (size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"sample_id", "query_path", "query_kind", "click_x", "click_y",
                           "satellite_path", "x1", "y1", "x2", "y2", "class_label", "split"}) {
    if (!col.contains(need)) throw InvalidInput(std::string("CSV lacks column '") + need + "'");
  }
  const auto csv_dir = std::filesystem::absolute(csv).parent_path();
  const auto out_dir = std::filesystem::absolute(out).parent_path();
  auto rel = [&](const std::string& p) {
    return std::filesystem::relative(csv_dir / p, out_dir).generic_string();
  };

  ImportResult r;
  std::vector<GeoSample> samples;
  int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    try {
      if (f.size() < header.size()) throw InvalidAnnotation("too few columns");
      auto num = [&](const char* name) {
        try {
          return std::stod(f[col[name]]);
        } catch (const std::exception&) {
          throw InvalidAnnotation(std::string("non-numeric ") + name);
        }
      };
      GeoSample s;
      s.sample_id = f[col["sample_id"]];
      s.query_path = rel(f[col["query_path"]]);
      s.query_kind = query_kind_from_string(f[col["query_kind"]]);
      s.click = {num("click_x"), num("click_y")};
      s.satellite_path = rel(f[col["satellite_path"]]);
      s.gt_box = Box::from_corners(num("x1"), num("y1"), num("x2"), num("y2"));
      s.class_label = f[col["class_label"]];
      s.split = split_from_string(f[col["split"]]);
      samples.push_back(std::move(s));
    } catch (const Error& e) {
      r.skipped.push_back({lineno, f.empty() ? "" : f[0], e.what()});
    }
  }
  write_manifest(out, samples);
  r.written = static_cast<int64_t>(samples.size());
  return r;
}

}  // namespace ocg::data
