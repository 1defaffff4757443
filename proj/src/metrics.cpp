// SPDX-License-Identifier: Apache-2.0
#include "ocg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "ocg/errors.hpp"

namespace ocg::metrics {

double iou(const Box& a, const Box& b) {
  if (!(a.w > 0.0) || !(a.h > 0.0) || !(b.w > 0.0) || !(b.h > 0.0)) {
    throw InvalidInput("iou: boxes must have positive width and height");
  }
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  // Sum the areas in a fixed order so iou(a, b) == iou(b, a) bit for bit.
  const double lo = std::min(a.area(), b.area());
  const double hi = std::max(a.area(), b.area());
  return inter / (lo + hi - inter);
}

namespace {

void check_threshold(double t) {
  if (!(t > 0.0 && t < 1.0)) throw InvalidInput("acc@t: threshold must lie in (0, 1)");
}

struct Tally {
  int64_t hit25 = 0;
  int64_t hit50 = 0;
  int64_t count = 0;
  double iou_sum = 0.0;

  void add(double v) {
    hit25 += v >= 0.25;
    hit50 += v >= 0.50;
    ++count;
    iou_sum += v;
  }
  double pct(int64_t k) const { return 100.0 * static_cast<double>(k) / static_cast<double>(count); }
};

}  // namespace

double acc_at_t(std::span<const EvalPair> pairs, double t) {
  check_threshold(t);
  if (pairs.empty()) throw InvalidInput("acc@t: no prediction/ground-truth pairs");
  int64_t hits = 0;
  for (const auto& p : pairs) hits += iou(p.pred, p.gt) >= t;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pairs.size());
}

EvalReport per_class_report(std::span<const EvalPair> pairs,
                            const std::optional<std::vector<std::string>>& known_classes) {
  if (pairs.empty()) throw InvalidInput("per_class_report: no prediction/ground-truth pairs");
  std::set<std::string> known;
  if (known_classes) known.insert(known_classes->begin(), known_classes->end());

  EvalReport r;
  Tally overall;
  std::map<std::string, Tally> groups;
  std::set<std::string> unknown_seen;
  for (const auto& p : pairs) {
    const double v = iou(p.pred, p.gt);
    overall.add(v);
    std::string label = p.class_label;
    if (known_classes && !known.contains(label)) {
      unknown_seen.insert(label);
      label = kOtherClass;
    }
    groups[label].add(v);
  }
  for (const auto& u : unknown_seen) {
    r.warnings.push_back("unknown class label '" + u + "' grouped under '" + kOtherClass + "'");
  }

  r.n = overall.count;
  r.acc_at_25 = overall.pct(overall.hit25);
  r.acc_at_50 = overall.pct(overall.hit50);
  r.mean_iou = 100.0 * overall.iou_sum / static_cast<double>(overall.count);
  for (const auto& [name, t] : groups) {
    r.per_class[name] = {t.pct(t.hit25), t.pct(t.hit50), t.count};
  }
  for (const auto& k : known)
    if (!groups.contains(k)) r.empty_classes.push_back(k);
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, s] : r.per_class) {
    per[name] = {{"acc_at_25", s.acc_at_25}, {"acc_at_50", s.acc_at_50}, {"count", s.count}};
  }
  for (const auto& name : r.empty_classes) {
    per[name] = {{"acc_at_25", nullptr}, {"acc_at_50", nullptr}, {"count", 0}};
  }
  return {{"acc_at_25", r.acc_at_25}, {"acc_at_50", r.acc_at_50}, {"mean_iou", r.mean_iou},
          {"n", r.n},                 {"per_class", per},        {"warnings", r.warnings}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.acc_at_25 = j.at("acc_at_25").get<double>();
  r.acc_at_50 = j.at("acc_at_50").get<double>();
  r.mean_iou = j.at("mean_iou").get<double>();
  r.n = j.at("n").get<int64_t>();
  for (const auto& [name, s] : j.at("per_class").items()) {
    if (s.at("count").get<int64_t>() == 0) {
      r.empty_classes.push_back(name);
    } else {
      r.per_class[name] = {s.at("acc_at_25").get<double>(), s.at("acc_at_50").get<double>(),
                           s.at("count").get<int64_t>()};
    }
  }
  r.warnings = j.value("warnings", std::vector<std::string>{});
  return r;
}

namespace {

std::string cell(const std::optional<EvalReport>& r, bool at50) {
  if (!r) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", at50 ? r->acc_at_50 : r->acc_at_25);
  return buf;
}

std::string pad(const std::string& s, size_t w, bool right) {
  if (s.size() >= w) return s;
  return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string format_table(std::span<const TableRow> rows) {
  size_t label_w = 6;
  for (const auto& r : rows) label_w = std::max(label_w, r.label.size());
  constexpr size_t kCol = 9;
  const size_t group_w = 2 * kCol + 1;
  std::string out;
  out += pad("", label_w, false) + " | " + pad("Validation", group_w, false) + " | " +
         pad("Test", group_w, false) + "\n";
  out += pad("Method", label_w, false) + " | " + pad("acc@0.25", kCol, true) + " " +
         pad("acc@0.50", kCol, true) + " | " + pad("acc@0.25", kCol, true) + " " +
         pad("acc@0.50", kCol, true) + "\n";
  out += std::string(label_w, '-') + "-+-" + std::string(group_w, '-') + "-+-" +
         std::string(group_w, '-') + "\n";
  for (const auto& r : rows) {
    out += pad(r.label, label_w, false) + " | " + pad(cell(r.validation, false), kCol, true) +
           " " + pad(cell(r.validation, true), kCol, true) + " | " +
           pad(cell(r.test, false), kCol, true) + " " + pad(cell(r.test, true), kCol, true) + "\n";
  }
  return out;
}

std::string format_class_table(const EvalReport& r) {
  size_t w = 5;
  for (const auto& [name, s] : r.per_class) w = std::max(w, name.size());
  for (const auto& name : r.empty_classes) w = std::max(w, name.size());
  std::string out = pad("Class", w, false) + "  " + pad("count", 6, true) + "  " +
                    pad("acc@0.25", 9, true) + "  " + pad("acc@0.50", 9, true) + "\n";
  char buf[96];
  for (const auto& [name, s] : r.per_class) {
    std::snprintf(buf, sizeof(buf), "  %6lld  %9.2f  %9.2f\n", static_cast<long long>(s.count),
                  s.acc_at_25, s.acc_at_50);
    out += pad(name, w, false) + buf;
  }
  for (const auto& name : r.empty_classes) {
    out += pad(name, w, false) + "  " + pad("0", 6, true) + "  " + pad("-", 9, true) + "  " +
           pad("-", 9, true) + "\n";
  }
  std::snprintf(buf, sizeof(buf), "  %6lld  %9.2f  %9.2f   mIoU %.2f\n",
                static_cast<long long>(r.n), r.acc_at_25, r.acc_at_50, r.mean_iou);
  out += pad("all", w, false) + buf;
  return out;
}

}  // namespace ocg::metrics
