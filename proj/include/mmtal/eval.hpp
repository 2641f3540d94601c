#pragma once

// Detection evaluation (AP / mAP over IoU grids, top-1 accuracy, oracle mAP)
// and the base/novel split and support-set protocol.

#include "core.hpp"
#include "localizer.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mmtal {

struct Detection {
  std::string video_id;
  double start = 0.0;
  double end = 0.0;
  std::string class_name;
  double score = 0.0;

  bool operator==(const Detection&) const = default;
};

struct GroundTruth {
  std::string video_id;
  double start = 0.0;
  double end = 0.0;
  std::string class_name;
};

inline std::vector<Detection> to_detections(const std::string& video_id, const std::vector<Proposal>& props) {
  std::vector<Detection> out;
  out.reserve(props.size());
  for (const auto& p : props) out.push_back({video_id, p.start, p.end, p.class_name, p.score});
  return out;
}

inline json to_json(const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    arr.push_back({{"video_id", d.video_id}, {"start", d.start}, {"end", d.end}, {"class", d.class_name},
                   {"score", d.score}});
  }
  return arr;
}

inline std::vector<Detection> detections_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("predictions: expected a JSON array");
  std::vector<Detection> out;
  for (const auto& e : j) {
    try {
      out.push_back({e.at("video_id").get<std::string>(), e.at("start").get<double>(), e.at("end").get<double>(),
                     e.at("class").get<std::string>(), e.at("score").get<double>()});
    } catch (const json::exception& ex) {
      throw ValidationError(std::string("predictions entry: ") + ex.what());
    }
  }
  return out;
}

/// Ground truth of the chosen subset, optionally restricted to a class set.
inline std::vector<GroundTruth> ground_truth(const Dataset& ds, Subset subset,
                                             const std::vector<std::string>* classes = nullptr) {
  std::set<std::string> keep;
  if (classes) keep.insert(classes->begin(), classes->end());
  std::vector<GroundTruth> out;
  for (const auto& v : ds.videos) {
    if (v.subset != subset) continue;
    for (const auto& a : v.annotations) {
      if (classes && !keep.count(a.class_name)) continue;
      out.push_back({v.video_id, a.start, a.end, a.class_name});
    }
  }
  return out;
}

// ------------------------------------------------------------------- AP

namespace detail {

inline std::vector<std::size_t> ranked(const std::vector<Detection>& preds, const std::string& class_name) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i].class_name == class_name) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
    if (preds[a].video_id != preds[b].video_id) return preds[a].video_id < preds[b].video_id;
    return preds[a].start < preds[b].start;
  });
  return idx;
}

}  // namespace detail

/// True-positive flags for the class-filtered, score-ranked predictions, plus
/// the class's GT count. Each GT is matched at most once.
inline std::pair<std::vector<bool>, std::size_t> match_predictions(const std::vector<Detection>& preds,
                                                                   const std::vector<GroundTruth>& gt,
                                                                   const std::string& class_name,
                                                                   double iou_threshold) {
  std::map<std::string, std::vector<std::size_t>> gt_by_video;
  std::size_t n_gt = 0;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (gt[g].class_name != class_name) continue;
    gt_by_video[gt[g].video_id].push_back(g);
    ++n_gt;
  }
  std::vector<bool> used(gt.size(), false);
  std::vector<bool> tp;
  for (std::size_t i : detail::ranked(preds, class_name)) {
    const auto& p = preds[i];
    double best_iou = -1.0;
    std::size_t best = 0;
    auto it = gt_by_video.find(p.video_id);
    if (it != gt_by_video.end()) {
      for (std::size_t g : it->second) {
        if (used[g]) continue;
        const double iou = segment_iou(p.start, p.end, gt[g].start, gt[g].end);
        if (iou >= iou_threshold && iou > best_iou) {
          best_iou = iou;
          best = g;
        }
      }
    }
    if (best_iou >= 0.0) used[best] = true;
    tp.push_back(best_iou >= 0.0);
  }
  return {tp, n_gt};
}

/// All-point interpolated AP from ranked TP flags.
inline double average_precision(const std::vector<bool>& tp, std::size_t n_gt) {
  if (n_gt == 0 || tp.empty()) return 0.0;
  std::vector<double> precision(tp.size());
  double hits = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k] ? 1.0 : 0.0;
    precision[k] = hits / static_cast<double>(k + 1);
  }
  for (std::size_t k = tp.size() - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k)
    if (tp[k]) ap += precision[k] / static_cast<double>(n_gt);
  return ap;
}

inline double match_and_ap(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gt,
                           const std::string& class_name, double iou_threshold) {
  const auto [tp, n_gt] = match_predictions(preds, gt, class_name, iou_threshold);
  return average_precision(tp, n_gt);
}

// ----------------------------------------------------------------- grids

enum class Grid { thumos, anet };

inline const char* to_string(Grid g) { return g == Grid::thumos ? "thumos" : "anet"; }

inline Grid parse_grid(const std::string& s) {
  if (s == "thumos") return Grid::thumos;
  if (s == "anet") return Grid::anet;
  throw ValidationError("grid must be thumos or anet, got '" + s + "'");
}

inline std::vector<double> iou_grid(Grid g) {
  std::vector<double> out;
  if (g == Grid::thumos) {
    for (int i = 3; i <= 7; ++i) out.push_back(i / 10.0);
  } else {
    for (int i = 10; i <= 19; ++i) out.push_back(i / 20.0);
  }
  return out;
}

struct EvalReport {
  Grid grid = Grid::thumos;
  std::vector<double> thresholds;
  std::vector<double> mAP;
  double average_mAP = 0.0;
  double top1 = 0.0;
  std::map<std::string, std::vector<double>> per_class_ap;
};

inline std::vector<std::string> gt_classes(const std::vector<GroundTruth>& gt) {
  std::set<std::string> s;
  for (const auto& g : gt) s.insert(g.class_name);
  return {s.begin(), s.end()};
}

inline double top1_accuracy(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gt,
                            double iou_min = 0.5) {
  if (gt.empty()) throw ValidationError("top1_accuracy: empty ground truth");
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < preds.size(); ++i) by_video[preds[i].video_id].push_back(i);
  std::size_t correct = 0;
  for (const auto& g : gt) {
    const Detection* best = nullptr;
    auto it = by_video.find(g.video_id);
    if (it != by_video.end()) {
      for (std::size_t i : it->second) {
        const auto& p = preds[i];
        if (segment_iou(p.start, p.end, g.start, g.end) < iou_min) continue;
        if (!best || p.score > best->score) best = &p;
      }
    }
    if (best && best->class_name == g.class_name) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gt.size());
}

/// mAP per threshold averaged over classes with at least one GT instance.
inline EvalReport map_suite(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gt, Grid grid,
                            double iou_min = 0.5) {
  if (gt.empty()) throw ValidationError("map_suite: empty ground truth");
  EvalReport r;
  r.grid = grid;
  r.thresholds = iou_grid(grid);
  const auto classes = gt_classes(gt);
  for (const auto& c : classes) r.per_class_ap[c].assign(r.thresholds.size(), 0.0);
  for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
    double sum = 0.0;
    for (const auto& c : classes) {
      const double ap = match_and_ap(preds, gt, c, r.thresholds[t]);
      r.per_class_ap[c][t] = ap;
      sum += ap;
    }
    r.mAP.push_back(sum / static_cast<double>(classes.size()));
  }
  r.average_mAP = std::accumulate(r.mAP.begin(), r.mAP.end(), 0.0) / static_cast<double>(r.mAP.size());
  r.top1 = top1_accuracy(preds, gt, iou_min);
  return r;
}

/// Relabels each prediction with the class of its max-IoU GT in the same
/// video; predictions overlapping no GT keep their class.
inline std::vector<Detection> oracle_relabel(std::vector<Detection> preds, const std::vector<GroundTruth>& gt) {
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t g = 0; g < gt.size(); ++g) by_video[gt[g].video_id].push_back(g);
  for (auto& p : preds) {
    auto it = by_video.find(p.video_id);
    if (it == by_video.end()) continue;
    double best = 0.0;
    for (std::size_t g : it->second) {
      const double iou = segment_iou(p.start, p.end, gt[g].start, gt[g].end);
      if (iou > best) {
        best = iou;
        p.class_name = gt[g].class_name;
      }
    }
  }
  return preds;
}

inline EvalReport oracle_map(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gt, Grid grid,
                             double iou_min = 0.5) {
  return map_suite(oracle_relabel(preds, gt), gt, grid, iou_min);
}

struct FullReport {
  EvalReport model;
  EvalReport oracle;
};

inline FullReport evaluate(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gt, Grid grid,
                           double iou_min = 0.5) {
  return {map_suite(preds, gt, grid, iou_min), oracle_map(preds, gt, grid, iou_min)};
}

inline std::string threshold_key(double t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

inline json to_json(const EvalReport& r) {
  json m = json::object();
  for (std::size_t t = 0; t < r.thresholds.size(); ++t) m[threshold_key(r.thresholds[t])] = r.mAP[t];
  json pc = json::object();
  for (const auto& [cls, aps] : r.per_class_ap) {
    json row = json::object();
    for (std::size_t t = 0; t < aps.size(); ++t) row[threshold_key(r.thresholds[t])] = aps[t];
    pc[cls] = row;
  }
  return {{"grid", to_string(r.grid)}, {"mAP", m},     {"average_mAP", r.average_mAP},
          {"top1_accuracy", r.top1},   {"per_class_AP", pc}};
}

inline json to_json(const FullReport& r) {
  json j = to_json(r.model);
  j["oracle"] = to_json(r.oracle);
  return j;
}

/// Aligned text table: one row per report, IoU columns then AVG and ACC, in percent.
inline std::string format_table(const FullReport& r) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s", "");
  out << buf;
  for (double t : r.model.thresholds) {
    std::snprintf(buf, sizeof buf, "%7.2f", t);
    out << buf;
  }
  out << "    AVG    ACC\n";
  auto row = [&](const char* name, const EvalReport& e) {
    std::snprintf(buf, sizeof buf, "%-8s", name);
    out << buf;
    for (double v : e.mAP) {
      std::snprintf(buf, sizeof buf, "%7.1f", 100.0 * v);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%7.1f%7.1f\n", 100.0 * e.average_mAP, 100.0 * e.top1);
    out << buf;
  };
  row("model", r.model);
  row("oracle", r.oracle);
  return out.str();
}

// ---------------------------------------------------------------- splits

/// "75:25" -> 0.75.
inline double parse_ratio(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(s);
    const double a = std::stod(s.substr(0, colon));
    const double b = std::stod(s.substr(colon + 1));
    if (a <= 0 || b <= 0) throw std::invalid_argument(s);
    return a / (a + b);
  } catch (const std::exception&) {
    throw ValidationError("ratio must look like 75:25, got '" + s + "'");
  }
}

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

inline std::vector<SplitSpec> make_splits(const std::vector<std::string>& classes, double base_fraction,
                                          int n_splits, std::uint64_t seed) {
  const std::size_t c = classes.size();
  if (c < 2) throw ValidationError("make_splits: need at least 2 classes, got " + std::to_string(c));
  if (n_splits < 1) throw ValidationError("make_splits: n_splits must be >= 1");
  auto n_base = static_cast<std::size_t>(std::llround(base_fraction * static_cast<double>(c)));
  n_base = std::clamp<std::size_t>(n_base, 1, c - 1);
  const double distinct = binomial(c, n_base);

  std::vector<SplitSpec> out;
  std::set<std::vector<std::string>> seen;
  for (int i = 0; i < n_splits; ++i) {
    std::vector<std::string> base;
    for (int attempt = 0;; ++attempt) {
      std::vector<std::size_t> order(c);
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(seed, "split." + std::to_string(i) + "." + std::to_string(attempt)));
      rng.shuffle(order);
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_base));
      base.clear();
      for (std::size_t k = 0; k < n_base; ++k) base.push_back(classes[order[k]]);
      if (!seen.count(base) || static_cast<double>(seen.size()) >= distinct || attempt >= 1000) break;
    }
    seen.insert(base);
    SplitSpec s;
    s.seed = seed;
    const std::set<std::string> in_base(base.begin(), base.end());
    for (const auto& name : classes) (in_base.count(name) ? s.base : s.novel).push_back(name);
    out.push_back(std::move(s));
  }
  return out;
}

inline bool video_has_class(const VideoFeatures& v, const std::string& cls) {
  return std::any_of(v.annotations.begin(), v.annotations.end(),
                     [&](const ActionInstance& a) { return a.class_name == cls; });
}

/// Draws n_shot training videos per novel class. Candidate order is a seeded
/// per-class shuffle, so a larger n_shot extends the smaller support set.
inline SplitSpec sample_support(const Dataset& ds, SplitSpec split, int n_shot, std::uint64_t seed) {
  split.support.clear();
  if (n_shot <= 0) return split;
  for (const auto& cls : split.novel) {
    std::vector<std::string> candidates;
    for (const auto& v : ds.videos)
      if (v.subset == Subset::train && video_has_class(v, cls)) candidates.push_back(v.video_id);
    if (static_cast<int>(candidates.size()) < n_shot) {
      throw ValidationError("class '" + cls + "' has " + std::to_string(candidates.size()) +
                            " training videos, fewer than n_shot=" + std::to_string(n_shot));
    }
    Rng rng(derive_seed(seed, "support." + cls));
    rng.shuffle(candidates);
    candidates.resize(static_cast<std::size_t>(n_shot));
    split.support[cls] = candidates;
  }
  return split;
}

}  // namespace mmtal
