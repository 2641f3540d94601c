#pragma once

// Helpers shared by the unit suites and the acceptance runner: finite
// differences, brute-force geometry / AP oracles, and scratch directories.

#include "mmtal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mmtal::testing {

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Worst relative error between backprop and central differences for up to
/// `max_entries` entries of `param` (all entries when the tensor is small).
/// `loss` must rebuild the graph from the current parameter values.
inline double grad_check(const std::function<ad::Var()>& loss, ad::Var param, Rng& rng, int max_entries = 12,
                         double h = 1e-5) {
  param.zero_grad();
  ad::Var l = loss();
  l.backward();
  const Matrix analytic = param.has_grad() ? param.grad() : Matrix::Zero(param.rows(), param.cols());
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(param.value().size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  rng.shuffle(idx);
  if (static_cast<int>(idx.size()) > max_entries) idx.resize(static_cast<std::size_t>(max_entries));
  double worst = 0.0;
  ad::NoGradGuard guard;
  for (Eigen::Index k : idx) {
    double& x = param.mutable_value().data()[k];
    const double saved = x;
    x = saved + h;
    const double up = loss().item();
    x = saved - h;
    const double down = loss().item();
    x = saved;
    worst = std::max(worst, rel_error(analytic.data()[k], (up - down) / (2.0 * h)));
  }
  return worst;
}

// ------------------------------------------------------------- geometry

/// Integer-endpoint segment measured by counting unit cells.
struct CellSegment {
  int start = 0;
  int end = 0;
};

inline double brute_iou(CellSegment a, CellSegment b) {
  const int lo = std::min(a.start, b.start), hi = std::max(a.end, b.end);
  int inter = 0, uni = 0;
  for (int c = lo; c < hi; ++c) {
    const bool in_a = c >= a.start && c < a.end;
    const bool in_b = c >= b.start && c < b.end;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

inline double brute_diou(CellSegment p, CellSegment g) {
  const int lo = std::min(p.start, g.start), hi = std::max(p.end, g.end);
  int enclosure = 0;
  for (int c = lo; c < hi; ++c) ++enclosure;
  const double dc = 0.5 * (p.start + p.end) - 0.5 * (g.start + g.end);
  return 1.0 - brute_iou(p, g) + (dc * dc) / (static_cast<double>(enclosure) * enclosure);
}

/// Classic greedy hard NMS; returns indices of kept proposals in score order.
inline std::vector<std::size_t> greedy_hard_nms(const std::vector<Proposal>& props, double threshold) {
  std::vector<std::size_t> order(props.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return props[a].score > props[b].score; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool ok = true;
    for (std::size_t k : kept) {
      const double inter = std::max(0.0, std::min(props[i].end, props[k].end) - std::max(props[i].start, props[k].start));
      const double uni = (props[i].end - props[i].start) + (props[k].end - props[k].start) - inter;
      if (inter / uni > threshold) ok = false;
    }
    if (ok) kept.push_back(i);
  }
  return kept;
}

// ------------------------------------------------------------------- AP

/// Precision / recall after each prefix of the ranked list, each prefix
/// matched from scratch, then the right-envelope area.
inline double exhaustive_ap(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gt,
                            const std::string& cls, double thr) {
  std::vector<Detection> p;
  for (const auto& d : preds)
    if (d.class_name == cls) p.push_back(d);
  std::stable_sort(p.begin(), p.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    return a.start < b.start;
  });
  std::vector<const GroundTruth*> g;
  for (const auto& x : gt)
    if (x.class_name == cls) g.push_back(&x);
  if (g.empty()) return 0.0;
  auto iou = [](double a0, double a1, double b0, double b1) {
    const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
    const double uni = (a1 - a0) + (b1 - b0) - inter;
    return uni > 0 ? inter / uni : 0.0;
  };
  std::vector<double> precision, recall;
  for (std::size_t k = 1; k <= p.size(); ++k) {
    std::vector<bool> used(g.size(), false);
    int tp = 0;
    for (std::size_t i = 0; i < k; ++i) {
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (used[j] || g[j]->video_id != p[i].video_id) continue;
        const double v = iou(p[i].start, p[i].end, g[j]->start, g[j]->end);
        if (v >= thr && v > best_iou) {
          best_iou = v;
          best = static_cast<int>(j);
        }
      }
      if (best >= 0) {
        used[static_cast<std::size_t>(best)] = true;
        ++tp;
      }
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(g.size()));
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (recall[k] <= prev) continue;
    double env = 0.0;
    for (std::size_t j = k; j < p.size(); ++j) env = std::max(env, precision[j]);
    ap += (recall[k] - prev) * env;
    prev = recall[k];
  }
  return ap;
}

inline double exhaustive_map(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gt, double thr) {
  std::map<std::string, int> classes;
  for (const auto& g : gt) classes[g.class_name] = 1;
  double s = 0.0;
  for (const auto& [c, unused] : classes) s += exhaustive_ap(preds, gt, c, thr);
  return classes.empty() ? 0.0 : s / static_cast<double>(classes.size());
}

// ----------------------------------------------------------------- files

inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmtal_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace mmtal::testing
