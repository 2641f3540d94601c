#pragma once

// Class-agnostic detection: actionness / boundary-offset heads over the
// pyramid, training target assignment, run-grouping decoder and soft-NMS.

#include "autodiff.hpp"
#include "core.hpp"
#include "nn.hpp"
#include "pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace mmtal {

/// Detector (2 convs + sigmoid) and regressor (2 convs + softplus, 2
/// channels). One instance serves every pyramid level.
struct LocalizerHeads {
  nn::Conv1d3 det1, det2, reg1, reg2;

  LocalizerHeads() = default;
  LocalizerHeads(Rng& rng, Eigen::Index dim, Eigen::Index hidden)
      : det1(rng, dim, hidden), det2(rng, hidden, 1), reg1(rng, dim, hidden), reg2(rng, hidden, 2) {}

  void collect(nn::ParamList& out, const std::string& prefix) const {
    det1.collect(out, prefix + ".det1");
    det2.collect(out, prefix + ".det2");
    reg1.collect(out, prefix + ".reg1");
    reg2.collect(out, prefix + ".reg2");
  }
};

struct LevelPrediction {
  ad::Var actionness;  // T_i x 1, in (0, 1)
  ad::Var offsets;     // T_i x 2 (left, right) in stride units, >= 0
  int stride = 1;
  Eigen::VectorXd mask;
};

struct FramePredictions {
  std::vector<LevelPrediction> levels;
  Eigen::Index num_snippets = 0;
};

inline FramePredictions predict_heads(const FeaturePyramid& pyr, const LocalizerHeads& heads) {
  FramePredictions out;
  out.num_snippets = pyr.num_snippets;
  for (int i = 0; i < pyr.size(); ++i) {
    const auto& x = pyr.levels[static_cast<std::size_t>(i)];
    LevelPrediction lp;
    lp.actionness = ad::sigmoid(heads.det2(ad::gelu(heads.det1(x))));
    lp.offsets = ad::softplus(heads.reg2(ad::gelu(heads.reg1(x))));
    lp.stride = pyr.strides[static_cast<std::size_t>(i)];
    lp.mask = pyr.masks[static_cast<std::size_t>(i)];
    out.levels.push_back(std::move(lp));
  }
  return out;
}

/// Late fusion of two modality streams: elementwise mean of actionness and offsets.
inline FramePredictions fuse_predictions(const FramePredictions& a, const FramePredictions& b) {
  if (a.levels.size() != b.levels.size()) throw std::invalid_argument("fuse_predictions: level count");
  FramePredictions out;
  out.num_snippets = a.num_snippets;
  for (std::size_t i = 0; i < a.levels.size(); ++i) {
    LevelPrediction lp = a.levels[i];
    lp.actionness = ad::scale(ad::add(a.levels[i].actionness, b.levels[i].actionness), 0.5);
    lp.offsets = ad::scale(ad::add(a.levels[i].offsets, b.levels[i].offsets), 0.5);
    out.levels.push_back(std::move(lp));
  }
  return out;
}

// --------------------------------------------------------------- geometry

inline double segment_iou(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double frame_center(Eigen::Index frame, int stride) { return (static_cast<double>(frame) + 0.5) * stride; }

// ------------------------------------------------------- target assignment

struct LevelTargets {
  // 1 = positive, 0 = negative, -1 = padding (in neither set).
  std::vector<int> labels;
  std::vector<Eigen::Index> positives;
  Matrix offsets;   // |positives| x 2, (center - start, end - center) / stride
  Matrix segments;  // |positives| x 2, matched ground-truth (start, end)
  int stride = 1;

  std::size_t num_positive() const { return positives.size(); }
  std::size_t num_negative() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 0));
  }
};

struct TargetAssignment {
  std::vector<LevelTargets> levels;
};

/// Level (1-based) responsible for an instance of `length` snippets:
/// the unique i with length in (r_{i-1}, r_i], r_i = base * 2^i, r_L = inf.
inline int level_for_length(double length, int levels, int range_base = 4) {
  for (int i = 1; i < levels; ++i) {
    if (length <= static_cast<double>(range_base) * std::pow(2.0, i)) return i;
  }
  return levels;
}

inline TargetAssignment assign_targets(const std::vector<ActionInstance>& annotations,
                                       const std::vector<Eigen::Index>& level_lengths, int range_base = 4,
                                       const std::vector<Eigen::VectorXd>* masks = nullptr) {
  const int levels = static_cast<int>(level_lengths.size());
  TargetAssignment ta;
  for (int li = 0; li < levels; ++li) {
    const Eigen::Index n = level_lengths[static_cast<std::size_t>(li)];
    const int stride = 1 << (li + 1);
    // Per frame: index of the owning instance (shortest wins), or -1.
    std::vector<int> owner(static_cast<std::size_t>(n), -1);
    auto claim = [&](Eigen::Index j, int a) {
      auto& o = owner[static_cast<std::size_t>(j)];
      if (o < 0 || annotations[static_cast<std::size_t>(a)].length() <
                       annotations[static_cast<std::size_t>(o)].length()) {
        o = a;
      }
    };
    for (int a = 0; a < static_cast<int>(annotations.size()); ++a) {
      const auto& inst = annotations[static_cast<std::size_t>(a)];
      if (level_for_length(inst.length(), levels, range_base) != li + 1) continue;
      bool covered = false;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double c = frame_center(j, stride);
        if (c > inst.start && c < inst.end) {
          claim(j, a);
          covered = true;
        }
      }
      if (!covered && n > 0) {
        const double mid = 0.5 * (inst.start + inst.end);
        auto j = static_cast<Eigen::Index>(std::floor(mid / stride));
        claim(std::clamp<Eigen::Index>(j, 0, n - 1), a);
      }
    }
    LevelTargets lt;
    lt.stride = stride;
    lt.labels.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (masks && (*masks)[static_cast<std::size_t>(li)](j) <= 0.0) lt.labels[static_cast<std::size_t>(j)] = -1;
      if (owner[static_cast<std::size_t>(j)] >= 0) {
        lt.labels[static_cast<std::size_t>(j)] = 1;
        lt.positives.push_back(j);
      }
    }
    lt.offsets.resize(static_cast<Eigen::Index>(lt.positives.size()), 2);
    lt.segments.resize(static_cast<Eigen::Index>(lt.positives.size()), 2);
    for (std::size_t k = 0; k < lt.positives.size(); ++k) {
      const Eigen::Index j = lt.positives[k];
      const auto& inst = annotations[static_cast<std::size_t>(owner[static_cast<std::size_t>(j)])];
      const double c = frame_center(j, stride);
      const auto r = static_cast<Eigen::Index>(k);
      lt.offsets(r, 0) = (c - inst.start) / stride;
      lt.offsets(r, 1) = (inst.end - c) / stride;
      lt.segments(r, 0) = inst.start;
      lt.segments(r, 1) = inst.end;
    }
    ta.levels.push_back(std::move(lt));
  }
  return ta;
}

// ---------------------------------------------------------------- decoding

struct Proposal {
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;
  std::string class_name;       // empty until classified
  Eigen::VectorXd class_probs;  // over the requested categories
  double actionness = 0.0;
  int level = 0;
};

/// Groups above-threshold frames of each level into maximal runs and emits
/// one proposal per run, refined by the offsets of the run's peak frame.
inline std::vector<Proposal> decode_proposals(const FramePredictions& preds, double theta_loc) {
  std::vector<Proposal> out;
  const double t_max = static_cast<double>(preds.num_snippets);
  for (std::size_t li = 0; li < preds.levels.size(); ++li) {
    const auto& lp = preds.levels[li];
    const Matrix& act = lp.actionness.value();
    const Matrix& off = lp.offsets.value();
    const Eigen::Index n = act.rows();
    auto above = [&](Eigen::Index j) {
      const bool ok = lp.mask.size() == 0 || lp.mask(j) > 0.0;
      return ok && act(j, 0) >= theta_loc;
    };
    Eigen::Index j = 0;
    while (j < n) {
      if (!above(j)) {
        ++j;
        continue;
      }
      Eigen::Index peak = j;
      Eigen::Index k = j;
      while (k < n && above(k)) {
        if (act(k, 0) > act(peak, 0)) peak = k;
        ++k;
      }
      const double c = frame_center(peak, lp.stride);
      Proposal p;
      p.start = std::clamp(c - off(peak, 0) * lp.stride, 0.0, t_max);
      p.end = std::clamp(c + off(peak, 1) * lp.stride, 0.0, t_max);
      p.score = act(peak, 0);
      p.actionness = p.score;
      p.level = static_cast<int>(li) + 1;
      if (p.end > p.start) out.push_back(std::move(p));
      j = k;
    }
  }
  return out;
}

struct SoftNmsOptions {
  double iou_threshold = 0.5;
  NmsMode mode = NmsMode::linear;
  double sigma = 0.5;
  double min_score = 1e-4;
};

/// Iterative soft-NMS. Linear mode rescales s <- s * (1 - IoU) when IoU with
/// the selected proposal exceeds the threshold; gaussian mode applies
/// exp(-IoU^2 / sigma) above the threshold. Ties break on (start, end, input order).
inline std::vector<Proposal> soft_nms(std::vector<Proposal> proposals, const SoftNmsOptions& opts = {}) {
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> score(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) score[i] = proposals[i].score;

  auto better = [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    if (proposals[a].start != proposals[b].start) return proposals[a].start < proposals[b].start;
    if (proposals[a].end != proposals[b].end) return proposals[a].end < proposals[b].end;
    return a < b;
  };

  std::vector<std::size_t> alive;
  for (std::size_t i : order)
    if (score[i] >= opts.min_score) alive.push_back(i);
  std::vector<std::size_t> kept;
  while (!alive.empty()) {
    auto best_it = std::min_element(alive.begin(), alive.end(), [&](auto a, auto b) { return better(a, b); });
    const std::size_t best = *best_it;
    alive.erase(best_it);
    kept.push_back(best);
    std::vector<std::size_t> next;
    next.reserve(alive.size());
    for (std::size_t i : alive) {
      const double iou = segment_iou(proposals[best].start, proposals[best].end, proposals[i].start, proposals[i].end);
      if (iou > opts.iou_threshold) {
        if (opts.mode == NmsMode::linear) score[i] *= (1.0 - iou);
        else score[i] *= std::exp(-(iou * iou) / opts.sigma);
      }
      if (score[i] >= opts.min_score) next.push_back(i);
    }
    alive = std::move(next);
  }
  std::stable_sort(kept.begin(), kept.end(), [&](auto a, auto b) { return better(a, b); });
  std::vector<Proposal> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) {
    Proposal p = proposals[i];
    p.score = score[i];
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace mmtal
