#pragma once

// Proposal pooling, the per-modality aligner into the shared space, and
// cosine scoring of proposals against an aligned classifier bank.

#include "autodiff.hpp"
#include "core.hpp"
#include "localizer.hpp"
#include "nn.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mmtal {

enum class AlignModality { rgb, flow, text };

/// Row range [begin, begin + count) pooled for a segment over T snippets.
struct RowRange {
  Eigen::Index begin = 0;
  Eigen::Index count = 1;
};

inline RowRange pool_rows(Eigen::Index num_snippets, double start, double end) {
  auto lo = static_cast<Eigen::Index>(std::floor(start));
  auto hi = static_cast<Eigen::Index>(std::ceil(end));
  lo = std::clamp<Eigen::Index>(lo, 0, num_snippets);
  hi = std::clamp<Eigen::Index>(hi, 0, num_snippets);
  if (hi <= lo) {
    const double mid = 0.5 * (start + end);
    const auto near = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(mid)), 0, num_snippets - 1);
    return {near, 1};
  }
  return {lo, hi - lo};
}

inline Eigen::RowVectorXd pool_proposal(const Matrix& features, double start, double end) {
  const RowRange r = pool_rows(features.rows(), start, end);
  return features.middleRows(r.begin, r.count).colwise().mean();
}

inline Eigen::RowVectorXd pool_proposal(const Matrix& features, const Proposal& p) {
  return pool_proposal(features, p.start, p.end);
}

/// Stacks pooled rows for a list of (start, end) segments.
inline Matrix pool_segments(const Matrix& features, const std::vector<std::pair<double, double>>& segments) {
  Matrix out(static_cast<Eigen::Index>(segments.size()), features.cols());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = pool_proposal(features, segments[i].first, segments[i].second);
  }
  return out;
}

/// One 2-layer MLP per modality (hidden width D_align) followed by L2 norm.
struct Aligner {
  int d_align = 0;
  nn::Mlp2 rgb, flow, text;
  Eigen::Index d_rgb = 0, d_flow = 0, d_text = 0;

  Aligner() = default;
  Aligner(Rng& rng, Eigen::Index d_rgb_, Eigen::Index d_flow_, Eigen::Index d_text_, int d_align_)
      : d_align(d_align_),
        rgb(rng, d_rgb_, d_align_, d_align_),
        flow(rng, d_flow_, d_align_, d_align_),
        text(rng, d_text_, d_align_, d_align_),
        d_rgb(d_rgb_),
        d_flow(d_flow_),
        d_text(d_text_) {}

  void collect(nn::ParamList& out, const std::string& prefix) const {
    rgb.collect(out, prefix + ".rgb");
    flow.collect(out, prefix + ".flow");
    text.collect(out, prefix + ".text");
  }
};

inline const char* to_string(AlignModality m) {
  switch (m) {
    case AlignModality::rgb: return "rgb";
    case AlignModality::flow: return "flow";
    case AlignModality::text: return "text";
  }
  return "?";
}

/// Maps rows of native-dimension vectors to unit-norm D_align rows.
inline Var align(const Aligner& a, const Var& v, AlignModality m) {
  const Eigen::Index want = m == AlignModality::rgb ? a.d_rgb : m == AlignModality::flow ? a.d_flow : a.d_text;
  if (v.cols() != want) {
    throw ValidationError(std::string("align: ") + to_string(m) + " input has dim " + std::to_string(v.cols()) +
                          ", expected " + std::to_string(want));
  }
  const nn::Mlp2& mlp = m == AlignModality::rgb ? a.rgb : m == AlignModality::flow ? a.flow : a.text;
  return ad::l2_normalize_rows(mlp(v));
}

/// Cosine logits (N x C) scaled by 1 / tau; rows of both inputs must be unit-norm.
inline Var cosine_logits(const Var& visual, const Var& bank, double tau) {
  return ad::scale(ad::matmul(visual, ad::transpose(bank)), 1.0 / tau);
}

/// Class probabilities per proposal: softmax of cosine / tau for each
/// modality, averaged across the given modalities.
inline Matrix class_probabilities(const std::vector<Matrix>& aligned_visual, const Matrix& aligned_bank, double tau) {
  if (aligned_visual.empty()) throw std::invalid_argument("class_probabilities: no modality");
  Matrix acc = Matrix::Zero(aligned_visual.front().rows(), aligned_bank.rows());
  for (const auto& v : aligned_visual) {
    Matrix logits = (v * aligned_bank.transpose()) / tau;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::RowVectorXd r = logits.row(i);
      r = (r.array() - r.maxCoeff()).exp().matrix();
      acc.row(i) += r / r.sum();
    }
  }
  return acc / static_cast<double>(aligned_visual.size());
}

/// Fills class_probs, keeps proposals whose best class reaches theta_cls and
/// rescales their score to actionness * class probability.
inline std::vector<Proposal> score_proposals(std::vector<Proposal> props, const std::vector<Matrix>& aligned_visual,
                                             const Matrix& aligned_bank, const std::vector<std::string>& class_names,
                                             double tau, double theta_cls) {
  if (props.empty()) return props;
  const Matrix probs = class_probabilities(aligned_visual, aligned_bank, tau);
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < props.size(); ++i) {
    Proposal p = std::move(props[i]);
    p.class_probs = probs.row(static_cast<Eigen::Index>(i)).transpose();
    Eigen::Index best = 0;
    const double pmax = p.class_probs.maxCoeff(&best);
    if (pmax < theta_cls) continue;
    p.class_name = class_names[static_cast<std::size_t>(best)];
    p.score = p.actionness * pmax;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace mmtal
