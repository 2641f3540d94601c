#pragma once

// Multi-scale temporal transformer pyramid. Level i (1-based) holds
// floor(T / 2^i) rows: each level average-pools the previous one by 2 and then
// applies one pre-norm transformer block.

#include "autodiff.hpp"
#include "core.hpp"
#include "nn.hpp"

#include <string>
#include <vector>

namespace mmtal {

struct PyramidParams {
  static constexpr int kHeads = 4;
  std::vector<nn::TransformerBlock> layers;

  PyramidParams() = default;
  PyramidParams(Rng& rng, int levels, Eigen::Index dim) {
    if (dim % kHeads != 0) {
      throw ValidationError("pyramid width " + std::to_string(dim) + " must be divisible by " +
                            std::to_string(kHeads));
    }
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int i = 0; i < levels; ++i) layers.emplace_back(rng, dim, stddev);
  }

  int levels() const { return static_cast<int>(layers.size()); }

  void collect(nn::ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".level" + std::to_string(i + 1));
  }
};

struct FeaturePyramid {
  std::vector<ad::Var> levels;
  std::vector<int> strides;
  std::vector<Eigen::VectorXd> masks;
  Eigen::Index num_snippets = 0;

  int size() const { return static_cast<int>(levels.size()); }
  std::vector<Eigen::Index> lengths() const {
    std::vector<Eigen::Index> out;
    for (const auto& l : levels) out.push_back(l.rows());
    return out;
  }
};

inline Eigen::Index min_snippets_for(int levels) { return Eigen::Index{1} << levels; }

inline FeaturePyramid build_pyramid(const ad::Var& features, const PyramidParams& params,
                                    const Eigen::VectorXd* valid = nullptr,
                                    nn::AttentionMode mode = nn::AttentionMode::full) {
  const Eigen::Index t = features.rows();
  const int levels = params.levels();
  if (t < min_snippets_for(levels)) {
    throw ValidationError("pyramid with L=" + std::to_string(levels) + " needs at least " +
                          std::to_string(min_snippets_for(levels)) + " snippets, got " + std::to_string(t));
  }
  FeaturePyramid pyr;
  pyr.num_snippets = t;
  Eigen::VectorXd mask = valid ? *valid : Eigen::VectorXd::Ones(t);
  ad::Var x = features;
  int stride = 1;
  for (int i = 0; i < levels; ++i) {
    x = ad::avg_pool2_rows(x);
    Eigen::VectorXd m(x.rows());
    for (Eigen::Index j = 0; j < x.rows(); ++j) m(j) = std::max(mask(2 * j), mask(2 * j + 1));
    mask = m;
    stride *= 2;
    x = params.layers[static_cast<std::size_t>(i)].forward(x, PyramidParams::kHeads, &mask, mode);
    pyr.levels.push_back(x);
    pyr.strides.push_back(stride);
    pyr.masks.push_back(mask);
  }
  return pyr;
}

inline FeaturePyramid build_pyramid(const Matrix& features, const PyramidParams& params,
                                    const Eigen::VectorXd* valid = nullptr,
                                    nn::AttentionMode mode = nn::AttentionMode::full) {
  return build_pyramid(ad::constant(features), params, valid, mode);
}

}  // namespace mmtal
