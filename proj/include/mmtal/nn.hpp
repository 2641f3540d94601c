#pragma once

// Layers shared by the pyramid, heads, prompt module, aligner and the stub
// text encoder.

#include "autodiff.hpp"
#include "rng.hpp"

#include <bit>
#include <cmath>
#include <string>
#include <vector>

namespace mmtal::nn {

using ad::Matrix;
using ad::Var;

struct NamedVar {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedVar>;

inline Var param(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev, bool trainable = true) {
  return Var(rng.normal_matrix(rows, cols, stddev), trainable);
}

inline Var zeros(Eigen::Index rows, Eigen::Index cols, bool trainable = true) {
  return Var(Matrix::Zero(rows, cols), trainable);
}

inline Var ones(Eigen::Index rows, Eigen::Index cols, bool trainable = true) {
  return Var(Matrix::Ones(rows, cols), trainable);
}

struct Linear {
  Var w;  // in x out
  Var b;  // 1 x out

  Linear() = default;
  Linear(Rng& rng, Eigen::Index in, Eigen::Index out, bool trainable = true)
      : w(param(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)), trainable)),
        b(zeros(1, out, trainable)) {}

  Var operator()(const Var& x) const { return ad::add_row(ad::matmul(x, w), b); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

/// Two linear layers with one GELU in between.
struct Mlp2 {
  Linear fc1;
  Linear fc2;

  Mlp2() = default;
  Mlp2(Rng& rng, Eigen::Index in, Eigen::Index hidden, Eigen::Index out)
      : fc1(rng, in, hidden), fc2(rng, hidden, out) {}

  Var operator()(const Var& x) const { return fc2(ad::gelu(fc1(x))); }

  void collect(ParamList& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Diagnostic attention modes: `uniform` replaces the softmax with a plain mean
// over valid keys, `identity` lets every row attend only to itself.
enum class AttentionMode { full, uniform, identity };

inline Var multi_head_attention(const Var& x, const Var& wq, const Var& wk, const Var& wv, const Var& wo,
                                int heads, const Eigen::VectorXd* valid = nullptr,
                                AttentionMode mode = AttentionMode::full) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (d % heads != 0) throw std::invalid_argument("attention: width not divisible by head count");
  const Eigen::Index dh = d / heads;
  Var v = ad::matmul(x, wv);

  if (mode != AttentionMode::full) {
    Matrix a = Matrix::Zero(n, n);
    if (mode == AttentionMode::identity) {
      a.setIdentity();
    } else {
      Eigen::VectorXd keep = valid ? *valid : Eigen::VectorXd::Ones(n);
      const double cnt = std::max(keep.sum(), 1.0);
      for (Eigen::Index i = 0; i < n; ++i) a.row(i) = keep.transpose() / cnt;
    }
    return ad::matmul(ad::matmul(ad::constant(a), v), wo);
  }

  Var q = ad::matmul(x, wq);
  Var k = ad::matmul(x, wk);
  Matrix bias = Matrix::Zero(n, n);
  if (valid) {
    for (Eigen::Index j = 0; j < n; ++j)
      if ((*valid)(j) <= 0.0) bias.col(j).setConstant(-1e9);
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), s);
    if (valid) scores = ad::add_const(scores, bias);
    outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  return ad::matmul(ad::concat_cols(outs), wo);
}

/// Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)), MLP width 2x.
struct TransformerBlock {
  Var wq, wk, wv, wo;
  Var ln1_g, ln1_b, ln2_g, ln2_b;
  Linear fc1, fc2;

  TransformerBlock() = default;
  TransformerBlock(Rng& rng, Eigen::Index d, double stddev, bool trainable = true) {
    wq = param(rng, d, d, stddev, trainable);
    wk = param(rng, d, d, stddev, trainable);
    wv = param(rng, d, d, stddev, trainable);
    wo = param(rng, d, d, stddev, trainable);
    ln1_g = ones(1, d, trainable);
    ln1_b = zeros(1, d, trainable);
    ln2_g = ones(1, d, trainable);
    ln2_b = zeros(1, d, trainable);
    fc1 = Linear(rng, d, 2 * d, trainable);
    fc2 = Linear(rng, 2 * d, d, trainable);
    fc1.w.mutable_value() = rng.normal_matrix(d, 2 * d, stddev);
    fc2.w.mutable_value() = rng.normal_matrix(2 * d, d, stddev);
  }

  Var forward(const Var& x, int heads, const Eigen::VectorXd* valid = nullptr,
              AttentionMode mode = AttentionMode::full) const {
    Var h = ad::add_row(ad::mul_row(ad::layer_norm_rows(x), ln1_g), ln1_b);
    Var y = ad::add(x, multi_head_attention(h, wq, wk, wv, wo, heads, valid, mode));
    Var h2 = ad::add_row(ad::mul_row(ad::layer_norm_rows(y), ln2_g), ln2_b);
    return ad::add(y, fc2(ad::gelu(fc1(h2))));
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".wq", wq});
    out.push_back({prefix + ".wk", wk});
    out.push_back({prefix + ".wv", wv});
    out.push_back({prefix + ".wo", wo});
    out.push_back({prefix + ".ln1_g", ln1_g});
    out.push_back({prefix + ".ln1_b", ln1_b});
    out.push_back({prefix + ".ln2_g", ln2_g});
    out.push_back({prefix + ".ln2_b", ln2_b});
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

/// 1-D convolution along rows, kernel 3, zero "same" padding.
struct Conv1d3 {
  Var w;  // (3 * in) x out, taps ordered (t-1, t, t+1)
  Var b;

  Conv1d3() = default;
  Conv1d3(Rng& rng, Eigen::Index in, Eigen::Index out)
      : w(param(rng, 3 * in, out, 1.0 / std::sqrt(3.0 * static_cast<double>(in)))), b(zeros(1, out)) {}

  Var operator()(const Var& x) const {
    Var taps = ad::concat_cols({ad::shift_rows(x, 1), x, ad::shift_rows(x, -1)});
    return ad::add_row(ad::matmul(taps, w), b);
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

inline std::uint64_t checksum(const ParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    for (char c : p.name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    const Matrix& m = p.var.value();
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      auto bits = std::bit_cast<std::uint64_t>(m.data()[k]);
      h = splitmix64(h ^ bits);
    }
  }
  return h;
}

inline void set_trainable(const ParamList& params, bool on) {
  for (const auto& p : params) {
    Var v = p.var;
    v.set_requires_grad(on);
  }
}

}  // namespace mmtal::nn
