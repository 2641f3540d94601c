#pragma once

// Frozen encoders: a hash tokenizer, a seeded 2-layer self-attention text
// encoder, and the stub visual feature generator that stands in for
// pre-extracted RGB / Flow features.

#include "autodiff.hpp"
#include "core.hpp"
#include "nn.hpp"
#include "rng.hpp"

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace mmtal {

using ad::Var;

struct TokenSequence {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

/// Lower-cases, splits on anything that is not a letter or digit, and maps
/// each token to fnv1a64(token) mod vocab_size. Truncates to max_tokens.
inline TokenSequence tokenize(std::string_view text, int vocab_size = 49408, int max_tokens = 77) {
  TokenSequence out;
  std::string tok;
  auto flush = [&] {
    if (!tok.empty() && static_cast<int>(out.ids.size()) < max_tokens) {
      out.ids.push_back(static_cast<int>(fnv1a64(tok) % static_cast<std::uint64_t>(vocab_size)));
    }
    tok.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      tok.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

struct TextEncoderSpec {
  int vocab_size = 49408;
  int max_tokens = 77;
  int d_text = 512;
  std::uint64_t seed = 1234;
};

/// Stub for a frozen CLIP-style text encoder. Token embeddings are derived on
/// demand from (seed, token id); the two attention layers are materialized.
/// Output is the mean-pooled, L2-normalized final layer.
class TextEncoder {
 public:
  static constexpr int kLayers = 2;
  static constexpr int kHeads = 4;

  explicit TextEncoder(TextEncoderSpec spec = {}) : spec_(spec) {
    if (spec_.d_text % kHeads != 0) {
      throw ValidationError("D_text = " + std::to_string(spec_.d_text) + " must be divisible by " +
                            std::to_string(kHeads) + " heads");
    }
    Rng rng(derive_seed(spec_.seed, "text-encoder.layers"));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(spec_.d_text));
    for (int l = 0; l < kLayers; ++l) layers_.emplace_back(rng, spec_.d_text, stddev, /*trainable=*/false);
  }

  const TextEncoderSpec& spec() const { return spec_; }
  int dim() const { return spec_.d_text; }
  int max_tokens() const { return spec_.max_tokens; }

  TokenSequence tokenize(std::string_view text) const {
    return mmtal::tokenize(text, spec_.vocab_size, spec_.max_tokens);
  }

  Eigen::RowVectorXd token_embedding(int id) const {
    Rng rng(derive_seed(spec_.seed, "text-encoder.token." + std::to_string(id)));
    Eigen::RowVectorXd e(spec_.d_text);
    for (int j = 0; j < spec_.d_text; ++j) e(j) = rng.normal();
    return e;
  }

  Matrix positional(Eigen::Index n) const {
    const Eigen::Index d = spec_.d_text;
    Matrix pe(n, d);
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
        pe(p, i) = std::sin(static_cast<double>(p) * freq);
        if (i + 1 < d) pe(p, i + 1) = std::cos(static_cast<double>(p) * freq);
      }
    }
    return pe;
  }

  /// Encodes [prepend; tokens; append]. Gradients reach the prompt matrices
  /// (and the layers only when they were made trainable).
  Var encode(const TokenSequence& tokens, const Var& prepend = {}, const Var& append = {}) const {
    const Eigen::Index ka = prepend.defined() ? prepend.rows() : 0;
    const Eigen::Index kb = append.defined() ? append.rows() : 0;
    const auto n = static_cast<Eigen::Index>(tokens.size());
    const Eigen::Index total = ka + n + kb;
    if (total > spec_.max_tokens) {
      throw ValidationError("text encoder input too long: " + std::to_string(ka) + " prepended + " +
                            std::to_string(n) + " tokens + " + std::to_string(kb) +
                            " appended = " + std::to_string(total) + " > max_tokens " +
                            std::to_string(spec_.max_tokens));
    }
    if (total == 0) throw ValidationError("text encoder input is empty");
    for (const Var* p : {&prepend, &append}) {
      if (p->defined() && p->rows() > 0 && p->cols() != spec_.d_text) {
        throw ValidationError("prompt width " + std::to_string(p->cols()) + " != D_text " +
                              std::to_string(spec_.d_text));
      }
    }
    Matrix emb(n, spec_.d_text);
    for (Eigen::Index i = 0; i < n; ++i) emb.row(i) = token_embedding(tokens.ids[static_cast<std::size_t>(i)]);

    std::vector<Var> parts;
    if (ka > 0) parts.push_back(prepend);
    if (n > 0) parts.push_back(ad::constant(std::move(emb)));
    if (kb > 0) parts.push_back(append);
    Var x = parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
    x = ad::add_const(x, positional(total));
    for (const auto& layer : layers_) x = layer.forward(x, kHeads);
    return ad::l2_normalize_rows(ad::mean_rows(ad::layer_norm_rows(x)));
  }

  Var encode(std::string_view text) const { return encode(tokenize(text)); }

  nn::ParamList parameters() const {
    nn::ParamList out;
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(out, "text.layer" + std::to_string(l));
    return out;
  }

  // Layer weights plus a probe of the derived embedding table.
  std::uint64_t checksum() const {
    nn::ParamList ps = parameters();
    Matrix probe(8, spec_.d_text);
    for (int i = 0; i < 8; ++i) probe.row(i) = token_embedding(i * 997 % spec_.vocab_size);
    ps.push_back({"probe", ad::constant(probe)});
    return nn::checksum(ps);
  }

  void set_trainable(bool on) { nn::set_trainable(parameters(), on); }

 private:
  TextEncoderSpec spec_;
  std::vector<nn::TransformerBlock> layers_;
};

inline TextEncoderSpec encoder_spec(const Config& c) {
  return {c.vocab_size, c.max_tokens, c.D_text, c.encoder_seed};
}

enum class VisualKind { rgb, flow };
inline const char* to_string(VisualKind k) { return k == VisualKind::rgb ? "rgb" : "flow"; }

/// Synthetic snippet features: Gaussian(0, noise^2) everywhere, plus the class
/// prototype on rows whose snippet center falls inside an annotation.
/// Deterministic in (seed, video_id, kind).
inline Matrix stub_visual_features(VisualKind kind, const std::string& video_id, Eigen::Index num_snippets,
                                   const std::vector<std::string>& class_names, const Matrix& prototypes,
                                   const std::vector<ActionInstance>& annotations, double noise,
                                   std::uint64_t seed) {
  if (prototypes.rows() != static_cast<Eigen::Index>(class_names.size())) {
    throw ValidationError("stub features: prototype rows != class count");
  }
  for (Eigen::Index c = 0; c < prototypes.rows(); ++c) {
    if (std::abs(prototypes.row(c).norm() - 1.0) > 1e-6) {
      throw ValidationError("stub features: prototype of '" + class_names[static_cast<std::size_t>(c)] +
                            "' is not unit-norm");
    }
  }
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    for (std::size_t j = i + 1; j < annotations.size(); ++j) {
      const auto& a = annotations[i];
      const auto& b = annotations[j];
      if (a.class_name != b.class_name && a.start < b.end && b.start < a.end) {
        throw ValidationError("stub features: overlapping annotations of classes '" + a.class_name + "' and '" +
                              b.class_name + "' in video '" + video_id + "'");
      }
    }
  }
  Rng rng(derive_seed(seed, std::string(to_string(kind)) + ":" + video_id));
  Matrix out = rng.normal_matrix(num_snippets, prototypes.cols(), noise);
  std::vector<Eigen::Index> row_class(static_cast<std::size_t>(num_snippets), -1);
  for (const auto& a : annotations) {
    auto it = std::find(class_names.begin(), class_names.end(), a.class_name);
    if (it == class_names.end()) throw ValidationError("stub features: unknown class '" + a.class_name + "'");
    const auto c = static_cast<Eigen::Index>(it - class_names.begin());
    for (Eigen::Index t = 0; t < num_snippets; ++t) {
      const double center = static_cast<double>(t) + 0.5;
      if (center >= a.start && center < a.end) row_class[static_cast<std::size_t>(t)] = c;
    }
  }
  for (Eigen::Index t = 0; t < num_snippets; ++t) {
    const auto c = row_class[static_cast<std::size_t>(t)];
    if (c >= 0) out.row(t) += prototypes.row(c);
  }
  return out;
}

}  // namespace mmtal
