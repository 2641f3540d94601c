#pragma once

// Open-vocabulary classifier banks: name-only, LLM attribute descriptions,
// vision-conditional prompts and the random-prompt baseline.

#include "autodiff.hpp"
#include "core.hpp"
#include "encoders.hpp"
#include "nn.hpp"

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace mmtal {

// ------------------------------------------------------------ descriptions

inline std::array<std::string, 3> render_attribute_prompts(const std::string& class_name) {
  if (class_name.empty()) throw ValidationError("render_attribute_prompts: empty class name");
  return {"what tools are needed for " + class_name + "?", "where " + class_name + " usually takes place?",
          "how to decompose steps for " + class_name + "?"};
}

struct AttributeAnswers {
  std::string what;
  std::string where;
  std::string how;

  std::array<std::string, 3> as_array() const { return {what, where, how}; }
  bool operator==(const AttributeAnswers&) const = default;
};

using DescriptionCache = std::map<std::string, AttributeAnswers>;

inline std::string fallback_description(const std::string& class_name) { return "a video of " + class_name; }

inline DescriptionCache descriptions_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("descriptions: expected an object keyed by class name");
  DescriptionCache cache;
  for (const auto& [cls, entry] : j.items()) {
    AttributeAnswers a;
    try {
      a.what = entry.at("what").get<std::string>();
      a.where = entry.at("where").get<std::string>();
      a.how = entry.at("how").get<std::string>();
    } catch (const json::exception&) {
      throw ValidationError("descriptions: class '" + cls + "' needs string fields what, where, how");
    }
    cache[cls] = std::move(a);
  }
  return cache;
}

inline json to_json(const DescriptionCache& cache) {
  json j = json::object();
  for (const auto& [cls, a] : cache) j[cls] = {{"what", a.what}, {"where", a.where}, {"how", a.how}};
  return j;
}

inline DescriptionCache load_descriptions(const fs::path& path) { return descriptions_from_json(read_json_file(path)); }

inline void save_descriptions(const fs::path& path, const DescriptionCache& cache) {
  write_json_file(path, to_json(cache));
}

/// Classes that are missing from the cache or have an empty attribute string.
inline std::vector<std::string> missing_descriptions(const DescriptionCache& cache,
                                                     const std::vector<std::string>& classes) {
  std::vector<std::string> out;
  for (const auto& c : classes) {
    auto it = cache.find(c);
    if (it == cache.end() || it->second.what.empty() || it->second.where.empty() || it->second.how.empty()) {
      out.push_back(c);
    }
  }
  return out;
}

inline std::string join(const std::vector<std::string>& items, const std::string& sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

/// Source of attribute answers. Live API clients implement this.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string answer(const std::string& class_name, const std::string& prompt) = 0;
};

/// Answers from a descriptions.json cache.
class FileBackedLlmClient : public LlmClient {
 public:
  explicit FileBackedLlmClient(DescriptionCache cache) : cache_(std::move(cache)) {}
  explicit FileBackedLlmClient(const fs::path& path) : cache_(load_descriptions(path)) {}

  std::string answer(const std::string& class_name, const std::string& prompt) override {
    auto it = cache_.find(class_name);
    if (it == cache_.end()) throw ValidationError("no cached description for class '" + class_name + "'");
    const auto prompts = render_attribute_prompts(class_name);
    const auto answers = it->second.as_array();
    for (std::size_t k = 0; k < 3; ++k)
      if (prompts[k] == prompt) return answers[k];
    throw ValidationError("no cached answer for prompt '" + prompt + "'");
  }

 private:
  DescriptionCache cache_;
};

inline DescriptionCache query_descriptions(LlmClient& client, const std::vector<std::string>& classes) {
  DescriptionCache cache;
  for (const auto& c : classes) {
    const auto p = render_attribute_prompts(c);
    cache[c] = {client.answer(c, p[0]), client.answer(c, p[1]), client.answer(c, p[2])};
  }
  return cache;
}

// --------------------------------------------------------------------- bank

struct ClassifierBank {
  Var embeddings;  // C x D_text, rows unit-norm
  std::vector<std::string> class_names;
  ClassifierMode mode = ClassifierMode::name_only;

  Eigen::Index size() const { return static_cast<Eigen::Index>(class_names.size()); }
};

/// Applies an additive offset to every row and renormalizes.
inline Var add_and_normalize(const Var& rows, const Var& offset_row) {
  return ad::l2_normalize_rows(ad::add_row(rows, offset_row));
}

inline ClassifierBank build_name_classifier(const std::vector<std::string>& classes, const TextEncoder& enc) {
  std::vector<Var> rows;
  for (const auto& c : classes) rows.push_back(enc.encode(enc.tokenize(c)));
  return {ad::concat_rows(rows), classes, ClassifierMode::name_only};
}

struct DescriptionOptions {
  Fusion fusion = Fusion::average;
  // 1 x 3 learnable logits for weighted fusion (softmax-normalized).
  Var weight_logits;
  // Diagnostic: use weight_logits directly as the mixing weights.
  bool bypass_softmax = false;
  bool allow_fallback = false;
};

/// Per-class encodings of the three attribute answers, stacked as C x D_text
/// matrices (what, where, how). Constant because the encoder is frozen.
inline std::array<Matrix, 3> encode_attributes(const DescriptionCache& cache, const std::vector<std::string>& classes,
                                               const TextEncoder& enc) {
  std::array<Matrix, 3> out;
  for (auto& m : out) m.resize(static_cast<Eigen::Index>(classes.size()), enc.dim());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    auto it = cache.find(classes[i]);
    std::array<std::string, 3> texts;
    if (it != cache.end()) texts = it->second.as_array();
    for (std::size_t k = 0; k < 3; ++k) {
      if (texts[k].empty()) texts[k] = fallback_description(classes[i]);
      out[k].row(static_cast<Eigen::Index>(i)) = enc.encode(enc.tokenize(texts[k])).value();
    }
  }
  return out;
}

inline void require_descriptions(const DescriptionCache& cache, const std::vector<std::string>& classes,
                                 bool allow_fallback) {
  if (allow_fallback) return;
  const auto missing = missing_descriptions(cache, classes);
  if (!missing.empty()) throw ValidationError("missing descriptions for classes: " + join(missing));
}

inline Var fuse_attribute_encodings(const std::array<Matrix, 3>& enc3, const DescriptionOptions& opts) {
  if (opts.fusion == Fusion::average) {
    Matrix m = (enc3[0] + enc3[1] + enc3[2]) / 3.0;
    return ad::l2_normalize_rows(ad::constant(std::move(m)));
  }
  Var logits = opts.weight_logits.defined() ? opts.weight_logits : ad::constant(Matrix::Zero(1, 3));
  Var w = opts.bypass_softmax ? logits : ad::softmax_rows(logits);
  const Eigen::Index c = enc3[0].rows(), d = enc3[0].cols();
  Matrix stacked(3, c * d);
  for (int k = 0; k < 3; ++k) {
    for (Eigen::Index i = 0; i < c; ++i) stacked.block(k, i * d, 1, d) = enc3[static_cast<std::size_t>(k)].row(i);
  }
  return ad::l2_normalize_rows(ad::reshape(ad::matmul(w, ad::constant(std::move(stacked))), c, d));
}

inline ClassifierBank build_description_classifier(const DescriptionCache& cache,
                                                   const std::vector<std::string>& classes, const TextEncoder& enc,
                                                   const DescriptionOptions& opts = {}) {
  require_descriptions(cache, classes, opts.allow_fallback);
  if (opts.fusion == Fusion::concat) {
    std::vector<Var> rows;
    for (const auto& c : classes) {
      auto it = cache.find(c);
      std::string text;
      if (it != cache.end()) {
        for (const auto& part : it->second.as_array())
          if (!part.empty()) text += (text.empty() ? "" : " ") + part;
      }
      if (text.empty()) text = fallback_description(c);
      rows.push_back(enc.encode(enc.tokenize(text)));
    }
    return {ad::concat_rows(rows), classes, ClassifierMode::description};
  }
  return {fuse_attribute_encodings(encode_attributes(cache, classes, enc), opts), classes,
          ClassifierMode::description};
}

// ------------------------------------------------------ conditional prompts

/// Maps temporally mean-pooled visual features to prompt vectors: one 2-layer
/// MLP per modality, K rows (uni-modal) or K/2 rows each (dual-modal).
struct PromptModule {
  int K = 0;
  int d_text = 0;
  Modality modality = Modality::rgb_flow;
  nn::Mlp2 rgb;
  nn::Mlp2 flow;

  PromptModule() = default;
  PromptModule(Rng& rng, int K_, int d_text_, int d_rgb, int d_flow, Modality m)
      : K(K_), d_text(d_text_), modality(m) {
    if (m == Modality::rgb_flow && K % 2 != 0) {
      throw ValidationError("K = " + std::to_string(K) + " must be even for rgb+flow prompts");
    }
    const int rows = m == Modality::rgb_flow ? K / 2 : K;
    if (uses_rgb(m)) rgb = nn::Mlp2(rng, d_rgb, d_text, static_cast<Eigen::Index>(rows) * d_text);
    if (uses_flow(m)) flow = nn::Mlp2(rng, d_flow, d_text, static_cast<Eigen::Index>(rows) * d_text);
  }

  void collect(nn::ParamList& out, const std::string& prefix) const {
    if (uses_rgb(modality)) rgb.collect(out, prefix + ".rgb");
    if (uses_flow(modality)) flow.collect(out, prefix + ".flow");
  }
};

inline Var conditional_prompts(const PromptModule& pm, const Matrix& rgb_feats, const Matrix& flow_feats,
                               const Eigen::VectorXd* valid = nullptr) {
  auto pooled = [&](const Matrix& f) {
    Eigen::RowVectorXd m;
    if (valid && valid->sum() > 0) {
      m = (valid->transpose() * f) / valid->sum();
    } else {
      m = f.colwise().mean();
    }
    return ad::constant(Matrix(m));
  };
  const int rows = pm.modality == Modality::rgb_flow ? pm.K / 2 : pm.K;
  std::vector<Var> parts;
  if (uses_rgb(pm.modality)) parts.push_back(ad::reshape(pm.rgb(pooled(rgb_feats)), rows, pm.d_text));
  if (uses_flow(pm.modality)) parts.push_back(ad::reshape(pm.flow(pooled(flow_feats)), rows, pm.d_text));
  return parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
}

/// Builds a bank from prompt vectors. Input position wraps the class tokens in
/// the first floor(K/2) and remaining prompt rows; output position adds the
/// mean prompt to the bare-name encoding. `class_offsets`, when given, holds
/// one additive K x D_text offset per class (few-shot).
inline ClassifierBank build_conditional_classifier(const Var& prompts, const std::vector<std::string>& classes,
                                                   const TextEncoder& enc, PromptPosition position,
                                                   const std::vector<Var>* class_offsets = nullptr) {
  const Eigen::Index k = prompts.rows();
  if (!prompts.value().allFinite()) throw ValidationError("conditional classifier: non-finite prompt vectors");
  std::vector<Var> rows;
  rows.reserve(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    Var p = prompts;
    if (class_offsets && (*class_offsets)[i].defined()) p = ad::add(p, (*class_offsets)[i]);
    const TokenSequence tokens = enc.tokenize(classes[i]);
    if (position == PromptPosition::input) {
      const Eigen::Index ka = k / 2;
      if (ka + static_cast<Eigen::Index>(tokens.size()) + (k - ka) > enc.max_tokens()) {
        throw ValidationError("prompt budget exceeded for class '" + classes[i] + "': K=" + std::to_string(k) +
                              " prompt rows + " + std::to_string(tokens.size()) + " name tokens > max_tokens " +
                              std::to_string(enc.max_tokens()));
      }
      Var pre = ka > 0 ? ad::slice_rows(p, 0, ka) : Var{};
      Var post = k - ka > 0 ? ad::slice_rows(p, ka, k - ka) : Var{};
      rows.push_back(enc.encode(tokens, pre, post));
    } else {
      rows.push_back(add_and_normalize(enc.encode(tokens), ad::mean_rows(p)));
    }
  }
  return {ad::concat_rows(rows), classes, ClassifierMode::conditional};
}

inline Var random_prompt_baseline(int K, int d_text, std::uint64_t seed) {
  if (K < 1) throw ValidationError("random_prompt_baseline: K must be >= 1");
  Rng rng(derive_seed(seed, "random-prompt"));
  return ad::parameter(rng.normal_matrix(K, d_text, 0.02));
}

}  // namespace mmtal
