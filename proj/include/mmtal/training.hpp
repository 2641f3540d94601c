#pragma once

// Losses, the model bundle, the training loop, few-shot adaptation,
// inference and checkpoints.

#include "alignment.hpp"
#include "autodiff.hpp"
#include "classifiers.hpp"
#include "core.hpp"
#include "encoders.hpp"
#include "eval.hpp"
#include "localizer.hpp"
#include "nn.hpp"
#include "pyramid.hpp"

#include <array>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mmtal {

// ------------------------------------------------------------------ losses

struct LossBreakdown {
  double det = 0.0;
  double reg = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

inline LossBreakdown total_loss(double det, double reg, double cls, double lambda1 = 1.0, double lambda2 = 1.0) {
  for (auto [name, v] : {std::pair{"det", det}, {"reg", reg}, {"cls", cls}}) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("loss part '") + name + "' is not finite");
  }
  return {det, reg, cls, det + lambda1 * reg + lambda2 * cls};
}

/// One (video, level) slice of detector output with its targets.
struct DetTerm {
  Var actionness;
  const LevelTargets* targets = nullptr;
};

struct DetLoss {
  Var loss;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double gamma = 1.0;
};

/// Weighted cross-entropy over positives and gamma-weighted negatives,
/// divided by |pos| + |neg| unless raw_sum.
inline DetLoss loss_det(const std::vector<DetTerm>& terms, GammaMode mode, double gamma, bool raw_sum = false) {
  DetLoss out;
  for (const auto& t : terms) {
    out.positives += t.targets->num_positive();
    out.negatives += t.targets->num_negative();
  }
  out.gamma = mode == GammaMode::automatic
                  ? static_cast<double>(out.positives) / static_cast<double>(std::max<std::size_t>(out.negatives, 1))
                  : gamma;
  if (out.positives == 0) std::cerr << "warning: no positive frames in batch; detection loss uses negatives only\n";
  Var sum;
  for (const auto& t : terms) {
    const auto& labels = t.targets->labels;
    std::vector<int> y(labels.size());
    std::vector<double> w(labels.size());
    for (std::size_t j = 0; j < labels.size(); ++j) {
      y[j] = labels[j] == 1 ? 1 : 0;
      w[j] = labels[j] == 1 ? 1.0 : labels[j] == 0 ? out.gamma : 0.0;
    }
    Var term = ad::weighted_bce(t.actionness, y, w);
    sum = sum.defined() ? ad::add(sum, term) : term;
  }
  if (!sum.defined()) sum = ad::scalar(0.0);
  const double count = static_cast<double>(out.positives + out.negatives);
  out.loss = raw_sum || count == 0 ? sum : ad::scale(sum, 1.0 / count);
  return out;
}

struct RegTerm {
  Var offsets;
  const LevelTargets* targets = nullptr;
};

/// Decoded (start, end) rows for the positive frames of one level.
inline Var decode_positive_segments(const Var& offsets, const LevelTargets& t) {
  const auto n = static_cast<Eigen::Index>(t.positives.size());
  Var picked = ad::gather_rows(offsets, t.positives);
  Matrix sign(n, 2), centers(n, 2);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double c = frame_center(t.positives[static_cast<std::size_t>(k)], t.stride);
    sign(k, 0) = -t.stride;
    sign(k, 1) = t.stride;
    centers(k, 0) = c;
    centers(k, 1) = c;
  }
  return ad::add_const(ad::mul_const(picked, sign), centers);
}

/// Mean DIoU over positive frames (sum when raw_sum).
inline Var loss_reg(const std::vector<RegTerm>& terms, bool raw_sum = false) {
  Var sum;
  std::size_t n = 0;
  for (const auto& t : terms) {
    if (t.targets->positives.empty()) continue;
    Var term = ad::diou_loss_sum(decode_positive_segments(t.offsets, *t.targets), t.targets->segments);
    sum = sum.defined() ? ad::add(sum, term) : term;
    n += t.targets->positives.size();
  }
  if (!sum.defined()) return ad::scalar(0.0);
  return raw_sum ? sum : ad::scale(sum, 1.0 / static_cast<double>(n));
}

inline Var loss_reg(const Var& predicted, const Matrix& target) {
  if (predicted.rows() == 0) return ad::scalar(0.0);
  return ad::scale(ad::diou_loss_sum(predicted, target), 1.0 / static_cast<double>(predicted.rows()));
}

/// InfoNCE summed over proposals for one modality: aligned rows (N x D) vs
/// aligned bank (C x D).
inline Var loss_cls_sum(const Var& aligned, const Var& aligned_bank, const std::vector<int>& labels, double tau) {
  return ad::cross_entropy_rows(cosine_logits(aligned, aligned_bank, tau), labels);
}

/// Summed over modalities, averaged over proposals.
inline Var loss_cls(const std::vector<Var>& aligned_per_modality, const Var& aligned_bank,
                    const std::vector<int>& labels, double tau) {
  Var sum;
  for (const auto& a : aligned_per_modality) {
    Var term = loss_cls_sum(a, aligned_bank, labels, tau);
    sum = sum.defined() ? ad::add(sum, term) : term;
  }
  if (!sum.defined() || labels.empty()) return ad::scalar(0.0);
  return ad::scale(sum, 1.0 / static_cast<double>(labels.size()));
}

inline std::vector<int> class_labels(const std::vector<std::string>& names, const std::vector<std::string>& classes) {
  std::vector<int> out;
  for (const auto& n : names) {
    auto it = std::find(classes.begin(), classes.end(), n);
    if (it == classes.end()) throw ValidationError("class '" + n + "' is not in the classifier bank");
    out.push_back(static_cast<int>(it - classes.begin()));
  }
  return out;
}

// -------------------------------------------------------------------- model

struct Model {
  Config config;
  int d_rgb = 0;
  int d_flow = 0;
  std::vector<std::string> train_classes;
  DescriptionCache descriptions;
  std::shared_ptr<TextEncoder> encoder;
  PyramidParams pyramid_rgb;
  PyramidParams pyramid_flow;
  LocalizerHeads heads_rgb;
  LocalizerHeads heads_flow;
  Aligner aligner;
  PromptModule prompt_module;
  Var random_prompts;
  Var fusion_logits;
  std::map<std::string, Var> class_offsets;
  std::uint64_t global_step = 0;
  // Encodings that depend only on frozen weights, keyed by text.
  std::shared_ptr<std::map<std::string, Eigen::RowVectorXd>> text_cache =
      std::make_shared<std::map<std::string, Eigen::RowVectorXd>>();

  bool uses_prompts() const {
    return config.classifier_mode == ClassifierMode::conditional ||
           config.classifier_mode == ClassifierMode::random_prompt;
  }

  /// Every trainable tensor with a stable name, in a fixed order.
  nn::ParamList parameters() const {
    nn::ParamList out;
    const Modality m = config.modality;
    if (config.share_pyramid) {
      pyramid_rgb.collect(out, "pyramid.shared");
    } else {
      if (uses_rgb(m)) pyramid_rgb.collect(out, "pyramid.rgb");
      if (uses_flow(m)) pyramid_flow.collect(out, "pyramid.flow");
    }
    if (uses_rgb(m)) heads_rgb.collect(out, "heads.rgb");
    if (uses_flow(m)) heads_flow.collect(out, "heads.flow");
    if (uses_rgb(m)) aligner.rgb.collect(out, "aligner.rgb");
    if (uses_flow(m)) aligner.flow.collect(out, "aligner.flow");
    aligner.text.collect(out, "aligner.text");
    if (config.classifier_mode == ClassifierMode::conditional) prompt_module.collect(out, "prompt_module");
    if (config.classifier_mode == ClassifierMode::random_prompt) out.push_back({"random_prompts", random_prompts});
    if (config.classifier_mode == ClassifierMode::description && config.fusion == Fusion::weighted) {
      out.push_back({"fusion_logits", fusion_logits});
    }
    for (const auto& [cls, v] : class_offsets) out.push_back({"offsets." + cls, v});
    if (config.end_to_end) {
      for (auto& p : encoder->parameters()) out.push_back({"encoder." + p.name, p.var});
    }
    return out;
  }

  Model clone() const;
};

inline Model make_model(const Config& cfg, int d_rgb, int d_flow, std::vector<std::string> classes,
                        DescriptionCache descriptions = {}) {
  if (cfg.share_pyramid && d_rgb != d_flow) {
    throw ValidationError("share_pyramid needs d_rgb == d_flow, got " + std::to_string(d_rgb) + " and " +
                          std::to_string(d_flow));
  }
  Model m;
  m.config = cfg;
  m.d_rgb = d_rgb;
  m.d_flow = d_flow;
  m.train_classes = std::move(classes);
  m.descriptions = std::move(descriptions);
  m.encoder = std::make_shared<TextEncoder>(encoder_spec(cfg));
  m.encoder->set_trainable(cfg.end_to_end);
  auto rng_for = [&](const char* tag) { return Rng(derive_seed(cfg.seed, tag)); };
  {
    Rng r = rng_for("pyramid.rgb");
    m.pyramid_rgb = PyramidParams(r, cfg.L, d_rgb);
  }
  if (cfg.share_pyramid) {
    m.pyramid_flow = m.pyramid_rgb;
  } else {
    Rng r = rng_for("pyramid.flow");
    m.pyramid_flow = PyramidParams(r, cfg.L, d_flow);
  }
  {
    Rng r = rng_for("heads.rgb");
    m.heads_rgb = LocalizerHeads(r, d_rgb, cfg.head_hidden);
  }
  {
    Rng r = rng_for("heads.flow");
    m.heads_flow = LocalizerHeads(r, d_flow, cfg.head_hidden);
  }
  {
    Rng r = rng_for("aligner");
    m.aligner = Aligner(r, d_rgb, d_flow, cfg.D_text, cfg.D_align);
  }
  if (cfg.classifier_mode == ClassifierMode::conditional) {
    Rng r = rng_for("prompt_module");
    m.prompt_module = PromptModule(r, cfg.K, cfg.D_text, d_rgb, d_flow, cfg.modality);
  }
  m.random_prompts = random_prompt_baseline(cfg.K, cfg.D_text, cfg.seed);
  m.fusion_logits = nn::zeros(1, 3);
  return m;
}

inline Model Model::clone() const {
  Model m = make_model(config, d_rgb, d_flow, train_classes, descriptions);
  for (const auto& [cls, v] : class_offsets) m.class_offsets[cls] = ad::parameter(v.value());
  m.global_step = global_step;
  auto copy = [](const nn::ParamList& from, const nn::ParamList& to) {
    for (std::size_t i = 0; i < from.size(); ++i) {
      Var dst = to[i].var;
      dst.mutable_value() = from[i].var.value();
      dst.set_requires_grad(from[i].var.requires_grad());
    }
  };
  copy(parameters(), m.parameters());
  copy(encoder->parameters(), m.encoder->parameters());
  if (!config.end_to_end) m.text_cache = text_cache;
  return m;
}

// ---------------------------------------------------------------- forward

inline FramePredictions detect(const Model& m, const VideoFeatures& v,
                               nn::AttentionMode mode = nn::AttentionMode::full) {
  const Eigen::VectorXd* valid = v.valid.size() == v.num_snippets() ? &v.valid : nullptr;
  const Modality mod = m.config.modality;
  FramePredictions rgb, flow;
  if (uses_rgb(mod)) rgb = predict_heads(build_pyramid(v.rgb, m.pyramid_rgb, valid, mode), m.heads_rgb);
  if (uses_flow(mod)) flow = predict_heads(build_pyramid(v.flow, m.pyramid_flow, valid, mode), m.heads_flow);
  if (mod == Modality::rgb) return rgb;
  if (mod == Modality::flow) return flow;
  return fuse_predictions(rgb, flow);
}

inline Eigen::RowVectorXd cached_encoding(const Model& m, const std::string& text) {
  if (m.config.end_to_end) return m.encoder->encode(m.encoder->tokenize(text)).value();
  auto it = m.text_cache->find(text);
  if (it != m.text_cache->end()) return it->second;
  ad::NoGradGuard guard;
  Eigen::RowVectorXd e = m.encoder->encode(m.encoder->tokenize(text)).value();
  m.text_cache->emplace(text, e);
  return e;
}

inline Var encode_text_row(const Model& m, const std::string& text) {
  if (m.config.end_to_end) return m.encoder->encode(m.encoder->tokenize(text));
  return ad::constant(Matrix(cached_encoding(m, text)));
}

/// Output-position few-shot offsets for banks built without prompt vectors.
inline Var apply_output_offsets(const Model& m, const Var& bank, const std::vector<std::string>& classes) {
  bool any = false;
  for (const auto& c : classes) any = any || m.class_offsets.count(c);
  if (!any) return bank;
  std::vector<Var> rows;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    Var row = ad::slice_rows(bank, static_cast<Eigen::Index>(i), 1);
    auto it = m.class_offsets.find(classes[i]);
    if (it != m.class_offsets.end()) row = add_and_normalize(row, ad::mean_rows(it->second));
    rows.push_back(row);
  }
  return ad::concat_rows(rows);
}

/// Classifier bank for `classes`; conditional mode needs the video whose
/// features generate the prompts.
inline ClassifierBank build_bank(const Model& m, const std::vector<std::string>& classes,
                                 const VideoFeatures* video = nullptr) {
  const Config& c = m.config;
  switch (c.classifier_mode) {
    case ClassifierMode::name_only: {
      std::vector<Var> rows;
      for (const auto& cls : classes) rows.push_back(encode_text_row(m, cls));
      return {apply_output_offsets(m, ad::concat_rows(rows), classes), classes, ClassifierMode::name_only};
    }
    case ClassifierMode::description: {
      require_descriptions(m.descriptions, classes, c.description_fallback);
      auto text_of = [&](const std::string& cls, std::size_t k) {
        auto it = m.descriptions.find(cls);
        std::string t = it == m.descriptions.end() ? "" : it->second.as_array()[k];
        return t.empty() ? fallback_description(cls) : t;
      };
      Var bank;
      if (c.fusion == Fusion::concat) {
        std::vector<Var> rows;
        for (const auto& cls : classes) {
          std::string text;
          auto it = m.descriptions.find(cls);
          if (it != m.descriptions.end()) {
            for (const auto& part : it->second.as_array())
              if (!part.empty()) text += (text.empty() ? "" : " ") + part;
          }
          rows.push_back(encode_text_row(m, text.empty() ? fallback_description(cls) : text));
        }
        bank = ad::concat_rows(rows);
      } else if (c.end_to_end) {
        std::array<Var, 3> parts;
        for (std::size_t k = 0; k < 3; ++k) {
          std::vector<Var> rows;
          for (const auto& cls : classes) rows.push_back(encode_text_row(m, text_of(cls, k)));
          parts[k] = ad::concat_rows(rows);
        }
        if (c.fusion == Fusion::average) {
          bank = ad::l2_normalize_rows(ad::add(ad::add(parts[0], parts[1]), parts[2]));
        } else {
          Var w = ad::softmax_rows(m.fusion_logits);
          for (std::size_t k = 0; k < 3; ++k) {
            Var wk = ad::matmul(ad::constant(Matrix::Ones(static_cast<Eigen::Index>(classes.size()), 1)),
                                ad::slice_cols(w, static_cast<Eigen::Index>(k), 1));
            Var term = ad::mul(ad::matmul(wk, ad::constant(Matrix::Ones(1, c.D_text))), parts[k]);
            bank = k == 0 ? term : ad::add(bank, term);
          }
          bank = ad::l2_normalize_rows(bank);
        }
      } else {
        std::array<Matrix, 3> enc3;
        for (std::size_t k = 0; k < 3; ++k) {
          enc3[k].resize(static_cast<Eigen::Index>(classes.size()), c.D_text);
          for (std::size_t i = 0; i < classes.size(); ++i) {
            enc3[k].row(static_cast<Eigen::Index>(i)) = cached_encoding(m, text_of(classes[i], k));
          }
        }
        DescriptionOptions opts;
        opts.fusion = c.fusion;
        opts.weight_logits = m.fusion_logits;
        bank = fuse_attribute_encodings(enc3, opts);
      }
      return {apply_output_offsets(m, bank, classes), classes, ClassifierMode::description};
    }
    case ClassifierMode::conditional:
    case ClassifierMode::random_prompt: {
      Var prompts;
      if (c.classifier_mode == ClassifierMode::conditional) {
        if (!video) throw std::invalid_argument("build_bank: conditional mode needs a video");
        prompts = conditional_prompts(m.prompt_module, video->rgb, video->flow,
                                      video->valid.size() == video->num_snippets() ? &video->valid : nullptr);
      } else {
        prompts = m.random_prompts;
      }
      std::vector<Var> offsets(classes.size());
      for (std::size_t i = 0; i < classes.size(); ++i) {
        auto it = m.class_offsets.find(classes[i]);
        if (it != m.class_offsets.end()) offsets[i] = it->second;
      }
      ClassifierBank bank = build_conditional_classifier(prompts, classes, *m.encoder, c.prompt_position, &offsets);
      bank.mode = c.classifier_mode;
      return bank;
    }
  }
  throw std::logic_error("build_bank: unknown mode");
}

inline std::vector<AlignModality> visual_modalities(Modality m) {
  std::vector<AlignModality> out;
  if (uses_rgb(m)) out.push_back(AlignModality::rgb);
  if (uses_flow(m)) out.push_back(AlignModality::flow);
  return out;
}

/// Aligned pooled features of the given segments, one matrix per modality.
inline std::vector<Var> aligned_segments(const Model& m, const VideoFeatures& v,
                                         const std::vector<std::pair<double, double>>& segs) {
  std::vector<Var> out;
  for (AlignModality am : visual_modalities(m.config.modality)) {
    const Matrix& f = am == AlignModality::rgb ? v.rgb : v.flow;
    out.push_back(align(m.aligner, ad::constant(pool_segments(f, segs)), am));
  }
  return out;
}

// ----------------------------------------------------------------- optimizer

class Adam {
 public:
  Adam(nn::ParamList params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var p = params_[i].var;
      if (!p.has_grad()) continue;
      const Matrix g = p.grad();
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
      const Matrix mhat = m_[i] / c1;
      const Matrix vhat = v_[i] / c2;
      p.mutable_value() -= lr * mhat.cwiseQuotient((vhat.array().sqrt() + eps_).matrix());
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      Var v = p.var;
      v.zero_grad();
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  nn::ParamList params_;
  double b1_, b2_, eps_;
  std::vector<Matrix> m_, v_;
  std::uint64_t t_ = 0;
};

// ------------------------------------------------------------------ training

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  LossBreakdown loss;  // mean over the epoch's steps
};

struct TrainOptions {
  int max_steps = -1;  // stop early after this many optimizer steps
  const DescriptionCache* descriptions = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
};

/// Base classes and the training videos allowed under a split: videos that
/// contain any novel annotation are excluded.
inline std::vector<const VideoFeatures*> training_videos(const Dataset& ds, const std::vector<std::string>& classes) {
  const std::set<std::string> keep(classes.begin(), classes.end());
  std::vector<const VideoFeatures*> out;
  for (const auto& v : ds.videos) {
    if (v.subset != Subset::train) continue;
    bool clean = true;
    for (const auto& a : v.annotations) clean = clean && keep.count(a.class_name);
    if (clean) out.push_back(&v);
  }
  return out;
}

/// Classification segments and labels for one training video.
inline std::vector<std::pair<double, double>> training_segments(const Model& m, const VideoFeatures& v,
                                                                const FramePredictions& preds,
                                                                std::vector<std::string>& names) {
  std::vector<std::pair<double, double>> segs;
  names.clear();
  if (!m.config.train_on_proposals) {
    for (const auto& a : v.annotations) {
      segs.emplace_back(a.start, a.end);
      names.push_back(a.class_name);
    }
    return segs;
  }
  for (const auto& p : decode_proposals(preds, m.config.theta_loc)) {
    double best = 0.0;
    const ActionInstance* match = nullptr;
    for (const auto& a : v.annotations) {
      const double iou = segment_iou(p.start, p.end, a.start, a.end);
      if (iou > best) {
        best = iou;
        match = &a;
      }
    }
    if (match && best >= 0.5) {
      segs.emplace_back(p.start, p.end);
      names.push_back(match->class_name);
    }
  }
  return segs;
}

struct BatchLoss {
  Var total;
  LossBreakdown parts;
};

inline BatchLoss batch_loss(const Model& m, const std::vector<const VideoFeatures*>& batch,
                            const std::vector<std::string>& classes) {
  const Config& c = m.config;
  std::vector<FramePredictions> preds;
  std::vector<TargetAssignment> targets;
  preds.reserve(batch.size());
  targets.reserve(batch.size());
  for (const VideoFeatures* v : batch) {
    preds.push_back(detect(m, *v));
    std::vector<Eigen::Index> lengths;
    std::vector<Eigen::VectorXd> masks;
    for (const auto& lp : preds.back().levels) {
      lengths.push_back(lp.actionness.rows());
      masks.push_back(lp.mask);
    }
    targets.push_back(assign_targets(v->annotations, lengths, c.range_base, &masks));
  }
  std::vector<DetTerm> det_terms;
  std::vector<RegTerm> reg_terms;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t l = 0; l < preds[b].levels.size(); ++l) {
      det_terms.push_back({preds[b].levels[l].actionness, &targets[b].levels[l]});
      reg_terms.push_back({preds[b].levels[l].offsets, &targets[b].levels[l]});
    }
  }
  Var det = loss_det(det_terms, c.gamma_mode, c.gamma, c.loss_sum).loss;
  Var reg = loss_reg(reg_terms, c.loss_sum);

  // Shared banks are built once per batch; conditional banks per video.
  std::optional<Var> shared_bank;
  if (c.classifier_mode != ClassifierMode::conditional) {
    shared_bank = align(m.aligner, build_bank(m, classes).embeddings, AlignModality::text);
  }
  Var cls_sum;
  std::size_t n_cls = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::vector<std::string> names;
    const auto segs = training_segments(m, *batch[b], preds[b], names);
    if (segs.empty()) continue;
    const auto labels = class_labels(names, classes);
    Var bank = shared_bank ? *shared_bank
                           : align(m.aligner, build_bank(m, classes, batch[b]).embeddings, AlignModality::text);
    for (const Var& a : aligned_segments(m, *batch[b], segs)) {
      Var term = loss_cls_sum(a, bank, labels, c.tau);
      cls_sum = cls_sum.defined() ? ad::add(cls_sum, term) : term;
    }
    n_cls += segs.size();
  }
  Var cls = cls_sum.defined() ? (c.loss_sum ? cls_sum : ad::scale(cls_sum, 1.0 / static_cast<double>(n_cls)))
                              : ad::scalar(0.0);
  Var total = ad::add(ad::add(det, ad::scale(reg, c.lambda1)), ad::scale(cls, c.lambda2));
  BatchLoss out;
  out.parts = total_loss(det.item(), reg.item(), cls.item(), c.lambda1, c.lambda2);
  out.total = total;
  return out;
}

inline TrainResult train(const Dataset& ds, const SplitSpec* split, const Config& cfg, const TrainOptions& opts = {}) {
  const std::vector<std::string> classes = split ? split->base : ds.classes;
  if (classes.empty()) throw ValidationError("train: empty base class list");
  for (const auto& cls : classes) {
    if (std::find(ds.classes.begin(), ds.classes.end(), cls) == ds.classes.end()) {
      throw ValidationError("train: split class '" + cls + "' is not in the manifest");
    }
  }
  const auto videos = training_videos(ds, classes);
  if (videos.empty()) throw ValidationError("train: no training videos with base-only annotations");
  for (const auto* v : videos) {
    if (v->num_snippets() < min_snippets_for(cfg.L)) {
      throw ValidationError("video '" + v->video_id + "' has " + std::to_string(v->num_snippets()) +
                            " snippets; L=" + std::to_string(cfg.L) + " needs at least " +
                            std::to_string(min_snippets_for(cfg.L)));
    }
  }
  TrainResult res{make_model(cfg, ds.d_rgb, ds.d_flow, classes, opts.descriptions ? *opts.descriptions : DescriptionCache{}),
                  {}};
  Model& m = res.model;
  if (cfg.classifier_mode == ClassifierMode::description) {
    require_descriptions(m.descriptions, classes, cfg.description_fallback);
  }
  Adam adam(m.parameters());
  const auto n = static_cast<int>(videos.size());
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double warmup_steps = static_cast<double>(cfg.warmup_epochs) * steps_per_epoch;
  int step = 0;
  for (int epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, "epoch." + std::to_string(epoch)));
    rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (int s = 0; s < steps_per_epoch; ++s) {
      if (opts.max_steps >= 0 && step >= opts.max_steps) break;
      std::vector<const VideoFeatures*> batch;
      for (int k = s * cfg.batch_size; k < std::min(n, (s + 1) * cfg.batch_size); ++k) {
        batch.push_back(videos[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
      }
      BatchLoss bl = batch_loss(m, batch, classes);
      bl.total.backward();
      const double scale = warmup_steps > 0 ? std::min(1.0, (step + 1) / warmup_steps) : 1.0;
      adam.step(cfg.lr * scale);
      adam.zero_grad();
      ++step;
      ++m.global_step;
      rec.loss.det += bl.parts.det;
      rec.loss.reg += bl.parts.reg;
      rec.loss.cls += bl.parts.cls;
      rec.loss.total += bl.parts.total;
      ++rec.steps;
    }
    if (rec.steps == 0) break;
    const double inv = 1.0 / rec.steps;
    rec.loss = {rec.loss.det * inv, rec.loss.reg * inv, rec.loss.cls * inv, rec.loss.total * inv};
    res.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (opts.max_steps >= 0 && step >= opts.max_steps) break;
  }
  return res;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,det,reg,cls,total\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.loss.det << ',' << r.loss.reg << ',' << r.loss.cls << ',' << r.loss.total << '\n';
  }
  return out.str();
}

// --------------------------------------------------------------- few-shot

/// Tunes per-class prompt offsets (optionally the prompt module) on support
/// clips with L_cls against a bank over `classes`. Everything else is frozen.
inline Model few_shot_adapt(const Model& trained, const Dataset& ds,
                            const std::map<std::string, std::vector<std::string>>& support,
                            const std::vector<std::string>& classes, const Config& cfg) {
  Model m = trained.clone();
  std::size_t total_videos = 0;
  for (const auto& [cls, vids] : support) total_videos += vids.size();
  if (total_videos == 0) return m;

  struct Clip {
    const VideoFeatures* video;
    std::vector<std::pair<double, double>> segs;
    std::vector<int> labels;
  };
  std::vector<Clip> clips;
  for (const auto& [cls, vids] : support) {
    if (std::find(classes.begin(), classes.end(), cls) == classes.end()) {
      throw ValidationError("support class '" + cls + "' is not among the adaptation classes");
    }
    for (const auto& id : vids) {
      const VideoFeatures* v = ds.find(id);
      if (!v) throw ValidationError("support video '" + id + "' not in manifest");
      Clip clip{v, {}, {}};
      for (const auto& a : v->annotations) {
        if (a.class_name != cls) continue;
        clip.segs.emplace_back(a.start, a.end);
        clip.labels.push_back(class_labels({a.class_name}, classes).front());
      }
      if (clip.segs.empty()) {
        throw ValidationError("support video '" + id + "' has no annotation of class '" + cls + "'");
      }
      clips.push_back(std::move(clip));
    }
  }

  nn::set_trainable(m.parameters(), false);
  nn::ParamList tuned;
  for (const auto& [cls, vids] : support) {
    if (vids.empty() || m.class_offsets.count(cls)) continue;
    m.class_offsets[cls] = ad::parameter(Matrix::Zero(m.config.K, m.config.D_text));
  }
  for (const auto& [cls, v] : m.class_offsets) {
    if (support.count(cls)) {
      Var p = v;
      p.set_requires_grad(true);
      tuned.push_back({"offsets." + cls, v});
    }
  }
  if (cfg.fewshot_tune_prompt_module && m.config.classifier_mode == ClassifierMode::conditional) {
    nn::ParamList pm;
    m.prompt_module.collect(pm, "prompt_module");
    nn::set_trainable(pm, true);
    tuned.insert(tuned.end(), pm.begin(), pm.end());
  }
  Adam adam(tuned);
  const bool per_video_bank = m.config.classifier_mode == ClassifierMode::conditional;
  for (int step = 0; step < cfg.fewshot_steps; ++step) {
    Var sum;
    std::size_t count = 0;
    std::optional<Var> shared;
    if (!per_video_bank) shared = align(m.aligner, build_bank(m, classes).embeddings, AlignModality::text);
    for (const auto& clip : clips) {
      Var bank = shared ? *shared : align(m.aligner, build_bank(m, classes, clip.video).embeddings, AlignModality::text);
      for (const Var& a : aligned_segments(m, *clip.video, clip.segs)) {
        Var term = loss_cls_sum(a, bank, clip.labels, m.config.tau);
        sum = sum.defined() ? ad::add(sum, term) : term;
      }
      count += clip.segs.size();
    }
    ad::scale(sum, 1.0 / static_cast<double>(count)).backward();
    adam.step(cfg.fewshot_lr);
    adam.zero_grad();
  }
  nn::set_trainable(m.parameters(), true);
  if (!m.config.end_to_end) m.encoder->set_trainable(false);
  return m;
}

// ---------------------------------------------------------------- inference

/// Detect, decode, classify over `classes`, then soft-NMS.
inline std::vector<Proposal> infer_video(const Model& m, const VideoFeatures& v,
                                         const std::vector<std::string>& classes) {
  ad::NoGradGuard guard;
  const Config& c = m.config;
  std::vector<Proposal> props = decode_proposals(detect(m, v), c.theta_loc);
  if (props.empty()) return props;
  std::vector<std::pair<double, double>> segs;
  for (const auto& p : props) segs.emplace_back(p.start, p.end);
  std::vector<Matrix> visual;
  for (const Var& a : aligned_segments(m, v, segs)) visual.push_back(a.value());
  const Matrix bank = align(m.aligner, build_bank(m, classes, &v).embeddings, AlignModality::text).value();
  props = score_proposals(std::move(props), visual, bank, classes, c.tau, c.theta_cls);
  SoftNmsOptions nms;
  nms.iou_threshold = c.nms_iou;
  nms.mode = c.nms_mode;
  nms.sigma = c.nms_sigma;
  return soft_nms(std::move(props), nms);
}

inline void check_dataset_dims(const Model& m, const Dataset& ds) {
  if (ds.d_rgb != m.d_rgb || ds.d_flow != m.d_flow) {
    throw ValidationError("feature dimension mismatch: checkpoint expects d_rgb=" + std::to_string(m.d_rgb) +
                          ", d_flow=" + std::to_string(m.d_flow) + " but manifest has d_rgb=" +
                          std::to_string(ds.d_rgb) + ", d_flow=" + std::to_string(ds.d_flow));
  }
}

/// Predictions for every video of `subset` (all videos when subset is empty)
/// whose id passes `keep`.
inline std::vector<Detection> infer_dataset(const Model& m, const Dataset& ds, const std::vector<std::string>& classes,
                                            std::optional<Subset> subset = Subset::test,
                                            const std::function<bool(const VideoFeatures&)>& keep = {}) {
  check_dataset_dims(m, ds);
  std::vector<Detection> out;
  for (const auto& v : ds.videos) {
    if (subset && v.subset != *subset) continue;
    if (keep && !keep(v)) continue;
    auto dets = to_detections(v.video_id, infer_video(m, v, classes));
    out.insert(out.end(), dets.begin(), dets.end());
  }
  return out;
}

// --------------------------------------------------------------- checkpoint

constexpr int kCheckpointVersion = 1;

inline json matrix_to_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != r * c) throw ValidationError("checkpoint: tensor size mismatch");
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[static_cast<std::size_t>(i * c + k)].get<double>();
  return m;
}

inline json checkpoint_to_json(const Model& m) {
  json params = json::object();
  for (const auto& p : m.parameters()) params[p.name] = matrix_to_json(p.var.value());
  json offsets = json::array();
  for (const auto& [cls, v] : m.class_offsets) offsets.push_back(cls);
  return {{"format", "mmtal-checkpoint"},
          {"version", kCheckpointVersion},
          {"config", to_json(m.config)},
          {"d_rgb", m.d_rgb},
          {"d_flow", m.d_flow},
          {"train_classes", m.train_classes},
          {"offset_classes", offsets},
          {"descriptions", to_json(m.descriptions)},
          {"rng", {{"seed", m.config.seed}, {"global_step", m.global_step}}},
          {"encoder_checksum", std::to_string(m.encoder->checksum())},
          {"parameters", params}};
}

inline Model checkpoint_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "mmtal-checkpoint") throw ValidationError("not a checkpoint file");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw ValidationError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    const Config cfg = validate_config(j.at("config"));
    Model m = make_model(cfg, j.at("d_rgb").get<int>(), j.at("d_flow").get<int>(),
                         j.at("train_classes").get<std::vector<std::string>>(),
                         descriptions_from_json(j.at("descriptions")));
    for (const auto& cls : j.at("offset_classes")) {
      m.class_offsets[cls.get<std::string>()] = ad::parameter(Matrix::Zero(cfg.K, cfg.D_text));
    }
    m.global_step = j.at("rng").at("global_step").get<std::uint64_t>();
    const json& params = j.at("parameters");
    for (const auto& p : m.parameters()) {
      if (!params.contains(p.name)) throw ValidationError("checkpoint: missing parameter '" + p.name + "'");
      Matrix v = matrix_from_json(params.at(p.name));
      if (v.rows() != p.var.rows() || v.cols() != p.var.cols()) {
        throw ValidationError("checkpoint: parameter '" + p.name + "' has shape " + std::to_string(v.rows()) + "x" +
                              std::to_string(v.cols()) + ", expected " + std::to_string(p.var.rows()) + "x" +
                              std::to_string(p.var.cols()));
      }
      Var dst = p.var;
      dst.mutable_value() = std::move(v);
    }
    if (!cfg.end_to_end && std::to_string(m.encoder->checksum()) != j.at("encoder_checksum").get<std::string>()) {
      throw ValidationError("checkpoint: text encoder checksum mismatch");
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const fs::path& path, const Model& m) { write_json_file(path, checkpoint_to_json(m)); }

inline Model load_checkpoint(const fs::path& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace mmtal
