#pragma once

// Deterministic synthetic datasets: class prototypes coupled to the text
// encoder's view of each class description, stub features, manifest and
// descriptions.json.

#include "classifiers.hpp"
#include "core.hpp"
#include "encoders.hpp"
#include "rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mmtal {

struct SynthSpec {
  int n_classes = 8;
  int n_train_videos = 100;
  int n_test_videos = 40;
  int T = 256;
  int instances_min = 1;
  int instances_max = 3;
  int length_min = 8;
  int length_max = 40;
  int min_gap = 2;
  double noise = 0.1;
  double text_visual_coupling = 0.9;
  std::uint64_t seed = 0;
  int d_rgb = 16;
  int d_flow = 16;
  int d_text = 16;
  std::uint64_t encoder_seed = 1234;
  int vocab_size = 49408;
  int max_tokens = 77;
};

inline void validate(const SynthSpec& s) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("synth spec: " + msg);
  };
  need(s.n_classes >= 1, "n_classes must be >= 1");
  need(s.n_train_videos >= 0 && s.n_test_videos >= 0, "video counts must be >= 0");
  need(s.T >= 1, "T must be >= 1");
  need(s.instances_min >= 1 && s.instances_min <= s.instances_max, "instances_per_video needs 1 <= min <= max");
  need(s.length_min >= 1 && s.length_min <= s.length_max, "length_range needs 1 <= min <= max");
  need(s.length_max < s.T, "length_range max must be < T");
  need(s.min_gap >= 0, "min_gap must be >= 0");
  need(s.noise >= 0.0, "noise must be >= 0");
  need(s.text_visual_coupling >= 0.0 && s.text_visual_coupling <= 1.0, "text_visual_coupling must be in [0, 1]");
  need(s.d_rgb >= 1 && s.d_flow >= 1 && s.d_text >= 4, "dims must be positive (d_text >= 4)");
  const long worst = static_cast<long>(s.instances_max) * s.length_max + static_cast<long>(s.instances_max - 1) * s.min_gap;
  if (worst > s.T) {
    throw ValidationError("synth spec: infeasible packing: " + std::to_string(s.instances_max) + " instances of length " +
                          std::to_string(s.length_max) + " with gap " + std::to_string(s.min_gap) + " need " +
                          std::to_string(worst) + " > T=" + std::to_string(s.T) + " snippets");
  }
}

inline SynthSpec synth_spec_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("synth spec must be a JSON object");
  SynthSpec s;
  auto pair = [](const json& v, const std::string& key, int& lo, int& hi) {
    if (!v.is_array() || v.size() != 2) throw ValidationError("synth spec: '" + key + "' must be [min, max]");
    lo = v[0].get<int>();
    hi = v[1].get<int>();
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_classes") s.n_classes = v.get<int>();
      else if (key == "n_train_videos") s.n_train_videos = v.get<int>();
      else if (key == "n_test_videos") s.n_test_videos = v.get<int>();
      else if (key == "T") s.T = v.get<int>();
      else if (key == "instances_per_video") pair(v, key, s.instances_min, s.instances_max);
      else if (key == "length_range") pair(v, key, s.length_min, s.length_max);
      else if (key == "min_gap") s.min_gap = v.get<int>();
      else if (key == "noise") s.noise = v.get<double>();
      else if (key == "text_visual_coupling") s.text_visual_coupling = v.get<double>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "d_rgb") s.d_rgb = v.get<int>();
      else if (key == "d_flow") s.d_flow = v.get<int>();
      else if (key == "d_text") s.d_text = v.get<int>();
      else if (key == "encoder_seed") s.encoder_seed = v.get<std::uint64_t>();
      else if (key == "vocab_size") s.vocab_size = v.get<int>();
      else if (key == "max_tokens") s.max_tokens = v.get<int>();
      else throw ValidationError("synth spec: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth spec: ") + e.what());
  }
  validate(s);
  return s;
}

inline json to_json(const SynthSpec& s) {
  return {{"n_classes", s.n_classes},
          {"n_train_videos", s.n_train_videos},
          {"n_test_videos", s.n_test_videos},
          {"T", s.T},
          {"instances_per_video", {s.instances_min, s.instances_max}},
          {"length_range", {s.length_min, s.length_max}},
          {"min_gap", s.min_gap},
          {"noise", s.noise},
          {"text_visual_coupling", s.text_visual_coupling},
          {"seed", s.seed},
          {"d_rgb", s.d_rgb},
          {"d_flow", s.d_flow},
          {"d_text", s.d_text},
          {"encoder_seed", s.encoder_seed},
          {"vocab_size", s.vocab_size},
          {"max_tokens", s.max_tokens}};
}

/// 200 distinct pronounceable pseudo-words, deterministic in seed.
inline std::vector<std::string> word_pool(std::uint64_t seed, std::size_t n = 200) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  Rng rng(derive_seed(seed, "synth.words"));
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const auto syllables = rng.uniform_int(2, 3);
    for (int k = 0; k < syllables; ++k) {
      w += onsets[rng.uniform_int(0, 15)];
      w += vowels[rng.uniform_int(0, 6)];
    }
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

namespace detail {

inline double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  return a.dot(b) / std::max(a.norm() * b.norm(), 1e-300);
}

/// Appends words from `candidates` to `prefix` one at a time, each time
/// taking the word whose encoding is most aligned with `target`; stops when
/// no word improves the alignment or the text reaches max_words.
inline std::string greedy_text(const TextEncoder& enc, std::string prefix, const std::vector<std::string>& candidates,
                               const Eigen::RowVectorXd& target, std::size_t max_words, std::size_t min_added,
                               const std::set<std::string>& banned = {}) {
  auto words_in = [](const std::string& s) {
    std::size_t n = 0;
    std::istringstream in(s);
    std::string w;
    while (in >> w) ++n;
    return n;
  };
  double best_score = prefix.empty() ? -2.0 : cosine(enc.encode(prefix).value(), target);
  std::size_t added = 0;
  while (words_in(prefix) < max_words) {
    double round_best = -2.0;
    std::string round_text;
    for (const auto& w : candidates) {
      if (banned.count(w)) continue;
      const std::string text = prefix.empty() ? w : prefix + " " + w;
      const double s = cosine(enc.encode(text).value(), target);
      if (s > round_best) {
        round_best = s;
        round_text = text;
      }
    }
    if (round_text.empty() || (added >= min_added && round_best <= best_score)) break;
    prefix = round_text;
    best_score = round_best;
    ++added;
  }
  return prefix;
}

/// Random dim_out x dim_in map with orthonormal columns (or rows when dim_out < dim_in).
inline Matrix semi_orthogonal(Rng& rng, Eigen::Index dim_out, Eigen::Index dim_in) {
  const Eigen::Index big = std::max(dim_out, dim_in), small = std::min(dim_out, dim_in);
  const Matrix g = rng.normal_matrix(big, small, 1.0);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  for (Eigen::Index j = 0; j < small; ++j) {
    if (qr.matrixQR()(j, j) < 0) q.col(j) = -q.col(j);
  }
  return dim_out >= dim_in ? q : Matrix(q.transpose());
}

inline std::string random_text(Rng& rng, std::string prefix, const std::vector<std::string>& candidates,
                               std::size_t n_words) {
  for (std::size_t k = 0; k < n_words; ++k) {
    const auto& w = candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];
    prefix = prefix.empty() ? w : prefix + " " + w;
  }
  return prefix;
}

/// Non-overlapping integer segments with at least `gap` snippets between them.
inline std::vector<std::pair<int, int>> place_segments(Rng& rng, int T, const std::vector<int>& lengths, int gap) {
  int used = gap * (static_cast<int>(lengths.size()) - 1);
  for (int l : lengths) used += l;
  const int slack = T - used;
  if (slack < 0) throw ValidationError("synth: infeasible packing");
  // Distribute slack into len+1 bins via sorted cut points.
  std::vector<int> cuts;
  for (std::size_t k = 0; k < lengths.size(); ++k) cuts.push_back(static_cast<int>(rng.uniform_int(0, slack)));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::pair<int, int>> out;
  int pos = 0, prev_cut = 0;
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    pos += cuts[k] - prev_cut;
    prev_cut = cuts[k];
    out.emplace_back(pos, pos + lengths[k]);
    pos += lengths[k] + gap;
  }
  return out;
}

}  // namespace detail

struct SynthClasses {
  std::vector<std::string> names;
  DescriptionCache descriptions;
  Matrix text_anchor;   // C x d_text, centered mean description encodings
  Matrix proto_rgb;     // C x d_rgb, unit rows
  Matrix proto_flow;    // C x d_flow, unit rows
  double achieved_coupling = 0.0;
};

inline SynthClasses synth_classes(const SynthSpec& s) {
  validate(s);
  ad::NoGradGuard guard;
  const TextEncoder enc({s.vocab_size, s.max_tokens, s.d_text, s.encoder_seed});
  const auto pool = word_pool(s.seed);
  const bool random_words = s.text_visual_coupling == 0.0;
  std::array<std::vector<std::string>, 3> attr_pool;
  for (std::size_t i = 0; i < pool.size(); ++i) attr_pool[i % 3].push_back(pool[i]);

  SynthClasses out;
  std::set<std::string> used_name_words;
  Matrix anchors(s.n_classes, s.d_text);
  for (int c = 0; c < s.n_classes; ++c) {
    Rng rng(derive_seed(s.seed, "synth.class." + std::to_string(c)));
    const Eigen::RowVectorXd latent = rng.unit_vector(s.d_text);
    std::string name;
    if (random_words) {
      do {
        name = detail::random_text(rng, "", pool, 2);
      } while (std::find(out.names.begin(), out.names.end(), name) != out.names.end());
    } else {
      name = detail::greedy_text(enc, "", pool, latent, 2, 2, used_name_words);
    }
    {
      std::istringstream in(name);
      std::string w;
      while (in >> w) used_name_words.insert(w);
    }
    AttributeAnswers a;
    std::array<std::string*, 3> slots{&a.what, &a.where, &a.how};
    for (std::size_t k = 0; k < 3; ++k) {
      *slots[k] = random_words ? detail::random_text(rng, name, attr_pool[k], 6)
                               : detail::greedy_text(enc, name, attr_pool[k], latent, 20, 1);
    }
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(s.d_text);
    for (auto* t : slots) mean += enc.encode(*t).value();
    anchors.row(c) = mean / mean.norm();
    out.names.push_back(name);
    out.descriptions[name] = a;
  }
  const Eigen::RowVectorXd centroid = anchors.colwise().mean();
  out.text_anchor = anchors.rowwise() - centroid;

  auto prototypes = [&](const char* tag, int dim) {
    Rng rng(derive_seed(s.seed, std::string("synth.proto.") + tag));
    const Matrix P = detail::semi_orthogonal(rng, dim, s.d_text);
    Matrix protos(s.n_classes, dim);
    double coupling_sum = 0.0;
    for (int c = 0; c < s.n_classes; ++c) {
      Eigen::RowVectorXd u = (P * out.text_anchor.row(c).transpose()).transpose();
      if (u.norm() < 1e-12) u = rng.unit_vector(dim);
      u /= u.norm();
      Eigen::RowVectorXd r = rng.unit_vector(dim);
      r -= r.dot(u) * u;
      if (r.norm() < 1e-12) r = Eigen::RowVectorXd::Zero(dim);
      else r /= r.norm();
      const double k = s.text_visual_coupling;
      Eigen::RowVectorXd p = k * u + std::sqrt(std::max(0.0, 1.0 - k * k)) * r;
      if (p.norm() < 1e-12) p = u;
      p /= p.norm();
      protos.row(c) = p;
      coupling_sum += p.dot(u);
    }
    return std::pair{protos, coupling_sum / s.n_classes};
  };
  auto [pr, kr] = prototypes("rgb", s.d_rgb);
  auto [pf, kf] = prototypes("flow", s.d_flow);
  out.proto_rgb = pr;
  out.proto_flow = pf;
  out.achieved_coupling = 0.5 * (kr + kf);
  return out;
}

inline std::string synth_video_id(const char* subset, int i) {
  std::ostringstream id;
  id << subset << '_' << std::setw(4) << std::setfill('0') << i;
  return id.str();
}

/// Writes manifest.json, descriptions.json and features/ under out_dir and
/// returns the manifest path.
inline fs::path generate(const SynthSpec& s, const fs::path& out_dir) {
  const SynthClasses sc = synth_classes(s);
  fs::create_directories(out_dir / "features");
  json videos = json::array();
  auto emit = [&](const char* subset, int count) {
    for (int i = 0; i < count; ++i) {
      const std::string id = synth_video_id(subset, i);
      Rng rng(derive_seed(s.seed, std::string("synth.video.") + id));
      // Round-robin class assignment keeps every class present.
      const int cls = i % s.n_classes;
      const auto n_inst = static_cast<int>(rng.uniform_int(s.instances_min, s.instances_max));
      std::vector<int> lengths;
      for (int k = 0; k < n_inst; ++k) lengths.push_back(static_cast<int>(rng.uniform_int(s.length_min, s.length_max)));
      std::vector<ActionInstance> ann;
      for (const auto& [a, b] : detail::place_segments(rng, s.T, lengths, s.min_gap)) {
        ann.push_back({static_cast<double>(a), static_cast<double>(b), sc.names[static_cast<std::size_t>(cls)]});
      }
      const Matrix rgb = stub_visual_features(VisualKind::rgb, id, s.T, sc.names, sc.proto_rgb, ann, s.noise, s.seed);
      const Matrix flow = stub_visual_features(VisualKind::flow, id, s.T, sc.names, sc.proto_flow, ann, s.noise, s.seed);
      const std::string rgb_file = "features/" + id + ".rgb.f32";
      const std::string flow_file = "features/" + id + ".flow.f32";
      write_features(out_dir / rgb_file, rgb);
      write_features(out_dir / flow_file, flow);
      json ja = json::array();
      for (const auto& a : ann) ja.push_back({{"start", a.start}, {"end", a.end}, {"class", a.class_name}});
      videos.push_back({{"id", id},
                        {"num_snippets", s.T},
                        {"rgb_file", rgb_file},
                        {"flow_file", flow_file},
                        {"subset", subset},
                        {"annotations", ja}});
    }
  };
  emit("train", s.n_train_videos);
  emit("test", s.n_test_videos);
  json manifest = {{"classes", sc.names},
                   {"d_rgb", s.d_rgb},
                   {"d_flow", s.d_flow},
                   {"videos", videos},
                   {"synth", {{"spec", to_json(s)}, {"achieved_coupling", sc.achieved_coupling}}}};
  const fs::path manifest_path = out_dir / "manifest.json";
  write_json_file(manifest_path, manifest);
  save_descriptions(out_dir / "descriptions.json", sc.descriptions);
  return manifest_path;
}

}  // namespace mmtal
