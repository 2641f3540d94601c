#pragma once

// Domain types, configuration, and dataset manifest loading.

#include "json.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmtal {

using json = nlohmann::json;
using Matrix = Eigen::MatrixXd;
namespace fs = std::filesystem;

// Bad input data or arguments. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// I/O failure (missing or unreadable file). The CLI maps this to exit code 2.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Subset { train, test };
enum class Modality { rgb, flow, rgb_flow };
enum class Fusion { average, concat, weighted };
enum class PromptPosition { input, output };
enum class ClassifierMode { name_only, description, conditional, random_prompt };
enum class GammaMode { automatic, fixed };
enum class NmsMode { linear, gaussian };

/// Ground-truth action in snippet units, half-open [start, end).
struct ActionInstance {
  double start = 0.0;
  double end = 0.0;
  std::string class_name;

  double length() const { return end - start; }
  bool operator==(const ActionInstance&) const = default;
};

struct VideoFeatures {
  std::string video_id;
  Matrix rgb;   // T x d_rgb
  Matrix flow;  // T x d_flow
  std::vector<ActionInstance> annotations;
  Subset subset = Subset::train;
  // 1 for real snippets, 0 for zero padding appended by the loader.
  Eigen::VectorXd valid;

  Eigen::Index num_snippets() const { return rgb.rows(); }
  Eigen::Index num_valid() const { return static_cast<Eigen::Index>(valid.sum()); }
};

struct Dataset {
  std::vector<std::string> classes;
  int d_rgb = 0;
  int d_flow = 0;
  std::vector<VideoFeatures> videos;

  const VideoFeatures* find(const std::string& id) const {
    for (const auto& v : videos)
      if (v.video_id == id) return &v;
    return nullptr;
  }
};

struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<std::string> base;
  std::vector<std::string> novel;
  std::map<std::string, std::vector<std::string>> support;
};

// ------------------------------------------------------------ enum text

inline const char* to_string(Subset s) { return s == Subset::train ? "train" : "test"; }
inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::flow: return "flow";
    case Modality::rgb_flow: return "rgb+flow";
  }
  return "?";
}
inline const char* to_string(Fusion f) {
  switch (f) {
    case Fusion::average: return "average";
    case Fusion::concat: return "concat";
    case Fusion::weighted: return "weighted";
  }
  return "?";
}
inline const char* to_string(PromptPosition p) { return p == PromptPosition::input ? "input" : "output"; }
inline const char* to_string(ClassifierMode m) {
  switch (m) {
    case ClassifierMode::name_only: return "name_only";
    case ClassifierMode::description: return "description";
    case ClassifierMode::conditional: return "conditional";
    case ClassifierMode::random_prompt: return "random_prompt";
  }
  return "?";
}
inline const char* to_string(GammaMode g) { return g == GammaMode::automatic ? "auto" : "fixed"; }
inline const char* to_string(NmsMode m) { return m == NmsMode::linear ? "linear" : "gaussian"; }

inline bool uses_rgb(Modality m) { return m != Modality::flow; }
inline bool uses_flow(Modality m) { return m != Modality::rgb; }

// ---------------------------------------------------------------- config

struct Config {
  // Model and decoding.
  int L = 6;
  int K = 32;
  int D_align = 1024;
  int D_text = 512;
  int vocab_size = 49408;
  int max_tokens = 77;
  int head_hidden = 64;
  int range_base = 4;
  double tau = 0.07;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double theta_loc = 0.05;
  double theta_cls = 0.85;
  double nms_iou = 0.5;
  NmsMode nms_mode = NmsMode::linear;
  double nms_sigma = 0.5;
  GammaMode gamma_mode = GammaMode::automatic;
  double gamma = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t encoder_seed = 1234;
  Fusion fusion = Fusion::weighted;
  PromptPosition prompt_position = PromptPosition::input;
  ClassifierMode classifier_mode = ClassifierMode::conditional;
  Modality modality = Modality::rgb_flow;
  bool share_pyramid = false;
  bool end_to_end = false;

  // Optimization.
  double lr = 1e-4;
  int batch_size = 32;
  int warmup_epochs = 5;
  int epochs = 45;
  bool loss_sum = false;
  bool train_on_proposals = false;
  int pad_to = 0;

  // Few-shot adaptation.
  int fewshot_steps = 100;
  double fewshot_lr = 1e-2;
  bool fewshot_tune_prompt_module = false;

  // Missing descriptions default to "a video of {class}".
  bool description_fallback = false;

  int total_epochs() const { return warmup_epochs + epochs; }
};

namespace detail {

template <typename E>
E parse_enum(const std::string& key, const std::string& text,
             std::initializer_list<std::pair<const char*, E>> options) {
  std::string legal;
  for (const auto& [name, value] : options) {
    if (text == name) return value;
    if (!legal.empty()) legal += "|";
    legal += name;
  }
  throw ValidationError("config key '" + key + "': value '" + text + "' not in {" + legal + "}");
}

inline double num(const std::string& key, const json& v) {
  if (!v.is_number()) throw ValidationError("config key '" + key + "' must be a number");
  return v.get<double>();
}

inline int integer(const std::string& key, const json& v, int lo, int hi) {
  if (!v.is_number_integer() && !(v.is_number() && std::floor(v.get<double>()) == v.get<double>())) {
    throw ValidationError("config key '" + key + "' must be an integer");
  }
  const auto x = v.get<double>();
  if (x < lo || x > hi) {
    throw ValidationError("config key '" + key + "' = " + v.dump() + " outside legal range [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return static_cast<int>(x);
}

inline double ranged(const std::string& key, const json& v, double lo, double hi, bool lo_open = false) {
  const double x = num(key, v);
  if (!std::isfinite(x) || (lo_open ? x <= lo : x < lo) || x > hi) {
    std::ostringstream msg;
    msg << "config key '" << key << "' = " << v.dump() << " outside legal range " << (lo_open ? "(" : "[")
        << lo << ", " << hi << "]";
    throw ValidationError(msg.str());
  }
  return x;
}

inline bool boolean(const std::string& key, const json& v) {
  if (!v.is_boolean()) throw ValidationError("config key '" + key + "' must be true or false");
  return v.get<bool>();
}

}  // namespace detail

/// Builds a Config from a key-value object. Missing keys keep their defaults;
/// unknown keys and out-of-range values are rejected with the offending key.
inline Config validate_config(const json& raw) {
  using namespace detail;
  Config c;
  if (raw.is_null()) return c;
  if (!raw.is_object()) throw ValidationError("config must be a JSON object");
  constexpr double inf = 1e300;
  for (const auto& [key, v] : raw.items()) {
    if (key == "L") c.L = integer(key, v, 1, 16);
    else if (key == "K") c.K = integer(key, v, 1, 1024);
    else if (key == "D_align") c.D_align = integer(key, v, 1, 1 << 16);
    else if (key == "D_text") c.D_text = integer(key, v, 4, 1 << 16);
    else if (key == "vocab_size") c.vocab_size = integer(key, v, 1, 1 << 24);
    else if (key == "max_tokens") c.max_tokens = integer(key, v, 1, 1 << 16);
    else if (key == "head_hidden") c.head_hidden = integer(key, v, 1, 1 << 16);
    else if (key == "range_base") c.range_base = integer(key, v, 1, 1 << 16);
    else if (key == "tau") c.tau = ranged(key, v, 0.0, inf, true);
    else if (key == "lambda1") c.lambda1 = ranged(key, v, 0.0, inf);
    else if (key == "lambda2") c.lambda2 = ranged(key, v, 0.0, inf);
    else if (key == "theta_loc") c.theta_loc = ranged(key, v, 0.0, 1.0);
    else if (key == "theta_cls") c.theta_cls = ranged(key, v, 0.0, 1.0);
    else if (key == "nms_iou") c.nms_iou = ranged(key, v, 0.0, 1.0);
    else if (key == "nms_sigma") c.nms_sigma = ranged(key, v, 0.0, inf, true);
    else if (key == "gamma") c.gamma = ranged(key, v, 0.0, inf);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(integer(key, v, 0, 2147483647));
    else if (key == "encoder_seed") c.encoder_seed = static_cast<std::uint64_t>(integer(key, v, 0, 2147483647));
    else if (key == "lr") c.lr = ranged(key, v, 0.0, 10.0);
    else if (key == "batch_size") c.batch_size = integer(key, v, 1, 1 << 20);
    else if (key == "warmup_epochs") c.warmup_epochs = integer(key, v, 0, 1 << 20);
    else if (key == "epochs") c.epochs = integer(key, v, 0, 1 << 20);
    else if (key == "pad_to") c.pad_to = integer(key, v, 0, 1 << 24);
    else if (key == "fewshot_steps") c.fewshot_steps = integer(key, v, 0, 1 << 20);
    else if (key == "fewshot_lr") c.fewshot_lr = ranged(key, v, 0.0, 10.0);
    else if (key == "share_pyramid") c.share_pyramid = boolean(key, v);
    else if (key == "end_to_end") c.end_to_end = boolean(key, v);
    else if (key == "loss_sum") c.loss_sum = boolean(key, v);
    else if (key == "train_on_proposals") c.train_on_proposals = boolean(key, v);
    else if (key == "fewshot_tune_prompt_module") c.fewshot_tune_prompt_module = boolean(key, v);
    else if (key == "description_fallback") c.description_fallback = boolean(key, v);
    else if (key == "gamma_mode" || key == "fusion" || key == "prompt_position" || key == "classifier_mode" ||
             key == "modality" || key == "nms_mode") {
      if (!v.is_string()) throw ValidationError("config key '" + key + "' must be a string");
      const auto s = v.get<std::string>();
      if (key == "gamma_mode")
        c.gamma_mode = parse_enum<GammaMode>(key, s, {{"auto", GammaMode::automatic}, {"fixed", GammaMode::fixed}});
      else if (key == "fusion")
        c.fusion = parse_enum<Fusion>(key, s, {{"average", Fusion::average}, {"concat", Fusion::concat},
                                               {"weighted", Fusion::weighted}});
      else if (key == "prompt_position")
        c.prompt_position = parse_enum<PromptPosition>(
            key, s, {{"input", PromptPosition::input}, {"output", PromptPosition::output}});
      else if (key == "classifier_mode")
        c.classifier_mode = parse_enum<ClassifierMode>(
            key, s, {{"name_only", ClassifierMode::name_only}, {"description", ClassifierMode::description},
                     {"conditional", ClassifierMode::conditional}, {"random_prompt", ClassifierMode::random_prompt}});
      else if (key == "modality")
        c.modality = parse_enum<Modality>(
            key, s, {{"rgb", Modality::rgb}, {"flow", Modality::flow}, {"rgb+flow", Modality::rgb_flow}});
      else
        c.nms_mode = parse_enum<NmsMode>(key, s, {{"linear", NmsMode::linear}, {"gaussian", NmsMode::gaussian}});
    } else {
      throw ValidationError("unknown config key '" + key + "'");
    }
  }
  if (c.K > c.max_tokens) {
    throw ValidationError("config key 'K' = " + std::to_string(c.K) + " exceeds max_tokens " +
                          std::to_string(c.max_tokens));
  }
  return c;
}

inline json to_json(const Config& c) {
  return json{{"L", c.L},
              {"K", c.K},
              {"D_align", c.D_align},
              {"D_text", c.D_text},
              {"vocab_size", c.vocab_size},
              {"max_tokens", c.max_tokens},
              {"head_hidden", c.head_hidden},
              {"range_base", c.range_base},
              {"tau", c.tau},
              {"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"theta_loc", c.theta_loc},
              {"theta_cls", c.theta_cls},
              {"nms_iou", c.nms_iou},
              {"nms_mode", to_string(c.nms_mode)},
              {"nms_sigma", c.nms_sigma},
              {"gamma_mode", to_string(c.gamma_mode)},
              {"gamma", c.gamma},
              {"seed", c.seed},
              {"encoder_seed", c.encoder_seed},
              {"fusion", to_string(c.fusion)},
              {"prompt_position", to_string(c.prompt_position)},
              {"classifier_mode", to_string(c.classifier_mode)},
              {"modality", to_string(c.modality)},
              {"share_pyramid", c.share_pyramid},
              {"end_to_end", c.end_to_end},
              {"lr", c.lr},
              {"batch_size", c.batch_size},
              {"warmup_epochs", c.warmup_epochs},
              {"epochs", c.epochs},
              {"loss_sum", c.loss_sum},
              {"train_on_proposals", c.train_on_proposals},
              {"pad_to", c.pad_to},
              {"fewshot_steps", c.fewshot_steps},
              {"fewshot_lr", c.fewshot_lr},
              {"fewshot_tune_prompt_module", c.fewshot_tune_prompt_module},
              {"description_fallback", c.description_fallback}};
}

// ------------------------------------------------------------ file I/O

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write '" + path.string() + "'");
  out << text;
}

inline void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

/// Raw little-endian float32, row-major.
inline void write_features(const fs::path& path, const Matrix& m) {
  std::vector<char> bytes(static_cast<std::size_t>(m.size()) * 4);
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j)));
      for (int b = 0; b < 4; ++b) bytes[at++] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Matrix read_features(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open feature file '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto expected = static_cast<std::size_t>(rows * cols * 4);
  if (bytes.size() != expected) {
    throw ValidationError("feature file '" + path.string() + "': dimension mismatch, expected " +
                          std::to_string(expected) + " bytes (" + std::to_string(rows) + "x" +
                          std::to_string(cols) + " float32), found " + std::to_string(bytes.size()));
  }
  Matrix m(rows, cols);
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at++])) << (8 * b);
      m(i, j) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return m;
}

// ------------------------------------------------------------- manifest

struct LoadOptions {
  // Zero-pad every video to this many snippets (0 = off).
  int pad_to = 0;
};

inline void validate_instance(const ActionInstance& a, double num_snippets, const std::string& video_id) {
  if (a.class_name.empty()) throw ValidationError("video '" + video_id + "': annotation with empty class");
  if (!(a.start >= 0.0) || !(a.start < a.end) || !(a.end <= num_snippets)) {
    std::ostringstream msg;
    msg << "video '" << video_id << "': annotation [" << a.start << ", " << a.end << ") of class '"
        << a.class_name << "' outside [0, " << num_snippets << ")";
    throw ValidationError(msg.str());
  }
}

/// Loads and validates every video listed in a manifest, in manifest order.
inline Dataset load_dataset(const fs::path& manifest_path, const LoadOptions& opts = {}) {
  const json m = read_json_file(manifest_path);
  const fs::path root = manifest_path.parent_path();
  Dataset ds;
  try {
    ds.classes = m.at("classes").get<std::vector<std::string>>();
    ds.d_rgb = m.at("d_rgb").get<int>();
    ds.d_flow = m.at("d_flow").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError("manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (ds.d_rgb <= 0 || ds.d_flow <= 0) throw ValidationError("manifest: feature dims must be positive");
  const std::set<std::string> known(ds.classes.begin(), ds.classes.end());
  if (known.size() != ds.classes.size()) throw ValidationError("manifest: duplicate class names");

  std::set<std::string> ids;
  for (const auto& jv : m.at("videos")) {
    VideoFeatures v;
    Eigen::Index t = 0;
    std::string rgb_file, flow_file, subset;
    try {
      v.video_id = jv.at("id").get<std::string>();
      t = jv.at("num_snippets").get<Eigen::Index>();
      rgb_file = jv.at("rgb_file").get<std::string>();
      flow_file = jv.at("flow_file").get<std::string>();
      subset = jv.value("subset", std::string("train"));
      for (const auto& ja : jv.value("annotations", json::array())) {
        v.annotations.push_back(
            {ja.at("start").get<double>(), ja.at("end").get<double>(), ja.at("class").get<std::string>()});
      }
    } catch (const json::exception& e) {
      throw ValidationError("manifest video entry: " + std::string(e.what()));
    }
    if (!ids.insert(v.video_id).second) throw ValidationError("manifest: duplicate video id '" + v.video_id + "'");
    if (t < 1) throw ValidationError("video '" + v.video_id + "': num_snippets must be >= 1");
    if (subset == "train") v.subset = Subset::train;
    else if (subset == "test") v.subset = Subset::test;
    else throw ValidationError("video '" + v.video_id + "': subset must be train or test");
    for (const auto& a : v.annotations) {
      validate_instance(a, static_cast<double>(t), v.video_id);
      if (!known.count(a.class_name)) {
        throw ValidationError("video '" + v.video_id + "': class '" + a.class_name + "' not in manifest classes");
      }
    }
    v.rgb = read_features(root / rgb_file, t, ds.d_rgb);
    v.flow = read_features(root / flow_file, t, ds.d_flow);
    v.valid = Eigen::VectorXd::Ones(t);
    if (opts.pad_to > 0) {
      if (t > opts.pad_to) {
        throw ValidationError("video '" + v.video_id + "' has " + std::to_string(t) +
                              " snippets, more than pad_to=" + std::to_string(opts.pad_to));
      }
      const Eigen::Index extra = opts.pad_to - t;
      v.rgb.conservativeResize(opts.pad_to, Eigen::NoChange);
      v.flow.conservativeResize(opts.pad_to, Eigen::NoChange);
      v.rgb.bottomRows(extra).setZero();
      v.flow.bottomRows(extra).setZero();
      v.valid.conservativeResize(opts.pad_to);
      v.valid.tail(extra).setZero();
    }
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

// ---------------------------------------------------------------- splits

inline json to_json(const SplitSpec& s) {
  json support = json::object();
  for (const auto& [cls, vids] : s.support) support[cls] = vids;
  return json{{"seed", s.seed}, {"base", s.base}, {"novel", s.novel}, {"support", support}};
}

inline SplitSpec split_from_json(const json& j) {
  SplitSpec s;
  try {
    s.seed = j.value("seed", std::uint64_t{0});
    s.base = j.at("base").get<std::vector<std::string>>();
    s.novel = j.at("novel").get<std::vector<std::string>>();
    if (j.contains("support")) {
      for (const auto& [cls, vids] : j.at("support").items()) s.support[cls] = vids.get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("split: ") + e.what());
  }
  const std::set<std::string> base(s.base.begin(), s.base.end());
  const std::set<std::string> novel(s.novel.begin(), s.novel.end());
  for (const auto& n : s.novel)
    if (base.count(n)) throw ValidationError("split: class '" + n + "' is both base and novel");
  for (const auto& [cls, vids] : s.support)
    if (!novel.count(cls)) throw ValidationError("split: support class '" + cls + "' is not novel");
  return s;
}

/// Accepts a single split object or an array of them (selecting `index`).
inline SplitSpec load_split(const fs::path& path, std::size_t index = 0) {
  const json j = read_json_file(path);
  if (j.is_array()) {
    if (index >= j.size()) {
      throw ValidationError("split index " + std::to_string(index) + " out of range for '" + path.string() + "'");
    }
    return split_from_json(j[index]);
  }
  if (j.contains("splits")) return split_from_json(j.at("splits").at(index));
  return split_from_json(j);
}

}  // namespace mmtal
