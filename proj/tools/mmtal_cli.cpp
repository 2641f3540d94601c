// mmtal command-line driver: gen-data, split, train, adapt, infer, eval,
// check-descriptions. Exit codes: 0 ok, 1 validation error, 2 runtime error.

#include "mmtal.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace mmtal;

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
  cmd->add_option("--config", c.config_path, "Config JSON file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key, key=value (repeatable)");
  cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

// Config file keys, then --set overrides, then --seed.
json raw_config(const Common& c) {
  json raw = c.config_path.empty() ? json::object() : read_json_file(c.config_path);
  if (!raw.is_object()) throw ValidationError("config file must hold a JSON object");
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + kv + "'");
    raw[kv.substr(0, eq)] = parse_value(kv.substr(eq + 1));
  }
  if (c.seed) raw["seed"] = *c.seed;
  return raw;
}

Config effective_config(const Common& c) { return validate_config(raw_config(c)); }

void check_threads(const Common& c) {
  if (c.threads > 1) std::cerr << "warning: --threads " << c.threads << " ignored, running single-threaded\n";
}

// Keys that may differ from the checkpoint's training config.
bool inference_key(const std::string& key) {
  static const std::set<std::string> keys = {"theta_loc",   "theta_cls",     "nms_iou",
                                             "nms_mode",    "nms_sigma",     "seed",
                                             "pad_to",      "fewshot_steps", "fewshot_lr",
                                             "fewshot_tune_prompt_module", "description_fallback"};
  return keys.count(key) > 0;
}

Model load_model(const std::string& path, const Common& c) {
  Model m = load_checkpoint(path);
  const json user = raw_config(c);
  if (user.empty()) return m;
  json merged = to_json(m.config);
  for (const auto& [key, v] : user.items()) {
    if (!inference_key(key)) {
      const Config probe = validate_config(json{{key, v}});
      if (to_json(probe).at(key) != merged.at(key)) {
        throw ValidationError("config key '" + key + "' cannot be changed after training");
      }
    }
    merged[key] = v;
  }
  m.config = validate_config(merged);
  return m;
}

DescriptionCache descriptions_for(const std::string& flag, const fs::path& manifest) {
  if (!flag.empty()) return load_descriptions(flag);
  const fs::path beside = manifest.parent_path() / "descriptions.json";
  if (fs::exists(beside)) return load_descriptions(beside);
  return {};
}

enum class EvalSet { all, base, novel };

EvalSet parse_eval_set(const std::string& s) {
  if (s == "all") return EvalSet::all;
  if (s == "base") return EvalSet::base;
  if (s == "novel") return EvalSet::novel;
  throw ValidationError("--eval-set must be all|base|novel, got '" + s + "'");
}

std::vector<std::string> eval_classes(EvalSet set, const Dataset& ds, const SplitSpec* split) {
  if (set == EvalSet::all) return ds.classes;
  if (!split) throw ValidationError("--eval-set base|novel needs --split");
  return set == EvalSet::base ? split->base : split->novel;
}

bool has_any(const VideoFeatures& v, const std::vector<std::string>& classes) {
  for (const auto& c : classes)
    if (video_has_class(v, c)) return true;
  return false;
}

// ------------------------------------------------------------- commands

int cmd_gen_data(const std::string& spec_path, const std::string& out, const Common& c) {
  check_threads(c);
  json raw = spec_path.empty() ? json::object() : read_json_file(spec_path);
  if (c.seed) raw["seed"] = *c.seed;
  const SynthSpec spec = synth_spec_from_json(raw);
  const fs::path manifest = generate(spec, out);
  std::cout << "wrote " << manifest.string() << "\n";
  return 0;
}

int cmd_split(const std::string& manifest, const std::string& ratio, int n, const std::string& out, const Common& c) {
  check_threads(c);
  const json m = read_json_file(manifest);
  std::vector<std::string> classes;
  try {
    classes = m.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError("manifest: " + std::string(e.what()));
  }
  const std::uint64_t seed = c.seed.value_or(0);
  const auto splits = make_splits(classes, parse_ratio(ratio), n, seed);
  json j;
  if (splits.size() == 1) {
    j = to_json(splits.front());
  } else {
    j = json::array();
    for (const auto& s : splits) j.push_back(to_json(s));
  }
  write_json_file(out, j);
  std::cout << "wrote " << splits.size() << " split(s): " << splits.front().base.size() << " base / "
            << splits.front().novel.size() << " novel\n";
  return 0;
}

int cmd_train(const std::string& manifest, const std::string& split_path, std::size_t split_index,
              const std::string& desc_path, const std::string& out_ckpt, const std::string& history,
              const Common& c) {
  check_threads(c);
  const Config cfg = effective_config(c);
  const Dataset ds = load_dataset(manifest, {cfg.pad_to});
  std::optional<SplitSpec> split;
  if (!split_path.empty()) split = load_split(split_path, split_index);
  const DescriptionCache desc = descriptions_for(desc_path, manifest);
  TrainOptions opts;
  opts.descriptions = &desc;
  opts.on_epoch = [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss " << r.loss.total << " (det " << r.loss.det << ", reg " << r.loss.reg
              << ", cls " << r.loss.cls << ")\n";
  };
  const TrainResult res = train(ds, split ? &*split : nullptr, cfg, opts);
  save_checkpoint(out_ckpt, res.model);
  if (!history.empty()) write_text_file(history, history_csv(res.history));
  std::cout << "wrote " << out_ckpt << " after " << res.model.global_step << " steps\n";
  return 0;
}

int cmd_adapt(const std::string& ckpt, int shots, const std::string& manifest, const std::string& split_path,
              std::size_t split_index, const std::string& desc_path, const std::string& out_ckpt,
              const std::string& out_split, const Common& c) {
  check_threads(c);
  Model m = load_model(ckpt, c);
  const Dataset ds = load_dataset(manifest, {m.config.pad_to});
  check_dataset_dims(m, ds);
  SplitSpec split = load_split(split_path, split_index);
  if (!desc_path.empty()) {
    for (auto& [cls, a] : load_descriptions(desc_path)) m.descriptions[cls] = a;
  }
  if (shots >= 0) split = sample_support(ds, split, shots, m.config.seed);
  const Model adapted = few_shot_adapt(m, ds, split.support, split.novel, m.config);
  save_checkpoint(out_ckpt, adapted);
  if (!out_split.empty()) write_json_file(out_split, to_json(split));
  std::cout << "wrote " << out_ckpt << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& manifest, const std::string& split_path,
              std::size_t split_index, const std::string& eval_set, const std::string& subset,
              const std::string& desc_path, const std::string& out, const Common& c) {
  check_threads(c);
  Model m = load_model(ckpt, c);
  const Dataset ds = load_dataset(manifest, {m.config.pad_to});
  check_dataset_dims(m, ds);
  if (!desc_path.empty()) {
    for (auto& [cls, a] : load_descriptions(desc_path)) m.descriptions[cls] = a;
  }
  std::optional<SplitSpec> split;
  if (!split_path.empty()) split = load_split(split_path, split_index);
  const EvalSet set = parse_eval_set(eval_set.empty() ? (split ? "novel" : "all") : eval_set);
  const auto classes = eval_classes(set, ds, split ? &*split : nullptr);
  std::optional<Subset> which;
  if (subset == "train") which = Subset::train;
  else if (subset == "test") which = Subset::test;
  else if (subset != "all") throw ValidationError("--subset must be train|test|all");
  std::function<bool(const VideoFeatures&)> keep;
  if (set != EvalSet::all) keep = [&](const VideoFeatures& v) { return has_any(v, classes); };
  const auto dets = infer_dataset(m, ds, classes, which, keep);
  write_json_file(out, to_json(dets));
  std::cout << "wrote " << dets.size() << " predictions to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& manifest, const std::string& split_path,
             std::size_t split_index, const std::string& eval_set, const std::string& grid_name,
             const std::string& subset, const std::string& out, const Common& c) {
  check_threads(c);
  const Config cfg = effective_config(c);
  const Dataset ds = load_dataset(manifest, {cfg.pad_to});
  std::optional<SplitSpec> split;
  if (!split_path.empty()) split = load_split(split_path, split_index);
  const EvalSet set = parse_eval_set(eval_set.empty() ? (split ? "novel" : "all") : eval_set);
  const auto classes = eval_classes(set, ds, split ? &*split : nullptr);
  Subset which = Subset::test;
  if (subset == "train") which = Subset::train;
  else if (subset != "test") throw ValidationError("--subset must be train|test");
  const Grid grid = parse_grid(grid_name);
  const auto preds = detections_from_json(read_json_file(pred));
  const auto gt = ground_truth(ds, which, &classes);
  const FullReport rep = evaluate(preds, gt, grid);
  json j = to_json(rep);
  j["eval_set"] = set == EvalSet::all ? "all" : set == EvalSet::base ? "base" : "novel";
  j["subset"] = to_string(which);
  j["num_ground_truth"] = gt.size();
  j["num_predictions"] = preds.size();
  j["config"] = to_json(cfg);
  write_json_file(out, j);
  std::cout << format_table(rep);
  return 0;
}

int cmd_check_descriptions(const std::string& manifest, const std::string& desc_path, const Common& c) {
  check_threads(c);
  const json m = read_json_file(manifest);
  std::vector<std::string> classes;
  try {
    classes = m.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError("manifest: " + std::string(e.what()));
  }
  const DescriptionCache cache = load_descriptions(desc_path);
  const std::set<std::string> known(classes.begin(), classes.end());
  for (const auto& [cls, a] : cache) {
    if (!known.count(cls)) std::cerr << "warning: description for unknown class '" << cls << "'\n";
  }
  const auto missing = missing_descriptions(cache, classes);
  if (!missing.empty()) throw ValidationError("missing descriptions for classes: " + join(missing));
  std::cout << "ok: " << classes.size() << " classes described\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-modal low-shot temporal action localization"};
  app.require_subcommand(1);

  Common common;
  std::string spec, out, manifest, ratio = "75:25", split, desc, ckpt, out_ckpt, out_split, history, pred;
  std::string grid = "thumos", eval_set, subset = "test";
  std::size_t split_index = 0;
  int n = 10, shots = -1;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic feature dataset");
  gen->add_option("--spec", spec, "Synthetic spec JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  add_common(gen, common);

  auto* sp = app.add_subcommand("split", "Write base/novel class splits");
  sp->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  sp->add_option("--ratio", ratio, "Base:novel ratio, e.g. 75:25");
  sp->add_option("--n", n, "Number of random splits")->check(CLI::PositiveNumber);
  sp->add_option("--out", out, "Output splits JSON")->required();
  add_common(sp, common);

  auto* tr = app.add_subcommand("train", "Train on base classes");
  tr->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--split", split, "Splits JSON (omit for closed-set training)")->check(CLI::ExistingFile);
  tr->add_option("--split-index", split_index, "Which split in the file");
  tr->add_option("--descriptions", desc, "Descriptions JSON")->check(CLI::ExistingFile);
  tr->add_option("--out-checkpoint", out_ckpt, "Checkpoint path")->required();
  tr->add_option("--history", history, "Per-epoch loss CSV");
  add_common(tr, common);

  auto* ad = app.add_subcommand("adapt", "Few-shot adaptation on novel support clips");
  ad->add_option("--checkpoint", ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  ad->add_option("--support-shots", shots, "Support videos per novel class (omit to use the split's support)")
      ->check(CLI::NonNegativeNumber);
  ad->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  ad->add_option("--split", split, "Splits JSON")->required()->check(CLI::ExistingFile);
  ad->add_option("--split-index", split_index, "Which split in the file");
  ad->add_option("--descriptions", desc, "Extra descriptions JSON")->check(CLI::ExistingFile);
  ad->add_option("--out-checkpoint", out_ckpt, "Adapted checkpoint path")->required();
  ad->add_option("--out-split", out_split, "Write the split with the sampled support");
  add_common(ad, common);

  auto* inf = app.add_subcommand("infer", "Localize and classify actions");
  inf->add_option("--checkpoint", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  inf->add_option("--split", split, "Splits JSON")->check(CLI::ExistingFile);
  inf->add_option("--split-index", split_index, "Which split in the file");
  inf->add_option("--eval-set", eval_set, "all|base|novel (default novel with --split, else all)");
  inf->add_option("--subset", subset, "train|test|all");
  inf->add_option("--descriptions", desc, "Extra descriptions JSON")->check(CLI::ExistingFile);
  inf->add_option("--out", out, "predictions.json")->required();
  add_common(inf, common);

  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  ev->add_option("--pred", pred, "predictions.json")->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "Splits JSON")->check(CLI::ExistingFile);
  ev->add_option("--split-index", split_index, "Which split in the file");
  ev->add_option("--eval-set", eval_set, "all|base|novel (default novel with --split, else all)");
  ev->add_option("--subset", subset, "train|test");
  ev->add_option("--grid", grid, "thumos|anet");
  ev->add_option("--out", out, "report.json")->required();
  add_common(ev, common);

  auto* cd = app.add_subcommand("check-descriptions", "Validate a descriptions file against a manifest");
  cd->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  cd->add_option("--descriptions", desc, "Descriptions JSON")->required()->check(CLI::ExistingFile);
  add_common(cd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (*gen) return cmd_gen_data(spec, out, common);
  if (*sp) return cmd_split(manifest, ratio, n, out, common);
  if (*tr) return cmd_train(manifest, split, split_index, desc, out_ckpt, history, common);
  if (*ad) return cmd_adapt(ckpt, shots, manifest, split, split_index, desc, out_ckpt, out_split, common);
  if (*inf) return cmd_infer(ckpt, manifest, split, split_index, eval_set, subset, desc, out, common);
  if (*ev) return cmd_eval(pred, manifest, split, split_index, eval_set, grid, subset, out, common);
  if (*cd) return cmd_check_descriptions(manifest, desc, common);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mmtal::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
