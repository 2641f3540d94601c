// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Synthetic experiments report 3-seed medians.

#include "support.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <iostream>

using namespace mmtal;
namespace mt = mmtal::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double x, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::string fmt_sci(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", x);
  return buf;
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
  return s + "]";
}

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

fs::path work_dir() {
  static const fs::path p = mt::scratch_dir("acceptance");
  return p;
}

// ------------------------------------------------------------ criterion 1

double worst_det(Rng& rng) {
  const int n = static_cast<int>(rng.uniform_int(3, 9));
  LevelTargets t;
  t.stride = 2;
  for (int j = 0; j < n; ++j) {
    const int label = j == 0 ? 1 : static_cast<int>(rng.uniform_int(-1, 1));
    t.labels.push_back(label);
    if (label == 1) t.positives.push_back(j);
  }
  ad::Var p = ad::parameter(Matrix(n, 1).unaryExpr([&](double) { return rng.uniform(0.1, 0.9); }));
  const GammaMode mode = rng.uniform() < 0.5 ? GammaMode::automatic : GammaMode::fixed;
  const double gamma = rng.uniform(0.1, 2.0);
  return mt::grad_check([&] { return loss_det({{p, &t}}, mode, gamma).loss; }, p, rng);
}

double worst_reg(Rng& rng) {
  const int n = static_cast<int>(rng.uniform_int(4, 10));
  LevelTargets t;
  t.stride = static_cast<int>(1 << rng.uniform_int(1, 3));
  t.labels.assign(static_cast<std::size_t>(n), 0);
  const int pos = static_cast<int>(rng.uniform_int(1, 3));
  t.segments.resize(pos, 2);
  for (int k = 0; k < pos; ++k) {
    const auto j = static_cast<Eigen::Index>(rng.uniform_int(0, n - 1));
    t.labels[static_cast<std::size_t>(j)] = 1;
    t.positives.push_back(j);
    const double c = frame_center(j, t.stride);
    t.segments(k, 0) = c - rng.uniform(0.3, 3.0) * t.stride;
    t.segments(k, 1) = c + rng.uniform(0.3, 3.0) * t.stride;
  }
  ad::Var off = ad::parameter(Matrix(n, 2).unaryExpr([&](double) { return rng.uniform(0.2, 3.0); }));
  return mt::grad_check([&] { return loss_reg({{off, &t}}); }, off, rng);
}

double worst_cls(Rng& rng) {
  const int n = static_cast<int>(rng.uniform_int(1, 4)), c = static_cast<int>(rng.uniform_int(2, 5));
  const int d = static_cast<int>(rng.uniform_int(2, 6));
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, c - 1)));
  ad::Var a = ad::parameter(rng.normal_matrix(n, d, 1.0));
  ad::Var b = ad::parameter(rng.normal_matrix(n, d, 1.0));
  ad::Var bank = ad::parameter(rng.normal_matrix(c, d, 1.0));
  const double tau = rng.uniform(0.1, 1.0);
  auto loss = [&] {
    return loss_cls({ad::l2_normalize_rows(a), ad::l2_normalize_rows(b)}, ad::l2_normalize_rows(bank), labels, tau);
  };
  return std::max({mt::grad_check(loss, a, rng), mt::grad_check(loss, b, rng), mt::grad_check(loss, bank, rng)});
}

double worst_pyramid(Rng& rng) {
  const int levels = static_cast<int>(rng.uniform_int(1, 2));
  const PyramidParams params(rng, levels, 4);
  const auto t = static_cast<Eigen::Index>((1 << levels) * rng.uniform_int(1, 3));
  ad::Var x = ad::parameter(rng.normal_matrix(t, 4, 1.0));
  std::vector<Matrix> probes;
  for (int l = 0; l < levels; ++l) probes.push_back(rng.normal_matrix(t >> (l + 1), 4, 1.0));
  auto loss = [&] {
    const auto pyr = build_pyramid(x, params);
    ad::Var s = ad::sum(ad::mul_const(pyr.levels[0], probes[0]));
    for (int l = 1; l < levels; ++l) s = ad::add(s, ad::sum(ad::mul_const(pyr.levels[static_cast<std::size_t>(l)], probes[static_cast<std::size_t>(l)])));
    return s;
  };
  return std::max({mt::grad_check(loss, x, rng), mt::grad_check(loss, params.layers[0].wq, rng),
                   mt::grad_check(loss, params.layers[0].wv, rng), mt::grad_check(loss, params.layers[0].ln1_g, rng),
                   mt::grad_check(loss, params.layers[0].fc2.w, rng)});
}

double worst_aligner(Rng& rng) {
  const Aligner a(rng, 5, 3, 4, 6);
  const AlignModality m = static_cast<AlignModality>(rng.uniform_int(0, 2));
  const Eigen::Index d = m == AlignModality::rgb ? 5 : m == AlignModality::flow ? 3 : 4;
  const nn::Mlp2& mlp = m == AlignModality::rgb ? a.rgb : m == AlignModality::flow ? a.flow : a.text;
  ad::Var x = ad::parameter(rng.normal_matrix(3, d, 1.0));
  const Matrix probe = rng.normal_matrix(3, 6, 1.0);
  auto loss = [&] { return ad::sum(ad::mul_const(align(a, x, m), probe)); };
  return std::max({mt::grad_check(loss, x, rng), mt::grad_check(loss, mlp.fc1.w, rng),
                   mt::grad_check(loss, mlp.fc2.w, rng), mt::grad_check(loss, mlp.fc1.b, rng)});
}

double worst_prompts(Rng& rng) {
  const TextEncoder enc({49408, 77, 8, static_cast<std::uint64_t>(rng.uniform_int(0, 1000))});
  const auto tokens = enc.tokenize(rng.uniform() < 0.5 ? "long jump" : "what tools are needed for diving");
  ad::Var pre = ad::parameter(rng.normal_matrix(rng.uniform_int(1, 3), 8, 0.5));
  ad::Var post = ad::parameter(rng.normal_matrix(rng.uniform_int(1, 3), 8, 0.5));
  const Matrix probe = rng.normal_matrix(1, 8, 1.0);
  auto loss = [&] { return ad::sum(ad::mul_const(enc.encode(tokens, pre, post), probe)); };
  return std::max(mt::grad_check(loss, pre, rng), mt::grad_check(loss, post, rng));
}

void criterion1() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(1, "acceptance.gradients"));
  const std::vector<std::pair<const char*, double (*)(Rng&)>> checks = {
      {"L_det", worst_det},     {"L_reg", worst_reg},         {"L_cls", worst_cls},
      {"pyramid", worst_pyramid}, {"aligner", worst_aligner}, {"encode_text", worst_prompts}};
  std::string detail;
  double overall = 0.0;
  for (const auto& [name, fn] : checks) {
    double worst = 0.0;
    for (int i = 0; i < 25; ++i) worst = std::max(worst, fn(rng));
    overall = std::max(overall, worst);
    detail += std::string(name) + "=" + fmt_sci(worst) + " ";
  }
  const double secs = seconds_since(t0);
  report(1, overall < 1e-4 && secs < 60.0, detail + "(25 instances each, " + fmt(secs, 1) + " s)");
}

// ------------------------------------------------------------ criterion 2

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.n_classes = 4;
  s.n_train_videos = 16;
  s.n_test_videos = 4;
  s.T = 64;
  s.length_min = 4;
  s.length_max = 16;
  s.d_rgb = s.d_flow = s.d_text = 8;
  s.seed = seed;
  return s;
}

void criterion2() {
  const auto ds = load_dataset(generate(small_spec(2), work_dir() / "freeze"));
  const Config cfg = validate_config(json{{"L", 3},
                                          {"K", 4},
                                          {"D_text", 8},
                                          {"D_align", 16},
                                          {"head_hidden", 8},
                                          {"batch_size", 4},
                                          {"warmup_epochs", 1},
                                          {"epochs", 20},
                                          {"lr", 1e-3},
                                          {"seed", 2}});
  const Model init = make_model(cfg, ds.d_rgb, ds.d_flow, ds.classes);
  std::map<std::string, std::uint64_t> before;
  for (const auto& p : init.parameters()) before[p.name] = nn::checksum({p});
  TrainOptions opts;
  opts.max_steps = 50;
  const auto res = train(ds, nullptr, cfg, opts);
  const bool encoder_same = res.model.encoder->checksum() == init.encoder->checksum();
  std::map<std::string, std::pair<int, int>> groups;  // changed / total
  for (const auto& p : res.model.parameters()) {
    std::string g = p.name.starts_with("heads.") && p.name.find(".det") != std::string::npos   ? "detector"
                    : p.name.starts_with("heads.") && p.name.find(".reg") != std::string::npos ? "regressor"
                    : p.name.starts_with("prompt_module.")                                     ? "prompt_module"
                    : p.name.starts_with("aligner.")                                           ? "aligner"
                    : p.name.starts_with("pyramid.")                                           ? "pyramid"
                                                                                               : "other";
    auto& [changed, total] = groups[g];
    ++total;
    changed += nn::checksum({p}) != before.at(p.name);
  }
  bool all_changed = true;
  std::string detail = "encoder " + std::string(encoder_same ? "bit-identical" : "CHANGED") + ";";
  for (const char* g : {"detector", "regressor", "prompt_module", "aligner", "pyramid"}) {
    const auto [changed, total] = groups[g];
    all_changed = all_changed && total > 0 && changed == total;
    detail += std::string(" ") + g + " " + std::to_string(changed) + "/" + std::to_string(total);
  }
  detail += " tensors changed after " + std::to_string(res.model.global_step) + " steps";
  report(2, encoder_same && all_changed && res.model.global_step == 50, detail);
}

// ------------------------------------------------------------ criterion 3

void criterion3() {
  Rng rng(derive_seed(3, "acceptance.geometry"));
  int geometry_bad = 0, nms_bad = 0;
  double worst = 0.0;
  SoftNmsOptions opts;
  opts.mode = NmsMode::gaussian;
  opts.sigma = 1e-9;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 10));
    std::vector<mt::CellSegment> cells;
    std::vector<Proposal> props;
    for (int i = 0; i < n; ++i) {
      const int s = static_cast<int>(rng.uniform_int(0, 40));
      cells.push_back({s, s + static_cast<int>(rng.uniform_int(1, 20))});
      Proposal p;
      p.start = cells.back().start;
      p.end = cells.back().end;
      p.score = rng.uniform(0.01, 1.0);
      props.push_back(p);
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const auto& a = cells[static_cast<std::size_t>(i)];
        const auto& b = cells[static_cast<std::size_t>(j)];
        const double e1 = std::abs(segment_iou(a.start, a.end, b.start, b.end) - mt::brute_iou(a, b));
        const double e2 = std::abs(ad::diou_loss(a.start, a.end, b.start, b.end) - mt::brute_diou(a, b));
        worst = std::max({worst, e1, e2});
        geometry_bad += e1 > 1e-12 || e2 > 1e-12;
      }
    }
    opts.iou_threshold = rng.uniform(0.1, 0.9);
    const auto soft = soft_nms(props, opts);
    const auto hard = mt::greedy_hard_nms(props, opts.iou_threshold);
    std::set<std::tuple<double, double, double>> a, b;
    for (const auto& p : soft) a.insert({p.start, p.end, p.score});
    for (std::size_t k : hard) b.insert({props[k].start, props[k].end, props[k].score});
    nms_bad += a != b;
  }
  report(3, geometry_bad == 0 && nms_bad == 0,
         "1000 instances: IoU/DIoU mismatches " + std::to_string(geometry_bad) + " (max err " + fmt_sci(worst) +
             "), soft-NMS set mismatches " + std::to_string(nms_bad));
}

// ------------------------------------------------------------ criterion 4

void criterion4() {
  Rng rng(derive_seed(4, "acceptance.ap"));
  const std::vector<std::string> names = {"a", "b", "c", "d"};
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int nv = static_cast<int>(rng.uniform_int(1, 5)), nc = static_cast<int>(rng.uniform_int(1, 4));
    std::vector<GroundTruth> gt;
    const int ng = static_cast<int>(rng.uniform_int(1, 6));
    for (int g = 0; g < ng; ++g) {
      const double s = static_cast<double>(rng.uniform_int(0, 15));
      gt.push_back({"v" + std::to_string(rng.uniform_int(0, nv - 1)), s, s + static_cast<double>(rng.uniform_int(1, 8)),
                    names[static_cast<std::size_t>(rng.uniform_int(0, nc - 1))]});
    }
    std::vector<Detection> preds;
    const int np = static_cast<int>(rng.uniform_int(0, 10));
    for (int p = 0; p < np; ++p) {
      const double s = static_cast<double>(rng.uniform_int(0, 15));
      preds.push_back({"v" + std::to_string(rng.uniform_int(0, nv - 1)), s,
                       s + static_cast<double>(rng.uniform_int(1, 8)),
                       names[static_cast<std::size_t>(rng.uniform_int(0, nc - 1))],
                       rng.uniform(0.01, 1.0)});
    }
    const auto suite = map_suite(preds, gt, Grid::anet);
    for (std::size_t t = 0; t < suite.thresholds.size(); ++t) {
      const double thr = suite.thresholds[t];
      worst = std::max(worst, std::abs(suite.mAP[t] - mt::exhaustive_map(preds, gt, thr)));
      for (const auto& c : gt_classes(gt)) {
        worst = std::max(worst, std::abs(match_and_ap(preds, gt, c, thr) - mt::exhaustive_ap(preds, gt, c, thr)));
      }
    }
  }
  const std::vector<GroundTruth> one = {{"v", 0, 10, "a"}};
  const double ap1 = match_and_ap({{"v", 0, 6, "a", 0.9}, {"v", 0, 2, "a", 0.8}}, one, "a", 0.5);
  const double ap2 = match_and_ap({{"v", 0, 6, "a", 0.8}, {"v", 0, 2, "a", 0.9}}, one, "a", 0.5);
  report(4, worst < 1e-9 && ap1 == 1.0 && ap2 == 0.5,
         "200 instances max |AP - oracle| " + fmt_sci(worst) + "; hand traces " + fmt(ap1, 4) + ", " + fmt(ap2, 4));
}

// ------------------------------------------------------------ criterion 5

void criterion5() {
  std::vector<double> avg, top1, secs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto t0 = Clock::now();
    SynthSpec s;
    s.n_classes = 8;
    s.n_train_videos = 100;
    s.n_test_videos = 40;
    s.T = 256;
    s.noise = 0.1;
    s.seed = seed;
    const fs::path dir = work_dir() / ("closed_" + std::to_string(seed));
    const auto ds = load_dataset(generate(s, dir));
    const auto desc = load_descriptions(dir / "descriptions.json");
    const Config cfg = validate_config(json{{"D_text", s.d_text},
                                            {"D_align", 32},
                                            {"K", 4},
                                            {"lr", 5e-3},
                                            {"batch_size", 8},
                                            {"warmup_epochs", 2},
                                            {"epochs", 48},
                                            {"head_hidden", 32},
                                            {"fusion", "average"},
                                            {"classifier_mode", "conditional"},
                                            {"seed", seed}});
    TrainOptions opts;
    opts.descriptions = &desc;
    const auto res = train(ds, nullptr, cfg, opts);
    const auto r = evaluate(infer_dataset(res.model, ds, ds.classes), ground_truth(ds, Subset::test), Grid::thumos);
    avg.push_back(r.model.average_mAP);
    top1.push_back(r.model.top1);
    secs.push_back(seconds_since(t0));
  }
  const double slowest = *std::max_element(secs.begin(), secs.end());
  report(5, median(avg) >= 0.90 && median(top1) >= 0.95 && slowest < 600.0,
         "AVG " + list(avg) + " median " + fmt(median(avg)) + " (>= 0.90); top-1 " + list(top1) + " median " +
             fmt(median(top1)) + " (>= 0.95); slowest run " + fmt(slowest, 0) + " s");
}

// ------------------------------------------------------- criteria 6, 7, 8

struct ZeroShotRun {
  double avg = 0.0;
  double top1 = 0.0;
};

struct ZeroShotSetup {
  Dataset ds;
  DescriptionCache desc;
  SplitSpec split;
  std::vector<GroundTruth> gt;
};

ZeroShotSetup zero_shot_setup(std::uint64_t seed, double coupling) {
  SynthSpec s;
  s.n_classes = 12;
  s.n_train_videos = 96;
  s.n_test_videos = 48;
  s.T = 128;
  s.noise = 0.1;
  s.length_min = 6;
  s.length_max = 30;
  s.d_rgb = s.d_flow = s.d_text = 8;
  s.text_visual_coupling = coupling;
  s.seed = seed;
  const fs::path dir = work_dir() / ("zeroshot_" + std::to_string(seed) + "_" + fmt(coupling, 1));
  ZeroShotSetup z;
  z.ds = load_dataset(generate(s, dir));
  z.desc = load_descriptions(dir / "descriptions.json");
  z.split = make_splits(z.ds.classes, 0.75, 1, seed).front();
  z.gt = ground_truth(z.ds, Subset::test, &z.split.novel);
  return z;
}

Config zero_shot_config(std::uint64_t seed, const char* mode) {
  return validate_config(json{{"D_text", 8},
                              {"D_align", 64},
                              {"K", 4},
                              {"lr", 5e-3},
                              {"batch_size", 8},
                              {"warmup_epochs", 2},
                              {"epochs", 20},
                              {"head_hidden", 32},
                              {"fusion", "average"},
                              {"prompt_position", "output"},
                              {"classifier_mode", mode},
                              {"seed", seed}});
}

ZeroShotRun evaluate_novel(const Model& m, const ZeroShotSetup& z) {
  auto has_novel = [&](const VideoFeatures& v) {
    for (const auto& c : z.split.novel)
      if (video_has_class(v, c)) return true;
    return false;
  };
  const auto preds = infer_dataset(m, z.ds, z.split.novel, Subset::test, has_novel);
  const auto r = map_suite(preds, z.gt, Grid::thumos);
  return {r.average_mAP, r.top1};
}

Model train_zero_shot(const ZeroShotSetup& z, const Config& cfg) {
  TrainOptions opts;
  opts.descriptions = &z.desc;
  return train(z.ds, &z.split, cfg, opts).model;
}

void criteria_6_7_8() {
  const double chance = 1.0 / 3.0;
  std::map<std::string, std::vector<double>> top1, avg;
  std::vector<double> control_top1;
  std::array<std::vector<double>, 3> shots_avg;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto z = zero_shot_setup(seed, 0.9);
    for (const char* mode : {"description", "name_only", "conditional", "random_prompt"}) {
      const Config cfg = zero_shot_config(seed, mode);
      const Model m = train_zero_shot(z, cfg);
      const auto r = evaluate_novel(m, z);
      top1[mode].push_back(r.top1);
      avg[mode].push_back(r.avg);
      if (std::string(mode) == "description") {
        shots_avg[0].push_back(r.avg);
        for (int n = 1; n <= 2; ++n) {
          const auto support = sample_support(z.ds, z.split, n, seed);
          const Model adapted = few_shot_adapt(m, z.ds, support.support, z.split.novel, cfg);
          shots_avg[static_cast<std::size_t>(n)].push_back(evaluate_novel(adapted, z).avg);
        }
      }
    }
    const auto control = zero_shot_setup(seed, 0.0);
    control_top1.push_back(evaluate_novel(train_zero_shot(control, zero_shot_config(seed, "description")), control).top1);
  }

  const double t1 = median(top1["description"]), a1 = median(avg["description"]), c1 = median(control_top1);
  report(6, t1 >= 3.0 * chance && a1 >= 0.30 && c1 <= 1.5 * chance,
         "novel top-1 " + list(top1["description"]) + " median " + fmt(t1) + " (>= " + fmt(3.0 * chance) +
             "); novel AVG " + list(avg["description"]) + " median " + fmt(a1) +
             " (>= 0.30); coupling=0 top-1 " + list(control_top1) + " median " + fmt(c1) + " (<= " +
             fmt(1.5 * chance) + ")");

  const double z0 = median(shots_avg[0]), z1 = median(shots_avg[1]), z2 = median(shots_avg[2]);
  report(7, z0 <= z1 + 0.02 && z1 <= z2 + 0.02,
         "novel AVG 0-shot " + list(shots_avg[0]) + " 1-shot " + list(shots_avg[1]) + " 2-shot " +
             list(shots_avg[2]) + "; medians " + fmt(z0) + " / " + fmt(z1) + " / " + fmt(z2) + " (tolerance 0.02)");

  const double d = median(top1["description"]), n = median(top1["name_only"]);
  const double c = median(top1["conditional"]), r = median(top1["random_prompt"]);
  report(8, d >= n - 0.02 && c >= n - 0.02 && c >= r - 0.02,
         "novel top-1 medians: description " + fmt(d) + ", conditional " + fmt(c) + ", name-only " + fmt(n) +
             ", random-prompt " + fmt(r));
}

// ------------------------------------------------------------ criterion 9

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MMTAL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool pipeline(const fs::path& dir, std::string& failure) {
  fs::create_directories(dir);
  write_json_file(dir / "spec.json", json{{"n_classes", 8},
                                          {"n_train_videos", 32},
                                          {"n_test_videos", 16},
                                          {"T", 64},
                                          {"length_range", {4, 16}},
                                          {"d_rgb", 8},
                                          {"d_flow", 8},
                                          {"d_text", 8},
                                          {"seed", 5}});
  write_json_file(dir / "config.json", json{{"D_text", 8},
                                            {"D_align", 16},
                                            {"K", 4},
                                            {"L", 4},
                                            {"lr", 5e-3},
                                            {"batch_size", 8},
                                            {"warmup_epochs", 1},
                                            {"epochs", 4},
                                            {"head_hidden", 16},
                                            {"fusion", "average"},
                                            {"prompt_position", "output"},
                                            {"theta_cls", 0.3}});
  const std::string d = dir.string() + "/";
  const std::string common = " --seed 5 --threads 1 --config " + d + "config.json";
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"gen", "gen-data --spec " + d + "spec.json --out " + d + "data --seed 5"},
      {"split", "split --manifest " + d + "data/manifest.json --ratio 75:25 --n 1 --seed 5 --out " + d + "split.json"},
      {"train", "train --manifest " + d + "data/manifest.json --split " + d + "split.json --out-checkpoint " + d +
                    "model.json" + common},
      {"infer", "infer --checkpoint " + d + "model.json --manifest " + d + "data/manifest.json --split " + d +
                    "split.json --eval-set novel --out " + d + "predictions.json --seed 5 --threads 1"},
      {"eval", "eval --pred " + d + "predictions.json --manifest " + d + "data/manifest.json --split " + d +
                   "split.json --eval-set novel --out " + d + "report.json"}};
  for (const auto& [name, args] : steps) {
    if (run_cli(args, dir / (name + ".log")) != 0) {
      failure = name + " failed: " + mt::read_bytes(dir / (name + ".log"));
      return false;
    }
  }
  return true;
}

void criterion9() {
  const fs::path a = work_dir() / "pipeline_a", b = work_dir() / "pipeline_b";
  std::string failure;
  if (!pipeline(a, failure) || !pipeline(b, failure)) {
    report(9, false, failure);
    return;
  }
  const std::string pa = mt::read_bytes(a / "predictions.json"), pb = mt::read_bytes(b / "predictions.json");
  const std::string ra = mt::read_bytes(a / "report.json"), rb = mt::read_bytes(b / "report.json");
  const auto n_pred = read_json_file(a / "predictions.json").size();
  report(9, pa == pb && ra == rb && !pa.empty(),
         "predictions.json " + std::string(pa == pb ? "identical" : "DIFFER") + " (" + std::to_string(pa.size()) +
             " bytes, " + std::to_string(n_pred) + " detections); report.json " + (ra == rb ? "identical" : "DIFFER"));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  const auto t0 = Clock::now();
  try {
    if (want(1)) criterion1();
    if (want(2)) criterion2();
    if (want(3)) criterion3();
    if (want(4)) criterion4();
    if (want(5)) criterion5();
    if (want(6) || want(7) || want(8)) criteria_6_7_8();
    if (want(9)) criterion9();
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << "total " << fmt(seconds_since(t0), 0) << " s, " << failures << " failing" << std::endl;
  return failures == 0 ? 0 : 1;
}
