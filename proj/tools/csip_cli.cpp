#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "csip/config.hpp"
#include "csip/eval.hpp"
#include "csip/gradcheck.hpp"
#include "csip/pipeline.hpp"
#include "csip/rng.hpp"

namespace fs = std::filesystem;
using namespace csip;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = true;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file");
  cmd->add_option("--set", opts.overrides, "dotted config override, section.key=value");
  cmd->add_option("--seed", opts.seed, "base seed for every RNG stream")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_flag("--deterministic,!--no-deterministic", opts.deterministic,
                "single-threaded bitwise-reproducible mode (default on)");
  cmd->add_flag("--force", opts.force, "overwrite existing outputs");
}

RunConfig resolve(const CommonOpts& opts) {
  RunConfig cfg = load_run_config(opts.config_path, opts.overrides);
  if (opts.seed_set) {
    cfg.seed = opts.seed;
    cfg.data.seed = opts.seed;
  }
  cfg.deterministic = opts.deterministic;
  return cfg;
}

void require_fresh(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) {
    throw ConfigError(p.string() + " exists; pass --force to overwrite");
  }
}

Dataset load_or_fail(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json")) {
    throw ConfigError("no dataset manifest under " + dir + " (run gen-data first)");
  }
  return load_dataset(dir);
}

int cmd_gen_data(const CommonOpts& opts, const std::string& out_dir) {
  RunConfig cfg = resolve(opts);
  require_fresh(fs::path(out_dir) / "manifest.json", opts.force);
  Dataset ds = generate_dataset(cfg.data);
  save_dataset(out_dir, ds);
  std::cout << "wrote " << ds.train.size() << " train / " << ds.query.size() << " query / "
            << ds.gallery.size() << " gallery tracklets to " << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& data_dir,
                 const std::string& out_dir) {
  RunConfig cfg = resolve(opts);
  Dataset ds = load_or_fail(data_dir);
  fs::create_directories(out_dir);
  const fs::path ckpt = fs::path(out_dir) / "stage1.ckpt";
  require_fresh(ckpt, opts.force);

  Model model = init_model(cfg.model, cfg.seed);
  std::ofstream log(fs::path(out_dir) / "stage1_log.jsonl", std::ios::app);
  train_stage1(model, ds.train, cfg.stage1, cfg.seed, &log);
  save_checkpoint(ckpt.string(), model.stage1_params());
  std::cout << "stage 1 checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& data_dir,
                 const std::string& stage1_ckpt, const std::string& out_dir) {
  RunConfig cfg = resolve(opts);
  Dataset ds = load_or_fail(data_dir);
  fs::create_directories(out_dir);
  const fs::path ckpt = fs::path(out_dir) / "stage2.ckpt";
  require_fresh(ckpt, opts.force);

  Model model = init_model(cfg.model, cfg.seed);
  if (!stage1_ckpt.empty()) {
    ParamMap stage1 = model.stage1_params();
    load_checkpoint_into(stage1_ckpt, stage1);
  }
  setup_stage2(model, ds.train, cfg.stage2, cfg.seed);
  std::ofstream log(fs::path(out_dir) / "stage2_log.jsonl", std::ios::app);
  train_stage2(model, ds.train, cfg.stage2, cfg.seed, &log);
  save_checkpoint(ckpt.string(), model.all_params());
  std::cout << "stage 2 checkpoint: " << ckpt << "\n";
  return 0;
}

FeatureKind parse_kind(const std::string& s) {
  if (s == "stage1-visual") return FeatureKind::kStage1VisualProjected;
  if (s == "stage1-skeleton") return FeatureKind::kStage1SkeletonProjected;
  if (s == "visual") return FeatureKind::kVisualPooled;
  if (s == "skeleton") return FeatureKind::kSkeletonPooled;
  if (s == "test") return FeatureKind::kSgtmTest;
  throw ConfigError("unknown feature kind '" + s + "'");
}

Model load_model(const RunConfig& cfg, const std::string& ckpt_path,
                 const std::vector<Tracklet>& train) {
  Model model = init_model(cfg.model, cfg.seed);
  ParamMap probe = load_checkpoint(ckpt_path);
  const bool stage2 = probe.find("ce.classifier.weight") != nullptr;
  if (stage2) {
    setup_stage2(model, train, cfg.stage2, cfg.seed);
    ParamMap all = model.all_params();
    load_checkpoint_into(ckpt_path, all);
  } else {
    ParamMap stage1 = model.stage1_params();
    load_checkpoint_into(ckpt_path, stage1);
  }
  return model;
}

int cmd_export_features(const CommonOpts& opts, const std::string& data_dir,
                        const std::string& ckpt, const std::string& split,
                        const std::string& kind, const std::string& out_path) {
  RunConfig cfg = resolve(opts);
  Dataset ds = load_or_fail(data_dir);
  require_fresh(out_path, opts.force);
  Model model = load_model(cfg, ckpt, ds.train);
  const std::vector<Tracklet>* tracklets = nullptr;
  if (split == "train") {
    tracklets = &ds.train;
  } else if (split == "query") {
    tracklets = &ds.query;
  } else if (split == "gallery") {
    tracklets = &ds.gallery;
  } else {
    throw ConfigError("split must be train|query|gallery, got '" + split + "'");
  }
  RetrievalFeatures feats = extract_features(model, *tracklets, parse_kind(kind));
  save_features(out_path, feats.feats, feats.pids, feats.camids);
  std::cout << "wrote " << feats.pids.size() << " feature rows to " << out_path << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& query_path,
             const std::string& gallery_path, const std::string& out_path) {
  RunConfig cfg = resolve(opts);
  FeatureFile q = load_features(query_path);
  FeatureFile g = load_features(gallery_path);
  Tensor dist = pairwise_distances(q.feats, g.feats);
  RankingResult r = evaluate(dist, q.pids, q.camids, g.pids, g.camids,
                             cfg.eval.exclude_same_camera);
  const std::string report = metrics_json(r, cfg.eval.cmc_ranks, true);
  if (out_path.empty()) {
    std::cout << report << "\n";
  } else {
    require_fresh(out_path, opts.force);
    std::ofstream os(out_path);
    os << report << "\n";
    std::cout << "metrics: " << out_path << "\n";
  }
  std::cout << "mAP " << r.map << ", Rank-1 " << (r.cmc.empty() ? 0.0 : r.cmc[0]) << "\n";
  return 0;
}

int cmd_gradcheck(int seeds, double tolerance) {
  auto rows = run_gradcheck_suite(seeds, tolerance);
  bool all_ok = true;
  std::printf("%-28s %-12s %s\n", "check", "max_error", "status");
  for (const auto& row : rows) {
    std::printf("%-28s %-12.3e %s\n", row.name.c_str(), row.max_error,
                row.passed ? "ok" : "FAIL");
    all_ok = all_ok && row.passed;
  }
  std::printf("%zu checks, %s\n", rows.size(), all_ok ? "all ok" : "FAILURES");
  return all_ok ? 0 : 2;
}

int cmd_regress_joints(const std::string& obj_path, const std::string& reg_path,
                       const std::string& out_path, bool force) {
  require_fresh(out_path, force);
  Tensor verts = parse_obj(obj_path);
  JointRegressor reg;
  reg.matrix = load_matrix(reg_path);
  reg.joint_names = SkeletonGraph::human36m().names;
  if (reg.matrix.shape[0] != reg.joint_names.size()) {
    reg.joint_names.clear();
  }
  // convex regressors have unit row sums; warn when that drifts
  for (std::size_t r = 0; r < reg.matrix.shape[0]; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < reg.matrix.shape[1]; ++c) sum += reg.matrix.at(r, c);
    if (std::abs(sum - 1.0) > 1e-6) {
      std::cerr << "warning: regressor row " << r << " sums to " << sum << "\n";
      break;
    }
  }
  Tensor joints = regress_joints(verts, reg);
  nlohmann::json out;
  nlohmann::json kps = nlohmann::json::array();
  for (std::size_t j = 0; j < joints.shape[0]; ++j) {
    nlohmann::json kp;
    kp["name"] = j < reg.joint_names.size() ? reg.joint_names[j] : "joint_" + std::to_string(j);
    kp["xyz"] = {joints.at(j, 0), joints.at(j, 1), joints.at(j, 2)};
    kps.push_back(std::move(kp));
  }
  out["keypoints"] = std::move(kps);
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write " + out_path);
  os << out.dump(1) << "\n";
  std::cout << "wrote " << joints.shape[0] << " keypoints to " << out_path << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& data_dir, const std::string& out_path,
               const std::vector<std::uint64_t>& seeds) {
  RunConfig cfg = resolve(opts);
  Dataset ds = load_or_fail(data_dir);
  require_fresh(out_path, opts.force);

  struct Variant {
    const char* name;
    bool fusion, update, sgtm;
  };
  const Variant grid[] = {{"baseline", false, false, false},
                          {"fusion", true, false, false},
                          {"fusion+update", true, true, false},
                          {"full", true, true, true}};

  nlohmann::json report;
  nlohmann::json runs = nlohmann::json::array();
  std::map<std::string, std::vector<double>> maps;
  for (std::uint64_t seed : seeds) {
    Model stage1 = init_model(cfg.model, seed);
    train_stage1(stage1, ds.train, cfg.stage1, seed);
    for (const Variant& v : grid) {
      // fresh model with the shared stage-1 weights copied in, so variants
      // do not clobber each other through shared buffers
      Model model = init_model(cfg.model, seed);
      ParamMap src = stage1.stage1_params();
      ParamMap dst = model.stage1_params();
      for (std::size_t i = 0; i < src.size(); ++i) {
        *dst.items[i].second.data = *src.items[i].second.data;
      }
      Stage2Config s2 = cfg.stage2;
      s2.use_prototype_fusion = v.fusion;
      s2.use_prototype_update = v.update;
      s2.use_sgtm = v.sgtm;
      setup_stage2(model, ds.train, s2, seed);
      train_stage2(model, ds.train, s2, seed);

      RetrievalFeatures qf = extract_features(
          model, ds.query, v.sgtm ? FeatureKind::kSgtmTest : FeatureKind::kVisualPooled);
      RetrievalFeatures gf = extract_features(
          model, ds.gallery, v.sgtm ? FeatureKind::kSgtmTest : FeatureKind::kVisualPooled);
      RankingResult r = evaluate(pairwise_distances(qf.feats, gf.feats), qf.pids, qf.camids,
                                 gf.pids, gf.camids, cfg.eval.exclude_same_camera);
      runs.push_back({{"variant", v.name},
                      {"seed", seed},
                      {"mAP", r.map},
                      {"rank1", r.cmc.empty() ? 0.0 : r.cmc[0]}});
      maps[v.name].push_back(r.map);
      std::cout << v.name << " seed " << seed << ": mAP " << r.map << "\n";
    }
  }
  nlohmann::json means;
  for (const auto& [name, vals] : maps) {
    double acc = 0.0;
    for (double v : vals) acc += v;
    means[name] = acc / static_cast<double>(vals.size());
  }
  report["runs"] = std::move(runs);
  report["mean_mAP"] = std::move(means);
  std::ofstream os(out_path);
  os << report.dump(2) << "\n";
  std::cout << "ablation report: " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage skeleton-image contrastive ReID pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string data_dir = "dataset";
  std::string out_dir = "runs";
  std::string ckpt, stage1_ckpt, split = "query", kind = "test", out_path;
  std::string query_path, gallery_path, obj_path, reg_path;
  int gc_seeds = 20;
  double gc_tol = 1e-3;
  std::vector<std::uint64_t> ablate_seeds{0, 1, 2};

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
  add_common(gen, opts);
  gen->add_option("--out", data_dir, "dataset directory");

  auto* pre = app.add_subcommand("pretrain", "stage 1: contrastive alignment");
  add_common(pre, opts);
  pre->add_option("--data", data_dir, "dataset directory");
  pre->add_option("--out", out_dir, "run directory");

  auto* fin = app.add_subcommand("finetune", "stage 2: prototype-guided finetuning");
  add_common(fin, opts);
  fin->add_option("--data", data_dir, "dataset directory");
  fin->add_option("--stage1", stage1_ckpt, "stage-1 checkpoint to start from");
  fin->add_option("--out", out_dir, "run directory");

  auto* exp = app.add_subcommand("export-features", "write retrieval features for a split");
  add_common(exp, opts);
  exp->add_option("--data", data_dir, "dataset directory");
  exp->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  exp->add_option("--split", split, "train|query|gallery");
  exp->add_option("--kind", kind, "stage1-visual|stage1-skeleton|visual|skeleton|test");
  exp->add_option("--out", out_path, "feature file path")->required();

  auto* ev = app.add_subcommand("eval", "rank gallery features and report mAP/CMC");
  add_common(ev, opts);
  ev->add_option("--query", query_path, "query feature file")->required();
  ev->add_option("--gallery", gallery_path, "gallery feature file")->required();
  ev->add_option("--out", out_path, "metrics JSON path (stdout when omitted)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
  gc->add_option("--seeds", gc_seeds, "random seeds per check");
  gc->add_option("--tolerance", gc_tol, "max relative error");

  auto* rj = app.add_subcommand("regress-joints", "mesh vertices -> JSON keypoints");
  rj->add_option("--obj", obj_path, ".obj mesh file")->required();
  rj->add_option("--regressor", reg_path, "regressor matrix file")->required();
  rj->add_option("--out", out_path, "output keypoint JSON")->required();
  rj->add_flag("--force", opts.force, "overwrite existing outputs");

  auto* ab = app.add_subcommand("ablate", "module-toggle grid over seeds");
  add_common(ab, opts);
  ab->add_option("--data", data_dir, "dataset directory");
  ab->add_option("--out", out_path, "report JSON path")->required();
  ab->add_option("--seeds", ablate_seeds, "seeds to average over");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opts, data_dir);
    if (pre->parsed()) return cmd_pretrain(opts, data_dir, out_dir);
    if (fin->parsed()) return cmd_finetune(opts, data_dir, stage1_ckpt, out_dir);
    if (exp->parsed()) return cmd_export_features(opts, data_dir, ckpt, split, kind, out_path);
    if (ev->parsed()) return cmd_eval(opts, query_path, gallery_path, out_path);
    if (gc->parsed()) return cmd_gradcheck(gc_seeds, gc_tol);
    if (rj->parsed()) return cmd_regress_joints(obj_path, reg_path, out_path, opts.force);
    if (ab->parsed()) return cmd_ablate(opts, data_dir, out_path, ablate_seeds);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
