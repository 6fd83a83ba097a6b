#include "csip/config.hpp"

#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace csip {

namespace {

json lr_to_json(const LRSchedule& s) {
  return {{"warmup_epochs", s.warmup_epochs}, {"lr_start", s.lr_start},
          {"lr_peak", s.lr_peak},             {"decay", s.decay},
          {"milestones", s.milestones}};
}

void lr_from_json(const json& j, LRSchedule& s) {
  s.warmup_epochs = j.value("warmup_epochs", s.warmup_epochs);
  s.lr_start = j.value("lr_start", s.lr_start);
  s.lr_peak = j.value("lr_peak", s.lr_peak);
  s.decay = j.value("decay", s.decay);
  s.milestones = j.value("milestones", s.milestones);
}

TrainMode mode_from_string(const std::string& s) {
  if (s == "video") return TrainMode::kVideo;
  if (s == "skeleton") return TrainMode::kSkeletonOnly;
  throw ConfigError("mode must be 'video' or 'skeleton', got '" + s + "'");
}

std::string mode_to_string(TrainMode m) {
  return m == TrainMode::kVideo ? "video" : "skeleton";
}

json defaults_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["data"] = {{"identities", c.data.identities},
               {"tracklets_per_id", c.data.tracklets_per_id},
               {"eval_tracklets_per_id", c.data.eval_tracklets_per_id},
               {"heldout_identities", c.data.heldout_identities},
               {"frames", c.data.frames},
               {"height", c.data.height},
               {"width", c.data.width},
               {"cameras", c.data.cameras},
               {"image_noise", c.data.image_noise},
               {"skeleton_noise", c.data.skeleton_noise}};
  j["model"] = {{"dim", c.model.dim},
                {"shared_dim", c.model.shared_dim},
                {"tau", c.model.tau},
                {"visual",
                 {{"patch_h", c.model.visual.patch_h},
                  {"patch_w", c.model.visual.patch_w},
                  {"depth", c.model.visual.depth},
                  {"heads", c.model.visual.heads}}},
                {"sgt",
                 {{"layers", c.model.sgt.layers},
                  {"heads", c.model.sgt.heads},
                  {"pe_dim", c.model.sgt.pe_dim},
                  {"gpc_alpha", c.model.sgt.gpc_alpha},
                  {"gpc_tau1", c.model.sgt.gpc_tau1},
                  {"gpc_tau2", c.model.sgt.gpc_tau2},
                  {"stpr_beta", c.model.sgt.stpr_beta},
                  {"sgt_lambda", c.model.sgt.sgt_lambda},
                  {"mask_ratio", c.model.sgt.mask_ratio}}},
                {"sgtm", {{"heads", c.model.sgtm.heads}}}};
  j["stage1"] = {{"epochs", c.stage1.epochs},
                 {"batch_size", c.stage1.batch_size},
                 {"tau", c.stage1.tau},
                 {"mode", mode_to_string(c.stage1.mode)},
                 {"lr", lr_to_json(c.stage1.lr)},
                 {"sgt_pretrain", c.stage1.sgt_pretrain},
                 {"sgt_pretrain_epochs", c.stage1.sgt_pretrain_epochs},
                 {"sgt_pretrain_lr", c.stage1.sgt_pretrain_lr}};
  j["stage2"] = {{"epochs", c.stage2.epochs},
                 {"p", c.stage2.p},
                 {"k", c.stage2.k_pk},
                 {"lambda1", c.stage2.lambda1},
                 {"lambda2", c.stage2.lambda2},
                 {"margin", c.stage2.margin},
                 {"smoothing", c.stage2.smoothing},
                 {"mode", mode_to_string(c.stage2.mode)},
                 {"lr", lr_to_json(c.stage2.lr)},
                 {"use_prototype_fusion", c.stage2.use_prototype_fusion},
                 {"use_prototype_update", c.stage2.use_prototype_update},
                 {"use_sgtm", c.stage2.use_sgtm}};
  j["eval"] = {{"exclude_same_camera", c.eval.exclude_same_camera},
               {"cmc_ranks", c.eval.cmc_ranks}};
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.deterministic = j.value("deterministic", c.deterministic);
    const json& d = j.at("data");
    c.data.identities = d.value("identities", c.data.identities);
    c.data.tracklets_per_id = d.value("tracklets_per_id", c.data.tracklets_per_id);
    c.data.eval_tracklets_per_id =
        d.value("eval_tracklets_per_id", c.data.eval_tracklets_per_id);
    c.data.heldout_identities = d.value("heldout_identities", c.data.heldout_identities);
    c.data.frames = d.value("frames", c.data.frames);
    c.data.height = d.value("height", c.data.height);
    c.data.width = d.value("width", c.data.width);
    c.data.cameras = d.value("cameras", c.data.cameras);
    c.data.image_noise = d.value("image_noise", c.data.image_noise);
    c.data.skeleton_noise = d.value("skeleton_noise", c.data.skeleton_noise);
    c.data.seed = c.seed;

    const json& m = j.at("model");
    c.model.dim = m.value("dim", c.model.dim);
    c.model.shared_dim = m.value("shared_dim", c.model.shared_dim);
    c.model.tau = m.value("tau", c.model.tau);
    const json& v = m.at("visual");
    c.model.visual.patch_h = v.value("patch_h", c.model.visual.patch_h);
    c.model.visual.patch_w = v.value("patch_w", c.model.visual.patch_w);
    c.model.visual.depth = v.value("depth", c.model.visual.depth);
    c.model.visual.heads = v.value("heads", c.model.visual.heads);
    c.model.visual.height = c.data.height;
    c.model.visual.width = c.data.width;
    const json& g = m.at("sgt");
    c.model.sgt.layers = g.value("layers", c.model.sgt.layers);
    c.model.sgt.heads = g.value("heads", c.model.sgt.heads);
    c.model.sgt.pe_dim = g.value("pe_dim", c.model.sgt.pe_dim);
    c.model.sgt.gpc_alpha = g.value("gpc_alpha", c.model.sgt.gpc_alpha);
    c.model.sgt.gpc_tau1 = g.value("gpc_tau1", c.model.sgt.gpc_tau1);
    c.model.sgt.gpc_tau2 = g.value("gpc_tau2", c.model.sgt.gpc_tau2);
    c.model.sgt.stpr_beta = g.value("stpr_beta", c.model.sgt.stpr_beta);
    c.model.sgt.sgt_lambda = g.value("sgt_lambda", c.model.sgt.sgt_lambda);
    c.model.sgt.mask_ratio = g.value("mask_ratio", c.model.sgt.mask_ratio);
    c.model.sgtm.heads = m.at("sgtm").value("heads", c.model.sgtm.heads);
    c.model.sync_dims();

    const json& s1 = j.at("stage1");
    c.stage1.epochs = s1.value("epochs", c.stage1.epochs);
    c.stage1.batch_size = s1.value("batch_size", c.stage1.batch_size);
    c.stage1.tau = s1.value("tau", c.stage1.tau);
    c.stage1.mode = mode_from_string(s1.value("mode", std::string("video")));
    if (s1.contains("lr")) lr_from_json(s1.at("lr"), c.stage1.lr);
    c.stage1.sgt_pretrain = s1.value("sgt_pretrain", c.stage1.sgt_pretrain);
    c.stage1.sgt_pretrain_epochs = s1.value("sgt_pretrain_epochs", c.stage1.sgt_pretrain_epochs);
    c.stage1.sgt_pretrain_lr = s1.value("sgt_pretrain_lr", c.stage1.sgt_pretrain_lr);

    const json& s2 = j.at("stage2");
    c.stage2.epochs = s2.value("epochs", c.stage2.epochs);
    c.stage2.p = s2.value("p", c.stage2.p);
    c.stage2.k_pk = s2.value("k", c.stage2.k_pk);
    c.stage2.lambda1 = s2.value("lambda1", c.stage2.lambda1);
    c.stage2.lambda2 = s2.value("lambda2", c.stage2.lambda2);
    c.stage2.margin = s2.value("margin", c.stage2.margin);
    c.stage2.smoothing = s2.value("smoothing", c.stage2.smoothing);
    c.stage2.mode = mode_from_string(s2.value("mode", std::string("video")));
    if (s2.contains("lr")) lr_from_json(s2.at("lr"), c.stage2.lr);
    c.stage2.use_prototype_fusion =
        s2.value("use_prototype_fusion", c.stage2.use_prototype_fusion);
    c.stage2.use_prototype_update =
        s2.value("use_prototype_update", c.stage2.use_prototype_update);
    c.stage2.use_sgtm = s2.value("use_sgtm", c.stage2.use_sgtm);

    const json& e = j.at("eval");
    c.eval.exclude_same_camera = e.value("exclude_same_camera", c.eval.exclude_same_camera);
    c.eval.cmc_ranks = e.value("cmc_ranks", c.eval.cmc_ranks);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("bad config: ") + ex.what());
  }
  return c;
}

json parse_override_value(const std::string& raw) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  try {
    std::size_t used = 0;
    if (raw.find_first_of(".eE") == std::string::npos) {
      const long long v = std::stoll(raw, &used);
      if (used == raw.size()) return v;
    } else {
      const double v = std::stod(raw, &used);
      if (used == raw.size()) return v;
    }
  } catch (...) {
  }
  return raw;
}

}  // namespace

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  json j = defaults_json(RunConfig{});
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot open config file: " + config_path);
    json file;
    try {
      file = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ConfigError("config parse error in " + config_path + ": " + e.what());
    }
    j.merge_patch(file);
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must look like section.key=value, got '" + ov + "'");
    }
    const std::string path = ov.substr(0, eq);
    json* cursor = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot - start);
      if (key.empty()) throw ConfigError("bad override path '" + path + "'");
      if (dot == std::string::npos) {
        (*cursor)[key] = parse_override_value(ov.substr(eq + 1));
        break;
      }
      cursor = &(*cursor)[key];
      start = dot + 1;
    }
  }
  return config_from_json(j);
}

std::string run_config_json(const RunConfig& cfg) { return defaults_json(cfg).dump(2); }

}  // namespace csip
