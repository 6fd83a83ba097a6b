#include "csip/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "csip/rng.hpp"

namespace csip {

double LRSchedule::at(int epoch) const {
  if (epoch < 0) tensor_error("lr schedule: negative epoch");
  double lr;
  if (epoch < warmup_epochs) {
    lr = lr_start + (lr_peak - lr_start) * static_cast<double>(epoch) /
                        static_cast<double>(warmup_epochs);
  } else {
    lr = lr_peak;
  }
  for (int m : milestones) {
    if (epoch >= m) lr *= decay;
  }
  return lr;
}

double lr_at(const LRSchedule& s, int epoch) { return s.at(epoch); }

void AdamState::init(const ParamMap& params) {
  m.clear();
  v.clear();
  step = 0;
  for (const auto& [name, t] : params.items) {
    m.emplace_back(t.numel(), 0.0);
    v.emplace_back(t.numel(), 0.0);
  }
}

void adam_step(ParamMap& params, AdamState& state, double lr) {
  if (state.m.size() != params.items.size()) {
    tensor_error("adam: state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                 std::to_string(params.items.size()));
  }
  ++state.step;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    Tensor& p = params.items[i].second;
    if (!p.grad) tensor_error("adam: parameter " + params.items[i].first + " has no grad");
    auto& mi = state.m[i];
    auto& vi = state.v[i];
    const auto& g = *p.grad;
    auto& x = *p.data;
    if (mi.size() != g.size()) tensor_error("adam: shape drift on " + params.items[i].first);
    for (std::size_t j = 0; j < g.size(); ++j) {
      mi[j] = b1 * mi[j] + (1.0 - b1) * g[j];
      vi[j] = b2 * vi[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = mi[j] / c1;
      const double vhat = vi[j] / c2;
      x[j] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

std::vector<std::size_t> pk_sample(const std::vector<Tracklet>& tracklets, std::size_t p,
                                   std::size_t k, std::mt19937_64& rng, bool* resampled) {
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < tracklets.size(); ++i) by_id[tracklets[i].pid].push_back(i);
  if (by_id.size() < p) {
    tensor_error("pk_sample: need " + std::to_string(p) + " identities, dataset has " +
                 std::to_string(by_id.size()));
  }
  std::vector<int> ids;
  ids.reserve(by_id.size());
  for (const auto& [pid, idx] : by_id) ids.push_back(pid);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(p);

  if (resampled) *resampled = false;
  std::vector<std::size_t> batch;
  batch.reserve(p * k);
  for (int pid : ids) {
    auto pool = by_id[pid];
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t j = 0; j < k; ++j) {
      if (j < pool.size()) {
        batch.push_back(pool[j]);
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        batch.push_back(pool[pick(rng)]);
        if (resampled) *resampled = true;
      }
    }
  }
  return batch;
}

void Stage2Config::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0) tensor_error("stage2: lambda weights must be >= 0");
  if (p < 2 || k_pk < 2) tensor_error("stage2: PK sampling needs P >= 2 and K >= 2");
  if (use_prototype_update && !use_prototype_fusion) {
    tensor_error("stage2: prototype update requires prototype fusion");
  }
}

void ModelConfig::sync_dims() {
  if (shared_dim == 0) shared_dim = dim;
  visual.dim = dim;
  sgt.dim = dim;
  sgtm.dim = dim;
}

Model init_model(const ModelConfig& cfg_in, std::uint64_t seed) {
  ModelConfig cfg = cfg_in;
  cfg.sync_dims();
  Model m;
  m.cfg = cfg;
  auto vis_rng = rng_stream(seed, "init.visual");
  m.visual = VisualEncoder(cfg.visual, vis_rng);
  auto ske_rng = rng_stream(seed, "init.skeleton");
  m.skeleton = SkeletonEncoder(cfg.sgt, SkeletonGraph::human36m(), ske_rng);
  auto align_rng = rng_stream(seed, "init.align");
  m.align = AlignmentHeads(cfg.dim, cfg.shared_dim, cfg.tau, align_rng);
  return m;
}

ParamMap Model::stage1_params() const {
  ParamMap p;
  p.merge("visual", visual.params());
  p.merge("skeleton", skeleton.params());
  p.merge("align", align.params());
  return p;
}

ParamMap Model::all_params() const {
  ParamMap p = stage1_params();
  if (stage2_ready) {
    p.merge("pfu.gate", gate.params());
    p.merge("pfu.updater", updater.params());
    p.add("pfu.p_s", proto_s);
    p.add("pfu.p_v", proto_v);
    p.merge("sgtm", sgtm.params());
    p.merge("ce.classifier", ce.classifier.params());
  }
  return p;
}

void Model::save(const std::string& path) const { save_checkpoint(path, all_params()); }

void write_epoch_log(std::ostream& os, const std::string& stage, const EpochLog& e) {
  nlohmann::json j;
  j["stage"] = stage;
  j["epoch"] = e.epoch;
  j["loss"] = e.loss;
  j["lr"] = e.lr;
  os << j.dump() << "\n";
}

namespace {

void check_finite(double loss, const std::string& where) {
  if (!std::isfinite(loss)) {
    tensor_error("NaN/Inf loss during " + where + "; aborting (check learning rate and data)");
  }
}

std::vector<Tracklet> prepare(const std::vector<Tracklet>& in) {
  std::vector<Tracklet> out;
  out.reserve(in.size());
  for (const Tracklet& t : in) out.push_back(discard_empty_frames(t));
  return out;
}

Tensor pooled_visual(const Model& m, const Tracklet& t) {
  return sequence_feature(m.visual.encode_frames(t.images));
}

Tensor pooled_skeleton(const Model& m, const Tracklet& t) {
  return m.skeleton.encode_sequence(t.skeletons).seq_feat;
}

/// SGT self-training: gpc + stpr on the skeleton encoder alone, prototype
/// bank recomputed at each epoch boundary.
void sgt_pretrain_pass(Model& model, const std::vector<Tracklet>& train,
                       const Stage1Config& cfg, std::uint64_t seed) {
  auto classes = pid_class_index(train);
  ParamMap params;
  params.merge("skeleton", model.skeleton.params());
  AdamState opt;
  opt.init(params);
  const std::size_t bs = std::max<std::size_t>(2, cfg.batch_size);
  for (int epoch = 0; epoch < cfg.sgt_pretrain_epochs; ++epoch) {
    GraphPrototypeBank bank;
    {
      NoGradGuard ng;
      std::vector<Tensor> feats;
      std::vector<int> labels;
      for (const Tracklet& t : train) {
        feats.push_back(model.skeleton.encode_sequence(t.skeletons).seq_feat);
        labels.push_back(classes.at(t.pid));
      }
      bank = build_prototype_bank(stack_rows(feats), labels);
    }
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = rng_stream(seed, "sgt.shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      if (end - start < 2) break;
      std::vector<Tensor> seq_feats, frame_feats;
      std::vector<int> seq_labels, frame_labels;
      Tensor stpr_total = Tensor::scalar(0.0);
      for (std::size_t bi = start; bi < end; ++bi) {
        const Tracklet& t = train[order[bi]];
        SkeletonEncoding enc = model.skeleton.encode_sequence(t.skeletons);
        seq_feats.push_back(enc.seq_feat);
        seq_labels.push_back(classes.at(t.pid));
        for (std::size_t f = 0; f < enc.frame_feats.shape[0]; ++f) {
          frame_feats.push_back(reshape(slice(enc.frame_feats, 0, f, 1), {model.cfg.dim}));
          frame_labels.push_back(classes.at(t.pid));
        }
        auto mask_rng = rng_stream(seed, "sgt.stpr", static_cast<std::uint64_t>(epoch),
                                   static_cast<std::uint64_t>(order[bi]));
        stpr_total = add(stpr_total, model.skeleton.stpr_loss(t.skeletons, mask_rng));
      }
      Tensor gpc = model.skeleton.gpc_loss(stack_rows(seq_feats), seq_labels,
                                           stack_rows(frame_feats), frame_labels, bank);
      Tensor stpr = scalar_mul(stpr_total, 1.0 / static_cast<double>(end - start));
      Tensor total = sgt_objective(gpc, stpr, model.skeleton.cfg.sgt_lambda);
      check_finite(total.item(), "sgt pretraining");
      params.zero_grad();
      total.backward();
      adam_step(params, opt, cfg.sgt_pretrain_lr);
    }
  }
}

}  // namespace

std::vector<EpochLog> train_stage1(Model& model, const std::vector<Tracklet>& train_in,
                                   const Stage1Config& cfg, std::uint64_t seed,
                                   std::ostream* log) {
  const std::vector<Tracklet> train = prepare(train_in);
  if (train.empty()) tensor_error("stage1: empty training set");
  if (cfg.sgt_pretrain && cfg.mode == TrainMode::kVideo) {
    sgt_pretrain_pass(model, train, cfg, seed);
  }
  const bool video = cfg.mode == TrainMode::kVideo;

  ParamMap trainable;
  if (video) {
    trainable.merge("skeleton", model.skeleton.params());
  } else {
    trainable.merge("visual", model.visual.params());
  }
  trainable.merge("align", model.align.params());
  AdamState opt;
  opt.init(trainable);

  // The frozen encoder's features are constants; compute them once.
  std::vector<Tensor> frozen_feats(train.size());
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < train.size(); ++i) {
      frozen_feats[i] =
          video ? pooled_visual(model, train[i]) : pooled_skeleton(model, train[i]);
    }
  }

  std::vector<EpochLog> out;
  const std::size_t bs = std::max<std::size_t>(2, cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at(epoch);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = rng_stream(seed, "stage1.shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      if (end - start < 2) break;
      std::vector<Tensor> vfeats, sfeats;
      std::vector<int> labels;
      for (std::size_t bi = start; bi < end; ++bi) {
        const std::size_t idx = order[bi];
        const Tracklet& t = train[idx];
        if (video) {
          vfeats.push_back(frozen_feats[idx]);
          sfeats.push_back(pooled_skeleton(model, t));
        } else {
          vfeats.push_back(pooled_visual(model, t));
          sfeats.push_back(frozen_feats[idx]);
        }
        labels.push_back(t.pid);
      }
      AlignedBatch batch{stack_rows(vfeats), stack_rows(sfeats), labels};
      AlignmentHeads heads = model.align;
      heads.tau = cfg.tau;
      ContrastivePair losses = contrastive_losses(batch, heads);
      Tensor total = add(losses.v2s, losses.s2v);
      check_finite(total.item(), "stage 1 epoch " + std::to_string(epoch));
      trainable.zero_grad();
      total.backward();
      adam_step(trainable, opt, lr);
      epoch_loss += total.item();
      ++batches;
    }
    EpochLog e{epoch, batches ? epoch_loss / static_cast<double>(batches) : 0.0, lr};
    if (log) write_epoch_log(*log, "stage1", e);
    out.push_back(e);
  }
  return out;
}

void setup_stage2(Model& model, const std::vector<Tracklet>& train_in, const Stage2Config& cfg,
                  std::uint64_t seed) {
  cfg.validate();
  const std::vector<Tracklet> train = prepare(train_in);
  if (train.empty()) tensor_error("stage2: empty training set");
  auto classes = pid_class_index(train);
  model.classes = classes.size();

  // Intra-ID pooling from the frozen stage-1 encoders, performed once.
  {
    NoGradGuard ng;
    std::vector<Tensor> vfeats, sfeats;
    std::vector<int> labels;
    for (const Tracklet& t : train) {
      vfeats.push_back(pooled_visual(model, t));
      sfeats.push_back(pooled_skeleton(model, t));
      labels.push_back(classes.at(t.pid));
    }
    model.proto_v = intra_id_pool(stack_rows(vfeats), labels, model.classes);
    model.proto_s = intra_id_pool(stack_rows(sfeats), labels, model.classes);
  }

  auto gate_rng = rng_stream(seed, "init.pfu.gate");
  model.gate = FusionGate(model.cfg.dim, gate_rng);
  auto upd_rng = rng_stream(seed, "init.pfu.updater");
  model.updater = PrototypeUpdater(model.cfg.dim, model.cfg.sgtm.heads, upd_rng);
  SgtmConfig scfg = model.cfg.sgtm;
  scfg.classes = model.classes;
  auto sgtm_rng = rng_stream(seed, "init.sgtm");
  model.sgtm = Sgtm(scfg, sgtm_rng);
  auto ce_rng = rng_stream(seed, "init.ce");
  model.ce = CEConfig(model.cfg.dim, model.classes, cfg.smoothing, ce_rng);
  model.stage2_ready = true;
}

std::map<int, int> pid_class_index(const std::vector<Tracklet>& tracklets) {
  std::map<int, int> idx;
  for (const Tracklet& t : tracklets) idx.emplace(t.pid, 0);
  int next = 0;
  for (auto& [pid, slot] : idx) slot = next++;
  return idx;
}

Stage2FrozenCache build_frozen_cache(const Model& model, const std::vector<Tracklet>& pool,
                                     TrainMode mode) {
  NoGradGuard ng;
  Stage2FrozenCache cache;
  if (mode == TrainMode::kVideo) {
    cache.skeleton.reserve(pool.size());
    for (const Tracklet& t : pool) {
      cache.skeleton.push_back(model.skeleton.encode_sequence(t.skeletons).frame_tokens);
    }
  } else {
    cache.visual.reserve(pool.size());
    for (const Tracklet& t : pool) cache.visual.push_back(model.visual.encode_frames(t.images));
  }
  return cache;
}

Tensor stage2_batch_loss(const Model& model, const std::vector<Tracklet>& pool,
                         const std::vector<std::size_t>& batch,
                         const std::map<int, int>& classes, const Stage2Config& cfg,
                         Stage2LossBreakdown* breakdown, const Stage2FrozenCache* cache) {
  if (!model.stage2_ready) tensor_error("stage2: call setup_stage2 first");
  const bool video = cfg.mode == TrainMode::kVideo;
  const bool use_sgtm = video && cfg.use_sgtm;
  const bool use_fusion = cfg.use_prototype_fusion;
  const bool use_update = cfg.use_prototype_update;
  TripletConfig triplet_cfg{cfg.margin, false};

  std::vector<Tensor> feats;  // ReID features on the trainable side
  std::vector<int> labels;
  std::vector<FrameTokens> vis_tokens;
  std::vector<std::vector<Tensor>> ske_tokens;
  std::vector<Tensor> fused_tokens;  // (L_vis + L_ske) x C per sample
  for (std::size_t idx : batch) {
    const Tracklet& t = pool[idx];
    labels.push_back(classes.at(t.pid));

    FrameTokens vt;
    std::vector<Tensor> st;
    if (video) {
      vt = model.visual.encode_frames(t.images);
      feats.push_back(sequence_feature(vt));
      if (cache) {
        st = cache->skeleton[idx];
      } else {
        NoGradGuard ng;
        st = model.skeleton.encode_sequence(t.skeletons).frame_tokens;
      }
    } else {
      if (cache) {
        vt = cache->visual[idx];
      } else {
        NoGradGuard ng;
        vt = model.visual.encode_frames(t.images);
      }
      SkeletonEncoding enc = model.skeleton.encode_sequence(t.skeletons);
      st = enc.frame_tokens;
      feats.push_back(enc.seq_feat);
    }

    if (use_fusion || use_sgtm) {
      if (use_fusion) {
        FrameTokens ske_wrap;
        ske_wrap.per_frame = st;
        fused_tokens.push_back(concat({vt.token_mean(), ske_wrap.token_mean()}, 0));
      }
      vis_tokens.push_back(std::move(vt));
      ske_tokens.push_back(std::move(st));
    }
  }

  Tensor batch_feats = stack_rows(feats);
  Tensor ce = ce_label_smoothing(batch_feats, labels, model.ce);
  Tensor triplet = batch_hard_triplet(batch_feats, labels, triplet_cfg);
  Tensor total = add(ce, triplet);

  Tensor csip, frame;
  if (use_fusion) {
    FusionResult fusion = fuse(model.proto_s.detach(), model.proto_v.detach(), model.gate);
    std::vector<Tensor> protos;
    protos.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      protos.push_back(use_update ? model.updater.update(fusion.fused, fused_tokens[i])
                                  : fusion.fused);
    }
    csip = csip_loss(batch_feats, labels, protos);
    total = add(total, scalar_mul(csip, cfg.lambda1));
  }
  if (use_sgtm) {
    std::vector<Tensor> frame_losses;
    frame_losses.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tensor m_vis = model.sgtm.mte_visual(vis_tokens[i]);
      Tensor m_ske = model.sgtm.mte_skeleton(ske_tokens[i]);
      Tensor m_hat = model.sgtm.atd(m_vis, m_ske);
      UnifiedTokenSequence unified =
          model.sgtm.assemble(vis_tokens[i], m_hat, ske_tokens[i], m_ske, SgtmMode::kTrain);
      unified = model.sgtm.temporal_aggregate(unified);
      frame_losses.push_back(model.sgtm.frame_logits_and_loss(unified, labels[i]).loss);
    }
    frame = batch_frame_loss(frame_losses);
    total = add(total, scalar_mul(frame, cfg.lambda2));
  }

  if (breakdown) {
    breakdown->ce = ce.item();
    breakdown->triplet = triplet.item();
    breakdown->csip = csip.defined() ? csip.item() : 0.0;
    breakdown->frame = frame.defined() ? frame.item() : 0.0;
    breakdown->total = total.item();
  }
  return total;
}

std::vector<EpochLog> train_stage2(Model& model, const std::vector<Tracklet>& train_in,
                                   const Stage2Config& cfg, std::uint64_t seed,
                                   std::ostream* log) {
  cfg.validate();
  if (!model.stage2_ready) tensor_error("stage2: call setup_stage2 first");
  const std::vector<Tracklet> train = prepare(train_in);
  auto classes = pid_class_index(train);
  if (classes.size() != model.classes) {
    tensor_error("stage2: training set classes changed since setup");
  }
  const bool video = cfg.mode == TrainMode::kVideo;
  const bool use_sgtm = video && cfg.use_sgtm;
  const bool use_fusion = cfg.use_prototype_fusion;
  const bool use_update = cfg.use_prototype_update;

  ParamMap trainable;
  if (video) {
    trainable.merge("visual", model.visual.params());
  } else {
    trainable.merge("skeleton", model.skeleton.params());
  }
  if (use_fusion) {
    trainable.merge("pfu.gate", model.gate.params());
    if (use_update) trainable.merge("pfu.updater", model.updater.params());
  }
  if (use_sgtm) trainable.merge("sgtm", model.sgtm.params());
  trainable.merge("ce.classifier", model.ce.classifier.params());
  AdamState opt;
  opt.init(trainable);

  const std::size_t batch_size = cfg.p * cfg.k_pk;
  const std::size_t batches_per_epoch = std::max<std::size_t>(1, train.size() / batch_size);
  const Stage2FrozenCache cache = build_frozen_cache(model, train, cfg.mode);

  std::vector<EpochLog> out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at(epoch);
    double epoch_loss = 0.0;
    auto batch_rng = rng_stream(seed, "stage2.pk", static_cast<std::uint64_t>(epoch));
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::vector<std::size_t> batch = pk_sample(train, cfg.p, cfg.k_pk, batch_rng);
      Tensor total = stage2_batch_loss(model, train, batch, classes, cfg, nullptr, &cache);
      check_finite(total.item(), "stage 2 epoch " + std::to_string(epoch));
      trainable.zero_grad();
      total.backward();
      adam_step(trainable, opt, lr);
      epoch_loss += total.item();
    }
    EpochLog e{epoch, epoch_loss / static_cast<double>(batches_per_epoch), lr};
    if (log) write_epoch_log(*log, "stage2", e);
    out.push_back(e);
  }
  return out;
}

Tensor test_feature(const Model& model, const Tracklet& t, TrainMode mode, bool use_sgtm) {
  NoGradGuard ng;
  if (mode == TrainMode::kSkeletonOnly) {
    return pooled_skeleton(model, t);
  }
  FrameTokens vt = model.visual.encode_frames(t.images);
  if (use_sgtm && model.stage2_ready) {
    return model.sgtm.inference_features(vt);
  }
  return sequence_feature(vt);
}

namespace {

Tensor l2_normalize_row(const Tensor& row) {
  double norm = 0.0;
  for (double v : *row.data) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) return row;
  return scalar_mul(row, 1.0 / norm);
}

}  // namespace

RetrievalFeatures extract_features(const Model& model, const std::vector<Tracklet>& tracklets,
                                   FeatureKind kind) {
  NoGradGuard ng;
  RetrievalFeatures out;
  std::vector<Tensor> rows;
  for (const Tracklet& raw : tracklets) {
    const Tracklet t = discard_empty_frames(raw);
    switch (kind) {
      case FeatureKind::kStage1VisualProjected:
        rows.push_back(reshape(
            model.align.visual_proj.forward(reshape(pooled_visual(model, t), {1, model.cfg.dim})),
            {model.cfg.shared_dim}));
        break;
      case FeatureKind::kStage1SkeletonProjected:
        rows.push_back(reshape(model.align.skeleton_proj.forward(
                                   reshape(pooled_skeleton(model, t), {1, model.cfg.dim})),
                               {model.cfg.shared_dim}));
        break;
      case FeatureKind::kVisualPooled:
        rows.push_back(pooled_visual(model, t));
        break;
      case FeatureKind::kSkeletonPooled:
        rows.push_back(pooled_skeleton(model, t));
        break;
      case FeatureKind::kSgtmTest:
        rows.push_back(test_feature(model, t, TrainMode::kVideo, true));
        break;
    }
    // unit-norm retrieval features: Euclidean ranking then matches the
    // trained dot-product geometry across modalities
    rows.back() = l2_normalize_row(rows.back());
    out.pids.push_back(t.pid);
    out.camids.push_back(t.camid);
  }
  out.feats = stack_rows(rows);
  return out;
}

}  // namespace csip
