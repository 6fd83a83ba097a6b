#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "csip/align.hpp"
#include "csip/data.hpp"
#include "csip/losses.hpp"
#include "csip/pfu.hpp"
#include "csip/serialize.hpp"
#include "csip/sgtm.hpp"

namespace csip {

/// Linear warmup from lr_start to lr_peak over `warmup_epochs`, then a
/// decade decay at each milestone.
struct LRSchedule {
  int warmup_epochs = 10;
  double lr_start = 5e-7;
  double lr_peak = 5e-6;
  double decay = 0.1;
  std::vector<int> milestones{30, 50, 70};

  double at(int epoch) const;
};

double lr_at(const LRSchedule& s, int epoch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<std::vector<double>> m, v;
  long step = 0;

  void init(const ParamMap& params);
};

/// Standard Adam with bias correction, reading each parameter's grad buffer.
void adam_step(ParamMap& params, AdamState& state, double lr);

/// P distinct identities with K tracklets each (with replacement when an
/// identity is short, flagged through `resampled`). Returns indices into
/// `tracklets`.
std::vector<std::size_t> pk_sample(const std::vector<Tracklet>& tracklets, std::size_t p,
                                   std::size_t k, std::mt19937_64& rng,
                                   bool* resampled = nullptr);

enum class TrainMode { kVideo, kSkeletonOnly };

struct Stage1Config {
  int epochs = 20;
  std::size_t batch_size = 16;
  double tau = 0.07;
  TrainMode mode = TrainMode::kVideo;
  LRSchedule lr;
  bool sgt_pretrain = false;  // initialize the skeleton encoder by SGT self-training
  int sgt_pretrain_epochs = 5;
  double sgt_pretrain_lr = 1e-3;
};

struct Stage2Config {
  int epochs = 20;
  std::size_t p = 4;      // identities per batch
  std::size_t k_pk = 4;   // tracklets per identity
  double lambda1 = 1.0;   // prototype supervision weight
  double lambda2 = 1.3;   // frame loss weight
  double margin = 0.3;
  double smoothing = 0.1;
  TrainMode mode = TrainMode::kVideo;
  LRSchedule lr;
  bool use_prototype_fusion = true;
  bool use_prototype_update = true;
  bool use_sgtm = true;

  void validate() const;
};

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t shared_dim = 0;  // 0 -> dim
  double tau = 0.07;
  VisualEncoderConfig visual;
  SGTConfig sgt;
  SgtmConfig sgtm;

  void sync_dims();
};

/// All trainable state of the two-stage pipeline. Stage-2 members exist
/// after setup_stage2.
struct Model {
  ModelConfig cfg;
  VisualEncoder visual;
  SkeletonEncoder skeleton;
  AlignmentHeads align;

  bool stage2_ready = false;
  std::size_t classes = 0;
  FusionGate gate;
  PrototypeUpdater updater;
  Sgtm sgtm;
  CEConfig ce;
  Tensor proto_s, proto_v;  // K x C, pooled once at stage-2 start

  ParamMap stage1_params() const;  // encoders + heads
  ParamMap all_params() const;
  void save(const std::string& path) const;
};

Model init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Per-epoch JSON-lines training log entry.
struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

void write_epoch_log(std::ostream& os, const std::string& stage, const EpochLog& e);

/// Stage 1: supervised contrastive alignment. Video mode freezes the visual
/// encoder and trains the skeleton encoder + both heads; skeleton mode
/// swaps the frozen side.
std::vector<EpochLog> train_stage1(Model& model, const std::vector<Tracklet>& train,
                                   const Stage1Config& cfg, std::uint64_t seed,
                                   std::ostream* log = nullptr);

/// Pools the per-identity modality prototypes from the frozen encoders
/// (performed once) and builds the stage-2 heads.
void setup_stage2(Model& model, const std::vector<Tracklet>& train, const Stage2Config& cfg,
                  std::uint64_t seed);

/// Stage 2: CE + triplet + lambda1 * csip + lambda2 * frame. Video mode
/// trains the visual encoder, PFU and SGTM with the skeleton encoder
/// frozen; skeleton-only mode trains the skeleton encoder + PFU and omits
/// SGTM.
std::vector<EpochLog> train_stage2(Model& model, const std::vector<Tracklet>& train,
                                   const Stage2Config& cfg, std::uint64_t seed,
                                   std::ostream* log = nullptr);

/// Contiguous class labels from the pids present, ordered by pid.
std::map<int, int> pid_class_index(const std::vector<Tracklet>& tracklets);

struct Stage2LossBreakdown {
  double ce = 0.0, triplet = 0.0, csip = 0.0, frame = 0.0, total = 0.0;
};

/// Frozen-side activations, computed once per stage-2 run: the frozen
/// encoder's outputs are constants, so per-epoch re-encoding is pure waste.
struct Stage2FrozenCache {
  std::vector<FrameTokens> visual;               // skeleton-only mode
  std::vector<std::vector<Tensor>> skeleton;     // video mode
};

Stage2FrozenCache build_frozen_cache(const Model& model, const std::vector<Tracklet>& pool,
                                     TrainMode mode);

/// The train-step loss of one batch at fixed parameters (`batch` indexes
/// into `pool`).
Tensor stage2_batch_loss(const Model& model, const std::vector<Tracklet>& pool,
                         const std::vector<std::size_t>& batch,
                         const std::map<int, int>& classes, const Stage2Config& cfg,
                         Stage2LossBreakdown* breakdown = nullptr,
                         const Stage2FrozenCache* cache = nullptr);

enum class FeatureKind {
  kStage1VisualProjected,
  kStage1SkeletonProjected,
  kVisualPooled,
  kSkeletonPooled,
  kSgtmTest,
};

struct RetrievalFeatures {
  Tensor feats;  // N x C
  std::vector<int> pids;
  std::vector<int> camids;
};

RetrievalFeatures extract_features(const Model& model, const std::vector<Tracklet>& tracklets,
                                   FeatureKind kind);

/// Retrieval feature for one tracklet at test time: SGTM path in video mode
/// (pooled visual feature when SGTM is off), pooled skeleton feature in
/// skeleton-only mode. Never reads skeleton data in video mode.
Tensor test_feature(const Model& model, const Tracklet& t, TrainMode mode, bool use_sgtm);

}  // namespace csip
